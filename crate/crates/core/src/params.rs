//! Binary container for named parameter tensors, shared by the alignment
//! ("CPFP") and attention ("CPCA") parameter files.
//!
//! Layout (little-endian): 4-byte magic, u32 version, u64 seed, then per
//! record: u32 name length, name bytes, u32 rank, rank x u32 extents,
//! product x f32 payload. Records repeat until end of file. Round trips are
//! bit-exact because f32 payloads are moved as raw bit patterns.

use crate::tensor::Tensor;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {version}")]
    Version { version: u32 },
    #[error("truncated parameter file at offset {offset}: needed {missing} more bytes")]
    Truncated { offset: usize, missing: usize },
    #[error("record {name:?} is malformed: {message}")]
    BadRecord { name: String, message: String },
    #[error("missing record {name:?}")]
    MissingRecord { name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub version: u32,
    pub seed: u64,
    pub records: Vec<TensorRecord>,
}

impl ParamFile {
    pub fn new(seed: u64, records: Vec<TensorRecord>) -> Self {
        Self {
            version: PARAMS_VERSION,
            seed,
            records,
        }
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor, ParamError> {
        let idx = self
            .records
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| ParamError::MissingRecord {
                name: name.to_string(),
            })?;
        Ok(self.records.swap_remove(idx).tensor)
    }

    pub fn to_bytes(&self, magic: [u8; 4]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for record in &self.records {
            let name = record.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(record.tensor.rank() as u32).to_le_bytes());
            for &dim in record.tensor.shape() {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &v in record.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: [u8; 4]) -> Result<Self, ParamError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], ParamError> {
            if *pos + n > bytes.len() {
                return Err(ParamError::Truncated {
                    offset: bytes.len(),
                    missing: *pos + n - bytes.len(),
                });
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };

        let found = take(&mut pos, 4)?;
        if found != magic {
            return Err(ParamError::BadMagic {
                expected: magic,
                found: [found[0], found[1], found[2], found[3]],
            });
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != PARAMS_VERSION {
            return Err(ParamError::Version { version });
        }
        let seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());

        let mut records = Vec::new();
        while pos < bytes.len() {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec()).map_err(|e| {
                ParamError::BadRecord {
                    name: String::new(),
                    message: format!("name is not utf-8: {e}"),
                }
            })?;
            let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let len: usize = shape.iter().product();
            let payload = take(&mut pos, len * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| ParamError::BadRecord {
                name: name.clone(),
                message: e.to_string(),
            })?;
            records.push(TensorRecord { name, tensor });
        }

        Ok(Self {
            version,
            seed,
            records,
        })
    }

    pub fn write_file(&self, path: &Path, magic: [u8; 4]) -> Result<(), ParamError> {
        fs::write(path, self.to_bytes(magic)).map_err(|source| ParamError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_file(path: &Path, magic: [u8; 4]) -> Result<Self, ParamError> {
        let bytes = fs::read(path).map_err(|source| ParamError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, magic)
    }
}
