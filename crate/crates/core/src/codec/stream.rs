//! CPV1 container serialization.
//!
//! Layout (all multi-byte integers little-endian):
//!
//! ```text
//! magic "CPV1" | u16 width | u16 height | u8 block_size | u8 search_radius
//! | u8 quant | u8 flags (bit0 = rle) | u32 frame_count
//! frame 0:      width*height u8 samples (intra, verbatim)
//! frame t >= 1: blocks_y*blocks_x (i8 dy, i8 dx) pairs row-major,
//!               then the residual section (raw i16 LE or rle0 tokens)
//! ```
//!
//! Prediction is closed-loop: frame t is matched and predicted against the
//! reconstruction of frame t-1, so the decoder reproduces the encoder's
//! reference chain bit-exactly for any quant.

use super::rle::{rle0_decode_exact, rle0_encode, RleError};
use super::{
    block_match_full, compute_residual, motion_compensate, reconstruct, CodecConfig, CodecError,
    FramePlane, MotionVector, MvGrid, ResidualPlane,
};

pub const CPV1_MAGIC: [u8; 4] = *b"CPV1";
const FLAG_RLE: u8 = 0x01;

/// Serialized CPV1 byte stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedStream {
    bytes: Vec<u8>,
}

impl CodedStream {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// Everything a CPV1 stream carries: the decoded frames plus the coding
/// priors (one motion grid and one residual plane per inter frame, indexed
/// by target frame minus one).
#[derive(Debug, Clone)]
pub struct DecodedSequence {
    pub frames: Vec<FramePlane>,
    pub motion: Vec<MvGrid>,
    pub residuals: Vec<ResidualPlane>,
    pub config: CodecConfig,
}

pub fn encode_sequence(
    frames: &[FramePlane],
    cfg: &CodecConfig,
) -> Result<CodedStream, CodecError> {
    cfg.validate()?;
    let first = frames.first().ok_or(CodecError::EmptySequence)?;
    cfg.check_frame(first)?;
    if first.width() > u16::MAX as usize || first.height() > u16::MAX as usize {
        return Err(CodecError::InvalidConfig {
            message: format!(
                "frame {}x{} exceeds the u16 header range",
                first.width(),
                first.height()
            ),
        });
    }
    for (i, f) in frames.iter().enumerate() {
        if f.width() != first.width() || f.height() != first.height() {
            return Err(CodecError::InvalidConfig {
                message: format!(
                    "frame {i} is {}x{}, expected {}x{}",
                    f.width(),
                    f.height(),
                    first.width(),
                    first.height()
                ),
            });
        }
    }

    let mut bytes = Vec::new();
    bytes.extend_from_slice(&CPV1_MAGIC);
    bytes.extend_from_slice(&(first.width() as u16).to_le_bytes());
    bytes.extend_from_slice(&(first.height() as u16).to_le_bytes());
    bytes.push(cfg.block_size);
    bytes.push(cfg.search_radius);
    bytes.push(cfg.quant);
    bytes.push(if cfg.rle { FLAG_RLE } else { 0 });
    bytes.extend_from_slice(&(frames.len() as u32).to_le_bytes());

    bytes.extend_from_slice(frames[0].samples());

    let mut reference = frames[0].clone();
    for current in &frames[1..] {
        let mv = block_match_full(&reference, current, cfg)?;
        let prediction = motion_compensate(&reference, &mv)?;
        let residual = compute_residual(current, &prediction, cfg.quant)?;

        for v in mv.vectors() {
            bytes.push(v.dy as u8);
            bytes.push(v.dx as u8);
        }
        if cfg.rle {
            bytes.extend_from_slice(&rle0_encode(residual.values()));
        } else {
            for &v in residual.values() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }

        reference = reconstruct(&prediction, &residual)?;
    }

    Ok(CodedStream { bytes })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, frame: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.bytes.len() {
            return Err(CodecError::Truncated {
                frame,
                offset: self.bytes.len(),
                missing: self.pos + n - self.bytes.len(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, frame: usize) -> Result<u8, CodecError> {
        Ok(this_byte(self.take(1, frame)?))
    }

    fn u16(&mut self, frame: usize) -> Result<u16, CodecError> {
        let b = self.take(2, frame)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, frame: usize) -> Result<u32, CodecError> {
        let b = self.take(4, frame)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[inline]
fn this_byte(b: &[u8]) -> u8 {
    b[0]
}

pub fn decode_sequence(stream: &CodedStream) -> Result<DecodedSequence, CodecError> {
    let mut r = Reader {
        bytes: stream.as_bytes(),
        pos: 0,
    };

    let magic = r.take(4, 0)?;
    if magic != CPV1_MAGIC {
        return Err(CodecError::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let width = r.u16(0)? as usize;
    let height = r.u16(0)? as usize;
    let block_size = r.u8(0)?;
    let search_radius = r.u8(0)?;
    let quant = r.u8(0)?;
    let flags = r.u8(0)?;
    if flags & !FLAG_RLE != 0 {
        return Err(CodecError::Parse {
            offset: r.pos - 1,
            message: format!("reserved flag bits set: 0x{flags:02x}"),
        });
    }
    let frame_count = r.u32(0)? as usize;
    if frame_count == 0 {
        return Err(CodecError::EmptySequence);
    }
    let cfg = CodecConfig {
        block_size,
        search_radius,
        quant,
        rle: flags & FLAG_RLE != 0,
    };
    cfg.validate()
        .map_err(|e| CodecError::Parse {
            offset: 4,
            message: format!("invalid header: {e}"),
        })?;
    if width < block_size as usize || height < block_size as usize {
        return Err(CodecError::Parse {
            offset: 4,
            message: format!("frame {width}x{height} smaller than block size {block_size}"),
        });
    }

    let bs = block_size as usize;
    let blocks_x = width.div_ceil(bs);
    let blocks_y = height.div_ceil(bs);
    let pixels = width * height;

    let intra = r.take(pixels, 0)?.to_vec();
    let mut frames = vec![FramePlane::new(width, height, intra)?];
    let mut motion = Vec::with_capacity(frame_count.saturating_sub(1));
    let mut residuals = Vec::with_capacity(frame_count.saturating_sub(1));

    for frame_idx in 1..frame_count {
        let mut vectors = Vec::with_capacity(blocks_x * blocks_y);
        for block in 0..blocks_x * blocks_y {
            let at = r.pos;
            let pair = r.take(2, frame_idx)?;
            let v = MotionVector {
                dy: pair[0] as i8,
                dx: pair[1] as i8,
            };
            if v.dy.unsigned_abs() > search_radius || v.dx.unsigned_abs() > search_radius {
                return Err(CodecError::VectorOutOfRadius {
                    frame: frame_idx,
                    block_y: block / blocks_x,
                    block_x: block % blocks_x,
                    offset: at,
                    dy: v.dy,
                    dx: v.dx,
                    radius: search_radius,
                });
            }
            vectors.push(v);
        }
        let mv = MvGrid::new(blocks_x, blocks_y, bs, vectors)?;

        let values = if cfg.rle {
            let (values, end) =
                rle0_decode_exact(stream.as_bytes(), r.pos, pixels).map_err(|e| match e {
                    RleError::Truncated { offset, missing } => CodecError::Truncated {
                        frame: frame_idx,
                        offset,
                        missing,
                    },
                    bad => bad.into(),
                })?;
            r.pos = end;
            values
        } else {
            let raw = r.take(pixels * 2, frame_idx)?;
            raw.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect()
        };
        let residual = ResidualPlane::new(width, height, quant, values)?;

        let prediction = motion_compensate(frames.last().unwrap(), &mv)?;
        let recon = reconstruct(&prediction, &residual)?;
        frames.push(recon);
        motion.push(mv);
        residuals.push(residual);
    }

    if r.pos != stream.as_bytes().len() {
        return Err(CodecError::Parse {
            offset: r.pos,
            message: format!(
                "{} trailing bytes after the last frame",
                stream.as_bytes().len() - r.pos
            ),
        });
    }

    Ok(DecodedSequence {
        frames,
        motion,
        residuals,
        config: cfg,
    })
}
