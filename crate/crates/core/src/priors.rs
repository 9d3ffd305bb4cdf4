//! Codec priors in network form: dense per-pixel motion fields, normalized
//! residual maps, and their on-disk sidecar files.
//!
//! Sidecar formats (little-endian):
//! - `.mvf`: magic "MVF1", u16 blocks_x, u16 blocks_y, u8 block_size,
//!   u8 direction (0 = forward, 1 = backward), then (i8 dy, i8 dx) pairs
//!   row-major.
//! - `.crf`: magic "CRF1", u16 width, u16 height, u8 direction, then
//!   width*height f32 values in [0,1].

use crate::codec::{
    block_match_full, compute_residual, motion_compensate, CodecConfig, CodecError, FramePlane,
    MotionVector, MvGrid, ResidualPlane,
};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MVF_MAGIC: [u8; 4] = *b"MVF1";
pub const CRF_MAGIC: [u8; 4] = *b"CRF1";

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("sidecar {path} not found")]
    Missing { path: PathBuf },
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
    #[error("{path}: bad magic, expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },
    #[error("{path}: payload holds {actual} bytes, header declares {expected}")]
    PayloadSize {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: direction byte {found}, expected {expected}")]
    Direction {
        path: PathBuf,
        expected: u8,
        found: u8,
    },
    #[error("residual map value {value} at index {index} outside [0,1]")]
    ResidualRange { index: usize, value: f32 },
    #[error("motion field must be 2xHxW, got {shape:?}")]
    MotionShape { shape: Vec<usize> },
    #[error("residual map must be 1xHxW, got {shape:?}")]
    ResidualShape { shape: Vec<usize> },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

/// Per-pixel displacement field, channel 0 = dy, channel 1 = dx, in pixels.
/// Densified motion grids are piecewise constant over block tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMotionField(Tensor);

impl DenseMotionField {
    pub fn new(tensor: Tensor) -> Result<Self, PriorError> {
        if tensor.rank() != 3 || tensor.shape()[0] != 2 {
            return Err(PriorError::MotionShape {
                shape: tensor.shape().to_vec(),
            });
        }
        Ok(Self(tensor))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor::zeros(vec![2, height, width]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    #[inline]
    pub fn dy(&self, y: usize, x: usize) -> f32 {
        self.0.at3(0, y, x)
    }

    #[inline]
    pub fn dx(&self, y: usize, x: usize) -> f32 {
        self.0.at3(1, y, x)
    }
}

/// Normalized residual magnitude in [0,1], 1xHxW.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMap(Tensor);

impl ResidualMap {
    pub fn new(tensor: Tensor) -> Result<Self, PriorError> {
        if tensor.rank() != 3 || tensor.shape()[0] != 1 {
            return Err(PriorError::ResidualShape {
                shape: tensor.shape().to_vec(),
            });
        }
        if let Some((index, &value)) = tensor
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(PriorError::ResidualRange { index, value });
        }
        Ok(Self(tensor))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Tensor::zeros(vec![1, height, width]))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    #[inline]
    pub fn value(&self, y: usize, x: usize) -> f32 {
        self.0.at3(0, y, x)
    }
}

/// Replicate each block's vector over its pixels (nearest-block; partial
/// edge blocks inherit their block's vector).
pub fn densify_mv(mv: &MvGrid, width: usize, height: usize) -> Result<DenseMotionField, PriorError> {
    mv.covers(width, height)?;
    let bs = mv.block_size();
    let mut data = vec![0.0f32; 2 * height * width];
    for y in 0..height {
        let by = y / bs;
        for x in 0..width {
            let v = mv.vector_at(by, x / bs);
            data[y * width + x] = v.dy as f32;
            data[height * width + y * width + x] = v.dx as f32;
        }
    }
    DenseMotionField::new(Tensor::new(vec![2, height, width], data).expect("sized above"))
}

/// Map a residual plane to [0,1]: min(|value * quant|, 255) / 255.
pub fn normalize_residual(res: &ResidualPlane) -> ResidualMap {
    let quant = res.quant() as i32;
    let data = res
        .values()
        .iter()
        .map(|&v| (v as i32 * quant).unsigned_abs().min(255) as f32 / 255.0)
        .collect();
    ResidualMap::new(
        Tensor::new(vec![1, res.height(), res.width()], data).expect("sized from plane"),
    )
    .expect("values capped to [0,1]")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorDirection {
    Forward = 0,
    Backward = 1,
}

impl PriorDirection {
    pub fn tag(self) -> &'static str {
        match self {
            PriorDirection::Forward => "fwd",
            PriorDirection::Backward => "bwd",
        }
    }

    fn byte(self) -> u8 {
        self as u8
    }
}

pub fn sidecar_paths(dir: &Path, frame_index: usize, direction: PriorDirection) -> (PathBuf, PathBuf) {
    let stem = format!("frame_{frame_index:06}.{}", direction.tag());
    (
        dir.join(format!("{stem}.mvf")),
        dir.join(format!("{stem}.crf")),
    )
}

pub fn write_sidecars(
    dir: &Path,
    frame_index: usize,
    direction: PriorDirection,
    mv: &MvGrid,
    res: &ResidualMap,
) -> Result<(), PriorError> {
    let (mvf_path, crf_path) = sidecar_paths(dir, frame_index, direction);

    let mut mvf = Vec::with_capacity(10 + 2 * mv.vectors().len());
    mvf.extend_from_slice(&MVF_MAGIC);
    mvf.extend_from_slice(&(mv.blocks_x() as u16).to_le_bytes());
    mvf.extend_from_slice(&(mv.blocks_y() as u16).to_le_bytes());
    mvf.push(mv.block_size() as u8);
    mvf.push(direction.byte());
    for v in mv.vectors() {
        mvf.push(v.dy as u8);
        mvf.push(v.dx as u8);
    }
    fs::write(&mvf_path, mvf).map_err(|source| PriorError::Write {
        path: mvf_path.clone(),
        source,
    })?;

    let mut crf = Vec::with_capacity(9 + 4 * res.tensor().len());
    crf.extend_from_slice(&CRF_MAGIC);
    crf.extend_from_slice(&(res.width() as u16).to_le_bytes());
    crf.extend_from_slice(&(res.height() as u16).to_le_bytes());
    crf.push(direction.byte());
    for &v in res.tensor().data() {
        crf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&crf_path, crf).map_err(|source| PriorError::Write {
        path: crf_path.clone(),
        source,
    })
}

fn read_sidecar_bytes(path: &Path) -> Result<Vec<u8>, PriorError> {
    match fs::read(path) {
        Ok(bytes) => Ok(bytes),
        Err(source) if source.kind() == std::io::ErrorKind::NotFound => Err(PriorError::Missing {
            path: path.to_path_buf(),
        }),
        Err(source) => Err(PriorError::Read {
            path: path.to_path_buf(),
            source,
        }),
    }
}

fn check_magic(path: &Path, bytes: &[u8], expected: [u8; 4]) -> Result<(), PriorError> {
    if bytes.len() < 4 || bytes[..4] != expected {
        let mut found = [0u8; 4];
        for (i, b) in bytes.iter().take(4).enumerate() {
            found[i] = *b;
        }
        return Err(PriorError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

pub fn read_sidecars(
    dir: &Path,
    frame_index: usize,
    direction: PriorDirection,
) -> Result<(MvGrid, ResidualMap), PriorError> {
    let (mvf_path, crf_path) = sidecar_paths(dir, frame_index, direction);

    let bytes = read_sidecar_bytes(&mvf_path)?;
    check_magic(&mvf_path, &bytes, MVF_MAGIC)?;
    if bytes.len() < 10 {
        return Err(PriorError::PayloadSize {
            path: mvf_path,
            expected: 10,
            actual: bytes.len(),
        });
    }
    let blocks_x = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let blocks_y = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let block_size = bytes[8] as usize;
    if bytes[9] != direction.byte() {
        return Err(PriorError::Direction {
            path: mvf_path,
            expected: direction.byte(),
            found: bytes[9],
        });
    }
    let expected = 10 + 2 * blocks_x * blocks_y;
    if bytes.len() != expected {
        return Err(PriorError::PayloadSize {
            path: mvf_path,
            expected,
            actual: bytes.len(),
        });
    }
    let vectors = bytes[10..]
        .chunks_exact(2)
        .map(|p| MotionVector {
            dy: p[0] as i8,
            dx: p[1] as i8,
        })
        .collect();
    let mv = MvGrid::new(blocks_x, blocks_y, block_size, vectors)?;

    let bytes = read_sidecar_bytes(&crf_path)?;
    check_magic(&crf_path, &bytes, CRF_MAGIC)?;
    if bytes.len() < 9 {
        return Err(PriorError::PayloadSize {
            path: crf_path,
            expected: 9,
            actual: bytes.len(),
        });
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let height = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if bytes[8] != direction.byte() {
        return Err(PriorError::Direction {
            path: crf_path,
            expected: direction.byte(),
            found: bytes[8],
        });
    }
    let expected = 9 + 4 * width * height;
    if bytes.len() != expected {
        return Err(PriorError::PayloadSize {
            path: crf_path,
            expected,
            actual: bytes.len(),
        });
    }
    let data: Vec<f32> = bytes[9..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let res = ResidualMap::new(Tensor::new(vec![1, height, width], data).expect("sized above"))?;

    Ok((mv, res))
}

/// Dataset-level record of how a sidecar set was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorManifest {
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub block_size: u8,
    pub search_radius: u8,
    pub quant: u8,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl PriorManifest {
    pub fn write(&self, dir: &Path) -> Result<(), PriorError> {
        let path = dir.join(MANIFEST_NAME);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, json).map_err(|source| PriorError::Write { path, source })
    }

    pub fn read(dir: &Path) -> Result<Self, PriorError> {
        let path = dir.join(MANIFEST_NAME);
        let bytes = read_sidecar_bytes(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| PriorError::Manifest {
            path,
            message: e.to_string(),
        })
    }
}

/// Forward (t-1 -> t) and backward (t+1 -> t) priors for one frame.
fn priors_for_pair(
    reference: &FramePlane,
    current: &FramePlane,
    cfg: &CodecConfig,
) -> Result<(MvGrid, ResidualMap), PriorError> {
    let mv = block_match_full(reference, current, cfg)?;
    let prediction = motion_compensate(reference, &mv)?;
    let residual = compute_residual(current, &prediction, cfg.quant)?;
    Ok((mv, normalize_residual(&residual)))
}

/// Compute and persist both prior directions for every frame of a clip.
///
/// Boundary convention: frame 0 gets zero forward priors and the last frame
/// gets zero backward priors, so every frame carries a complete set. The
/// backward direction runs a second matching pass with the roles swapped
/// rather than negating forward vectors.
pub fn augment_dataset(
    frames: &[FramePlane],
    cfg: &CodecConfig,
    out_dir: &Path,
) -> Result<PriorManifest, PriorError> {
    cfg.validate()?;
    let first = frames.first().ok_or(CodecError::EmptySequence)?;
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
            }
            .into());
        }
    }
    fs::create_dir_all(out_dir).map_err(|source| PriorError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let (w, h) = (first.width(), first.height());
    let bs = cfg.block_size as usize;
    let zero_mv = MvGrid::zeros_for(w, h, bs);
    let zero_res = ResidualMap::zeros(h, w);

    frames
        .par_iter()
        .enumerate()
        .try_for_each(|(t, current)| -> Result<(), PriorError> {
            let (fwd_mv, fwd_res) = if t == 0 {
                (zero_mv.clone(), zero_res.clone())
            } else {
                priors_for_pair(&frames[t - 1], current, cfg)?
            };
            write_sidecars(out_dir, t, PriorDirection::Forward, &fwd_mv, &fwd_res)?;

            let (bwd_mv, bwd_res) = if t == frames.len() - 1 {
                (zero_mv.clone(), zero_res.clone())
            } else {
                priors_for_pair(&frames[t + 1], current, cfg)?
            };
            write_sidecars(out_dir, t, PriorDirection::Backward, &bwd_mv, &bwd_res)
        })?;

    let manifest = PriorManifest {
        frame_count: frames.len(),
        width: w,
        height: h,
        block_size: cfg.block_size,
        search_radius: cfg.search_radius,
        quant: cfg.quant,
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_grid(blocks_x: usize, blocks_y: usize, bs: usize, seed: u64) -> MvGrid {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let vectors = (0..blocks_x * blocks_y)
            .map(|_| MotionVector {
                dy: rng.gen_range(-16i8..=16),
                dx: rng.gen_range(-16i8..=16),
            })
            .collect();
        MvGrid::new(blocks_x, blocks_y, bs, vectors).unwrap()
    }

    fn random_map(w: usize, h: usize, seed: u64) -> ResidualMap {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        ResidualMap::new(
            Tensor::new(vec![1, h, w], (0..w * h).map(|_| rng.gen_range(0.0..=1.0)).collect())
                .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_grid_densifies_to_zero_field() {
        let grid = MvGrid::zeros_for(32, 32, 16);
        let field = densify_mv(&grid, 32, 32).unwrap();
        assert!(field.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distinct_tiles_replicate_per_block() {
        let vectors = vec![
            MotionVector { dy: 1, dx: 2 },
            MotionVector { dy: -3, dx: 4 },
            MotionVector { dy: 5, dx: -6 },
            MotionVector { dy: -7, dx: -8 },
        ];
        let grid = MvGrid::new(2, 2, 16, vectors).unwrap();
        let field = densify_mv(&grid, 32, 32).unwrap();
        // corners of each 16x16 tile
        for (by, bx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let v = grid.vector_at(by, bx);
            for (y, x) in [
                (by * 16, bx * 16),
                (by * 16 + 15, bx * 16 + 15),
                (by * 16, bx * 16 + 15),
                (by * 16 + 15, bx * 16),
            ] {
                assert_eq!(field.dy(y, x), v.dy as f32);
                assert_eq!(field.dx(y, x), v.dx as f32);
            }
        }
    }

    #[test]
    fn ceil_partition_assigns_edge_pixels_to_last_block() {
        let grid = random_grid(3, 3, 16, 1);
        let field = densify_mv(&grid, 33, 33).unwrap();
        let v = grid.vector_at(2, 2);
        assert_eq!(field.dy(32, 32), v.dy as f32);
        assert_eq!(field.dx(32, 32), v.dx as f32);
    }

    #[test]
    fn normalization_formula_and_extremes() {
        let plane = ResidualPlane::new(3, 1, 1, vec![0, -255, 51]).unwrap();
        let map = normalize_residual(&plane);
        assert_eq!(map.value(0, 0), 0.0);
        assert_eq!(map.value(0, 1), 1.0);
        assert_eq!(map.value(0, 2), 51.0 / 255.0);
    }

    #[test]
    fn normalization_is_bounded_over_all_i16_values() {
        // exhaustive over the storage type, including values a real encoder
        // would never emit
        for quant in [1u8, 4, 255] {
            for v in i16::MIN..=i16::MAX {
                let plane = ResidualPlane::new(1, 1, quant, vec![v]).unwrap();
                let map = normalize_residual(&plane);
                let out = map.value(0, 0);
                assert!((0.0..=1.0).contains(&out), "v={v} quant={quant} -> {out}");
            }
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = random_grid(4, 3, 16, 2);
        let map = random_map(64, 48, 3);
        write_sidecars(dir.path(), 7, PriorDirection::Backward, &grid, &map).unwrap();
        let (g2, m2) = read_sidecars(dir.path(), 7, PriorDirection::Backward).unwrap();
        assert_eq!(g2, grid);
        assert_eq!(m2, map);
    }

    #[test]
    fn missing_sidecar_names_expected_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_sidecars(dir.path(), 3, PriorDirection::Forward).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frame_000003.fwd.mvf"), "{msg}");
    }

    #[test]
    fn truncated_sidecar_reports_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let grid = random_grid(2, 2, 16, 4);
        let map = random_map(32, 32, 5);
        write_sidecars(dir.path(), 0, PriorDirection::Forward, &grid, &map).unwrap();
        let (mvf_path, _) = sidecar_paths(dir.path(), 0, PriorDirection::Forward);
        let bytes = fs::read(&mvf_path).unwrap();
        fs::write(&mvf_path, &bytes[..bytes.len() - 2]).unwrap();
        let err = read_sidecars(dir.path(), 0, PriorDirection::Forward).unwrap_err();
        match err {
            PriorError::PayloadSize { expected, actual, .. } => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 2);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    fn translating_clip(frames: usize, w: usize, h: usize, dy: i64, dx: i64, seed: u64) -> Vec<FramePlane> {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut clip = vec![FramePlane::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()];
        for t in 1..frames {
            let prev = &clip[t - 1];
            let mut samples = vec![0u8; w * h];
            for y in 0..h {
                for x in 0..w {
                    samples[y * w + x] = prev.sample_clamped(y as i64 + dy, x as i64 + dx);
                }
            }
            clip.push(FramePlane::new(w, h, samples).unwrap());
        }
        clip
    }

    #[test]
    fn augment_writes_complete_prior_sets() {
        let dir = tempfile::tempdir().unwrap();
        let clip = translating_clip(3, 48, 48, 0, 0, 6);
        let cfg = CodecConfig {
            block_size: 16,
            search_radius: 4,
            ..Default::default()
        };
        let manifest = augment_dataset(&clip, &cfg, dir.path()).unwrap();
        assert_eq!(manifest.frame_count, 3);

        let mut count = 0;
        for entry in fs::read_dir(dir.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let name = name.to_str().unwrap().to_string();
            if name.ends_with(".mvf") || name.ends_with(".crf") {
                count += 1;
            }
        }
        assert_eq!(count, 12); // 3 frames x 2 directions x 2 kinds

        // boundary conventions: zero forward priors at t=0, zero backward at t=2
        let (mv0, res0) = read_sidecars(dir.path(), 0, PriorDirection::Forward).unwrap();
        assert!(mv0.vectors().iter().all(|v| v.dy == 0 && v.dx == 0));
        assert!(res0.tensor().data().iter().all(|&v| v == 0.0));
        let (mv2, res2) = read_sidecars(dir.path(), 2, PriorDirection::Backward).unwrap();
        assert!(mv2.vectors().iter().all(|v| v.dy == 0 && v.dx == 0));
        assert!(res2.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn static_clip_produces_zero_residual_maps() {
        let dir = tempfile::tempdir().unwrap();
        let frame = translating_clip(1, 32, 32, 0, 0, 7).pop().unwrap();
        let clip = vec![frame.clone(), frame.clone(), frame];
        let cfg = CodecConfig {
            search_radius: 2,
            ..Default::default()
        };
        augment_dataset(&clip, &cfg, dir.path()).unwrap();
        for t in 0..3 {
            for dir_kind in [PriorDirection::Forward, PriorDirection::Backward] {
                let (_, res) = read_sidecars(dir.path(), t, dir_kind).unwrap();
                assert!(res.tensor().data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn translation_yields_opposed_directions_on_interior_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let clip = translating_clip(3, 64, 64, 1, 1, 8);
        let cfg = CodecConfig {
            block_size: 16,
            search_radius: 4,
            ..Default::default()
        };
        augment_dataset(&clip, &cfg, dir.path()).unwrap();
        for t in 1..3 {
            let (fwd, _) = read_sidecars(dir.path(), t, PriorDirection::Forward).unwrap();
            for by in 1..fwd.blocks_y() - 1 {
                for bx in 1..fwd.blocks_x() - 1 {
                    let v = fwd.vector_at(by, bx);
                    assert_eq!((v.dy, v.dx), (1, 1), "forward t={t} block ({by},{bx})");
                }
            }
        }
        for t in 0..2 {
            let (bwd, _) = read_sidecars(dir.path(), t, PriorDirection::Backward).unwrap();
            for by in 1..bwd.blocks_y() - 1 {
                for bx in 1..bwd.blocks_x() - 1 {
                    let v = bwd.vector_at(by, bx);
                    assert_eq!((v.dy, v.dx), (-1, -1), "backward t={t} block ({by},{bx})");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn densified_field_matches_grid_at_block_origins(seed in any::<u64>()) {
            let grid = random_grid(3, 2, 16, seed);
            let field = densify_mv(&grid, 41, 27).unwrap();
            for by in 0..grid.blocks_y() {
                for bx in 0..grid.blocks_x() {
                    let v = grid.vector_at(by, bx);
                    prop_assert_eq!(field.dy(by * 16, bx * 16), v.dy as f32);
                    prop_assert_eq!(field.dx(by * 16, bx * 16), v.dx as f32);
                }
            }
        }

        #[test]
        fn sidecar_round_trip_is_bit_exact(seed in any::<u64>()) {
            let dir = tempfile::tempdir().unwrap();
            let grid = random_grid(2, 3, 8, seed);
            let map = random_map(16, 24, seed.wrapping_add(1));
            write_sidecars(dir.path(), 1, PriorDirection::Forward, &grid, &map).unwrap();
            let (g2, m2) = read_sidecars(dir.path(), 1, PriorDirection::Forward).unwrap();
            prop_assert_eq!(g2, grid);
            // compare raw bits, not just PartialEq on f32
            let a: Vec<u32> = map.tensor().data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = m2.tensor().data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
