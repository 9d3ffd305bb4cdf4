//! Minimal block-based motion-compensated codec.
//!
//! The encoder runs an exhaustive SAD search per block against the
//! reconstructed previous frame (closed-loop prediction, so encoder and
//! decoder state never drift), stores the first frame verbatim, and writes
//! per-frame motion grids plus quantized residuals into the CPV1 container.
//! Motion vectors and residuals are kept as first-class outputs because the
//! rest of the crate consumes them as priors.

pub mod rle;
mod stream;

pub use stream::{decode_sequence, encode_sequence, CodedStream, DecodedSequence};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("plane of {width}x{height} needs {expected} samples, got {actual}")]
    PlaneLength {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("invalid config: {message}")]
    InvalidConfig { message: String },
    #[error("frame {width}x{height} smaller than block size {block_size}")]
    FrameTooSmall {
        width: usize,
        height: usize,
        block_size: u8,
    },
    #[error("motion grid {blocks_x}x{blocks_y} (block {block_size}) does not cover a {width}x{height} frame")]
    GridMismatch {
        blocks_x: usize,
        blocks_y: usize,
        block_size: usize,
        width: usize,
        height: usize,
    },
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("bad magic at offset 0: expected \"CPV1\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("truncated stream in frame {frame}: needed {missing} more bytes at offset {offset}")]
    Truncated {
        frame: usize,
        offset: usize,
        missing: usize,
    },
    #[error("frame {frame}, block ({block_y},{block_x}) at offset {offset}: vector ({dy},{dx}) exceeds declared radius {radius}")]
    VectorOutOfRadius {
        frame: usize,
        block_y: usize,
        block_x: usize,
        offset: usize,
        dy: i8,
        dx: i8,
        radius: u8,
    },
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },
}

/// One 8-bit luma plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePlane {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl FramePlane {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self, CodecError> {
        if width == 0 || height == 0 || samples.len() != width * height {
            return Err(CodecError::PlaneLength {
                width,
                height,
                expected: width * height,
                actual: samples.len(),
            });
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    #[inline]
    pub fn sample(&self, y: usize, x: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    /// Read with coordinates clamped to the plane, so any displacement is a
    /// legal reference position.
    #[inline]
    pub fn sample_clamped(&self, y: i64, x: i64) -> u8 {
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        self.samples[cy * self.width + cx]
    }

    fn same_dims(&self, other: &FramePlane) -> Result<(), CodecError> {
        if self.width != other.width || self.height != other.height {
            return Err(CodecError::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }
}

/// Per-block integer displacement (dy, dx).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MotionVector {
    pub dy: i8,
    pub dx: i8,
}

/// Block grid of motion vectors covering a frame with ceil-partitioned
/// blocks; edge blocks may be partial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MvGrid {
    blocks_x: usize,
    blocks_y: usize,
    block_size: usize,
    vectors: Vec<MotionVector>,
}

impl MvGrid {
    pub fn new(
        blocks_x: usize,
        blocks_y: usize,
        block_size: usize,
        vectors: Vec<MotionVector>,
    ) -> Result<Self, CodecError> {
        if vectors.len() != blocks_x * blocks_y {
            return Err(CodecError::InvalidConfig {
                message: format!(
                    "grid {blocks_x}x{blocks_y} needs {} vectors, got {}",
                    blocks_x * blocks_y,
                    vectors.len()
                ),
            });
        }
        Ok(Self {
            blocks_x,
            blocks_y,
            block_size,
            vectors,
        })
    }

    pub fn zeros_for(width: usize, height: usize, block_size: usize) -> Self {
        let blocks_x = width.div_ceil(block_size);
        let blocks_y = height.div_ceil(block_size);
        Self {
            blocks_x,
            blocks_y,
            block_size,
            vectors: vec![MotionVector::default(); blocks_x * blocks_y],
        }
    }

    pub fn blocks_x(&self) -> usize {
        self.blocks_x
    }

    pub fn blocks_y(&self) -> usize {
        self.blocks_y
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn vectors(&self) -> &[MotionVector] {
        &self.vectors
    }

    #[inline]
    pub fn vector_at(&self, block_y: usize, block_x: usize) -> MotionVector {
        self.vectors[block_y * self.blocks_x + block_x]
    }

    pub fn covers(&self, width: usize, height: usize) -> Result<(), CodecError> {
        if self.blocks_x != width.div_ceil(self.block_size)
            || self.blocks_y != height.div_ceil(self.block_size)
        {
            return Err(CodecError::GridMismatch {
                blocks_x: self.blocks_x,
                blocks_y: self.blocks_y,
                block_size: self.block_size,
                width,
                height,
            });
        }
        Ok(())
    }
}

/// Signed quantized residual plane. Stored values reconstruct as
/// `value * quant`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualPlane {
    width: usize,
    height: usize,
    quant: u8,
    values: Vec<i16>,
}

impl ResidualPlane {
    pub fn new(
        width: usize,
        height: usize,
        quant: u8,
        values: Vec<i16>,
    ) -> Result<Self, CodecError> {
        if values.len() != width * height {
            return Err(CodecError::PlaneLength {
                width,
                height,
                expected: width * height,
                actual: values.len(),
            });
        }
        if quant == 0 {
            return Err(CodecError::InvalidConfig {
                message: "quant must be >= 1".into(),
            });
        }
        Ok(Self {
            width,
            height,
            quant,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn quant(&self) -> u8 {
        self.quant
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    /// Block edge in pixels; 8 or 16.
    pub block_size: u8,
    /// Exhaustive search radius in pixels, 1..=127.
    pub search_radius: u8,
    /// Residual quantization step; 1 is lossless.
    pub quant: u8,
    /// Run-length-code residual sections in the container.
    pub rle: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            block_size: 16,
            search_radius: 16,
            quant: 1,
            rle: true,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.block_size != 8 && self.block_size != 16 {
            return Err(CodecError::InvalidConfig {
                message: format!("block_size must be 8 or 16, got {}", self.block_size),
            });
        }
        if self.search_radius == 0 || self.search_radius > 127 {
            return Err(CodecError::InvalidConfig {
                message: format!("search_radius must be in 1..=127, got {}", self.search_radius),
            });
        }
        if self.quant == 0 {
            return Err(CodecError::InvalidConfig {
                message: "quant must be >= 1".into(),
            });
        }
        Ok(())
    }

    fn check_frame(&self, frame: &FramePlane) -> Result<(), CodecError> {
        if frame.width() < self.block_size as usize || frame.height() < self.block_size as usize {
            return Err(CodecError::FrameTooSmall {
                width: frame.width(),
                height: frame.height(),
                block_size: self.block_size,
            });
        }
        Ok(())
    }
}

/// SAD between the current block at (y0, x0) and the reference displaced by
/// (dy, dx), with edge-clamped reference reads.
#[allow(clippy::too_many_arguments)]
#[inline]
fn block_sad(
    reference: &FramePlane,
    current: &FramePlane,
    y0: usize,
    x0: usize,
    bh: usize,
    bw: usize,
    dy: i64,
    dx: i64,
) -> u32 {
    let mut sad = 0u32;
    for y in 0..bh {
        for x in 0..bw {
            let cur = current.sample(y0 + y, x0 + x) as i32;
            let refv = reference.sample_clamped((y0 + y) as i64 + dy, (x0 + x) as i64 + dx) as i32;
            sad += (cur - refv).unsigned_abs();
        }
    }
    sad
}

/// Exhaustive full search over all |dy|, |dx| <= search_radius per block.
///
/// Ties break toward the smallest |dy|+|dx|, then the smallest dy, then the
/// smallest dx, so the result is a unique minimum independent of enumeration
/// order or thread schedule.
pub fn block_match_full(
    reference: &FramePlane,
    current: &FramePlane,
    cfg: &CodecConfig,
) -> Result<MvGrid, CodecError> {
    cfg.validate()?;
    reference.same_dims(current)?;
    cfg.check_frame(current)?;

    let bs = cfg.block_size as usize;
    let r = cfg.search_radius as i64;
    let blocks_x = current.width().div_ceil(bs);
    let blocks_y = current.height().div_ceil(bs);

    let vectors: Vec<MotionVector> = (0..blocks_y * blocks_x)
        .into_par_iter()
        .map(|idx| {
            let by = idx / blocks_x;
            let bx = idx % blocks_x;
            let y0 = by * bs;
            let x0 = bx * bs;
            let bh = bs.min(current.height() - y0);
            let bw = bs.min(current.width() - x0);

            let mut best = (u32::MAX, i64::MAX, i64::MAX, i64::MAX);
            let mut best_mv = MotionVector::default();
            for dy in -r..=r {
                for dx in -r..=r {
                    let sad = block_sad(reference, current, y0, x0, bh, bw, dy, dx);
                    let key = (sad, dy.abs() + dx.abs(), dy, dx);
                    if key < best {
                        best = key;
                        best_mv = MotionVector {
                            dy: dy as i8,
                            dx: dx as i8,
                        };
                    }
                }
            }
            best_mv
        })
        .collect();

    MvGrid::new(blocks_x, blocks_y, bs, vectors)
}

/// Build the motion-compensated prediction: each block copies from the
/// reference displaced by its vector, with edge-clamped reads.
pub fn motion_compensate(reference: &FramePlane, mv: &MvGrid) -> Result<FramePlane, CodecError> {
    mv.covers(reference.width(), reference.height())?;
    let bs = mv.block_size();
    let mut samples = vec![0u8; reference.width() * reference.height()];
    for y in 0..reference.height() {
        let by = y / bs;
        for x in 0..reference.width() {
            let v = mv.vector_at(by, x / bs);
            samples[y * reference.width() + x] =
                reference.sample_clamped(y as i64 + v.dy as i64, x as i64 + v.dx as i64);
        }
    }
    FramePlane::new(reference.width(), reference.height(), samples)
}

/// Round-half-away-from-zero division, exact in integer arithmetic.
#[inline]
fn quantize_value(diff: i32, quant: i32) -> i16 {
    let magnitude = (2 * diff.abs() + quant) / (2 * quant);
    (if diff < 0 { -magnitude } else { magnitude }) as i16
}

/// Quantized prediction residual: stored value is
/// round_half_away_from_zero((current - prediction) / quant).
pub fn compute_residual(
    current: &FramePlane,
    prediction: &FramePlane,
    quant: u8,
) -> Result<ResidualPlane, CodecError> {
    current.same_dims(prediction)?;
    if quant == 0 {
        return Err(CodecError::InvalidConfig {
            message: "quant must be >= 1".into(),
        });
    }
    let q = quant as i32;
    let values = current
        .samples()
        .iter()
        .zip(prediction.samples())
        .map(|(&c, &p)| quantize_value(c as i32 - p as i32, q))
        .collect();
    ResidualPlane::new(current.width(), current.height(), quant, values)
}

/// Decoder-side reconstruction: clamp(prediction + value * quant, 0, 255).
pub fn reconstruct(
    prediction: &FramePlane,
    residual: &ResidualPlane,
) -> Result<FramePlane, CodecError> {
    if prediction.width() != residual.width() || prediction.height() != residual.height() {
        return Err(CodecError::DimensionMismatch {
            left_w: prediction.width(),
            left_h: prediction.height(),
            right_w: residual.width(),
            right_h: residual.height(),
        });
    }
    let q = residual.quant() as i32;
    let samples = prediction
        .samples()
        .iter()
        .zip(residual.values())
        .map(|(&p, &v)| (p as i32 + v as i32 * q).clamp(0, 255) as u8)
        .collect();
    FramePlane::new(prediction.width(), prediction.height(), samples)
}
