//! Frame ingestion and emission.
//!
//! Clips live on disk either as numbered 8-bit RGB images
//! (`frame_000000.png`, extension detected per file) matching common
//! deblurring dataset layouts, or as raw planar YUV420 where only the luma
//! plane is consumed. The codec operates on luma; restoration operates on
//! full RGB in [0,1].

use crate::codec::FramePlane;
use crate::tensor::Tensor;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("no frames matching frame_NNNNNN.<ext> in {dir}")]
    NoFrames { dir: PathBuf },
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    InconsistentDimensions {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("yuv420 dimensions must be even, got {width}x{height}")]
    OddYuvDimensions { width: usize, height: usize },
    #[error("yuv420 file {path} holds {actual} bytes, not a multiple of the {frame_bytes}-byte frame size")]
    YuvSize {
        path: PathBuf,
        actual: u64,
        frame_bytes: usize,
    },
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
    #[error("failed to decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("failed to encode image {path}: {source}")]
    Encode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("tensor is not a 3xHxW image: shape {shape:?}")]
    NotAnImage { shape: Vec<usize> },
}

/// ITU-R BT.601 luma, rounded to the nearest integer.
#[inline]
pub fn rgb_to_luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299f32 * r as f32 + 0.587f32 * g as f32 + 0.114f32 * b as f32;
    y.round().clamp(0.0, 255.0) as u8
}

/// Interleaved 8-bit RGB frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn to_luma_plane(&self) -> FramePlane {
        let samples = self
            .data
            .chunks_exact(3)
            .map(|px| rgb_to_luma(px[0], px[1], px[2]))
            .collect();
        FramePlane::new(self.width, self.height, samples).expect("rgb frame is well-formed")
    }

    /// 3xHxW tensor with values in [0,1].
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0f32; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                let px = (y * w + x) * 3;
                for c in 0..3 {
                    data[(c * h + y) * w + x] = self.data[px + c] as f32 / 255.0;
                }
            }
        }
        Tensor::new(vec![3, h, w], data).expect("sized above")
    }

    /// Quantize a [0,1] 3xHxW tensor back to 8-bit RGB.
    pub fn from_tensor(t: &Tensor) -> Result<Self, IoError> {
        if t.rank() != 3 || t.shape()[0] != 3 {
            return Err(IoError::NotAnImage {
                shape: t.shape().to_vec(),
            });
        }
        let (h, w) = (t.shape()[1], t.shape()[2]);
        let mut data = vec![0u8; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = t.at3(c, y, x).clamp(0.0, 1.0);
                    data[(y * w + x) * 3 + c] = (v * 255.0).round() as u8;
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }
}

/// `frame_000042.png` style name for a frame index.
pub fn frame_file_name(index: usize, ext: &str) -> String {
    format!("frame_{index:06}.{ext}")
}

fn parse_frame_index(name: &str) -> Option<(usize, &str)> {
    let rest = name.strip_prefix("frame_")?;
    let dot = rest.find('.')?;
    let (digits, ext) = rest.split_at(dot);
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let ext = &ext[1..];
    matches!(ext, "png" | "jpg" | "jpeg" | "bmp").then(|| (digits.parse().ok().unwrap(), ext))
}

/// Scan a directory for `frame_NNNNNN.<ext>` images, sorted by index.
pub fn list_frame_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>, IoError> {
    let entries = fs::read_dir(dir).map_err(|source| IoError::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| IoError::Read {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name();
        if let Some((index, _)) = name.to_str().and_then(parse_frame_index) {
            files.push((index, entry.path()));
        }
    }
    if files.is_empty() {
        return Err(IoError::NoFrames {
            dir: dir.to_path_buf(),
        });
    }
    files.sort();
    Ok(files)
}

/// Load all numbered RGB frames from a directory, enforcing uniform
/// dimensions.
pub fn load_rgb_frames(dir: &Path) -> Result<Vec<RgbFrame>, IoError> {
    let files = list_frame_files(dir)?;
    let mut frames: Vec<RgbFrame> = Vec::with_capacity(files.len());
    for (i, (_, path)) in files.iter().enumerate() {
        let img = image::open(path)
            .map_err(|source| IoError::Decode {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if let Some(first) = frames.first() {
            if w != first.width() || h != first.height() {
                return Err(IoError::InconsistentDimensions {
                    index: i,
                    got_w: w,
                    got_h: h,
                    want_w: first.width(),
                    want_h: first.height(),
                });
            }
        }
        frames.push(RgbFrame::new(w, h, img.into_raw()).expect("image buffer is w*h*3"));
    }
    Ok(frames)
}

/// Write RGB frames as `frame_NNNNNN.png` starting at index 0.
pub fn write_rgb_frames(dir: &Path, frames: &[RgbFrame]) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i, "png"));
        let img = image::RgbImage::from_raw(
            frame.width() as u32,
            frame.height() as u32,
            frame.data().to_vec(),
        )
        .expect("rgb frame is well-formed");
        img.save(&path).map_err(|source| IoError::Encode {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

/// Read the luma planes of a raw planar YUV420 file. Each frame stores
/// `w*h` Y bytes followed by two `(w/2)*(h/2)` chroma planes, which are
/// skipped.
pub fn read_yuv420_luma(path: &Path, width: usize, height: usize) -> Result<Vec<FramePlane>, IoError> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(IoError::OddYuvDimensions { width, height });
    }
    let luma_bytes = width * height;
    let chroma_bytes = (width / 2) * (height / 2) * 2;
    let frame_bytes = luma_bytes + chroma_bytes;

    let mut file = fs::File::open(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let total = file
        .metadata()
        .map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?
        .len();
    if total == 0 || !total.is_multiple_of(frame_bytes as u64) {
        return Err(IoError::YuvSize {
            path: path.to_path_buf(),
            actual: total,
            frame_bytes,
        });
    }

    let count = (total / frame_bytes as u64) as usize;
    let mut frames = Vec::with_capacity(count);
    let mut luma = vec![0u8; luma_bytes];
    let mut chroma = vec![0u8; chroma_bytes];
    for _ in 0..count {
        file.read_exact(&mut luma).map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        file.read_exact(&mut chroma)
            .map_err(|source| IoError::Read {
                path: path.to_path_buf(),
                source,
            })?;
        frames.push(FramePlane::new(width, height, luma.clone()).expect("sized above"));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_conversion_matches_rounded_weights() {
        assert_eq!(rgb_to_luma(0, 0, 0), 0);
        assert_eq!(rgb_to_luma(255, 255, 255), 255);
        // 0.299*100 + 0.587*50 + 0.114*200 = 29.9 + 29.35 + 22.8 = 82.05 -> 82
        assert_eq!(rgb_to_luma(100, 50, 200), 82);
    }

    #[test]
    fn tensor_round_trip_is_exact_for_u8_data() {
        let data: Vec<u8> = (0..4 * 3 * 3).map(|v| (v * 7 % 256) as u8).collect();
        let frame = RgbFrame::new(4, 3, data).unwrap();
        let t = frame.to_tensor();
        assert_eq!(t.shape(), &[3, 3, 4]);
        let back = RgbFrame::from_tensor(&t).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn frame_names_parse_and_reject() {
        assert_eq!(parse_frame_index("frame_000007.png"), Some((7, "png")));
        assert_eq!(parse_frame_index("frame_123456.jpg"), Some((123456, "jpg")));
        assert_eq!(parse_frame_index("frame_12.png"), None);
        assert_eq!(parse_frame_index("other_000001.png"), None);
        assert_eq!(parse_frame_index("frame_000001.tiff"), None);
    }

    #[test]
    fn yuv420_reader_extracts_luma_and_skips_chroma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.yuv");
        let (w, h) = (4usize, 2usize);
        let mut bytes = Vec::new();
        for frame in 0..3u8 {
            bytes.extend((0..w * h).map(|i| frame * 10 + i as u8)); // Y
            bytes.extend(std::iter::repeat_n(0xEE, (w / 2) * (h / 2) * 2)); // U, V
        }
        fs::write(&path, &bytes).unwrap();
        let frames = read_yuv420_luma(&path, w, h).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[1].sample(0, 0), 10);
        assert_eq!(frames[2].sample(1, 3), 27);
    }

    #[test]
    fn yuv420_reader_rejects_partial_frames() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.yuv");
        fs::write(&path, vec![0u8; 10]).unwrap();
        let err = read_yuv420_luma(&path, 4, 2).unwrap_err();
        assert!(matches!(err, IoError::YuvSize { .. }));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<RgbFrame> = (0..2)
            .map(|i| {
                RgbFrame::new(
                    5,
                    4,
                    (0..5 * 4 * 3).map(|v| ((v + i * 31) % 256) as u8).collect(),
                )
                .unwrap()
            })
            .collect();
        write_rgb_frames(dir.path(), &frames).unwrap();
        let loaded = load_rgb_frames(dir.path()).unwrap();
        assert_eq!(loaded, frames);
    }
}
