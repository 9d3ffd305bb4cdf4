//! Full-reference quality metrics and the motion-reuse cost benchmark.
//!
//! PSNR runs over all RGB samples with a 100 dB cap for identical inputs;
//! SSIM runs on luma with the standard 11x11 Gaussian window (sigma 1.5,
//! K1 = 0.01, K2 = 0.03, L = 255) averaged over valid positions. The
//! benchmark contrasts reusing decoded motion grids (zero search cost)
//! against recomputing the full search, confirming both paths agree.

use crate::codec::{
    block_match_full, decode_sequence, encode_sequence, CodecConfig, CodecError, FramePlane,
};
use crate::io::RgbFrame;
use serde::Serialize;
use std::time::Instant;
use thiserror::Error;

pub const PSNR_CAP_DB: f32 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("inputs hold {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },
    #[error("frame {index}: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        index: usize,
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },
    #[error("sequences hold {left} vs {right} frames")]
    FrameCountMismatch { left: usize, right: usize },
    #[error("empty input")]
    Empty,
    #[error("frame {width}x{height} smaller than the {window}x{window} window")]
    TooSmallForWindow {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Peak signal-to-noise ratio in dB over raw 8-bit samples; identical
/// inputs report the cap instead of infinity.
pub fn psnr(a: &[u8], b: &[u8], peak: f64) -> Result<f32, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()) as f32)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filtering, valid positions only.
fn filter_valid(src: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // horizontal pass
    let mut rows = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * src[y * w + x + i];
            }
            rows[y * ow + x] = acc;
        }
    }
    // vertical pass
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Structural similarity on luma planes, mean over valid window positions.
pub fn ssim_luma(a: &FramePlane, b: &FramePlane) -> Result<f32, MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::DimensionMismatch {
            index: 0,
            left_w: a.width(),
            left_h: a.height(),
            right_w: b.width(),
            right_h: b.height(),
        });
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::TooSmallForWindow {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }

    let fa: Vec<f64> = a.samples().iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.samples().iter().map(|&v| v as f64).collect();
    let faa: Vec<f64> = fa.iter().map(|v| v * v).collect();
    let fbb: Vec<f64> = fb.iter().map(|v| v * v).collect();
    let fab: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();

    let kernel = gaussian_kernel();
    let mu_a = filter_valid(&fa, w, h, &kernel);
    let mu_b = filter_valid(&fb, w, h, &kernel);
    let m_aa = filter_valid(&faa, w, h, &kernel);
    let m_bb = filter_valid(&fbb, w, h, &kernel);
    let m_ab = filter_valid(&fab, w, h, &kernel);

    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let mut total = 0.0f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = m_aa[i] - ma * ma;
        let var_b = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let value = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        total += value;
    }
    Ok((total / mu_a.len() as f64) as f32)
}

/// Per-frame and mean scores for a pair of RGB sequences. PSNR is computed
/// over RGB samples, SSIM on luma.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub psnr_db: Vec<f32>,
    pub ssim: Vec<f32>,
    pub mean_psnr_db: f32,
    pub mean_ssim: f32,
}

pub fn report_rgb(a: &[RgbFrame], b: &[RgbFrame]) -> Result<MetricReport, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::FrameCountMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut psnr_db = Vec::with_capacity(a.len());
    let mut ssim = Vec::with_capacity(a.len());
    for (i, (fa, fb)) in a.iter().zip(b).enumerate() {
        if fa.width() != fb.width() || fa.height() != fb.height() {
            return Err(MetricsError::DimensionMismatch {
                index: i,
                left_w: fa.width(),
                left_h: fa.height(),
                right_w: fb.width(),
                right_h: fb.height(),
            });
        }
        psnr_db.push(psnr(fa.data(), fb.data(), 255.0)?);
        ssim.push(ssim_luma(&fa.to_luma_plane(), &fb.to_luma_plane())?);
    }
    let mean_psnr_db = psnr_db.iter().sum::<f32>() / psnr_db.len() as f32;
    let mean_ssim = ssim.iter().sum::<f32>() / ssim.len() as f32;
    Ok(MetricReport {
        psnr_db,
        ssim,
        mean_psnr_db,
        mean_ssim,
    })
}

/// Cost comparison between reusing decoded motion grids and rerunning the
/// full search.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    /// SAD operations spent when motion comes from the decoded stream.
    pub sad_ops_reused: u64,
    /// Closed-form SAD count of the exhaustive search:
    /// pairs x blocks x (2r+1)^2 x block_size^2.
    pub sad_ops_search: u64,
    pub wall_ms_reused: f64,
    pub wall_ms_search: f64,
    /// Both paths must produce the same grids; recorded for the report.
    pub grids_identical: bool,
}

/// Closed-form SAD operation count for one exhaustive search over a frame.
pub fn search_sad_ops(width: usize, height: usize, cfg: &CodecConfig) -> u64 {
    let bs = cfg.block_size as usize;
    let blocks = (width.div_ceil(bs) * height.div_ceil(bs)) as u64;
    let candidates = (2 * cfg.search_radius as u64 + 1).pow(2);
    blocks * candidates * (bs * bs) as u64
}

/// Encode the clip, then time (a) decoding the priors back out of the
/// stream against (b) recomputing motion with the full search on the same
/// inputs the encoder saw.
pub fn bench_alignment_cost(
    frames: &[FramePlane],
    cfg: &CodecConfig,
) -> Result<CostReport, MetricsError> {
    if frames.len() < 2 {
        return Err(MetricsError::Empty);
    }
    let stream = encode_sequence(frames, cfg)?;

    let start = Instant::now();
    let decoded = decode_sequence(&stream)?;
    let wall_ms_reused = start.elapsed().as_secs_f64() * 1e3;

    // The encoder matched each original frame against the previous
    // reconstruction, which the decoder reproduces exactly.
    let start = Instant::now();
    let mut recomputed = Vec::with_capacity(frames.len() - 1);
    for t in 1..frames.len() {
        recomputed.push(block_match_full(&decoded.frames[t - 1], &frames[t], cfg)?);
    }
    let wall_ms_search = start.elapsed().as_secs_f64() * 1e3;

    let per_frame = search_sad_ops(frames[0].width(), frames[0].height(), cfg);
    Ok(CostReport {
        sad_ops_reused: 0,
        sad_ops_search: per_frame * (frames.len() as u64 - 1),
        wall_ms_reused,
        wall_ms_search,
        grids_identical: recomputed == decoded.motion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_plane(w: usize, h: usize, seed: u64) -> FramePlane {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        FramePlane::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn psnr_identical_hits_the_cap() {
        let a = vec![7u8; 100];
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_unit_offset_closed_form() {
        let a = vec![100u8; 64];
        let b = vec![101u8; 64];
        let got = psnr(&a, &b, 255.0).unwrap();
        let want = 20.0 * 255.0f64.log10();
        assert!((got as f64 - want).abs() < 1e-3, "{got} vs {want}");
    }

    #[test]
    fn psnr_full_range_difference_is_zero_db() {
        let a = vec![0u8; 64];
        let b = vec![255u8; 64];
        assert!(psnr(&a, &b, 255.0).unwrap().abs() < 1e-6);
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = random_plane(16, 16, 1);
        let b = random_plane(16, 16, 2);
        assert_eq!(
            psnr(a.samples(), b.samples(), 255.0).unwrap(),
            psnr(b.samples(), a.samples(), 255.0).unwrap()
        );
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random_plane(32, 24, 3);
        let got = ssim_luma(&a, &a).unwrap();
        assert!((got - 1.0).abs() < 1e-6, "{got}");
    }

    /// Direct windowed reference sharing no code with the separable path.
    fn ssim_reference(a: &FramePlane, b: &FramePlane) -> f64 {
        let (w, h) = (a.width(), a.height());
        let mut kernel2d = [[0.0f64; SSIM_WINDOW]; SSIM_WINDOW];
        let center = (SSIM_WINDOW / 2) as f64;
        let mut sum = 0.0;
        for (i, row) in kernel2d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let dy = i as f64 - center;
                let dx = j as f64 - center;
                *v = (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
                sum += *v;
            }
        }
        for row in &mut kernel2d {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
        let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
        let mut total = 0.0;
        let mut count = 0usize;
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let k = kernel2d[i][j];
                        let va = a.sample(y0 + i, x0 + j) as f64;
                        let vb = b.sample(y0 + i, x0 + j) as f64;
                        ma += k * va;
                        mb += k * vb;
                        maa += k * va * va;
                        mbb += k * vb * vb;
                        mab += k * va * vb;
                    }
                }
                let var_a = maa - ma * ma;
                let var_b = mbb - mb * mb;
                let cov = mab - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_inverted_image_matches_reference() {
        let a = random_plane(24, 20, 4);
        let inverted = FramePlane::new(
            24,
            20,
            a.samples().iter().map(|&v| 255 - v).collect(),
        )
        .unwrap();
        let got = ssim_luma(&a, &inverted).unwrap();
        let want = ssim_reference(&a, &inverted);
        assert!(got < 1.0);
        assert!((got as f64 - want).abs() < 1e-4, "{got} vs {want}");
    }

    #[test]
    fn ssim_of_constants_reduces_to_luminance_term() {
        let a = FramePlane::filled(16, 16, 50);
        let b = FramePlane::filled(16, 16, 150);
        let got = ssim_luma(&a, &b).unwrap() as f64;
        let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
        let want = (2.0 * 50.0 * 150.0 + c1) / (50.0f64 * 50.0 + 150.0 * 150.0 + c1);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn ssim_stays_in_range_on_random_pairs() {
        for seed in 0..5 {
            let a = random_plane(20, 20, seed);
            let b = random_plane(20, 20, seed + 100);
            let v = ssim_luma(&a, &b).unwrap();
            assert!((-1.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn cost_formula_matches_hand_count() {
        let cfg = CodecConfig {
            block_size: 16,
            search_radius: 16,
            ..Default::default()
        };
        assert_eq!(search_sad_ops(64, 64, &cfg), 16 * 33 * 33 * 256);
        assert_eq!(search_sad_ops(64, 64, &cfg), 4_460_544);
    }

    #[test]
    fn bench_reports_zero_reuse_cost_and_identical_grids() {
        let frames: Vec<FramePlane> = (0..3).map(|i| random_plane(64, 64, 40 + i)).collect();
        let cfg = CodecConfig {
            block_size: 16,
            search_radius: 4,
            ..Default::default()
        };
        let report = bench_alignment_cost(&frames, &cfg).unwrap();
        assert_eq!(report.sad_ops_reused, 0);
        assert_eq!(report.sad_ops_search, 2 * search_sad_ops(64, 64, &cfg));
        assert!(report.grids_identical);
    }

    #[test]
    fn bench_grids_stay_identical_under_coarse_quant() {
        let frames: Vec<FramePlane> = (0..3).map(|i| random_plane(48, 48, 50 + i)).collect();
        let cfg = CodecConfig {
            block_size: 16,
            search_radius: 2,
            quant: 8,
            ..Default::default()
        };
        let report = bench_alignment_cost(&frames, &cfg).unwrap();
        assert!(report.grids_identical);
    }
}
