//! Dense f32 tensors and the handful of numeric kernels the rest of the
//! crate is built from: convolution, bilinear sampling (with analytic
//! coordinate gradients), per-token linear maps, and row softmax.
//!
//! Everything here is a pure function of its inputs and safe to call from
//! multiple threads. All arithmetic is f32; callers that need a stronger
//! reference (e.g. finite-difference oracles) evaluate in f64 on their side.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} values, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {axis} mismatch: {left} vs {right}")]
    AxisMismatch {
        op: &'static str,
        axis: &'static str,
        left: usize,
        right: usize,
    },
    #[error("{op}: kernel must be square and odd, got {kh}x{kw}")]
    BadKernel {
        op: &'static str,
        kh: usize,
        kw: usize,
    },
}

/// Row-major dense f32 array. The innermost extent is the last axis, so a
/// `C x H x W` feature map stores channel planes contiguously and a
/// `N x D` token matrix stores one token per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Rank-2 accessor.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f32 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Rank-3 accessor (channel, row, column).
    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f32 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, y: usize, x: usize, v: f32) {
        debug_assert_eq!(self.rank(), 3);
        self.data[(c * self.shape[1] + y) * self.shape[2] + x] = v;
    }

    /// Borrow one channel plane of a rank-3 tensor as a contiguous slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        debug_assert_eq!(self.rank(), 3);
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn expect_rank(&self, op: &'static str, rank: usize) -> Result<(), TensorError> {
        if self.rank() != rank {
            return Err(TensorError::RankMismatch {
                op,
                expected: rank,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        assert!(!parts.is_empty());
        parts[0].expect_rank("concat_channels", 3)?;
        let (h, w) = (parts[0].shape[1], parts[0].shape[2]);
        let mut channels = 0;
        for p in parts {
            p.expect_rank("concat_channels", 3)?;
            if p.shape[1] != h {
                return Err(TensorError::AxisMismatch {
                    op: "concat_channels",
                    axis: "height",
                    left: h,
                    right: p.shape[1],
                });
            }
            if p.shape[2] != w {
                return Err(TensorError::AxisMismatch {
                    op: "concat_channels",
                    axis: "width",
                    left: w,
                    right: p.shape[2],
                });
            }
            channels += p.shape[0];
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Tensor::new(vec![channels, h, w], data)
    }
}

/// 2-D cross-correlation with zero padding of (k-1)/2 and stride 1.
///
/// `input` is `C x H x W`, `weight` is `O x C x k x k` with odd `k`, and
/// `bias` has one entry per output channel. Output is `O x H x W`.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor, TensorError> {
    input.expect_rank("conv2d", 3)?;
    weight.expect_rank("conv2d", 4)?;
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (c_out, wc, kh, kw) = (
        weight.shape[0],
        weight.shape[1],
        weight.shape[2],
        weight.shape[3],
    );
    if wc != c_in {
        return Err(TensorError::AxisMismatch {
            op: "conv2d",
            axis: "input channels",
            left: c_in,
            right: wc,
        });
    }
    if kh != kw || kh.is_multiple_of(2) {
        return Err(TensorError::BadKernel {
            op: "conv2d",
            kh,
            kw,
        });
    }
    if bias.len() != c_out {
        return Err(TensorError::AxisMismatch {
            op: "conv2d",
            axis: "bias length",
            left: bias.len(),
            right: c_out,
        });
    }

    let k = kh;
    let pad = (k - 1) / 2;
    let mut out = Tensor::zeros(vec![c_out, h, w]);
    for o in 0..c_out {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for c in 0..c_in {
                    for ky in 0..k {
                        let sy = y as i64 + ky as i64 - pad as i64;
                        if sy < 0 || sy >= h as i64 {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = x as i64 + kx as i64 - pad as i64;
                            if sx < 0 || sx >= w as i64 {
                                continue;
                            }
                            acc += weight.data[((o * c_in + c) * k + ky) * k + kx]
                                * input.data[(c * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out.set3(o, y, x, acc);
            }
        }
    }
    Ok(out)
}

/// Bilinear read of one plane at an absolute (y, x) position.
/// Out-of-range taps contribute zero.
#[inline]
pub(crate) fn sample_plane_zero(plane: &[f32], h: usize, w: usize, y: f32, x: f32) -> f32 {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let y0 = y0 as i64;
    let x0 = x0 as i64;

    let read = |yy: i64, xx: i64| -> f32 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };

    (1.0 - fy) * (1.0 - fx) * read(y0, x0)
        + (1.0 - fy) * fx * read(y0, x0 + 1)
        + fy * (1.0 - fx) * read(y0 + 1, x0)
        + fy * fx * read(y0 + 1, x0 + 1)
}

/// Bilinear sampling of `src` (`C x H x W`) at absolute pixel positions.
///
/// `coords` is `2 x H' x W'` with channel 0 holding y and channel 1 holding
/// x. Positions outside the source read as zero; integer positions inside
/// reproduce the source value exactly.
pub fn bilinear_sample(src: &Tensor, coords: &Tensor) -> Result<Tensor, TensorError> {
    src.expect_rank("bilinear_sample", 3)?;
    coords.expect_rank("bilinear_sample", 3)?;
    if coords.shape[0] != 2 {
        return Err(TensorError::AxisMismatch {
            op: "bilinear_sample",
            axis: "coordinate channels",
            left: coords.shape[0],
            right: 2,
        });
    }
    let (c, h, w) = (src.shape[0], src.shape[1], src.shape[2]);
    let (oh, ow) = (coords.shape[1], coords.shape[2]);
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    for ch in 0..c {
        let plane = src.plane(ch);
        for i in 0..oh {
            for j in 0..ow {
                let y = coords.at3(0, i, j);
                let x = coords.at3(1, i, j);
                out.set3(ch, i, j, sample_plane_zero(plane, h, w, y, x));
            }
        }
    }
    Ok(out)
}

/// Analytic gradient of [`bilinear_sample`] with respect to the sample
/// coordinates, summed over channels. Output is `2 x H' x W'` with channel 0
/// holding d(sum)/dy and channel 1 holding d(sum)/dx.
///
/// The bilinear surface is only piecewise differentiable; callers keep
/// coordinates away from integer lattice lines.
pub fn bilinear_sample_grad(src: &Tensor, coords: &Tensor) -> Result<Tensor, TensorError> {
    src.expect_rank("bilinear_sample_grad", 3)?;
    coords.expect_rank("bilinear_sample_grad", 3)?;
    if coords.shape[0] != 2 {
        return Err(TensorError::AxisMismatch {
            op: "bilinear_sample_grad",
            axis: "coordinate channels",
            left: coords.shape[0],
            right: 2,
        });
    }
    let (c, h, w) = (src.shape[0], src.shape[1], src.shape[2]);
    let (oh, ow) = (coords.shape[1], coords.shape[2]);
    let mut out = Tensor::zeros(vec![2, oh, ow]);
    for i in 0..oh {
        for j in 0..ow {
            let y = coords.at3(0, i, j);
            let x = coords.at3(1, i, j);
            let y0 = y.floor();
            let x0 = x.floor();
            let fy = y - y0;
            let fx = x - x0;
            let y0 = y0 as i64;
            let x0 = x0 as i64;
            let mut gy = 0.0f32;
            let mut gx = 0.0f32;
            for ch in 0..c {
                let plane = src.plane(ch);
                let read = |yy: i64, xx: i64| -> f32 {
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        0.0
                    } else {
                        plane[yy as usize * w + xx as usize]
                    }
                };
                let v00 = read(y0, x0);
                let v01 = read(y0, x0 + 1);
                let v10 = read(y0 + 1, x0);
                let v11 = read(y0 + 1, x0 + 1);
                gy += (1.0 - fx) * (v10 - v00) + fx * (v11 - v01);
                gx += (1.0 - fy) * (v01 - v00) + fy * (v11 - v10);
            }
            out.set3(0, i, j, gy);
            out.set3(1, i, j, gx);
        }
    }
    Ok(out)
}

/// Affine map applied to every row of an `N x D` token matrix:
/// `out = tokens * weight + bias` with `weight` being `D x E`.
pub fn linear(tokens: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor, TensorError> {
    tokens.expect_rank("linear", 2)?;
    weight.expect_rank("linear", 2)?;
    let (n, d) = (tokens.shape[0], tokens.shape[1]);
    let (wd, e) = (weight.shape[0], weight.shape[1]);
    if d != wd {
        return Err(TensorError::AxisMismatch {
            op: "linear",
            axis: "inner dimension",
            left: d,
            right: wd,
        });
    }
    if bias.len() != e {
        return Err(TensorError::AxisMismatch {
            op: "linear",
            axis: "bias length",
            left: bias.len(),
            right: e,
        });
    }
    let mut out = Tensor::zeros(vec![n, e]);
    for i in 0..n {
        for j in 0..e {
            let mut acc = bias[j];
            for kk in 0..d {
                acc += tokens.data[i * d + kk] * weight.data[kk * e + j];
            }
            out.data[i * e + j] = acc;
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction for stability. Input is any rank-2
/// tensor; each output row sums to 1.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor, TensorError> {
    m.expect_rank("softmax_rows", 2)?;
    let (n, cols) = (m.shape[0], m.shape[1]);
    let mut out = Tensor::zeros(vec![n, cols]);
    for i in 0..n {
        let row = &m.data[i * cols..(i + 1) * cols];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for j in 0..cols {
            let e = (row[j] - max).exp();
            out.data[i * cols + j] = e;
            sum += e;
        }
        for j in 0..cols {
            out.data[i * cols + j] /= sum;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent nested-loop convolution evaluated in f64.
    fn conv2d_reference(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Tensor {
        let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
        let (c_out, k) = (weight.shape[0], weight.shape[2]);
        let pad = (k as i64 - 1) / 2;
        let mut out = Tensor::zeros(vec![c_out, h, w]);
        for o in 0..c_out {
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut acc = bias[o] as f64;
                    for c in 0..c_in {
                        for ky in 0..k as i64 {
                            for kx in 0..k as i64 {
                                let sy = y + ky - pad;
                                let sx = x + kx - pad;
                                if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                                    let widx =
                                        ((o * c_in + c) * k + ky as usize) * k + kx as usize;
                                    acc += weight.data()[widx] as f64
                                        * input.at3(c, sy as usize, sx as usize) as f64;
                                }
                            }
                        }
                    }
                    out.set3(o, y as usize, x as usize, acc as f32);
                }
            }
        }
        out
    }

    /// f64 bilinear evaluation used as the finite-difference oracle target.
    fn bilinear_f64(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f64 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let read = |yy: i64, xx: i64| -> f64 {
            if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                0.0
            } else {
                plane[yy as usize * w + xx as usize] as f64
            }
        };
        let (y0, x0) = (y0 as i64, x0 as i64);
        (1.0 - fy) * (1.0 - fx) * read(y0, x0)
            + (1.0 - fy) * fx * read(y0, x0 + 1)
            + fy * (1.0 - fx) * read(y0 + 1, x0)
            + fy * fx * read(y0 + 1, x0 + 1)
    }

    fn identity_grid(h: usize, w: usize) -> Tensor {
        let mut data = Vec::with_capacity(2 * h * w);
        for y in 0..h {
            for _ in 0..w {
                data.push(y as f32);
            }
        }
        for _ in 0..h {
            for x in 0..w {
                data.push(x as f32);
            }
        }
        Tensor::new(vec![2, h, w], data).unwrap()
    }

    #[test]
    fn conv2d_zero_input_yields_bias() {
        let input = Tensor::zeros(vec![1, 3, 3]);
        let weight = Tensor::new(vec![2, 1, 3, 3], vec![0.7; 18]).unwrap();
        let out = conv2d(&input, &weight, &[1.5, -2.0]).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(out.at3(0, y, x), 1.5);
                assert_eq!(out.at3(1, y, x), -2.0);
            }
        }
    }

    #[test]
    fn conv2d_identity_kernel() {
        let input = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let weight = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let out = conv2d(&input, &weight, &[0.0]).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv2d_ramp_center_equals_neighborhood_sum() {
        let data: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let input = Tensor::new(vec![1, 4, 4], data).unwrap();
        let weight = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let out = conv2d(&input, &weight, &[0.0]).unwrap();
        let reference = conv2d_reference(&input, &weight, &[0.0]);
        // Interior position (1,1): sum of the 3x3 neighborhood around it.
        let expect: f32 = [0, 1, 2, 4, 5, 6, 8, 9, 10].iter().map(|&i| i as f32).sum();
        assert_eq!(out.at3(0, 1, 1), expect);
        for (a, b) in out.data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn conv2d_shape_errors_name_the_axis() {
        let input = Tensor::zeros(vec![2, 3, 3]);
        let weight = Tensor::zeros(vec![1, 3, 3, 3]);
        let err = conv2d(&input, &weight, &[0.0]).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let weight = Tensor::zeros(vec![1, 2, 2, 2]);
        let err = conv2d(&input, &weight, &[0.0]).unwrap_err();
        assert!(err.to_string().contains("kernel"), "{err}");
    }

    #[test]
    fn bilinear_identity_grid_is_exact() {
        let data: Vec<f32> = (0..24).map(|v| v as f32 * 0.37 - 2.0).collect();
        let src = Tensor::new(vec![2, 3, 4], data).unwrap();
        let out = bilinear_sample(&src, &identity_grid(3, 4)).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn bilinear_out_of_range_reads_zero() {
        let src = Tensor::full(vec![1, 2, 2], 9.0);
        let coords = Tensor::new(vec![2, 1, 1], vec![-10.0, -10.0]).unwrap();
        let out = bilinear_sample(&src, &coords).unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn bilinear_center_of_2x2() {
        let src = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let coords = Tensor::new(vec![2, 1, 1], vec![0.5, 0.5]).unwrap();
        let out = bilinear_sample(&src, &coords).unwrap();
        assert!((out.data()[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn bilinear_grad_constant_field_is_zero() {
        let src = Tensor::full(vec![3, 4, 4], 2.5);
        let coords = Tensor::new(vec![2, 1, 1], vec![1.3, 2.7]).unwrap();
        let g = bilinear_sample_grad(&src, &coords).unwrap();
        assert!(g.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn bilinear_grad_closed_form_2x2() {
        let src = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let coords = Tensor::new(vec![2, 1, 1], vec![0.5, 0.5]).unwrap();
        let g = bilinear_sample_grad(&src, &coords).unwrap();
        assert!((g.at3(0, 0, 0) - 2.0).abs() < 1e-6);
        assert!((g.at3(1, 0, 0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bilinear_grad_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let h = 6;
        let w = 5;
        let src = Tensor::new(
            vec![2, h, w],
            (0..2 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let step = 1e-3f64;
        let mut checked = 0;
        while checked < 100 {
            // keep away from lattice lines per the contract
            let y = rng.gen_range(0.0..(h as f32 - 1.0));
            let x = rng.gen_range(0.0..(w as f32 - 1.0));
            if (y.fract() - 0.0).abs() < 1e-2
                || (y.fract() - 1.0).abs() < 1e-2
                || (x.fract() - 0.0).abs() < 1e-2
                || (x.fract() - 1.0).abs() < 1e-2
            {
                continue;
            }
            let coords = Tensor::new(vec![2, 1, 1], vec![y, x]).unwrap();
            let g = bilinear_sample_grad(&src, &coords).unwrap();
            let mut fd_y = 0.0f64;
            let mut fd_x = 0.0f64;
            for c in 0..2 {
                let plane = src.plane(c);
                fd_y += (bilinear_f64(plane, h, w, y as f64 + step, x as f64)
                    - bilinear_f64(plane, h, w, y as f64 - step, x as f64))
                    / (2.0 * step);
                fd_x += (bilinear_f64(plane, h, w, y as f64, x as f64 + step)
                    - bilinear_f64(plane, h, w, y as f64, x as f64 - step))
                    / (2.0 * step);
            }
            for (analytic, fd) in [(g.at3(0, 0, 0) as f64, fd_y), (g.at3(1, 0, 0) as f64, fd_x)] {
                let denom = fd.abs().max(1e-6);
                assert!(
                    (analytic - fd).abs() / denom < 1e-3,
                    "grad mismatch at ({y},{x}): {analytic} vs {fd}"
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn linear_identity_and_bias() {
        let tokens = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let ident = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = linear(&tokens, &ident, &[0.0, 0.0]).unwrap();
        assert_eq!(out, tokens);
        let out = linear(&tokens, &ident, &[3.0, 3.0]).unwrap();
        assert_eq!(out.data(), &[4.0, 5.0]);
        let zeros = Tensor::zeros(vec![3, 2]);
        let out = linear(&zeros, &ident, &[3.0, -1.0]).unwrap();
        assert_eq!(out.data(), &[3.0, -1.0, 3.0, -1.0, 3.0, -1.0]);
    }

    #[test]
    fn linear_inner_dimension_error() {
        let tokens = Tensor::zeros(vec![1, 3]);
        let weight = Tensor::zeros(vec![2, 2]);
        let err = linear(&tokens, &weight, &[0.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("inner dimension"), "{err}");
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let m = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let out = softmax_rows(&m).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);

        let m = Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap();
        let out = softmax_rows(&m).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert!((out.data()[0] - 1.0).abs() < 1e-6);
        assert!(out.data()[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_matches_extended_precision_oracle() {
        let m = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let out = softmax_rows(&m).unwrap();
        let exps: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (got, want) in out.data().iter().zip(exps.iter().map(|e| e / sum)) {
            assert!((*got as f64 - want).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn conv2d_matches_reference_on_random_inputs(
            c_in in 1usize..4,
            c_out in 1usize..4,
            h in 1usize..8,
            w in 1usize..8,
            k in prop::sample::select(vec![1usize, 3, 5]),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let input = Tensor::new(
                vec![c_in, h, w],
                (0..c_in * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ).unwrap();
            let weight = Tensor::new(
                vec![c_out, c_in, k, k],
                (0..c_out * c_in * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ).unwrap();
            let bias: Vec<f32> = (0..c_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = conv2d(&input, &weight, &bias).unwrap();
            let want = conv2d_reference(&input, &weight, &bias);
            for (a, b) in got.data().iter().zip(want.data()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }

        #[test]
        fn bilinear_integer_grid_reproduces_source(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let (c, h, w) = (2usize, 5usize, 6usize);
            let src = Tensor::new(
                vec![c, h, w],
                (0..c * h * w).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            ).unwrap();
            let out = bilinear_sample(&src, &identity_grid(h, w)).unwrap();
            prop_assert_eq!(out, src);
        }

        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            cols in 1usize..6,
            shift in -50.0f32..50.0,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let row: Vec<f32> = (0..cols).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let m = Tensor::new(vec![1, cols], row.clone()).unwrap();
            let out = softmax_rows(&m).unwrap();
            let sum: f32 = out.data().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-5);
            let shifted = Tensor::new(vec![1, cols], row.iter().map(|v| v + shift).collect()).unwrap();
            let out2 = softmax_rows(&shifted).unwrap();
            for (a, b) in out.data().iter().zip(out2.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
