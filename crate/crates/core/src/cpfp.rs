//! Motion-guided feature propagation.
//!
//! Per frame, the previous frame's features are warped along the dense
//! motion field, then refined by a modulated deformable convolution whose
//! offsets and mask come from small conv branches with skip connections:
//! the motion field is added onto every predicted tap offset and the
//! residual map onto every mask channel, so zero-initialized branches fall
//! back to pure motion compensation gated by residual magnitude. The
//! refined feature fuses with the running propagation state, and a
//! restoration head adds a global residual back onto the input frames.

use crate::params::{ParamError, ParamFile, TensorRecord};
use crate::priors::{DenseMotionField, ResidualMap};
use crate::tensor::{bilinear_sample, conv2d, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::path::Path;
use thiserror::Error;

pub const CPFP_MAGIC: [u8; 4] = *b"CPFP";

/// Taps of the regular 3x3 deformable kernel, row-major over (-1..=1)^2.
pub const DCN_TAPS: usize = 9;

/// Negative slope shared by every activation in the module.
pub const LEAKY_SLOPE: f32 = 0.1;

#[derive(Debug, Error)]
pub enum CpfpError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("{op}: expected shape {expected}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("mask value {value} at index {index} outside [0,1]")]
    MaskRange { index: usize, value: f32 },
    #[error("{mode} propagation needs {expected} prior entries, got {actual}")]
    PriorCount {
        mode: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("bidirectional propagation requested but backward priors are missing")]
    MissingBackwardPriors,
    #[error("restore: {frames} frames but {features} feature maps")]
    FrameFeatureCount { frames: usize, features: usize },
}

pub(crate) fn leaky_relu(mut t: Tensor) -> Tensor {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
    t
}

/// One convolution layer: weight `O x C x k x k` plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn zeros(out_ch: usize, in_ch: usize, k: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![out_ch, in_ch, k, k]),
            bias: vec![0.0; out_ch],
        }
    }

    /// Uniform(-s, s) weights with s = 1/sqrt(fan_in); zero bias.
    pub fn seeded(out_ch: usize, in_ch: usize, k: usize, rng: &mut ChaCha12Rng) -> Self {
        let fan_in = in_ch * k * k;
        let s = 1.0 / (fan_in as f32).sqrt();
        let weight = Tensor::new(
            vec![out_ch, in_ch, k, k],
            (0..out_ch * in_ch * k * k)
                .map(|_| rng.gen_range(-s..s))
                .collect(),
        )
        .expect("sized above");
        Self {
            weight,
            bias: vec![0.0; out_ch],
        }
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor, TensorError> {
        conv2d(input, &self.weight, &self.bias)
    }
}

/// All learned parameters of the propagation module.
///
/// The two-layer branches apply leaky-ReLU between their convolutions and
/// none after the second, so a zero final layer yields an exactly zero
/// branch output.
#[derive(Debug, Clone, PartialEq)]
pub struct CpfaParams {
    pub seed: u64,
    /// Frame encoder, 3 -> C -> C.
    pub enc1: ConvLayer,
    pub enc2: ConvLayer,
    /// Offset branch, (2 + C + 1) -> C -> 2K.
    pub offset1: ConvLayer,
    pub offset2: ConvLayer,
    /// Mask branch, (2 + C + 1) -> C -> K.
    pub mask1: ConvLayer,
    pub mask2: ConvLayer,
    /// Deformable kernel, C x C x 3 x 3, no bias.
    pub dcn_weight: Tensor,
    /// Fusion of (current, aligned, state), 3C -> C, followed by leaky-ReLU.
    pub fusion: ConvLayer,
    /// Restoration head, C -> C -> 3.
    pub head1: ConvLayer,
    pub head2: ConvLayer,
}

impl CpfaParams {
    pub fn channels(&self) -> usize {
        self.enc1.weight.shape()[0]
    }

    /// Deterministic random initialization. Layers are drawn in a fixed
    /// order so a seed fully determines the parameter set.
    pub fn seeded(channels: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let c = channels;
        let branch_in = 2 + c + 1;
        let enc1 = ConvLayer::seeded(c, 3, 3, &mut rng);
        let enc2 = ConvLayer::seeded(c, c, 3, &mut rng);
        let offset1 = ConvLayer::seeded(c, branch_in, 3, &mut rng);
        let offset2 = ConvLayer::seeded(2 * DCN_TAPS, c, 3, &mut rng);
        let mask1 = ConvLayer::seeded(c, branch_in, 3, &mut rng);
        let mask2 = ConvLayer::seeded(DCN_TAPS, c, 3, &mut rng);
        let dcn_fan = c * DCN_TAPS;
        let s = 1.0 / (dcn_fan as f32).sqrt();
        let dcn_weight = Tensor::new(
            vec![c, c, 3, 3],
            (0..c * c * 9).map(|_| rng.gen_range(-s..s)).collect(),
        )
        .expect("sized above");
        let fusion = ConvLayer::seeded(c, 3 * c, 3, &mut rng);
        let head1 = ConvLayer::seeded(c, c, 3, &mut rng);
        let head2 = ConvLayer::seeded(3, c, 3, &mut rng);
        Self {
            seed,
            enc1,
            enc2,
            offset1,
            offset2,
            mask1,
            mask2,
            dcn_weight,
            fusion,
            head1,
            head2,
        }
    }

    /// Seeded initialization with the branch finals and the head final
    /// zeroed, so offsets reduce to the motion skip, the mask to the
    /// residual skip, and restoration to the identity.
    pub fn seeded_zero_init(channels: usize, seed: u64) -> Self {
        let mut p = Self::seeded(channels, seed);
        p.offset2 = ConvLayer::zeros(2 * DCN_TAPS, channels, 3);
        p.mask2 = ConvLayer::zeros(DCN_TAPS, channels, 3);
        p.head2 = ConvLayer::zeros(3, channels, 3);
        p
    }

    fn layers(&self) -> [(&'static str, &ConvLayer); 9] {
        [
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("offset1", &self.offset1),
            ("offset2", &self.offset2),
            ("mask1", &self.mask1),
            ("mask2", &self.mask2),
            ("fusion", &self.fusion),
            ("head1", &self.head1),
            ("head2", &self.head2),
        ]
    }

    pub fn to_param_file(&self) -> ParamFile {
        let mut records = Vec::new();
        for (name, layer) in self.layers() {
            records.push(TensorRecord {
                name: format!("{name}.weight"),
                tensor: layer.weight.clone(),
            });
            records.push(TensorRecord {
                name: format!("{name}.bias"),
                tensor: Tensor::new(vec![layer.bias.len()], layer.bias.clone())
                    .expect("bias is rank 1"),
            });
        }
        records.push(TensorRecord {
            name: "dcn.weight".into(),
            tensor: self.dcn_weight.clone(),
        });
        ParamFile::new(self.seed, records)
    }

    pub fn from_param_file(mut file: ParamFile) -> Result<Self, CpfpError> {
        let mut layer = |name: &str| -> Result<ConvLayer, CpfpError> {
            let weight = file.take(&format!("{name}.weight"))?;
            let bias = file.take(&format!("{name}.bias"))?;
            Ok(ConvLayer {
                weight,
                bias: bias.into_data(),
            })
        };
        let enc1 = layer("enc1")?;
        let enc2 = layer("enc2")?;
        let offset1 = layer("offset1")?;
        let offset2 = layer("offset2")?;
        let mask1 = layer("mask1")?;
        let mask2 = layer("mask2")?;
        let fusion = layer("fusion")?;
        let head1 = layer("head1")?;
        let head2 = layer("head2")?;
        let dcn_weight = file.take("dcn.weight")?;
        Ok(Self {
            seed: file.seed,
            enc1,
            enc2,
            offset1,
            offset2,
            mask1,
            mask2,
            dcn_weight,
            fusion,
            head1,
            head2,
        })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), CpfpError> {
        Ok(self.to_param_file().write_file(path, CPFP_MAGIC)?)
    }

    pub fn read_file(path: &Path) -> Result<Self, CpfpError> {
        Self::from_param_file(ParamFile::read_file(path, CPFP_MAGIC)?)
    }
}

/// Running feature carried along a propagation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationState {
    pub features: Tensor,
    pub frame_index: usize,
}

impl PropagationState {
    pub fn initial(channels: usize, height: usize, width: usize) -> Self {
        Self {
            features: Tensor::zeros(vec![channels, height, width]),
            frame_index: 0,
        }
    }
}

/// Warp features to the current frame along the motion field:
/// output(y, x) samples `f_prev` at (y + dy, x + dx) with coordinates
/// clamped to the frame, so a zero field is the exact identity.
pub fn warp_features(f_prev: &Tensor, field: &DenseMotionField) -> Result<Tensor, CpfpError> {
    f_prev.expect_rank("warp_features", 3)?;
    let (h, w) = (f_prev.shape()[1], f_prev.shape()[2]);
    if field.height() != h || field.width() != w {
        return Err(CpfpError::Shape {
            op: "warp_features",
            expected: format!("2x{h}x{w} motion field"),
            got: field.tensor().shape().to_vec(),
        });
    }
    let mut coords = Tensor::zeros(vec![2, h, w]);
    for y in 0..h {
        for x in 0..w {
            let sy = (y as f32 + field.dy(y, x)).clamp(0.0, (h - 1) as f32);
            let sx = (x as f32 + field.dx(y, x)).clamp(0.0, (w - 1) as f32);
            coords.set3(0, y, x, sy);
            coords.set3(1, y, x, sx);
        }
    }
    Ok(bilinear_sample(f_prev, &coords)?)
}

fn branch_input(
    v: &DenseMotionField,
    f_warp: &Tensor,
    r: &ResidualMap,
) -> Result<Tensor, CpfpError> {
    Ok(Tensor::concat_channels(&[
        v.tensor(),
        f_warp,
        r.tensor(),
    ])?)
}

/// Tap offsets for the deformable convolution: the conv branch output plus
/// the motion field broadcast onto every tap's (dy, dx) pair.
pub fn predict_offsets(
    v: &DenseMotionField,
    f_warp: &Tensor,
    r: &ResidualMap,
    params: &CpfaParams,
) -> Result<Tensor, CpfpError> {
    let input = branch_input(v, f_warp, r)?;
    let hidden = leaky_relu(params.offset1.apply(&input)?);
    let mut out = params.offset2.apply(&hidden)?;
    let (h, w) = (out.shape()[1], out.shape()[2]);
    for tap in 0..DCN_TAPS {
        for y in 0..h {
            for x in 0..w {
                let dy = out.at3(2 * tap, y, x) + v.dy(y, x);
                let dx = out.at3(2 * tap + 1, y, x) + v.dx(y, x);
                out.set3(2 * tap, y, x, dy);
                out.set3(2 * tap + 1, y, x, dx);
            }
        }
    }
    Ok(out)
}

/// Modulation mask for the deformable convolution: the conv branch output
/// plus the residual map broadcast onto every tap, clamped to [0,1].
pub fn predict_mask(
    v: &DenseMotionField,
    f_warp: &Tensor,
    r: &ResidualMap,
    params: &CpfaParams,
) -> Result<Tensor, CpfpError> {
    let input = branch_input(v, f_warp, r)?;
    let hidden = leaky_relu(params.mask1.apply(&input)?);
    let mut out = params.mask2.apply(&hidden)?;
    let (h, w) = (out.shape()[1], out.shape()[2]);
    for tap in 0..DCN_TAPS {
        for y in 0..h {
            for x in 0..w {
                let m = (out.at3(tap, y, x) + r.value(y, x)).clamp(0.0, 1.0);
                out.set3(tap, y, x, m);
            }
        }
    }
    Ok(out)
}

/// Modulated deformable 3x3 convolution with one offset group.
///
/// Tap k of the regular grid at pixel (y, x) samples `f_prev` at
/// (y + r_k.y + offsets[2k], x + r_k.x + offsets[2k+1]) bilinearly with
/// zero extension, scales by mask[k], and accumulates through the kernel.
/// With zero offsets and a unit mask this is exactly `conv2d` with zero
/// padding and no bias.
pub fn deform_conv(
    f_prev: &Tensor,
    offsets: &Tensor,
    mask: &Tensor,
    weight: &Tensor,
) -> Result<Tensor, CpfpError> {
    f_prev.expect_rank("deform_conv", 3)?;
    offsets.expect_rank("deform_conv", 3)?;
    mask.expect_rank("deform_conv", 3)?;
    weight.expect_rank("deform_conv", 4)?;
    let (c_in, h, w) = (f_prev.shape()[0], f_prev.shape()[1], f_prev.shape()[2]);
    let c_out = weight.shape()[0];
    if weight.shape()[1] != c_in || weight.shape()[2] != 3 || weight.shape()[3] != 3 {
        return Err(CpfpError::Shape {
            op: "deform_conv",
            expected: format!("{c_out}x{c_in}x3x3 weight"),
            got: weight.shape().to_vec(),
        });
    }
    if offsets.shape() != [2 * DCN_TAPS, h, w] {
        return Err(CpfpError::Shape {
            op: "deform_conv",
            expected: format!("{}x{h}x{w} offsets", 2 * DCN_TAPS),
            got: offsets.shape().to_vec(),
        });
    }
    if mask.shape() != [DCN_TAPS, h, w] {
        return Err(CpfpError::Shape {
            op: "deform_conv",
            expected: format!("{DCN_TAPS}x{h}x{w} mask"),
            got: mask.shape().to_vec(),
        });
    }
    if let Some((index, &value)) = mask
        .data()
        .iter()
        .enumerate()
        .find(|(_, m)| !(0.0..=1.0).contains(*m))
    {
        return Err(CpfpError::MaskRange { index, value });
    }

    let mut out = Tensor::zeros(vec![c_out, h, w]);
    // per-pixel sampled taps, shared across output channels (one offset group)
    let mut sampled = vec![0.0f32; c_in * DCN_TAPS];
    for y in 0..h {
        for x in 0..w {
            for tap in 0..DCN_TAPS {
                let ry = tap as i64 / 3 - 1;
                let rx = tap as i64 % 3 - 1;
                let sy = y as f32 + ry as f32 + offsets.at3(2 * tap, y, x);
                let sx = x as f32 + rx as f32 + offsets.at3(2 * tap + 1, y, x);
                for c in 0..c_in {
                    sampled[c * DCN_TAPS + tap] =
                        crate::tensor::sample_plane_zero(f_prev.plane(c), h, w, sy, sx);
                }
            }
            for o in 0..c_out {
                let mut acc = 0.0f32;
                for c in 0..c_in {
                    for tap in 0..DCN_TAPS {
                        let wv = weight.data()[((o * c_in + c) * 3 + tap / 3) * 3 + tap % 3];
                        acc += wv * mask.at3(tap, y, x) * sampled[c * DCN_TAPS + tap];
                    }
                }
                out.set3(o, y, x, acc);
            }
        }
    }
    Ok(out)
}

/// Encode an RGB frame (3xHxW in [0,1]) into the feature space.
pub fn encode_frame(frame: &Tensor, params: &CpfaParams) -> Result<Tensor, CpfpError> {
    let hidden = leaky_relu(params.enc1.apply(frame)?);
    Ok(params.enc2.apply(&hidden)?)
}

/// One alignment step: warp the previous features, predict deformable
/// parameters from (motion, warped, residual), align with the deformable
/// convolution, and fuse (current, aligned, state) into the new state.
pub fn cpfa_step(
    f_t_enc: &Tensor,
    state: &PropagationState,
    f_prev_enc: &Tensor,
    v: &DenseMotionField,
    r: &ResidualMap,
    params: &CpfaParams,
    frame_index: usize,
) -> Result<PropagationState, CpfpError> {
    let f_warp = warp_features(f_prev_enc, v)?;
    let offsets = predict_offsets(v, &f_warp, r, params)?;
    let mask = predict_mask(v, &f_warp, r, params)?;
    let aligned = deform_conv(f_prev_enc, &offsets, &mask, &params.dcn_weight)?;
    let fused_in = Tensor::concat_channels(&[f_t_enc, &aligned, &state.features])?;
    let features = leaky_relu(params.fusion.apply(&fused_in)?);
    Ok(PropagationState {
        features,
        frame_index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMode {
    Forward,
    Bidirectional,
}

impl PropagationMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "forward" => Some(Self::Forward),
            "bidirectional" => Some(Self::Bidirectional),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Forward => "forward",
            Self::Bidirectional => "bidirectional",
        }
    }
}

/// Per-frame priors for one propagation direction.
#[derive(Debug, Clone)]
pub struct FramePriors {
    pub motion: DenseMotionField,
    pub residual: ResidualMap,
}

/// Priors for a whole clip. `forward[t]` aligns frame t-1 onto t;
/// `backward[t]` aligns frame t+1 onto t. Boundary entries are zero by the
/// dataset convention.
#[derive(Debug, Clone)]
pub struct SequencePriors {
    pub forward: Vec<FramePriors>,
    pub backward: Option<Vec<FramePriors>>,
}

fn run_pass(
    inputs: &[Tensor],
    priors: &[FramePriors],
    params: &CpfaParams,
    reverse: bool,
) -> Result<Vec<Tensor>, CpfpError> {
    let t_count = inputs.len();
    let (c, h, w) = (
        params.channels(),
        inputs[0].shape()[1],
        inputs[0].shape()[2],
    );
    let mut state = PropagationState::initial(c, h, w);
    let mut out: Vec<Option<Tensor>> = vec![None; t_count];
    let order: Vec<usize> = if reverse {
        (0..t_count).rev().collect()
    } else {
        (0..t_count).collect()
    };
    for (step, &t) in order.iter().enumerate() {
        let prev = if step == 0 { t } else { order[step - 1] };
        let p = &priors[t];
        state = cpfa_step(&inputs[t], &state, &inputs[prev], &p.motion, &p.residual, params, t)?;
        out[t] = Some(state.features.clone());
    }
    Ok(out.into_iter().map(|f| f.expect("every index visited")).collect())
}

/// Propagate a clip of RGB frames (each 3xHxW in [0,1]) into per-frame
/// features. Forward mode runs one ascending pass with forward priors;
/// bidirectional runs a second, descending pass with backward priors over
/// the forward pass's outputs.
pub fn propagate_sequence(
    frames: &[Tensor],
    priors: &SequencePriors,
    params: &CpfaParams,
    mode: PropagationMode,
) -> Result<Vec<Tensor>, CpfpError> {
    if priors.forward.len() != frames.len() {
        return Err(CpfpError::PriorCount {
            mode: "forward",
            expected: frames.len(),
            actual: priors.forward.len(),
        });
    }
    let encoded: Vec<Tensor> = frames
        .iter()
        .map(|f| encode_frame(f, params))
        .collect::<Result<_, _>>()?;
    let forward_out = run_pass(&encoded, &priors.forward, params, false)?;
    match mode {
        PropagationMode::Forward => Ok(forward_out),
        PropagationMode::Bidirectional => {
            let backward = priors
                .backward
                .as_ref()
                .ok_or(CpfpError::MissingBackwardPriors)?;
            if backward.len() != frames.len() {
                return Err(CpfpError::PriorCount {
                    mode: "backward",
                    expected: frames.len(),
                    actual: backward.len(),
                });
            }
            run_pass(&forward_out, backward, params, true)
        }
    }
}

/// Stage-one restoration: add the head's residual onto each input frame and
/// clamp to [0,1].
pub fn restore(
    frames: &[Tensor],
    features: &[Tensor],
    params: &CpfaParams,
) -> Result<Vec<Tensor>, CpfpError> {
    if frames.len() != features.len() {
        return Err(CpfpError::FrameFeatureCount {
            frames: frames.len(),
            features: features.len(),
        });
    }
    frames
        .iter()
        .zip(features)
        .map(|(frame, feat)| {
            let hidden = leaky_relu(params.head1.apply(feat)?);
            let delta = params.head2.apply(&hidden)?;
            let mut out = frame.clone();
            for (o, d) in out.data_mut().iter_mut().zip(delta.data()) {
                *o = (*o + d).clamp(0.0, 1.0);
            }
            Ok(out)
        })
        .collect()
}
