//! Ancestral sampling over the spaced schedule.
//!
//! Each step estimates noise with the injected predictor, conditioned on
//! control features built once per step from the stage-one frame and the
//! coding priors: stage-one pixels are pooled to the latent grid, projected
//! to tokens, offset by the prompt bias, and passed through
//! prior-modulated attention. The update is the standard epsilon-form
//! posterior mean plus fixed-small noise, with no noise on the final step.

use super::schedule::SamplerSchedule;
use super::{
    cp_attention, downsample_priors, mean_pool, prior_mask, tokens_from_map, CpcError, CpcParams,
    NoisePredictor,
};
use crate::priors::{DenseMotionField, ResidualMap};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Conditioning for one generated frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameConditioning<'a> {
    /// Stage-one restored frame, 3xHxW in [0,1].
    pub stage1: &'a Tensor,
    pub motion: &'a DenseMotionField,
    pub residual: &'a ResidualMap,
    /// Opaque prompt token ids, hashed into a bias vector.
    pub prompt: &'a [u32],
}

/// Prior-modulated control tokens at latent resolution.
#[derive(Debug, Clone)]
pub struct ControlFeatures {
    pub tokens: Tensor,
    pub height: usize,
    pub width: usize,
    pub factor: usize,
}

/// Sinusoidal embedding of a training timestep.
pub fn sinusoidal_time_embedding(timestep: usize, dim: usize) -> Vec<f32> {
    let mut emb = vec![0.0f32; dim];
    let half = dim / 2;
    if half == 0 {
        return emb;
    }
    for i in 0..half {
        let freq = (10000.0f64).powf(-(i as f64) / half as f64);
        let angle = timestep as f64 * freq;
        emb[i] = angle.sin() as f32;
        emb[half + i] = angle.cos() as f32;
    }
    emb
}

/// Hash an opaque prompt token sequence into a small bias vector. An empty
/// prompt contributes nothing.
pub fn prompt_bias(prompt: &[u32], dim: usize) -> Vec<f32> {
    if prompt.is_empty() {
        return vec![0.0; dim];
    }
    // FNV-1a over the little-endian token bytes seeds a deterministic draw
    let mut hash = 0xcbf29ce484222325u64;
    for id in prompt {
        for b in id.to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(hash);
    (0..dim).map(|_| rng.gen_range(-0.1f32..0.1)).collect()
}

/// Build the control tokens for one frame: pooled stage-one pixels
/// projected into token space, shifted by the prompt bias, attended under
/// the prior gate. Priors act only through the gate, i.e. through the
/// modulated query.
pub fn control_features(
    cond: &FrameConditioning,
    params: &CpcParams,
    factor: usize,
) -> Result<ControlFeatures, CpcError> {
    cond.stage1.expect_rank("control_features", 3)?;
    let pooled = mean_pool(cond.stage1, factor)?;
    let (h, w) = (pooled.shape()[1], pooled.shape()[2]);
    let tokens = tokens_from_map(&pooled)?;
    let mut projected = params.cond_proj.apply(&tokens)?;
    let bias = prompt_bias(cond.prompt, params.dim());
    let dim = params.dim();
    for row in 0..h * w {
        for d in 0..dim {
            projected.data_mut()[row * dim + d] += bias[d];
        }
    }

    let latent = downsample_priors(cond.motion, cond.residual, factor)?;
    if latent.motion.shape()[1..] != pooled.shape()[1..] {
        return Err(CpcError::Shape {
            op: "control_features",
            expected: format!("priors covering {h}x{w} latents"),
            got: latent.motion.shape().to_vec(),
        });
    }
    let gate = prior_mask(&latent.motion, &latent.residual, &params.attn)?;
    let tokens = cp_attention(&projected, &gate, &params.attn)?;
    Ok(ControlFeatures {
        tokens,
        height: h,
        width: w,
        factor,
    })
}

/// Standard-normal draws via Box-Muller on a seeded generator.
pub(crate) fn standard_normal(rng: &mut ChaCha12Rng, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        out.push((radius * angle.cos()) as f32);
        if out.len() < n {
            out.push((radius * angle.sin()) as f32);
        }
    }
    out
}

/// Seeded standard-normal tensor, used for the initial sample.
pub fn seeded_noise(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), standard_normal(&mut rng, len)).expect("sized to shape")
}

/// One ancestral update from schedule position `k` down to `k - 1`.
///
/// With a zero noise estimate the update reduces to dividing by
/// sqrt(respaced alpha); the final step (k = 0) injects no noise.
#[allow(clippy::too_many_arguments)]
pub fn denoise_step(
    cond: &FrameConditioning,
    y_t: &Tensor,
    k: usize,
    schedule: &SamplerSchedule,
    predictor: &dyn NoisePredictor,
    params: &CpcParams,
    factor: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Tensor, CpcError> {
    if k >= schedule.steps() {
        return Err(CpcError::StepOutOfRange {
            position: k,
            steps: schedule.steps(),
        });
    }
    let control = control_features(cond, params, factor)?;
    let t_emb = sinusoidal_time_embedding(schedule.indices[k], params.dim());
    let eps = predictor.predict(y_t, &t_emb, &control)?;
    if eps.shape() != y_t.shape() {
        return Err(CpcError::PredictorShape {
            expected: y_t.shape().to_vec(),
            got: eps.shape().to_vec(),
        });
    }

    let beta = schedule.respaced_betas[k];
    let alpha = schedule.respaced_alphas[k];
    let bar = schedule.respaced_alpha_bars[k];
    let bar_prev = if k > 0 {
        schedule.respaced_alpha_bars[k - 1]
    } else {
        1.0
    };

    let eps_coeff = beta / (1.0 - bar).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mut out = Tensor::zeros(y_t.shape().to_vec());
    for ((o, &y), &e) in out.data_mut().iter_mut().zip(y_t.data()).zip(eps.data()) {
        *o = (y - eps_coeff * e) * inv_sqrt_alpha;
    }

    if k > 0 {
        let sigma = ((1.0 - bar_prev) / (1.0 - bar) * beta).sqrt();
        let noise = standard_normal(rng, out.len());
        for (o, z) in out.data_mut().iter_mut().zip(noise) {
            *o += sigma * z;
        }
    }
    Ok(out)
}

/// Run the full spaced chain from an initial sample down to y_0. The seed
/// drives only the per-step ancestral noise; the initial sample is the
/// caller's.
pub fn sample(
    y_init: Tensor,
    cond: &FrameConditioning,
    schedule: &SamplerSchedule,
    predictor: &dyn NoisePredictor,
    params: &CpcParams,
    factor: usize,
    seed: u64,
) -> Result<Tensor, CpcError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut y = y_init;
    for k in (0..schedule.steps()).rev() {
        y = denoise_step(cond, &y, k, schedule, predictor, params, factor, &mut rng)?;
    }
    Ok(y)
}
