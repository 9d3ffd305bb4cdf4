//! Prior-modulated attention and the sampling loop around it.
//!
//! Motion and residual priors are projected into a per-token gate in (0,1)
//! that modulates the attention query: the standard query is augmented with
//! a projection of the gated tokens, steering attention toward pixels the
//! codec flagged as poorly predicted. The sampler runs an ancestral update
//! over a spaced subset of the training schedule, with the noise estimate
//! supplied by a pluggable predictor chosen by name from a registry.

mod predictor;
mod sampler;
mod schedule;

pub use predictor::{
    NoisePredictor, PredictorFactory, PredictorRegistry, ToyPredictor, ZeroPredictor,
};
pub use sampler::{
    control_features, denoise_step, prompt_bias, sample, seeded_noise, sinusoidal_time_embedding,
    ControlFeatures, FrameConditioning,
};
pub use schedule::{build_schedule, SamplerSchedule, BETA_END, BETA_START};

use crate::params::{ParamError, ParamFile, TensorRecord};
use crate::priors::{DenseMotionField, ResidualMap};
use crate::tensor::{linear, softmax_rows, Tensor, TensorError};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::path::Path;
use thiserror::Error;

pub const CPCA_MAGIC: [u8; 4] = *b"CPCA";

#[derive(Debug, Error)]
pub enum CpcError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("{op}: expected {expected}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("invalid schedule: {message}")]
    Schedule { message: String },
    #[error("schedule position {position} out of range for {steps} sampling steps")]
    StepOutOfRange { position: usize, steps: usize },
    #[error("dim {dim} not divisible by {heads} heads")]
    HeadSplit { dim: usize, heads: usize },
    #[error("unknown predictor {name:?}; known: {known}")]
    UnknownPredictor { name: String, known: String },
    #[error("predictor returned shape {got:?}, expected {expected:?}")]
    PredictorShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("downsample factor must be >= 1")]
    BadFactor,
}

/// Per-token affine map, weight `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![in_dim, out_dim]),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = Tensor::zeros(vec![dim, dim]);
        for i in 0..dim {
            weight.data_mut()[i * dim + i] = 1.0;
        }
        Self {
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn seeded(in_dim: usize, out_dim: usize, rng: &mut ChaCha12Rng) -> Self {
        let s = 1.0 / (in_dim as f32).sqrt();
        let weight = Tensor::new(
            vec![in_dim, out_dim],
            (0..in_dim * out_dim).map(|_| rng.gen_range(-s..s)).collect(),
        )
        .expect("sized above");
        Self {
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn apply(&self, tokens: &Tensor) -> Result<Tensor, TensorError> {
        linear(tokens, &self.weight, &self.bias)
    }
}

/// Attention parameters: the prior-gate projection (3 -> 1) and the four
/// token projections (D -> D).
#[derive(Debug, Clone, PartialEq)]
pub struct CpcAttnParams {
    pub dim: usize,
    pub heads: usize,
    /// (dy, dx, r) -> gate logit; a sigmoid keeps the gate in (0,1).
    pub mask_proj: LinearLayer,
    pub query: LinearLayer,
    pub query_mod: LinearLayer,
    pub key: LinearLayer,
    pub value: LinearLayer,
}

impl CpcAttnParams {
    pub fn validate(&self) -> Result<(), CpcError> {
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(CpcError::HeadSplit {
                dim: self.dim,
                heads: self.heads,
            });
        }
        Ok(())
    }
}

/// Full parameter set for the generation stage: attention projections, the
/// conditioning projection for stage-one frames, and the toy predictor's
/// own layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CpcParams {
    pub seed: u64,
    pub attn: CpcAttnParams,
    /// Stage-one pixel channels -> token space.
    pub cond_proj: LinearLayer,
    /// Toy predictor: noisy-sample pixels -> token space.
    pub toy_input: LinearLayer,
    /// Toy predictor: control-token mixer.
    pub toy_mix: LinearLayer,
    /// Toy predictor: token space -> noise-estimate pixels.
    pub toy_out: LinearLayer,
}

impl CpcParams {
    pub fn dim(&self) -> usize {
        self.attn.dim
    }

    /// Deterministic random initialization; layers drawn in a fixed order.
    pub fn seeded(dim: usize, heads: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let attn = CpcAttnParams {
            dim,
            heads,
            mask_proj: LinearLayer::seeded(3, 1, &mut rng),
            query: LinearLayer::seeded(dim, dim, &mut rng),
            query_mod: LinearLayer::seeded(dim, dim, &mut rng),
            key: LinearLayer::seeded(dim, dim, &mut rng),
            value: LinearLayer::seeded(dim, dim, &mut rng),
        };
        Self {
            seed,
            attn,
            cond_proj: LinearLayer::seeded(3, dim, &mut rng),
            toy_input: LinearLayer::seeded(3, dim, &mut rng),
            toy_mix: LinearLayer::seeded(dim, dim, &mut rng),
            toy_out: LinearLayer::seeded(dim, 3, &mut rng),
        }
    }

    /// Seeded initialization with the modulation projection zeroed, which
    /// reduces the attention to its standard prior-free form.
    pub fn seeded_zero_init(dim: usize, heads: usize, seed: u64) -> Self {
        let mut p = Self::seeded(dim, heads, seed);
        p.attn.query_mod = LinearLayer::zeros(dim, dim);
        p
    }

    fn layers(&self) -> [(&'static str, &LinearLayer); 9] {
        [
            ("mask_proj", &self.attn.mask_proj),
            ("query", &self.attn.query),
            ("query_mod", &self.attn.query_mod),
            ("key", &self.attn.key),
            ("value", &self.attn.value),
            ("cond_proj", &self.cond_proj),
            ("toy_input", &self.toy_input),
            ("toy_mix", &self.toy_mix),
            ("toy_out", &self.toy_out),
        ]
    }

    pub fn to_param_file(&self) -> ParamFile {
        let mut records = vec![TensorRecord {
            name: "meta".into(),
            tensor: Tensor::new(vec![2], vec![self.attn.dim as f32, self.attn.heads as f32])
                .expect("rank 1 pair"),
        }];
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
        ParamFile::new(self.seed, records)
    }

    pub fn from_param_file(mut file: ParamFile) -> Result<Self, CpcError> {
        let meta = file.take("meta")?;
        if meta.len() != 2 {
            return Err(CpcError::Shape {
                op: "from_param_file",
                expected: "meta record of [dim, heads]".into(),
                got: meta.shape().to_vec(),
            });
        }
        let dim = meta.data()[0] as usize;
        let heads = meta.data()[1] as usize;
        let seed = file.seed;
        let mut layer = |name: &str| -> Result<LinearLayer, CpcError> {
            let weight = file.take(&format!("{name}.weight"))?;
            let bias = file.take(&format!("{name}.bias"))?;
            Ok(LinearLayer {
                weight,
                bias: bias.into_data(),
            })
        };
        let params = Self {
            seed,
            attn: CpcAttnParams {
                dim,
                heads,
                mask_proj: layer("mask_proj")?,
                query: layer("query")?,
                query_mod: layer("query_mod")?,
                key: layer("key")?,
                value: layer("value")?,
            },
            cond_proj: layer("cond_proj")?,
            toy_input: layer("toy_input")?,
            toy_mix: layer("toy_mix")?,
            toy_out: layer("toy_out")?,
        };
        params.attn.validate()?;
        Ok(params)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), CpcError> {
        Ok(self.to_param_file().write_file(path, CPCA_MAGIC)?)
    }

    pub fn read_file(path: &Path) -> Result<Self, CpcError> {
        Self::from_param_file(ParamFile::read_file(path, CPCA_MAGIC)?)
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Flatten a `C x H x W` map into `(H*W) x C` tokens, row-major over pixels.
pub fn tokens_from_map(map: &Tensor) -> Result<Tensor, CpcError> {
    map.expect_rank("tokens_from_map", 3)?;
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let mut data = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(y * w + x) * c + ch] = map.at3(ch, y, x);
            }
        }
    }
    Ok(Tensor::new(vec![h * w, c], data).expect("sized above"))
}

/// Inverse of [`tokens_from_map`] for a known latent geometry.
pub fn map_from_tokens(tokens: &Tensor, h: usize, w: usize) -> Result<Tensor, CpcError> {
    tokens.expect_rank("map_from_tokens", 2)?;
    let (n, c) = (tokens.shape()[0], tokens.shape()[1]);
    if n != h * w {
        return Err(CpcError::Shape {
            op: "map_from_tokens",
            expected: format!("{} tokens for {h}x{w}", h * w),
            got: tokens.shape().to_vec(),
        });
    }
    let mut data = vec![0.0f32; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = tokens.at2(y * w + x, ch);
            }
        }
    }
    Ok(Tensor::new(vec![c, h, w], data).expect("sized above"))
}

/// Per-token prior gate: sigmoid(mask_proj(dy, dx, r)), one scalar per
/// latent pixel, returned as `N x 1`.
pub fn prior_mask(
    v_latent: &Tensor,
    r_latent: &Tensor,
    params: &CpcAttnParams,
) -> Result<Tensor, CpcError> {
    v_latent.expect_rank("prior_mask", 3)?;
    r_latent.expect_rank("prior_mask", 3)?;
    if v_latent.shape()[0] != 2
        || r_latent.shape()[0] != 1
        || v_latent.shape()[1..] != r_latent.shape()[1..]
    {
        return Err(CpcError::Shape {
            op: "prior_mask",
            expected: "2xHxW motion with matching 1xHxW residual".into(),
            got: v_latent.shape().to_vec(),
        });
    }
    let joint = Tensor::concat_channels(&[v_latent, r_latent])?;
    let tokens = tokens_from_map(&joint)?;
    let mut logits = params.mask_proj.apply(&tokens)?;
    for v in logits.data_mut() {
        *v = sigmoid(*v);
    }
    Ok(logits)
}

/// Latent-resolution priors from pixel-resolution ones.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPriors {
    pub motion: Tensor,
    pub residual: Tensor,
}

/// Mean pooling over `factor x factor` tiles with ceil partitioning; edge
/// tiles average over their in-bounds pixels.
pub fn mean_pool(map: &Tensor, factor: usize) -> Result<Tensor, CpcError> {
    if factor == 0 {
        return Err(CpcError::BadFactor);
    }
    map.expect_rank("mean_pool", 3)?;
    if factor == 1 {
        return Ok(map.clone());
    }
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    for ch in 0..c {
        for ty in 0..oh {
            for tx in 0..ow {
                let y1 = ((ty + 1) * factor).min(h);
                let x1 = ((tx + 1) * factor).min(w);
                let mut acc = 0.0f32;
                let mut count = 0usize;
                for y in ty * factor..y1 {
                    for x in tx * factor..x1 {
                        acc += map.at3(ch, y, x);
                        count += 1;
                    }
                }
                out.set3(ch, ty, tx, acc / count as f32);
            }
        }
    }
    Ok(out)
}

/// Resample priors to a transformer layer's latent resolution: mean pooling
/// for both, with motion magnitudes rescaled by 1/factor because
/// displacements shrink with resolution.
pub fn downsample_priors(
    v: &DenseMotionField,
    r: &ResidualMap,
    factor: usize,
) -> Result<LatentPriors, CpcError> {
    let mut motion = mean_pool(v.tensor(), factor)?;
    if factor > 1 {
        let inv = 1.0 / factor as f32;
        for val in motion.data_mut() {
            *val *= inv;
        }
    }
    let residual = mean_pool(r.tensor(), factor)?;
    Ok(LatentPriors { motion, residual })
}

/// Per-head softmaxed attention maps for prior-modulated attention. Exposed
/// so callers can check the row-stochastic contract directly.
pub fn attention_weights(
    f: &Tensor,
    gate: &Tensor,
    params: &CpcAttnParams,
) -> Result<Vec<Tensor>, CpcError> {
    params.validate()?;
    f.expect_rank("cp_attention", 2)?;
    let (n, d) = (f.shape()[0], f.shape()[1]);
    if d != params.dim {
        return Err(CpcError::Shape {
            op: "cp_attention",
            expected: format!("Nx{} tokens", params.dim),
            got: f.shape().to_vec(),
        });
    }
    if gate.shape() != [n, 1] {
        return Err(CpcError::Shape {
            op: "cp_attention",
            expected: format!("{n}x1 gate"),
            got: gate.shape().to_vec(),
        });
    }

    let mut gated = f.clone();
    for i in 0..n {
        let a = gate.at2(i, 0);
        for j in 0..d {
            gated.data_mut()[i * d + j] *= a;
        }
    }
    let q = params.query.apply(f)?;
    let qm = params.query_mod.apply(&gated)?;
    let mut q_mod = q;
    for (a, b) in q_mod.data_mut().iter_mut().zip(qm.data()) {
        *a += b;
    }
    let k = params.key.apply(f)?;

    let hd = d / params.heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut maps = Vec::with_capacity(params.heads);
    for head in 0..params.heads {
        let col0 = head * hd;
        let mut scores = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0f32;
                for c in 0..hd {
                    acc += q_mod.at2(i, col0 + c) * k.at2(j, col0 + c);
                }
                scores.data_mut()[i * n + j] = acc * scale;
            }
        }
        maps.push(softmax_rows(&scores)?);
    }
    Ok(maps)
}

/// Prior-modulated multi-head self-attention over `N x D` tokens.
///
/// The query is `query(F) + query_mod(F * gate)` with the per-token gate
/// broadcast over channels; keys and values are standard projections, heads
/// are softmax-normalized independently and concatenated.
pub fn cp_attention(
    f: &Tensor,
    gate: &Tensor,
    params: &CpcAttnParams,
) -> Result<Tensor, CpcError> {
    let maps = attention_weights(f, gate, params)?;
    let (n, d) = (f.shape()[0], f.shape()[1]);
    let val = params.value.apply(f)?;
    let hd = d / params.heads;
    let mut out = Tensor::zeros(vec![n, d]);
    for (head, map) in maps.iter().enumerate() {
        let col0 = head * hd;
        for i in 0..n {
            for c in 0..hd {
                let mut acc = 0.0f32;
                for j in 0..n {
                    acc += map.at2(i, j) * val.at2(j, col0 + c);
                }
                out.data_mut()[i * d + col0 + c] = acc;
            }
        }
    }
    Ok(out)
}
