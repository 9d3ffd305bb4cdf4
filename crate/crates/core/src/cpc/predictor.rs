//! Pluggable noise predictors.
//!
//! The sampler only needs a callable that estimates the injected noise from
//! the current sample, a timestep embedding, and the prior-modulated control
//! features. Implementations register by name; the CLI selects one at
//! runtime. Two ship built in: "zero" (closed-form tests, pure ancestral
//! scaling) and "toy" (a two-layer network fed by the attention block, for
//! exercising the full conditioning path).

use super::sampler::ControlFeatures;
use super::{CpcError, CpcParams};
use crate::cpfp::leaky_relu;
use crate::tensor::Tensor;

pub trait NoisePredictor: Send + Sync {
    /// Estimate the noise component of `y_t` (same shape as `y_t`).
    fn predict(
        &self,
        y_t: &Tensor,
        t_emb: &[f32],
        control: &ControlFeatures,
    ) -> Result<Tensor, CpcError>;
}

/// Predicts zero noise everywhere; the ancestral update degenerates to a
/// deterministic rescaling, which closed-form tests rely on.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(
        &self,
        y_t: &Tensor,
        _t_emb: &[f32],
        _control: &ControlFeatures,
    ) -> Result<Tensor, CpcError> {
        Ok(Tensor::zeros(y_t.shape().to_vec()))
    }
}

/// Two-layer predictor: mixes the upsampled control tokens with a
/// projection of the noisy sample and the timestep embedding, then maps
/// back to pixel channels.
#[derive(Debug, Clone)]
pub struct ToyPredictor {
    input_proj: super::LinearLayer,
    mix: super::LinearLayer,
    out: super::LinearLayer,
}

impl ToyPredictor {
    pub fn from_params(params: &CpcParams) -> Self {
        Self {
            input_proj: params.toy_input.clone(),
            mix: params.toy_mix.clone(),
            out: params.toy_out.clone(),
        }
    }
}

impl NoisePredictor for ToyPredictor {
    fn predict(
        &self,
        y_t: &Tensor,
        t_emb: &[f32],
        control: &ControlFeatures,
    ) -> Result<Tensor, CpcError> {
        y_t.expect_rank("toy predictor", 3)?;
        let (c, h, w) = (y_t.shape()[0], y_t.shape()[1], y_t.shape()[2]);
        if c != 3 {
            return Err(CpcError::Shape {
                op: "toy predictor",
                expected: "3xHxW sample".into(),
                got: y_t.shape().to_vec(),
            });
        }
        let dim = self.mix.weight.shape()[0];
        if t_emb.len() != dim {
            return Err(CpcError::Shape {
                op: "toy predictor",
                expected: format!("{dim}-dim timestep embedding"),
                got: vec![t_emb.len()],
            });
        }

        let y_tokens = super::tokens_from_map(y_t)?;
        let y_proj = self.input_proj.apply(&y_tokens)?;
        let mixed = self.mix.apply(&control.tokens)?;

        // nearest upsampling of the latent control grid onto pixels
        let mut hidden = Tensor::zeros(vec![h * w, dim]);
        for y in 0..h {
            let ly = (y / control.factor).min(control.height - 1);
            for x in 0..w {
                let lx = (x / control.factor).min(control.width - 1);
                let latent_row = ly * control.width + lx;
                let row = y * w + x;
                for d in 0..dim {
                    hidden.data_mut()[row * dim + d] =
                        mixed.at2(latent_row, d) + y_proj.at2(row, d) + t_emb[d];
                }
            }
        }
        let hidden = leaky_relu(hidden);
        let eps_tokens = self.out.apply(&hidden)?;
        super::map_from_tokens(&eps_tokens, h, w)
    }
}

pub type PredictorFactory = fn(&CpcParams) -> Box<dyn NoisePredictor>;

/// Name-indexed predictor construction; the lookup key is the CLI-facing
/// strategy name.
pub struct PredictorRegistry {
    entries: Vec<(&'static str, PredictorFactory)>,
}

impl PredictorRegistry {
    /// Registry with the built-in predictors.
    pub fn builtin() -> Self {
        let mut registry = Self {
            entries: Vec::new(),
        };
        registry.register("zero", |_| Box::new(ZeroPredictor));
        registry.register("toy", |params| Box::new(ToyPredictor::from_params(params)));
        registry
    }

    pub fn register(&mut self, name: &'static str, factory: PredictorFactory) {
        if let Some(entry) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            entry.1 = factory;
        } else {
            self.entries.push((name, factory));
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(
        &self,
        name: &str,
        params: &CpcParams,
    ) -> Result<Box<dyn NoisePredictor>, CpcError> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, factory)| factory(params))
            .ok_or_else(|| CpcError::UnknownPredictor {
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }
}

impl Default for PredictorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_control(dim: usize) -> ControlFeatures {
        ControlFeatures {
            tokens: Tensor::zeros(vec![4, dim]),
            height: 2,
            width: 2,
            factor: 1,
        }
    }

    #[test]
    fn zero_predictor_returns_zeros() {
        let y = Tensor::full(vec![3, 2, 2], 5.0);
        let eps = ZeroPredictor
            .predict(&y, &[0.0; 8], &dummy_control(8))
            .unwrap();
        assert_eq!(eps.shape(), y.shape());
        assert!(eps.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn registry_lists_and_creates_builtins() {
        let registry = PredictorRegistry::builtin();
        assert_eq!(registry.names(), vec!["zero", "toy"]);
        let params = CpcParams::seeded(8, 1, 3);
        assert!(registry.create("zero", &params).is_ok());
        assert!(registry.create("toy", &params).is_ok());
        let msg = match registry.create("resnet", &params) {
            Err(e) => e.to_string(),
            Ok(_) => panic!("unknown name must fail"),
        };
        assert!(msg.contains("resnet") && msg.contains("zero") && msg.contains("toy"), "{msg}");
    }

    #[test]
    fn toy_predictor_depends_on_all_three_inputs() {
        let params = CpcParams::seeded(8, 1, 4);
        let toy = ToyPredictor::from_params(&params);
        let y = Tensor::full(vec![3, 2, 2], 0.3);
        let control = dummy_control(8);
        let base = toy.predict(&y, &[0.1; 8], &control).unwrap();

        let other_y = Tensor::full(vec![3, 2, 2], 0.7);
        assert_ne!(toy.predict(&other_y, &[0.1; 8], &control).unwrap(), base);

        assert_ne!(toy.predict(&y, &[0.9; 8], &control).unwrap(), base);

        let other_control = ControlFeatures {
            tokens: Tensor::full(vec![4, 8], 1.0),
            ..dummy_control(8)
        };
        assert_ne!(toy.predict(&y, &[0.1; 8], &other_control).unwrap(), base);
    }
}
