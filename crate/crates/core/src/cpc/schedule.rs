//! Spaced ancestral sampling schedule.
//!
//! A linear beta schedule over `t_train` steps is respaced onto a strictly
//! increasing subset of timesteps. The respaced beta at selected step i_k is
//! 1 - alphabar(i_k)/alphabar(i_{k-1}), which makes the respaced cumulative
//! alpha-bar coincide with the original one at every selected index.

use super::CpcError;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSchedule {
    pub t_train: usize,
    /// Training-schedule betas, length `t_train`.
    pub betas: Vec<f32>,
    /// Selected timesteps, strictly increasing, endpoints 0 and t_train - 1.
    pub indices: Vec<usize>,
    pub respaced_betas: Vec<f32>,
    pub respaced_alphas: Vec<f32>,
    pub respaced_alpha_bars: Vec<f32>,
}

impl SamplerSchedule {
    pub fn steps(&self) -> usize {
        self.indices.len()
    }
}

pub fn build_schedule(t_train: usize, steps: usize) -> Result<SamplerSchedule, CpcError> {
    if t_train < 2 {
        return Err(CpcError::Schedule {
            message: format!("t_train must be >= 2, got {t_train}"),
        });
    }
    if steps < 2 {
        return Err(CpcError::Schedule {
            message: format!("need at least 2 sampling steps, got {steps}"),
        });
    }
    if steps > t_train {
        return Err(CpcError::Schedule {
            message: format!("{steps} sampling steps exceed {t_train} training steps"),
        });
    }

    let betas: Vec<f32> = (0..t_train)
        .map(|i| (BETA_START + (BETA_END - BETA_START) * i as f64 / (t_train - 1) as f64) as f32)
        .collect();
    // original cumulative alpha-bar, accumulated in f64 over the stored betas
    let mut alpha_bars = Vec::with_capacity(t_train);
    let mut bar = 1.0f64;
    for &b in &betas {
        bar *= 1.0 - b as f64;
        alpha_bars.push(bar);
    }

    // round-half-up linspace over [0, t_train - 1]; spacing >= 1 keeps the
    // rounded values strictly increasing, dedup guards the degenerate case
    let mut indices: Vec<usize> = (0..steps)
        .map(|k| {
            let pos = k as f64 * (t_train - 1) as f64 / (steps - 1) as f64;
            pos.round() as usize
        })
        .collect();
    indices.dedup();
    debug_assert_eq!(indices.len(), steps);
    debug_assert_eq!(indices[0], 0);
    debug_assert_eq!(*indices.last().unwrap(), t_train - 1);

    let mut respaced_betas = Vec::with_capacity(indices.len());
    let mut respaced_alphas = Vec::with_capacity(indices.len());
    let mut respaced_alpha_bars = Vec::with_capacity(indices.len());
    let mut prev_bar = 1.0f64;
    for &i in &indices {
        let rb = 1.0 - alpha_bars[i] / prev_bar;
        respaced_betas.push(rb as f32);
        respaced_alphas.push((1.0 - rb) as f32);
        respaced_alpha_bars.push(alpha_bars[i] as f32);
        prev_bar = alpha_bars[i];
    }

    Ok(SamplerSchedule {
        t_train,
        betas,
        indices,
        respaced_betas,
        respaced_alphas,
        respaced_alpha_bars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force alpha-bar product over the stored betas, in f64.
    fn alpha_bar_oracle(betas: &[f32], upto: usize) -> f64 {
        betas[..=upto]
            .iter()
            .map(|&b| 1.0 - b as f64)
            .product()
    }

    #[test]
    fn default_schedule_shape_and_endpoints() {
        let s = build_schedule(1000, 50).unwrap();
        assert_eq!(s.indices.len(), 50);
        assert_eq!(s.indices[0], 0);
        assert_eq!(*s.indices.last().unwrap(), 999);
        assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s.betas.len(), 1000);
        assert!((s.betas[0] as f64 - BETA_START).abs() < 1e-9);
        assert!((s.betas[999] as f64 - BETA_END).abs() < 1e-9);
    }

    #[test]
    fn respaced_bars_match_brute_force_products() {
        let s = build_schedule(1000, 50).unwrap();
        for (k, &i) in s.indices.iter().enumerate() {
            let want = alpha_bar_oracle(&s.betas, i);
            assert!(
                (s.respaced_alpha_bars[k] as f64 - want).abs() < 1e-6,
                "k={k} i={i}: {} vs {want}",
                s.respaced_alpha_bars[k]
            );
        }
        // cumulative product of the respaced alphas telescopes back too
        let mut bar = 1.0f64;
        for (k, &a) in s.respaced_alphas.iter().enumerate() {
            bar *= a as f64;
            let want = alpha_bar_oracle(&s.betas, s.indices[k]);
            assert!((bar - want).abs() < 1e-6, "k={k}: {bar} vs {want}");
        }
    }

    #[test]
    fn full_schedule_reproduces_original_betas() {
        let s = build_schedule(200, 200).unwrap();
        assert_eq!(s.indices, (0..200).collect::<Vec<_>>());
        for (rb, b) in s.respaced_betas.iter().zip(&s.betas) {
            assert!((rb - b).abs() < 1e-6);
        }
    }

    #[test]
    fn small_schedule_uses_round_half_up() {
        let s = build_schedule(10, 3).unwrap();
        assert_eq!(s.indices, vec![0, 5, 9]);
        for (k, &i) in s.indices.iter().enumerate() {
            let want = alpha_bar_oracle(&s.betas, i);
            assert!((s.respaced_alpha_bars[k] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_step_counts_are_rejected() {
        assert!(build_schedule(10, 11).is_err());
        assert!(build_schedule(10, 1).is_err());
        assert!(build_schedule(1, 1).is_err());
        assert!(build_schedule(10, 10).is_ok());
    }
}
