//! Adam optimizer with bias-corrected moment estimates.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
/// Parameter order is fixed at construction and must match every `step` call.
pub struct AdamState {
    pub cfg: AdamConfig,
    moments: Vec<Moments>,
    step: u64,
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, param_sizes: &[usize]) -> Self {
        AdamState {
            cfg,
            moments: param_sizes
                .iter()
                .map(|&n| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one bias-corrected update in place. `params` and `grads` follow
    /// the construction-time parameter order.
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor)],
        grads: &[Vec<f64>],
    ) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != self.moments.len() {
            return Err(Error::Contract(format!(
                "adam state tracks {} parameters, got {} params / {} grads",
                self.moments.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((name, param), grad) in params.iter().zip(grads) {
            if param.numel() != grad.len() {
                return Err(Error::Contract(format!(
                    "gradient for `{}` has {} elements, parameter has {}",
                    name,
                    grad.len(),
                    param.numel()
                )));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for parameter `{}`",
                    name
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (idx, (_, param)) in params.iter_mut().enumerate() {
            let mom = &mut self.moments[idx];
            let g = &grads[idx];
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                mom.m[j] = c.beta1 * mom.m[j] + (1.0 - c.beta1) * g[j];
                mom.v[j] = c.beta2 * mom.v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let m_hat = mom.m[j] / bc1;
                let v_hat = mom.v[j] / bc2;
                *p -= c.alpha * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64) -> Tensor {
        Tensor::scalar(value)
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // g=1 at step 1 with defaults: m̂=1, v̂=1, Δ = −α/(1+ε·…) ≈ −0.000999999990
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = one_param(0.0);
        state
            .step(&mut [("p".into(), &mut p)], &[vec![1.0]])
            .unwrap();
        assert!((p.data()[0] - (-0.000_999_999_990)).abs() < 1e-12);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = one_param(1.5);
        for _ in 0..5 {
            state
                .step(&mut [("p".into(), &mut p)], &[vec![0.0]])
                .unwrap();
        }
        assert_eq!(p.data()[0], 1.5);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = AdamConfig {
            alpha: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &[1]);
        let mut p = one_param(-2.0);
        state
            .step(&mut [("p".into(), &mut p)], &[vec![3.7]])
            .unwrap();
        assert_eq!(p.data()[0], -2.0);
    }

    #[test]
    fn identical_histories_stay_bit_identical() {
        let mut state = AdamState::new(AdamConfig::default(), &[1, 1]);
        let mut a = one_param(0.25);
        let mut b = one_param(0.25);
        for step in 0..20 {
            let g = (step as f64 * 0.37).sin();
            state
                .step(
                    &mut [("a".into(), &mut a), ("b".into(), &mut b)],
                    &[vec![g], vec![g]],
                )
                .unwrap();
            assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
        }
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut state = AdamState::new(AdamConfig::default(), &[1, 1]);
        let mut a = one_param(0.0);
        let mut b = one_param(0.0);
        let err = state
            .step(
                &mut [("alpha".into(), &mut a), ("beta".into(), &mut b)],
                &[vec![0.0], vec![f64::NAN]],
            )
            .unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("beta")),
            other => panic!("expected numeric error, got {:?}", other),
        }
        // No partial update.
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn clip_rescales_only_above_threshold() {
        let mut grads = vec![vec![3.0, 0.0], vec![4.0]];
        let norm = clip_global_norm(&mut grads, 10.0);
        assert_eq!(norm, 5.0);
        assert_eq!(grads[0][0], 3.0);

        let norm = clip_global_norm(&mut grads, 2.5);
        assert_eq!(norm, 5.0);
        let new_sq: f64 = grads.iter().flatten().map(|v| v * v).sum();
        assert!((new_sq.sqrt() - 2.5).abs() < 1e-12);
    }
}
