use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Constant for the whole run.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 200,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One Adam update with bias correction; `t` is the 1-based step index.
pub fn adam_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut AdamState<F>,
    cfg: &OptimizerConfig,
    t: u64,
) {
    assert!(t >= 1, "Adam steps are counted from 1");
    let b1 = F::of(cfg.beta1);
    let b2 = F::of(cfg.beta2);
    let one = F::one();
    let c1 = F::of(1.0 - cfg.beta1.powf(t as f64));
    let c2 = F::of(1.0 - cfg.beta2.powf(t as f64));
    let lr = F::of(cfg.learning_rate);
    let eps = F::of(cfg.epsilon);

    let g = grads.flat_slices();
    let m = state.m.flat_slices_mut();
    let v = state.v.flat_slices_mut();
    for (((p, g), m), v) in params.flat_slices_mut().into_iter().zip(g).zip(m).zip(v) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn tiny() -> ModelConfig {
        ModelConfig {
            block_channels: vec![vec![2], vec![3]],
            n_lesions: 5,
            pool_output: 4,
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let params = init_params::<f64>(&tiny(), 1, None).unwrap();
        let mut p = params.clone();
        let mut state = AdamState::new(&p);
        let zero = p.zeros_like();
        for t in 1..=3 {
            adam_step(&mut p, &zero, &mut state, &OptimizerConfig::default(), t);
        }
        assert_eq!(p, params);
        assert_eq!(state, AdamState::new(&params));
    }

    /// Scalar Adam recurrences written out independently.
    fn scalar_adam(p0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        p
    }

    #[test]
    fn matches_scalar_recurrence() {
        let cfg = OptimizerConfig {
            learning_rate: 1e-3,
            ..Default::default()
        };
        let mut p = init_params::<f64>(&tiny(), 2, None).unwrap();
        let start = p.clone();
        let mut state = AdamState::new(&p);
        let seq = [0.3, -1.2, 0.05, 2.0];
        for (k, gv) in seq.iter().enumerate() {
            let mut g = p.zeros_like();
            g.fc.weight[[2, 7]] = *gv;
            g.trunk[1][0].bias[1] = -gv;
            adam_step(&mut p, &g, &mut state, &cfg, k as u64 + 1);
        }
        let want = scalar_adam(start.fc.weight[[2, 7]], &seq, 1e-3, 0.9, 0.999, 1e-8);
        assert!((p.fc.weight[[2, 7]] - want).abs() < 1e-15);
        let neg: Vec<f64> = seq.iter().map(|g| -g).collect();
        let want = scalar_adam(start.trunk[1][0].bias[1], &neg, 1e-3, 0.9, 0.999, 1e-8);
        assert!((p.trunk[1][0].bias[1] - want).abs() < 1e-15);
        // first step moves by about lr against the gradient sign
        assert!(p.fc.weight[[0, 0]] == start.fc.weight[[0, 0]]);
    }

    #[test]
    fn validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        assert!(OptimizerConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
