//! AdamW with decoupled weight decay, configured for gradient ascent.
//!
//! Update for ascent direction g:
//!
//! ```text
//! theta <- theta * (1 - lr * weight_decay)
//! m <- beta1 * m + (1 - beta1) * g
//! v <- beta2 * v + (1 - beta2) * g^2
//! theta <- theta + lr * m_hat / (sqrt(v_hat) + eps)
//! ```
//!
//! with the usual `1 - beta^t` bias corrections and a constant learning rate.

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} {beta} outside [0, 1)")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("eps must be > 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates plus step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Zero the moments, keeping the step counter (the counter drives bias
    /// correction warm-up; after a reset the next update is counted, not
    /// replayed).
    pub fn reset_moments(&mut self) {
        self.first_moment.iter_mut().for_each(|m| *m = 0.0);
        self.second_moment.iter_mut().for_each(|v| *v = 0.0);
    }

    /// One ascent step along `gradient`. A non-finite gradient refuses the
    /// step and leaves params and state untouched.
    pub fn ascend(&mut self, params: &mut PolicyParams, gradient: &[f64]) -> Result<()> {
        if gradient.len() != params.theta.len() {
            return Err(Error::Input(format!(
                "gradient length {} != theta length {}",
                gradient.len(),
                params.theta.len()
            )));
        }
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::State("non-finite gradient; step refused".into()));
        }
        let cfg = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for i in 0..gradient.len() {
            let g = gradient[i];
            let m = &mut self.first_moment[i];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            let v = &mut self.second_moment[i];
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            let theta = &mut params.theta[i];
            *theta *= decay;
            *theta += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyDims;
    use crate::rng::RngStream;

    fn params() -> PolicyParams {
        let dims = PolicyDims {
            vocab: 16,
            embed: 2,
            window: 4,
            hidden: 3,
        };
        let mut rng = RngStream::new(1);
        PolicyParams::init(dims, 0.5, &mut rng)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = params();
        let before = p.theta.clone();
        let mut opt = OptimizerState::new(OptimizerConfig::default(), p.theta.len()).unwrap();
        opt.ascend(&mut p, &vec![0.0; before.len()]).unwrap();
        assert_eq!(p.theta, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_is_signed_and_bounded() {
        let mut p = params();
        let before = p.theta.clone();
        let mut rng = RngStream::new(5);
        let grad: Vec<f64> = before.iter().map(|_| rng.uniform(-2.0, 2.0)).collect();
        let cfg = OptimizerConfig::default();
        let mut opt = OptimizerState::new(cfg, before.len()).unwrap();
        opt.ascend(&mut p, &grad).unwrap();
        // First step closed form: m_hat = g, v_hat = g^2, so
        // delta = lr * g / (|g| + eps) ~= lr * sign(g).
        for i in 0..before.len() {
            let delta = p.theta[i] - before[i];
            assert!(delta.abs() <= cfg.learning_rate * (1.0 + 1e-6));
            if grad[i].abs() > 1e-6 {
                assert_eq!(delta.signum(), grad[i].signum());
                assert!(delta.abs() > 0.99 * cfg.learning_rate);
            }
        }
    }

    #[test]
    fn decoupled_decay_acts_alone() {
        let mut p = params();
        let before = p.theta.clone();
        let cfg = OptimizerConfig {
            weight_decay: 0.5,
            ..OptimizerConfig::default()
        };
        let mut opt = OptimizerState::new(cfg, before.len()).unwrap();
        opt.ascend(&mut p, &vec![0.0; before.len()]).unwrap();
        let shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for i in 0..before.len() {
            assert!((p.theta[i] - before[i] * shrink).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut p = params();
        let before = p.theta.clone();
        let mut opt = OptimizerState::new(OptimizerConfig::default(), before.len()).unwrap();
        let mut grad = vec![0.0; before.len()];
        grad[3] = f64::NAN;
        let err = opt.ascend(&mut p, &grad).unwrap_err();
        assert!(matches!(err, Error::State(_)));
        assert_eq!(p.theta, before);
        assert_eq!(opt.step_count(), 0);
        grad[3] = f64::INFINITY;
        assert!(opt.ascend(&mut p, &grad).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = params();
        let mut opt = OptimizerState::new(OptimizerConfig::default(), p.theta.len()).unwrap();
        assert!(opt.ascend(&mut p, &[0.0]).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig {
            learning_rate: 0.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            beta1: 1.0,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn params_stay_finite_over_many_steps() {
        let mut p = params();
        let cfg = OptimizerConfig {
            weight_decay: 0.01,
            ..OptimizerConfig::default()
        };
        let mut opt = OptimizerState::new(cfg, p.theta.len()).unwrap();
        let mut rng = RngStream::new(9);
        for step in 0..200 {
            let grad: Vec<f64> = p.theta.iter().map(|_| rng.uniform(-3.0, 3.0)).collect();
            opt.ascend(&mut p, &grad).unwrap();
            assert!(p.all_finite(), "non-finite params at step {step}");
        }
        assert_eq!(opt.step_count(), 200);
    }
}
