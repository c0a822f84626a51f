use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moment decay rates and denominator floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Starting point of the unconstrained search variable.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ZInit {
    /// `z = 0`: the perturbation starts at the midpoint of its box.
    #[default]
    Zero,
    /// Seeded `N(0, std^2)` draws, for ablations.
    Gaussian { seed: u64, std: f64 },
}

/// How the perturbation and recovery norms are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Plain Euclidean norm over the flattened tensor.
    #[default]
    Euclidean,
    /// Euclidean norm divided by `sqrt(len)`. The default `beta` is not
    /// calibrated for this mode.
    PerPixelRms,
}

/// Hyperparameters of the perturbation search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsConfig {
    /// L-infinity bound on the perturbation.
    pub epsilon: f64,
    /// Weight of the recovery (and critic) terms against the perturbation norm.
    pub beta: f64,
    /// Critic weight once it is switched on.
    pub gamma: f64,
    /// First iteration at which the critic term counts.
    pub gamma_start_iter: usize,
    pub total_iters: usize,
    pub lr0: f64,
    /// The learning rate halves every this many iterations.
    pub lr_halve_every: usize,
    pub adam: AdamConfig,
    pub z_init: ZInit,
    pub norm_mode: NormMode,
    /// Decoders see the perturbation the receiver will actually subtract out:
    /// `quantize8(channel(quantize8(C + delta))) - C`, with a straight-through
    /// gradient. When off the objective is smooth in `z`.
    pub quantize_in_loop: bool,
}

impl Default for SpsConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            beta: 0.5,
            gamma: 2e-5,
            gamma_start_iter: 1400,
            total_iters: 1500,
            lr0: 10f64.powf(-1.25),
            lr_halve_every: 500,
            adam: AdamConfig::default(),
            z_init: ZInit::Zero,
            norm_mode: NormMode::Euclidean,
            quantize_in_loop: true,
        }
    }
}

impl SpsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.total_iters == 0 {
            return bad("total_iters must be at least 1".into());
        }
        if self.gamma_start_iter > self.total_iters {
            return bad(format!(
                "gamma_start_iter {} exceeds total_iters {}",
                self.gamma_start_iter, self.total_iters
            ));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.lr_halve_every == 0 {
            return bad("lr_halve_every must be at least 1".into());
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad(format!("invalid Adam parameters {a:?}"));
        }
        if let ZInit::Gaussian { std, .. } = self.z_init {
            if !(std >= 0.0 && std.is_finite()) {
                return bad(format!("z_init std must be non-negative, got {std}"));
            }
        }
        Ok(())
    }

    /// Critic weight in effect at `iter`.
    pub fn gamma_at(&self, iter: usize) -> f64 {
        if iter < self.gamma_start_iter {
            0.0
        } else {
            self.gamma
        }
    }

    /// Step-halving schedule `lr0 * 0.5^floor(iter / lr_halve_every)`.
    pub fn lr_at(&self, iter: usize) -> f64 {
        let halvings = (iter / self.lr_halve_every).min(i32::MAX as usize) as i32;
        self.lr0 * 0.5f64.powi(halvings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SpsConfig::default();
        c.validate().unwrap();
        assert!((c.lr0 - 0.056_234_132_519_034_91).abs() < 1e-15);
        assert_eq!(c.gamma_at(1399), 0.0);
        assert_eq!(c.gamma_at(1400), 2e-5);
    }

    #[test]
    fn schedule_halves_exactly() {
        let c = SpsConfig::default();
        assert_eq!(c.lr_at(0), c.lr0);
        assert_eq!(c.lr_at(499), c.lr0);
        assert_eq!(c.lr_at(500), c.lr0 / 2.0);
        assert_eq!(c.lr_at(1000), c.lr0 / 4.0);
        assert_eq!(c.lr_at(1499), c.lr0 / 4.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cases: Vec<fn(&mut SpsConfig)> = vec![
            |c| c.epsilon = 0.0,
            |c| c.epsilon = 1.0,
            |c| c.beta = 0.0,
            |c| c.gamma = -1.0,
            |c| c.gamma_start_iter = 1501,
            |c| c.lr0 = 0.0,
            |c| c.total_iters = 0,
            |c| c.lr_halve_every = 0,
            |c| c.adam.beta2 = 1.0,
        ];
        for f in cases {
            let mut c = SpsConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = SpsConfig {
            z_init: ZInit::Gaussian { seed: 3, std: 0.1 },
            norm_mode: NormMode::PerPixelRms,
            ..Default::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<SpsConfig>(&text).unwrap(), c);
        let partial: SpsConfig = serde_json::from_str(r#"{"epsilon": 0.1}"#).unwrap();
        assert_eq!(partial.beta, 0.5);
        assert!(serde_json::from_str::<SpsConfig>(r#"{"epsilon": 0.1, "eta": 1}"#).is_err());
    }
}
