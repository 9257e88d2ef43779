use serde::{Deserialize, Serialize};

use super::AttackError;

/// Distance between the leaked and the dummy gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingLoss {
    #[default]
    SquaredL2,
    /// `1 - cos(a, b)` over all matched tensors of one term.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitDistribution {
    #[default]
    Uniform01,
    /// `N(0.5, 0.25^2)` per pixel.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Adam (0.9, 0.999, 1e-8) with a cosine-decayed step.
    #[default]
    Adam,
    /// Projected gradient descent with Armijo backtracking; the recorded
    /// loss never increases.
    LineSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub iterations: usize,
    pub step_size: f64,
    /// Step size reached by the cosine schedule at the last iteration.
    pub step_size_end: f64,
    pub tv_alpha_start: f64,
    pub tv_alpha_end_factor: f64,
    pub matching_loss: MatchingLoss,
    pub seed: u64,
    pub init_distribution: InitDistribution,
    pub box_project: bool,
    pub optimizer: Optimizer,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            step_size: 0.1,
            step_size_end: 0.01,
            tv_alpha_start: 0.1,
            tv_alpha_end_factor: 0.001,
            matching_loss: MatchingLoss::SquaredL2,
            seed: 0,
            init_distribution: InitDistribution::Uniform01,
            box_project: true,
            optimizer: Optimizer::Adam,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::Config(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be positive");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if !(self.step_size_end > 0.0 && self.step_size_end.is_finite()) {
            return bad("step_size_end must be positive");
        }
        if !(self.tv_alpha_start >= 0.0 && self.tv_alpha_start.is_finite()) {
            return bad("tv_alpha_start must be non-negative");
        }
        if !(self.tv_alpha_end_factor > 0.0 && self.tv_alpha_end_factor <= 1.0) {
            return bad("tv_alpha_end_factor must lie in (0, 1]");
        }
        Ok(())
    }

    /// Geometric decay from `tv_alpha_start` to `tv_alpha_start * end_factor`
    /// at the last iteration.
    pub fn alpha_at(&self, k: usize) -> f64 {
        if self.iterations <= 1 {
            return self.tv_alpha_start;
        }
        let frac = k.min(self.iterations - 1) as f64 / (self.iterations - 1) as f64;
        self.tv_alpha_start * self.tv_alpha_end_factor.powf(frac)
    }

    /// Cosine decay from `step_size` to `step_size_end`.
    pub fn step_at(&self, k: usize) -> f64 {
        let frac = k.min(self.iterations) as f64 / self.iterations as f64;
        self.step_size_end + 0.5 * (self.step_size - self.step_size_end) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}
