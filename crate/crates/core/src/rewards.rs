//! Final, progressive and planned rewards and their per-step sum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("final reward {0} on a non-terminal step")]
    NonTerminalFinal(f64),
    #[error("invalid reward config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub lambda_f: f64,
    pub n_max: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_f: 0.01,
            n_max: 80,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.lambda_f.is_nan() || self.lambda_f < 0.0 {
            return Err(RewardError::Config(format!(
                "lambda_f = {} must be >= 0",
                self.lambda_f
            )));
        }
        if self.n_max == 0 {
            return Err(RewardError::Config("n_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// `1 + λ_f·max(N_max − n, 0)` for a correct answer, else 0.
pub fn final_reward(correct: bool, n: usize, cfg: &RewardConfig) -> f64 {
    if correct {
        1.0 + cfg.lambda_f * cfg.n_max.saturating_sub(n) as f64
    } else {
        0.0
    }
}

/// Distance decrease from `d_t` to `d_t1`.
pub fn progressive_reward(d_t: u32, d_t1: u32) -> f64 {
    d_t as f64 - d_t1 as f64
}

/// Gain in correct-answer probability from swapping the oldest frame for
/// the mental image.
pub fn planned_reward(p_with_mental: f64, p_without: f64) -> Result<f64, RewardError> {
    for p in [p_with_mental, p_without] {
        if !(0.0..=1.0).contains(&p) {
            return Err(RewardError::Probability(p));
        }
    }
    Ok(p_with_mental - p_without)
}

pub fn total_reward(r_p: f64, r_m: f64, r_f: f64, terminal: bool) -> Result<f64, RewardError> {
    if terminal {
        Ok(r_p + r_m + r_f)
    } else if r_f != 0.0 {
        Err(RewardError::NonTerminalFinal(r_f))
    } else {
        Ok(r_p + r_m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table() {
        let cfg = RewardConfig::default();
        assert!((final_reward(true, 60, &cfg) - 1.2).abs() < 1e-12);
        assert_eq!(final_reward(false, 10, &cfg), 0.0);
        assert_eq!(final_reward(true, 100, &cfg), 1.0);
        assert_eq!(progressive_reward(5, 4), 1.0);
        assert_eq!(progressive_reward(4, 5), -1.0);
        assert_eq!(progressive_reward(3, 3), 0.0);
        assert!((planned_reward(0.4, 0.3).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(planned_reward(0.2, 0.2).unwrap(), 0.0);
        assert!((planned_reward(0.1, 0.5).unwrap() + 0.4).abs() < 1e-12);
        assert!(planned_reward(1.2, 0.5).is_err());
        assert!((total_reward(0.5, 0.1, 0.0, false).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(total_reward(0.0, 0.0, 1.2, true).unwrap(), 1.2);
        assert_eq!(total_reward(0.0, 0.0, 0.0, false).unwrap(), 0.0);
        assert!(total_reward(0.0, 0.0, 1.0, false).is_err());
    }
}
