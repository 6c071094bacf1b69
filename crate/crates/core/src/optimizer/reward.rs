use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::AlignmentOutcome;
use crate::kg::Iri;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardConfigError {
    #[error("alpha must be in (0, 1], got {0}")]
    Alpha(f64),
    #[error("beta must be positive, got {0}")]
    Beta(f64),
    #[error("c must be finite, got {0}")]
    C(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Penalty when the reflector merely confirms a correct answer.
    pub alpha: f64,
    /// Path-length coefficient.
    pub beta: f64,
    /// Weight of the reflector term.
    pub c: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.2, c: 1.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardConfigError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(RewardConfigError::Alpha(self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(RewardConfigError::Beta(self.beta));
        }
        if !self.c.is_finite() {
            return Err(RewardConfigError::C(self.c));
        }
        Ok(())
    }
}

/// What the reflector did to the initial prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionEffect {
    Corrected,
    Confirmed,
    Broke,
    /// Wrong before and after; scored 0.
    StillWrong,
}

impl ReflectionEffect {
    pub fn classify(initial_correct: bool, refined_correct: bool) -> Self {
        match (initial_correct, refined_correct) {
            (false, true) => ReflectionEffect::Corrected,
            (true, true) => ReflectionEffect::Confirmed,
            (true, false) => ReflectionEffect::Broke,
            (false, false) => ReflectionEffect::StillWrong,
        }
    }

    pub fn score(self, alpha: f64) -> f64 {
        match self {
            ReflectionEffect::Corrected => 1.0,
            ReflectionEffect::Confirmed => -alpha,
            ReflectionEffect::Broke => -1.0,
            ReflectionEffect::StillWrong => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    #[serde(rename = "mu")]
    pub gamma_mu: f64,
    /// Absent when the reflector did not run.
    #[serde(rename = "ref")]
    pub gamma_ref: Option<f64>,
    #[serde(rename = "e")]
    pub gamma_e: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn penalizes_reflector(&self) -> bool {
        self.gamma_ref.is_some_and(|r| r < 0.0)
    }
}

/// Reward from the correctness flags and path length alone.
///
/// `refined_correct` is `None` when no reflector ran; the final prediction
/// is the refined one when it exists.
pub fn reward_from_flags(
    initial_correct: bool,
    refined_correct: Option<bool>,
    path_len: usize,
    config: &RewardConfig,
) -> RewardBreakdown {
    let final_correct = refined_correct.unwrap_or(initial_correct);
    let gamma_mu = if final_correct { 1.0 } else { 0.0 };
    let gamma_ref = refined_correct.map(|r| ReflectionEffect::classify(initial_correct, r).score(config.alpha));
    let gamma_e = (-config.beta * path_len as f64).exp();
    let total = gamma_mu + config.c * gamma_ref.unwrap_or(0.0) + gamma_e;
    RewardBreakdown { gamma_mu, gamma_ref, gamma_e, total }
}

pub fn compute_reward(outcome: &AlignmentOutcome, gold: &Iri, config: &RewardConfig) -> RewardBreakdown {
    reward_from_flags(
        &outcome.initial_prediction == gold,
        outcome.refined_prediction.as_ref().map(|r| r == gold),
        outcome.path.len(),
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-4
    }

    #[test]
    fn anchor_values() {
        let c = RewardConfig::default();
        assert!(close(reward_from_flags(true, None, 3, &c).total, 1.5488));
        assert!(close(reward_from_flags(true, Some(true), 4, &c).total, 0.9493));
        assert!(close(reward_from_flags(false, Some(true), 4, &c).total, 2.4493));
        assert!(close(reward_from_flags(true, Some(false), 4, &c).total, -0.5507));
    }

    #[test]
    fn still_wrong_scores_zero() {
        let r = reward_from_flags(false, Some(false), 4, &RewardConfig::default());
        assert_eq!(r.gamma_ref, Some(0.0));
        assert_eq!(r.gamma_mu, 0.0);
    }

    #[test]
    fn efficiency_decreases() {
        let c = RewardConfig::default();
        let e: Vec<f64> = (2..=4).map(|l| reward_from_flags(true, None, l, &c).gamma_e).collect();
        assert!(e[0] > e[1] && e[1] > e[2]);
    }

    #[test]
    fn serialized_field_names() {
        let r = reward_from_flags(true, None, 2, &RewardConfig::default());
        let v = serde_json::to_value(r).unwrap();
        assert_eq!(v["mu"], 1.0);
        assert!(v["ref"].is_null());
        assert!(v.get("e").is_some() && v.get("total").is_some());
    }

    #[test]
    fn invalid_config() {
        assert!(RewardConfig { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(RewardConfig::default().validate().is_ok());
    }
}
