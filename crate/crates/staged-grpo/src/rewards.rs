//! Outcome and length rewards.
//!
//! The outcome reward is binary on verifier success. The length reward is a
//! soft overlong penalty: zero up to `len_cache`, then linear down to -1 at
//! `len_max`. Both are pure functions.

use crate::error::{Error, Result};
use crate::policy::TokenSequence;
use crate::toy_env::{verify, Task};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub len_max: usize,
    pub len_cache_fraction: f64,
    pub correct_reward: f64,
    pub incorrect_reward: f64,
}

impl RewardConfig {
    pub fn new(len_max: usize, len_cache_fraction: f64) -> Result<Self> {
        let cfg = Self {
            len_max,
            len_cache_fraction,
            correct_reward: 1.0,
            incorrect_reward: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.len_max == 0 {
            return Err(Error::Config("len_max must be >= 1".into()));
        }
        if !(self.len_cache_fraction > 0.0 && self.len_cache_fraction < 1.0) {
            return Err(Error::Config(format!(
                "len_cache_fraction {} outside (0, 1)",
                self.len_cache_fraction
            )));
        }
        if self.len_cache() >= self.len_max {
            return Err(Error::Config(format!(
                "len_cache {} must be < len_max {}",
                self.len_cache(),
                self.len_max
            )));
        }
        Ok(())
    }

    /// Length up to which no penalty applies.
    pub fn len_cache(&self) -> usize {
        (self.len_cache_fraction * self.len_max as f64).floor() as usize
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            len_max: 8,
            len_cache_fraction: 0.8,
            correct_reward: 1.0,
            incorrect_reward: 0.0,
        }
    }
}

/// Binary verifier reward. Truncated outputs (no `EOS` within the budget)
/// fail verification and therefore always earn `incorrect_reward`.
pub fn outcome_reward(task: &Task, output: &TokenSequence, cfg: &RewardConfig) -> f64 {
    if verify(task, &output.tokens) {
        cfg.correct_reward
    } else {
        cfg.incorrect_reward
    }
}

/// 0 on [1, len_cache], linear down to exactly -1 at len_max.
pub fn length_reward(output_len: usize, cfg: &RewardConfig) -> Result<f64> {
    if output_len == 0 || output_len > cfg.len_max {
        return Err(Error::Input(format!(
            "output_len {output_len} outside 1..={}",
            cfg.len_max
        )));
    }
    let cache = cfg.len_cache();
    if output_len <= cache {
        return Ok(0.0);
    }
    Ok(-((output_len - cache) as f64) / ((cfg.len_max - cache) as f64))
}

/// Outcome plus length penalty; in [-1, 1] with the default reward values.
pub fn combined_reward(task: &Task, output: &TokenSequence, cfg: &RewardConfig) -> Result<f64> {
    Ok(outcome_reward(task, output, cfg) + length_reward(output.len(), cfg)?)
}
