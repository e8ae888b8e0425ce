//! Group-relative policy optimization core: normalized advantages, the
//! zero-variance filter and dynamic sampling buffer, and the clipped
//! token-level surrogate objective with its exact gradient.
//!
//! Per-token objective term, with ratio `rho = exp(new_lp - old_lp)`:
//!
//! ```text
//! min(rho * A, clip(rho, 1 - eps_low, 1 + eps_high) * A)
//! ```
//!
//! summed over every token of every output in the batch and divided by the
//! total token count. Tokens where the min selects the clipped branch are
//! constant in theta and contribute no gradient.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::policy::{grad_logprob, seq_logprob, PolicyParams, TokenSequence};

/// Asymmetric ratio clip bounds `[1 - eps_low, 1 + eps_high]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl ClipConfig {
    pub fn new(eps_low: f64, eps_high: f64) -> Result<Self> {
        let cfg = Self { eps_low, eps_high };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_low > 0.0 && self.eps_low <= self.eps_high && self.eps_high < 1.0) {
            return Err(Error::Config(format!(
                "clip bounds must satisfy 0 < eps_low <= eps_high < 1, got eps_low={} eps_high={}",
                self.eps_low, self.eps_high
            )));
        }
        Ok(())
    }
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            eps_low: 0.2,
            eps_high: 0.28,
        }
    }
}

/// One question's sampled outputs with rewards, the per-token log-probs
/// recorded under the snapshot policy at sampling time, and (once computed)
/// the per-output advantage broadcast to each of its tokens.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub question_id: u64,
    pub prompt: TokenSequence,
    pub outputs: Vec<TokenSequence>,
    pub rewards: Vec<f64>,
    pub old_logprobs: Vec<Vec<f64>>,
    /// Empty until [`compute_advantages`] runs on the group.
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn token_count(&self) -> usize {
        self.outputs.iter().map(|o| o.len()).sum()
    }
}

/// Population mean and standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Group-relative advantages `(r_i - mean) / (std + guard)` with population
/// std. An all-equal group has zero variance by definition and returns exact
/// zeros for any guard; computing it through the float mean would instead
/// amplify rounding residue into O(1) noise at guard 0.
pub fn group_advantages(rewards: &[f64], variance_guard: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Input(format!(
            "group size {} < 2",
            rewards.len()
        )));
    }
    if variance_guard < 0.0 {
        return Err(Error::Input("variance_guard must be >= 0".into()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let (mean, std) = mean_std(rewards);
    let denom = std + variance_guard;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Keep a group iff its rewards have nonzero population variance. All-equal
/// rewards (all-correct or all-wrong with identical length penalties) carry
/// no ranking signal.
pub fn filter_group(group: &RolloutGroup) -> bool {
    group.rewards.iter().any(|&r| r != group.rewards[0])
}

/// Fill `group.advantages` from its rewards.
pub fn compute_advantages(group: &mut RolloutGroup, variance_guard: f64) -> Result<()> {
    group.advantages = group_advantages(&group.rewards, variance_guard)?;
    Ok(())
}

/// Dynamic sampling buffer: accumulates variance-filtered groups and releases
/// FIFO batches of exactly `capacity_threshold` once enough have arrived.
#[derive(Debug, Default)]
pub struct SampleBuffer {
    entries: VecDeque<RolloutGroup>,
    capacity_threshold: usize,
}

impl SampleBuffer {
    pub fn new(capacity_threshold: usize) -> Result<Self> {
        if capacity_threshold == 0 {
            return Err(Error::Config("buffer threshold must be >= 1".into()));
        }
        Ok(Self {
            entries: VecDeque::new(),
            capacity_threshold,
        })
    }

    pub fn threshold(&self) -> usize {
        self.capacity_threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert the group if it passes the variance filter; returns whether it
    /// was kept. The filter runs here too, so no caller can break buffer
    /// purity.
    pub fn insert(&mut self, group: RolloutGroup) -> bool {
        if !filter_group(&group) {
            return false;
        }
        self.entries.push_back(group);
        true
    }

    pub fn ready(&self) -> bool {
        self.entries.len() >= self.capacity_threshold
    }

    /// Extract exactly `capacity_threshold` groups, oldest first; `None`
    /// while below threshold. Leftovers persist for the next drain.
    pub fn drain_batch(&mut self) -> Option<Vec<RolloutGroup>> {
        if !self.ready() {
            return None;
        }
        Some(self.entries.drain(..self.capacity_threshold).collect())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// One token's contribution to the surrogate, exposed so tests can recompute
/// the min/clip composition independently.
#[derive(Debug, Clone, Copy)]
pub struct TokenTerm {
    pub group: usize,
    pub output: usize,
    pub token: usize,
    pub ratio: f64,
    pub advantage: f64,
    pub term: f64,
    /// True when the unclipped branch was selected by the min (the only case
    /// where gradient flows through this token).
    pub unclipped_selected: bool,
}

/// Full per-token breakdown of one surrogate evaluation.
#[derive(Debug, Clone)]
pub struct SurrogateReport {
    pub value: f64,
    pub token_count: usize,
    pub clip_value: f64,
    pub kl_penalty: f64,
    pub terms: Vec<TokenTerm>,
}

fn check_batch(groups: &[RolloutGroup]) -> Result<usize> {
    if groups.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let mut tokens = 0;
    for (gi, group) in groups.iter().enumerate() {
        if group.outputs.is_empty() {
            return Err(Error::State(format!("group {gi} has no outputs")));
        }
        if group.old_logprobs.len() != group.outputs.len() {
            return Err(Error::State(format!(
                "group {gi} missing old logprobs for some outputs"
            )));
        }
        if group.advantages.len() != group.outputs.len() {
            return Err(Error::State(format!(
                "group {gi} advantages not computed"
            )));
        }
        for (oi, output) in group.outputs.iter().enumerate() {
            if output.is_empty() {
                return Err(Error::State(format!("group {gi} output {oi} is empty")));
            }
            if group.old_logprobs[oi].len() != output.len() {
                return Err(Error::State(format!(
                    "group {gi} output {oi}: old logprob length {} != output length {}",
                    group.old_logprobs[oi].len(),
                    output.len()
                )));
            }
            tokens += output.len();
        }
    }
    Ok(tokens)
}

/// Evaluate the clipped surrogate (and the optional KL penalty) at `params`,
/// returning the per-token breakdown.
pub fn surrogate_report(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    clip: &ClipConfig,
    kl_coefficient: f64,
) -> Result<SurrogateReport> {
    clip.validate()?;
    let token_count = check_batch(groups)?;
    let denom = token_count as f64;
    let lo = 1.0 - clip.eps_low;
    let hi = 1.0 + clip.eps_high;
    let mut terms = Vec::with_capacity(token_count);
    let mut clip_sum = 0.0;
    let mut kl_sum = 0.0;
    for (gi, group) in groups.iter().enumerate() {
        for (oi, output) in group.outputs.iter().enumerate() {
            let (_, new_lps) = seq_logprob(params, &group.prompt, output)?;
            let advantage = group.advantages[oi];
            for (ti, (&new_lp, &old_lp)) in
                new_lps.iter().zip(&group.old_logprobs[oi]).enumerate()
            {
                let ratio = (new_lp - old_lp).exp();
                let unclipped = ratio * advantage;
                let clipped = ratio.clamp(lo, hi) * advantage;
                let term = unclipped.min(clipped);
                clip_sum += term;
                // k3 estimator of KL(pi_old || pi_theta): 1/rho + ln rho - 1.
                kl_sum += ratio.recip() + (new_lp - old_lp) - 1.0;
                terms.push(TokenTerm {
                    group: gi,
                    output: oi,
                    token: ti,
                    ratio,
                    advantage,
                    term,
                    unclipped_selected: unclipped <= clipped,
                });
            }
        }
    }
    let clip_value = clip_sum / denom;
    let kl_penalty = kl_sum / denom;
    Ok(SurrogateReport {
        value: clip_value - kl_coefficient * kl_penalty,
        token_count,
        clip_value,
        kl_penalty,
        terms,
    })
}

/// The scalar surrogate objective value.
pub fn surrogate_value(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    clip: &ClipConfig,
    kl_coefficient: f64,
) -> Result<f64> {
    Ok(surrogate_report(params, groups, clip, kl_coefficient)?.value)
}

/// Exact ascent gradient of [`surrogate_value`] w.r.t. theta.
///
/// Active (unclipped) tokens contribute `A * rho * grad log pi / denom`;
/// clipped tokens contribute zero. Per-output gradients are computed through
/// `map_indexed` and summed in a fixed order, so results are identical in
/// sequential and parallel mode.
pub fn surrogate_gradient(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    clip: &ClipConfig,
    kl_coefficient: f64,
    mode: ExecMode,
) -> Result<Vec<f64>> {
    clip.validate()?;
    let token_count = check_batch(groups)?;
    let denom = token_count as f64;
    let lo = 1.0 - clip.eps_low;
    let hi = 1.0 + clip.eps_high;
    let outputs: Vec<(usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| (0..g.outputs.len()).map(move |oi| (gi, oi)))
        .collect();
    let partials = map_indexed(mode, outputs.len(), |idx| {
        let (gi, oi) = outputs[idx];
        let group = &groups[gi];
        let output = &group.outputs[oi];
        let advantage = group.advantages[oi];
        let (_, new_lps) = seq_logprob(params, &group.prompt, output)?;
        let weights: Vec<f64> = new_lps
            .iter()
            .zip(&group.old_logprobs[oi])
            .map(|(&new_lp, &old_lp)| {
                let ratio = (new_lp - old_lp).exp();
                let unclipped = ratio * advantage;
                let clipped = ratio.clamp(lo, hi) * advantage;
                let mut w = if unclipped <= clipped {
                    advantage * ratio / denom
                } else {
                    0.0
                };
                if kl_coefficient != 0.0 {
                    // d/d new_lp of (1/rho + ln rho - 1) = 1 - 1/rho.
                    w -= kl_coefficient * (1.0 - ratio.recip()) / denom;
                }
                w
            })
            .collect();
        grad_logprob(params, &group.prompt, output, &weights)
    });
    let mut grad = vec![0.0; params.dims.theta_len()];
    for partial in partials {
        let partial = partial?;
        for (g, p) in grad.iter_mut().zip(&partial) {
            *g += p;
        }
    }
    Ok(grad)
}
