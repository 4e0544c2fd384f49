//! Desk-scale optimization pieces: numerically stable classification loss,
//! Adam with decoupled weight decay, gradient clipping, and the synthetic
//! two-class task whose classes differ only in their gap structure.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    NonFiniteLogit { index: usize },
    BadLabel,
    LengthMismatch { expected: usize, found: usize },
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::NonFiniteLogit { index } => write!(f, "non-finite logit at {index}"),
            TrainError::BadLabel => write!(f, "soft label must be nonnegative and sum to 1"),
            TrainError::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
        }
    }
}

impl core::error::Error for TrainError {}

pub fn one_hot(classes: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[index] = 1.0;
    v
}

/// Cross entropy against a soft label, in the log-sum-exp formulation:
/// `loss = lse(logits) - sum target_i * logit_i`, gradient
/// `softmax(logits) - target`.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
    if logits.len() != target.len() {
        return Err(TrainError::LengthMismatch { expected: logits.len(), found: target.len() });
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteLogit { index: i });
    }
    let sum: f64 = target.iter().sum();
    if target.iter().any(|&v| v < 0.0) || math::abs(sum - 1.0) > 1e-6 {
        return Err(TrainError::BadLabel);
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp_sum: f64 = logits.iter().map(|&l| math::exp(l - max)).sum();
    let lse = max + math::ln(exp_sum);
    let loss = lse - logits.iter().zip(target).map(|(&l, &t)| l * t).sum::<f64>();
    let grad = logits
        .iter()
        .zip(target)
        .map(|(&l, &t)| math::exp(l - lse) - t)
        .collect();
    Ok((loss, grad))
}

/// Index of the largest logit (smallest index wins ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdamOutcome {
    Applied,
    /// Non-finite gradients: update skipped, moments left untouched.
    SkippedNonFinite,
}

/// One bias-corrected Adam step with decoupled weight decay. Deterministic
/// given its inputs.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<AdamOutcome, TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::LengthMismatch { expected: params.len(), found: grads.len() });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Ok(AdamOutcome::SkippedNonFinite);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(cfg.beta1, t);
    let bc2 = 1.0 - math::powi(cfg.beta2, t);
    for i in 0..params.len() {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.lr * (m_hat / (math::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params[i]);
    }
    Ok(AdamOutcome::Applied)
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().map(|g| g * g).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// One labeled stream of (seconds, token id) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStreamSample {
    pub t: Vec<f64>,
    pub ids: Vec<u32>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapTaskConfig {
    pub events: usize,
    pub vocab: usize,
    /// Mean inter-event gap in seconds for both classes.
    pub period: f64,
    /// Relative Gaussian jitter on every gap.
    pub jitter: f64,
    /// Class 1 alternates gaps of `short_frac * period` and
    /// `(2 - short_frac) * period`; the mean stays `period`.
    pub short_frac: f64,
}

impl Default for GapTaskConfig {
    fn default() -> Self {
        Self { events: 256, vocab: 16, period: 0.05, jitter: 0.1, short_frac: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapTaskDataset {
    pub train: Vec<TokenStreamSample>,
    pub val: Vec<TokenStreamSample>,
    pub classes: usize,
    pub vocab: usize,
    pub median_gap: f64,
}

fn gap_sample(rng: &mut CounterRng, cfg: &GapTaskConfig, label: usize, k: usize) -> f64 {
    let noise = (1.0 + cfg.jitter * rng.normal()).max(0.05);
    let base = if label == 0 {
        1.0
    } else if k % 2 == 0 {
        cfg.short_frac
    } else {
        2.0 - cfg.short_frac
    };
    cfg.period * base * noise
}

fn make_sample(rng: &mut CounterRng, cfg: &GapTaskConfig, label: usize) -> TokenStreamSample {
    let mut t = Vec::with_capacity(cfg.events);
    let mut acc = 0.0;
    for k in 0..cfg.events {
        if k > 0 {
            acc += gap_sample(rng, cfg, label, k);
        }
        t.push(acc);
    }
    // Token ids are drawn identically for both classes: the ids carry no
    // label information, only the gap structure does.
    let ids = (0..cfg.events).map(|_| rng.next_below(cfg.vocab as u64) as u32).collect();
    TokenStreamSample { t, ids, label }
}

/// Two-class token streams with identical token statistics and equal mean
/// gaps; class 0 has near-uniform gaps, class 1 alternates short and long
/// gaps. Labels alternate, so both splits are balanced.
pub fn make_gap_task(
    rng: &mut CounterRng,
    train_count: usize,
    val_count: usize,
    cfg: &GapTaskConfig,
) -> GapTaskDataset {
    let train: Vec<TokenStreamSample> =
        (0..train_count).map(|i| make_sample(rng, cfg, i % 2)).collect();
    let val: Vec<TokenStreamSample> =
        (0..val_count).map(|i| make_sample(rng, cfg, i % 2)).collect();
    GapTaskDataset { train, val, classes: 2, vocab: cfg.vocab, median_gap: cfg.period }
}

/// Per-sample gap-variance statistic used by the hand classifier that
/// establishes the task is solvable from gaps alone.
pub fn gap_variance_statistic(t: &[f64]) -> f64 {
    if t.len() < 2 {
        return 0.0;
    }
    let gaps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / gaps.len() as f64;
    var / (mean * mean)
}
