//! DP-SGD building blocks: per-example clipping, calibrated Gaussian noise,
//! and the two batch samplers the models use.
//!
//! The privacy unit is one whole trajectory. Every example's full gradient is
//! clipped to L2 norm `C`, the clipped gradients are summed, noise
//! `N(0, (sigma C)^2)` is added once per coordinate, and the result is
//! normalized by the *expected* batch size. Noise draws depend only on the
//! derived step RNG, so a training run is a pure function of (data, config,
//! seed).

use std::ops::Range;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Hyperparameters for one DP-SGD training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpSgdConfig {
    /// Per-example gradient clipping norm `C`.
    pub clip_norm: f64,
    /// Noise multiplier `sigma`; 0 disables noise (non-private run).
    pub noise_multiplier: f64,
    /// Expected batch size `B`.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier.is_finite() && self.noise_multiplier >= 0.0) {
            return Err(Error::Config(format!(
                "noise multiplier must be >= 0, got {}",
                self.noise_multiplier
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Per-step sampling rate for a dataset of `n` records, used by both the
    /// Poisson sampler and the privacy accountant.
    pub fn sampling_rate(&self, n: usize) -> f64 {
        (self.batch_size as f64 / n as f64).min(1.0)
    }
}

/// Steps per epoch: `round(n / batch)`, at least 1 so every epoch trains.
pub fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    ((n as f64 / batch as f64).round() as u64).max(1)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// Scale `grad` down to L2 norm `c` if it exceeds it; gradients at or under
/// the bound pass through untouched. Returns the pre-clip norm.
pub fn clip_in_place(grad: &mut [f64], c: f64) -> f64 {
    let norm = l2_norm(grad);
    if norm > c {
        let scale = c / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Running record of clipping behaviour across a training run, including the
/// always-on postcondition check that no clipped gradient exceeds the bound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClipStats {
    pub examples: u64,
    pub clipped: u64,
    /// Post-clip norms found above `C` (beyond rounding slack). Always zero
    /// unless the clipping arithmetic itself is broken.
    pub violations: u64,
    pub max_post_clip_norm: f64,
}

/// Clip and then re-measure, feeding the invariant counter. The re-measure
/// is an independent computation of the norm, not algebra on the scale
/// factor, so it would catch a broken clip.
pub fn clip_and_check(grad: &mut [f64], c: f64, stats: &mut ClipStats) {
    let pre = clip_in_place(grad, c);
    let post = l2_norm(grad);
    stats.examples += 1;
    if pre > c {
        stats.clipped += 1;
    }
    if post > c * (1.0 + 1e-9) {
        stats.violations += 1;
    }
    if post > stats.max_post_clip_norm {
        stats.max_post_clip_norm = post;
    }
}

/// Per-run training diagnostics shared by both model trainers.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub steps: u64,
    pub sampling_rate: f64,
    pub clip: ClipStats,
    /// Mean per-example loss at each step; NaN marks an empty batch.
    pub loss_trace: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over the first and last `k` non-empty steps — a coarse
    /// did-it-learn signal.
    pub fn loss_ends(&self, k: usize) -> (f64, f64) {
        let ok: Vec<f64> = self.loss_trace.iter().copied().filter(|l| l.is_finite()).collect();
        let k = k.min(ok.len()).max(1);
        let head = ok.iter().take(k).sum::<f64>() / k as f64;
        let tail = ok.iter().rev().take(k).sum::<f64>() / k as f64;
        (head, tail)
    }
}

/// Apply one DP-SGD update in place:
/// `params -= lr * (grad_sum + N(0, (sigma C)^2 I)) / expected_batch`.
///
/// Noise is drawn coordinate-by-coordinate in parameter order from `rng`;
/// with `sigma = 0` no draws happen and the step is plain averaged SGD.
pub fn apply_noisy_update(
    params: &mut [f64],
    grad_sum: &[f64],
    cfg: &DpSgdConfig,
    expected_batch: f64,
    rng: &mut ChaCha20Rng,
) {
    debug_assert_eq!(params.len(), grad_sum.len());
    debug_assert!(expected_batch > 0.0);
    let scale = cfg.learning_rate / expected_batch;
    let noise_sd = cfg.noise_multiplier * cfg.clip_norm;
    if noise_sd == 0.0 {
        for (p, &g) in params.iter_mut().zip(grad_sum) {
            *p -= scale * g;
        }
    } else {
        for (p, &g) in params.iter_mut().zip(grad_sum) {
            let n: f64 = rng.sample(StandardNormal);
            *p -= scale * (g + noise_sd * n);
        }
    }
}

/// Poisson subsampling: each index in `0..n` joins the batch independently
/// with probability `q`. The batch can be empty; the update still happens
/// (pure noise), which the accountant's analysis assumes.
pub fn sample_batch_poisson(n: usize, q: f64, rng: &mut ChaCha20Rng) -> Vec<u32> {
    debug_assert!((0.0..=1.0).contains(&q));
    if q >= 1.0 {
        return (0..n as u32).collect();
    }
    let mut batch = Vec::with_capacity((q * n as f64 * 1.5) as usize + 4);
    for i in 0..n {
        if rng.random::<f64>() < q {
            batch.push(i as u32);
        }
    }
    batch
}

/// Two-stage sampling over grouped records: `b` draws of (uniform group,
/// uniform record within the group). Groups are trajectories, so a long
/// trajectory is no more likely to be picked than a short one.
pub fn sample_batch_two_stage(groups: &[Range<usize>], b: usize, rng: &mut ChaCha20Rng) -> Vec<u32> {
    debug_assert!(!groups.is_empty());
    let mut batch = Vec::with_capacity(b);
    for _ in 0..b {
        let g = &groups[rng.random_range(0..groups.len())];
        batch.push(rng.random_range(g.clone()) as u32);
    }
    batch
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent RNG from a master seed and a stream path (for
/// example `[model_tag, step_index, purpose]`). The same path always yields
/// the same stream; sibling paths are statistically independent.
pub fn derive_rng(master: u64, path: &[u64]) -> ChaCha20Rng {
    let mut state = splitmix64(master);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p));
    }
    ChaCha20Rng::seed_from_u64(state)
}
