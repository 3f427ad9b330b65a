//! Minimal neural-network kernel: dense layers, embeddings, and the handful
//! of loss pieces the two models need.
//!
//! Everything is `f64` on flat `Vec`s — the models here are small enough that
//! clarity and exact reproducibility beat BLAS. Per-example gradients are the
//! central object (the DP optimizer clips each example's full gradient), so
//! every layer exposes an explicit backward that accumulates into
//! caller-provided flat gradient slices.
//!
//! Conventions:
//! - weights are row-major `[in_dim][out_dim]`; a layer computes
//!   `act(x W + b)`.
//! - softmax layers are trained with cross-entropy only; their backward takes
//!   `dL/d(logits)` directly (the fused `p - onehot` form), which is exact.
//! - probabilities are floored at [`PROB_FLOOR`] inside losses so a clamped
//!   log never produces infinities.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Normal, Uniform};

/// Lower bound applied to any probability before taking a log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Activation applied by a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Softmax,
}

/// Numerically stable in-place softmax (max subtraction).
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Cross-entropy against a hard label, with the probability floored.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Gradient of [`cross_entropy`] with respect to the logits feeding a
/// softmax: `p - onehot(label)`.
pub fn softmax_ce_grad(probs: &[f64], label: usize, dlogits: &mut [f64]) {
    dlogits.copy_from_slice(probs);
    dlogits[label] -= 1.0;
}

/// KL divergence from N(mean, exp(logvar)) to the standard normal, summed
/// over coordinates: `-0.5 * Σ (1 + logvar - mean² - exp(logvar))`.
pub fn kl_standard_normal(mean: &[f64], logvar: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), logvar.len());
    -0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Accumulate the KL gradient: `d/dmean = mean`, `d/dlogvar = (e^logvar - 1)/2`.
pub fn kl_standard_normal_grad(mean: &[f64], logvar: &[f64], gmean: &mut [f64], glogvar: &mut [f64]) {
    for ((gm, &m), (gl, &lv)) in gmean.iter_mut().zip(mean).zip(glogvar.iter_mut().zip(logvar)) {
        *gm += m;
        *gl += 0.5 * (lv.exp() - 1.0);
    }
}

/// The reparameterization trick: `mean + exp(logvar/2) ⊙ noise`.
pub fn reparameterize(mean: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(logvar)
        .zip(noise)
        .map(|((&m, &lv), &n)| m + (0.5 * lv).exp() * n)
        .collect()
}

/// Draw an index from a probability vector by CDF inversion. Probabilities
/// need not sum exactly to one; residual mass lands on the last index.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    debug_assert!(!probs.is_empty());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `[in_dim][out_dim]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    /// Glorot-uniform weights, zero biases.
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid init range");
        let w = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        DenseLayer { in_dim, out_dim, activation, w, b: vec![0.0; out_dim] }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `act(x W + b)`. Zero inputs skip their weight row, which makes one-hot
    /// inputs cheap without a separate sparse path.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.out_dim..(i + 1) * self.out_dim];
            for (yj, &wij) in y.iter_mut().zip(row) {
                *yj += xi * wij;
            }
        }
        match self.activation {
            Activation::Linear => {}
            Activation::Relu => {
                for v in &mut y {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Softmax => softmax_in_place(&mut y),
        }
        y
    }

    /// Backpropagate one example. `x` and `y` are the forward input/output;
    /// `dy` is `dL/dy` for Linear/Relu layers and `dL/d(logits)` for Softmax
    /// layers (use [`softmax_ce_grad`]). Weight and bias gradients are
    /// *accumulated* into `gw`/`gb`; the return value is `dL/dx`.
    pub fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(gw.len(), self.w.len());
        debug_assert_eq!(gb.len(), self.b.len());
        let mut dpre = dy.to_vec();
        if self.activation == Activation::Relu {
            for (d, &yi) in dpre.iter_mut().zip(y) {
                if yi <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        for (g, &d) in gb.iter_mut().zip(&dpre) {
            *g += d;
        }
        let mut dx = vec![0.0; self.in_dim];
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w[i * self.out_dim..(i + 1) * self.out_dim];
            let mut acc = 0.0;
            if xi != 0.0 {
                let grow = &mut gw[i * self.out_dim..(i + 1) * self.out_dim];
                for ((&wij, gj), &d) in row.iter().zip(grow.iter_mut()).zip(&dpre) {
                    acc += wij * d;
                    *gj += xi * d;
                }
            } else {
                for (&wij, &d) in row.iter().zip(&dpre) {
                    acc += wij * d;
                }
            }
            dx[i] = acc;
        }
        dx
    }
}

/// Lookup table of learned vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: usize,
    pub dim: usize,
    /// Row-major `[vocab][dim]`.
    pub w: Vec<f64>,
}

impl EmbeddingTable {
    /// N(0, 0.05) entries.
    pub fn new(vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, 0.05).expect("valid init std");
        EmbeddingTable { vocab, dim, w: (0..vocab * dim).map(|_| dist.sample(rng)).collect() }
    }

    pub fn param_count(&self) -> usize {
        self.w.len()
    }

    pub fn lookup(&self, id: u32) -> &[f64] {
        let i = id as usize;
        &self.w[i * self.dim..(i + 1) * self.dim]
    }

    /// Accumulate `dL/d(row id)` into the flat gradient; only the looked-up
    /// row receives gradient.
    pub fn backward(&self, id: u32, d: &[f64], gw: &mut [f64]) {
        debug_assert_eq!(gw.len(), self.w.len());
        let i = id as usize;
        for (g, &dj) in gw[i * self.dim..(i + 1) * self.dim].iter_mut().zip(d) {
            *g += dj;
        }
    }
}

/// Cuts a flat parameter or gradient vector into per-layer slices in a fixed
/// order. Models use one canonical order for saving, loading, and gradients.
pub struct Slicer<'a> {
    rest: &'a mut [f64],
}

impl<'a> Slicer<'a> {
    pub fn new(flat: &'a mut [f64]) -> Self {
        Slicer { rest: flat }
    }

    pub fn take(&mut self, n: usize) -> &'a mut [f64] {
        let rest = std::mem::take(&mut self.rest);
        assert!(n <= rest.len(), "flat vector too short: wanted {n}, had {}", rest.len());
        let (head, tail) = rest.split_at_mut(n);
        self.rest = tail;
        head
    }

    /// Everything must be consumed; catches layout drift.
    pub fn finish(self) {
        assert!(self.rest.is_empty(), "flat vector has {} unconsumed values", self.rest.len());
    }
}

/// Central finite-difference gradient of `f` at `params`.
///
/// Verification utility: `f` must be deterministic (fix any noise draws
/// before calling). Cost is two evaluations per parameter.
pub fn finite_difference_grad(params: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + step;
        let up = f(&p);
        p[i] = orig - step;
        let down = f(&p);
        p[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, with 0/0 defined as 0.
pub fn relative_l2_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
