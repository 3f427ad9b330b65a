//! Trip-initialization model: a variational autoencoder over the discrete
//! triple (source cell, destination cell, start hour).
//!
//! One trajectory contributes exactly one training example — its endpoints
//! and hour — so the DP-SGD privacy unit is the whole trajectory. The input
//! is the concatenated one-hot encoding of the triple (`2·V + 24` where `V`
//! counts occupied cells); the decoder emits three independent softmax heads
//! over the same three vocabularies. Sampling the trained decoder from the
//! standard-normal prior yields synthetic trip endpoints without touching
//! the training data again.

use std::path::Path;

use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::accountant::PrivacyLedger;
use crate::dataset::Dataset;
use crate::dp::{
    apply_noisy_update, clip_and_check, derive_rng, sample_batch_poisson, steps_per_epoch,
    ClipStats, DpSgdConfig, TrainReport,
};
use crate::error::{Error, Result};
use crate::grid::{GridShape, OccupiedCellIndex, TimeSlot};
use crate::model_file::{read_model, write_model, LayerDesc};
use crate::nn::{
    cross_entropy, kl_standard_normal, kl_standard_normal_grad, relative_l2_error,
    reparameterize, sample_categorical, softmax_ce_grad, Activation, DenseLayer,
};

/// Hour classes, one per [`TimeSlot`].
const HOURS: usize = TimeSlot::COUNT;

/// Network widths. The defaults match the production configuration; tests
/// shrink them to keep finite-difference checks fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TiDims {
    pub hidden: usize,
    pub latent: usize,
}

impl Default for TiDims {
    fn default() -> Self {
        TiDims { hidden: 100, latent: 50 }
    }
}

/// One training example: dense source and destination cell ids plus the
/// start hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TiExample {
    pub src: u32,
    pub dst: u32,
    pub hour: u8,
}

/// Map every trajectory to its endpoint triple. Fails if a trajectory uses
/// a cell missing from the occupied index.
pub fn ti_examples(dataset: &Dataset, occupied: &OccupiedCellIndex) -> Result<Vec<TiExample>> {
    dataset
        .trajectories
        .iter()
        .map(|t| {
            let src = occupied
                .dense(t.src())
                .ok_or_else(|| Error::Data(format!("cell {} not in occupied index", t.src().0)))?;
            let dst = occupied
                .dense(t.dst())
                .ok_or_else(|| Error::Data(format!("cell {} not in occupied index", t.dst().0)))?;
            Ok(TiExample { src, dst, hour: t.hour.hour() })
        })
        .collect()
}

/// Variational autoencoder over trip triples.
///
/// Layer order is fixed and doubles as the on-disk payload layout:
/// `enc1, enc2, mean, logvar, dec1, head_src, head_dst, head_hour`,
/// weights before biases within each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TiModel {
    pub shape: GridShape,
    pub occupied: OccupiedCellIndex,
    /// Training-set size; the default number of trajectories to generate.
    pub dataset_size: usize,
    pub dims: TiDims,
    enc1: DenseLayer,
    enc2: DenseLayer,
    mean: DenseLayer,
    logvar: DenseLayer,
    dec1: DenseLayer,
    head_src: DenseLayer,
    head_dst: DenseLayer,
    head_hour: DenseLayer,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct TiTape {
    example: TiExample,
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    mean_v: Vec<f64>,
    logvar_v: Vec<f64>,
    noise: Vec<f64>,
    z: Vec<f64>,
    d1: Vec<f64>,
    p_src: Vec<f64>,
    p_dst: Vec<f64>,
    p_hour: Vec<f64>,
}

impl TiModel {
    pub fn new(
        shape: GridShape,
        occupied: OccupiedCellIndex,
        dataset_size: usize,
        dims: TiDims,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let v = occupied.len();
        if v < 2 {
            return Err(Error::Data(format!("need at least 2 occupied cells, got {v}")));
        }
        if dims.hidden == 0 || dims.latent == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        let input = 2 * v + HOURS;
        let (h, l) = (dims.hidden, dims.latent);
        Ok(TiModel {
            shape,
            occupied,
            dataset_size,
            dims,
            enc1: DenseLayer::new(input, h, Activation::Relu, rng),
            enc2: DenseLayer::new(h, h, Activation::Linear, rng),
            mean: DenseLayer::new(h, l, Activation::Linear, rng),
            logvar: DenseLayer::new(h, l, Activation::Linear, rng),
            dec1: DenseLayer::new(l, h, Activation::Relu, rng),
            head_src: DenseLayer::new(h, v, Activation::Softmax, rng),
            head_dst: DenseLayer::new(h, v, Activation::Softmax, rng),
            head_hour: DenseLayer::new(h, HOURS, Activation::Softmax, rng),
        })
    }

    /// Occupied-cell vocabulary size.
    pub fn vocab(&self) -> usize {
        self.occupied.len()
    }

    fn layers(&self) -> [(&'static str, &DenseLayer); 8] {
        [
            ("enc1", &self.enc1),
            ("enc2", &self.enc2),
            ("mean", &self.mean),
            ("logvar", &self.logvar),
            ("dec1", &self.dec1),
            ("head_src", &self.head_src),
            ("head_dst", &self.head_dst),
            ("head_hour", &self.head_hour),
        ]
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 8] {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.mean,
            &mut self.logvar,
            &mut self.dec1,
            &mut self.head_src,
            &mut self.head_dst,
            &mut self.head_hour,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(_, l)| l.param_count()).sum()
    }

    /// Flatten all parameters in canonical layer order.
    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (_, l) in self.layers() {
            flat.extend_from_slice(&l.w);
            flat.extend_from_slice(&l.b);
        }
        flat
    }

    /// Overwrite all parameters from a flat vector in canonical layer order.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ModelFile(format!(
                "parameter count mismatch: model has {}, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in self.layers_mut() {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Payload layout as (name, length) pairs, weights before biases.
    pub fn layer_descs(&self) -> Vec<LayerDesc> {
        let mut descs = Vec::with_capacity(16);
        for (name, l) in self.layers() {
            descs.push(LayerDesc { name: format!("{name}.w"), len: l.w.len() });
            descs.push(LayerDesc { name: format!("{name}.b"), len: l.b.len() });
        }
        descs
    }

    fn one_hot(&self, ex: TiExample) -> Vec<f64> {
        let v = self.vocab();
        debug_assert!((ex.src as usize) < v && (ex.dst as usize) < v && (ex.hour as usize) < HOURS);
        let mut x = vec![0.0; 2 * v + HOURS];
        x[ex.src as usize] = 1.0;
        x[v + ex.dst as usize] = 1.0;
        x[2 * v + ex.hour as usize] = 1.0;
        x
    }

    /// Decoder only: latent point to the three head distributions.
    fn decode(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d1 = self.dec1.forward(z);
        (self.head_src.forward(&d1), self.head_dst.forward(&d1), self.head_hour.forward(&d1))
    }

    /// Full training-time forward pass with the reparameterization noise
    /// supplied by the caller, so the same pass is exactly repeatable.
    /// Returns the per-example loss (KL + summed cross-entropies) and the
    /// tape for [`TiModel::backward`].
    pub fn forward(&self, ex: TiExample, noise: Vec<f64>) -> (f64, TiTape) {
        debug_assert_eq!(noise.len(), self.dims.latent);
        let x = self.one_hot(ex);
        let h1 = self.enc1.forward(&x);
        let h2 = self.enc2.forward(&h1);
        let mean_v = self.mean.forward(&h2);
        let logvar_v = self.logvar.forward(&h2);
        let z = reparameterize(&mean_v, &logvar_v, &noise);
        let d1 = self.dec1.forward(&z);
        let p_src = self.head_src.forward(&d1);
        let p_dst = self.head_dst.forward(&d1);
        let p_hour = self.head_hour.forward(&d1);
        let loss = kl_standard_normal(&mean_v, &logvar_v)
            + cross_entropy(&p_src, ex.src as usize)
            + cross_entropy(&p_dst, ex.dst as usize)
            + cross_entropy(&p_hour, ex.hour as usize);
        let tape =
            TiTape { example: ex, x, h1, h2, mean_v, logvar_v, noise, z, d1, p_src, p_dst, p_hour };
        (loss, tape)
    }

    /// Accumulate this example's full loss gradient into `grad` (flat,
    /// canonical layer order). `grad` is not zeroed first.
    pub fn backward(&self, tape: &TiTape, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.param_count());
        let mut s = crate::nn::Slicer::new(grad);
        let (g_enc1_w, g_enc1_b) = (s.take(self.enc1.w.len()), s.take(self.enc1.b.len()));
        let (g_enc2_w, g_enc2_b) = (s.take(self.enc2.w.len()), s.take(self.enc2.b.len()));
        let (g_mean_w, g_mean_b) = (s.take(self.mean.w.len()), s.take(self.mean.b.len()));
        let (g_logvar_w, g_logvar_b) = (s.take(self.logvar.w.len()), s.take(self.logvar.b.len()));
        let (g_dec1_w, g_dec1_b) = (s.take(self.dec1.w.len()), s.take(self.dec1.b.len()));
        let (g_src_w, g_src_b) = (s.take(self.head_src.w.len()), s.take(self.head_src.b.len()));
        let (g_dst_w, g_dst_b) = (s.take(self.head_dst.w.len()), s.take(self.head_dst.b.len()));
        let (g_hour_w, g_hour_b) = (s.take(self.head_hour.w.len()), s.take(self.head_hour.b.len()));
        s.finish();

        let ex = tape.example;
        // Softmax heads take dL/d(logits) = p - onehot directly.
        let mut d_src = vec![0.0; self.vocab()];
        softmax_ce_grad(&tape.p_src, ex.src as usize, &mut d_src);
        let mut d_dst = vec![0.0; self.vocab()];
        softmax_ce_grad(&tape.p_dst, ex.dst as usize, &mut d_dst);
        let mut d_hour = vec![0.0; HOURS];
        softmax_ce_grad(&tape.p_hour, ex.hour as usize, &mut d_hour);

        let dd1_a = self.head_src.backward(&tape.d1, &tape.p_src, &d_src, g_src_w, g_src_b);
        let dd1_b = self.head_dst.backward(&tape.d1, &tape.p_dst, &d_dst, g_dst_w, g_dst_b);
        let dd1_c = self.head_hour.backward(&tape.d1, &tape.p_hour, &d_hour, g_hour_w, g_hour_b);
        let dd1: Vec<f64> =
            dd1_a.iter().zip(&dd1_b).zip(&dd1_c).map(|((&a, &b), &c)| a + b + c).collect();

        let dz = self.dec1.backward(&tape.z, &tape.d1, &dd1, g_dec1_w, g_dec1_b);

        // z = mean + exp(logvar/2) * noise, plus the KL term's own gradient.
        let mut d_mean = dz.clone();
        let mut d_logvar: Vec<f64> = dz
            .iter()
            .zip(&tape.noise)
            .zip(&tape.logvar_v)
            .map(|((&d, &n), &lv)| d * n * 0.5 * (0.5 * lv).exp())
            .collect();
        kl_standard_normal_grad(&tape.mean_v, &tape.logvar_v, &mut d_mean, &mut d_logvar);

        let dh2_a = self.mean.backward(&tape.h2, &tape.mean_v, &d_mean, g_mean_w, g_mean_b);
        let dh2_b = self.logvar.backward(&tape.h2, &tape.logvar_v, &d_logvar, g_logvar_w, g_logvar_b);
        let dh2: Vec<f64> = dh2_a.iter().zip(&dh2_b).map(|(&a, &b)| a + b).collect();

        let dh1 = self.enc2.backward(&tape.h1, &tape.h2, &dh2, g_enc2_w, g_enc2_b);
        self.enc1.backward(&tape.x, &tape.h1, &dh1, g_enc1_w, g_enc1_b);
    }

    /// Draw one synthetic triple from the standard-normal prior through the
    /// decoder. Uses only the model parameters.
    pub fn sample(&self, rng: &mut impl Rng) -> TiExample {
        let z: Vec<f64> = (0..self.dims.latent).map(|_| rng.sample(StandardNormal)).collect();
        let (p_src, p_dst, p_hour) = self.decode(&z);
        TiExample {
            src: sample_categorical(&p_src, rng) as u32,
            dst: sample_categorical(&p_dst, rng) as u32,
            hour: sample_categorical(&p_hour, rng) as u8,
        }
    }

    /// Write the model to disk (manifest + parameters, bit-exact).
    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = TiManifest {
            model: "ti".into(),
            format_version: 1,
            rows: self.shape.n_rows,
            cols: self.shape.n_cols,
            cell_m: self.shape.cell_size_m,
            occupied: self.occupied.clone(),
            dataset_size: self.dataset_size,
            hidden: self.dims.hidden,
            latent: self.dims.latent,
            layers: self.layer_descs(),
        };
        let value = serde_json::to_value(&manifest)
            .map_err(|e| Error::ModelFile(format!("manifest encode: {e}")))?;
        write_model(path, &value, &self.params())
    }

    pub fn load(path: &Path) -> Result<TiModel> {
        let (value, payload) = read_model(path)?;
        let manifest: TiManifest = serde_json::from_value(value)
            .map_err(|e| Error::ModelFile(format!("{}: bad manifest: {e}", path.display())))?;
        if manifest.model != "ti" {
            return Err(Error::ModelFile(format!(
                "{}: expected a trip-initialization model, found {:?}",
                path.display(),
                manifest.model
            )));
        }
        let shape = GridShape::new(manifest.rows, manifest.cols, manifest.cell_m)?;
        let dims = TiDims { hidden: manifest.hidden, latent: manifest.latent };
        let mut rng = derive_rng(0, &[]);
        let mut model =
            TiModel::new(shape, manifest.occupied, manifest.dataset_size, dims, &mut rng)?;
        let expected: Vec<(String, usize)> =
            model.layer_descs().into_iter().map(|d| (d.name, d.len)).collect();
        let expected_ref: Vec<(&str, usize)> =
            expected.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        crate::model_file::check_layers(path, &manifest.layers, &expected_ref, payload.len())?;
        model.set_params(&payload)?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct TiManifest {
    model: String,
    format_version: u32,
    rows: usize,
    cols: usize,
    cell_m: f64,
    occupied: OccupiedCellIndex,
    dataset_size: usize,
    hidden: usize,
    latent: usize,
    layers: Vec<LayerDesc>,
}

/// RNG stream tag for this model's draws.
const TI_STREAM: u64 = 1;
// Purposes within a step.
const PURPOSE_BATCH: u64 = 0;
const PURPOSE_MODEL_NOISE: u64 = 1;
const PURPOSE_DP_NOISE: u64 = 2;

/// Train the trip-initialization model with DP-SGD and record the privacy
/// cost on `ledger`.
///
/// Each step Poisson-samples trajectories at rate `B/n`, clips every
/// per-example gradient to `C`, sums, adds `N(0, (σC)²)` per coordinate and
/// normalizes by the expected batch size `B`. The run is a deterministic
/// function of (dataset, config, seed).
pub fn ti_train(
    dataset: &Dataset,
    occupied: &OccupiedCellIndex,
    dims: TiDims,
    cfg: &DpSgdConfig,
    seed: u64,
    ledger: &mut PrivacyLedger,
) -> Result<(TiModel, TrainReport)> {
    cfg.validate()?;
    let examples = ti_examples(dataset, occupied)?;
    let n = examples.len();
    if n == 0 {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let q = cfg.sampling_rate(n);
    let steps = steps_per_epoch(n, cfg.batch_size) * cfg.epochs as u64;

    let mut init_rng = derive_rng(seed, &[TI_STREAM, 0]);
    let mut model =
        TiModel::new(dataset.shape, occupied.clone(), n, dims, &mut init_rng)?;
    let mut params = model.params();
    let mut grad_sum = vec![0.0; params.len()];
    let mut per_grad = vec![0.0; params.len()];
    let mut clip = ClipStats::default();
    let mut loss_trace = Vec::with_capacity(steps as usize);

    for step in 0..steps {
        let mut batch_rng = derive_rng(seed, &[TI_STREAM, 1, step, PURPOSE_BATCH]);
        let mut noise_rng = derive_rng(seed, &[TI_STREAM, 1, step, PURPOSE_MODEL_NOISE]);
        let mut dp_rng = derive_rng(seed, &[TI_STREAM, 1, step, PURPOSE_DP_NOISE]);

        let batch = sample_batch_poisson(n, q, &mut batch_rng);
        grad_sum.iter_mut().for_each(|g| *g = 0.0);
        let mut loss_sum = 0.0;
        for &i in &batch {
            let noise: Vec<f64> =
                (0..dims.latent).map(|_| noise_rng.sample(StandardNormal)).collect();
            let (loss, tape) = model.forward(examples[i as usize], noise);
            loss_sum += loss;
            per_grad.iter_mut().for_each(|g| *g = 0.0);
            model.backward(&tape, &mut per_grad);
            clip_and_check(&mut per_grad, cfg.clip_norm, &mut clip);
            for (s, &g) in grad_sum.iter_mut().zip(&per_grad) {
                *s += g;
            }
        }
        apply_noisy_update(&mut params, &grad_sum, cfg, cfg.batch_size as f64, &mut dp_rng);
        model.set_params(&params)?;
        loss_trace.push(if batch.is_empty() { f64::NAN } else { loss_sum / batch.len() as f64 });
    }

    ledger.compose(q, cfg.noise_multiplier, steps)?;
    Ok((model, TrainReport { steps, sampling_rate: q, clip, loss_trace }))
}

/// Finite-difference check of the full per-example gradient on a randomly
/// initialized model; returns the vector-norm relative error.
pub fn gradcheck(model: &TiModel, ex: TiExample, noise: &[f64], fd_step: f64) -> f64 {
    let params = model.params();
    let mut analytic = vec![0.0; params.len()];
    let (_, tape) = model.forward(ex, noise.to_vec());
    model.backward(&tape, &mut analytic);
    let mut probe = model.clone();
    let numeric = crate::nn::finite_difference_grad(&params, fd_step, |p| {
        probe.set_params(p).unwrap();
        probe.forward(ex, noise.to_vec()).0
    });
    relative_l2_error(&analytic, &numeric)
}
