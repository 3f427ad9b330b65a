//! Transition-probability model: given the current cell, the trip's
//! destination cell and the start hour, predict a distribution over the
//! relative-offset classes of the next cell.
//!
//! Both cells go through one shared embedding table; the hour enters as a
//! single scalar `hour / 23`. Offsets are limited to the `(2s+1)²` classes
//! of the neighborhood block, so the output vocabulary is independent of
//! city size. At query time the raw softmax is masked to the classes that
//! are actually reachable (inside the grid, occupied, not the center) and
//! renormalized.
//!
//! Training uses DP-SGD with trajectory-level two-stage sampling: pick a
//! trajectory uniformly, then one of its transitions uniformly, so each
//! batch slot touches one trajectory and the moments accountant applies
//! with sampling rate `B / |D|` (|D| counting trajectories).

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accountant::PrivacyLedger;
use crate::dataset::Dataset;
use crate::dp::{
    apply_noisy_update, clip_and_check, derive_rng, sample_batch_two_stage, steps_per_epoch,
    ClipStats, DpSgdConfig, TrainReport,
};
use crate::error::{Error, Result};
use crate::grid::{CellId, GridShape, NeighborhoodSpec, OccupiedCellIndex};
use crate::model_file::{read_model, write_model, LayerDesc};
use crate::nn::{
    cross_entropy, relative_l2_error, softmax_ce_grad, Activation, DenseLayer, EmbeddingTable,
    Slicer,
};
use crate::preprocess::{extract_transition_samples, TransitionSample};

/// Network widths. Defaults match the production configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpgDims {
    pub embed: usize,
    pub hidden: usize,
}

impl Default for TpgDims {
    fn default() -> Self {
        TpgDims { embed: 50, hidden: 200 }
    }
}

/// Next-cell offset classifier.
///
/// Canonical parameter order (also the on-disk payload layout):
/// `embed.w, dense1.w, dense1.b, dense2.w, dense2.b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TpgModel {
    pub shape: GridShape,
    pub occupied: OccupiedCellIndex,
    pub nb: NeighborhoodSpec,
    /// Trajectories in the training universe (DP sampling denominator).
    pub dataset_size: usize,
    pub dims: TpgDims,
    embed: EmbeddingTable,
    dense1: DenseLayer,
    dense2: DenseLayer,
}

/// Intermediate values one backward pass needs.
pub struct TpgTape {
    x: Vec<f64>,
    h1: Vec<f64>,
    /// Unmasked softmax over all offset classes.
    pub probs: Vec<f64>,
}

impl TpgModel {
    pub fn new(
        shape: GridShape,
        occupied: OccupiedCellIndex,
        nb: NeighborhoodSpec,
        dataset_size: usize,
        dims: TpgDims,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let v = occupied.len();
        if v < 2 {
            return Err(Error::Data(format!("need at least 2 occupied cells, got {v}")));
        }
        if dims.embed == 0 || dims.hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        let input = 2 * dims.embed + 1;
        Ok(TpgModel {
            shape,
            occupied,
            nb,
            dataset_size,
            dims,
            embed: EmbeddingTable::new(v, dims.embed, rng),
            dense1: DenseLayer::new(input, dims.hidden, Activation::Relu, rng),
            dense2: DenseLayer::new(dims.hidden, nb.class_count(), Activation::Softmax, rng),
        })
    }

    pub fn vocab(&self) -> usize {
        self.occupied.len()
    }

    pub fn param_count(&self) -> usize {
        self.embed.param_count() + self.dense1.param_count() + self.dense2.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(&self.embed.w);
        flat.extend_from_slice(&self.dense1.w);
        flat.extend_from_slice(&self.dense1.b);
        flat.extend_from_slice(&self.dense2.w);
        flat.extend_from_slice(&self.dense2.b);
        flat
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ModelFile(format!(
                "parameter count mismatch: model has {}, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut at = 0;
        for dst in [
            &mut self.embed.w,
            &mut self.dense1.w,
            &mut self.dense1.b,
            &mut self.dense2.w,
            &mut self.dense2.b,
        ] {
            let n = dst.len();
            dst.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn layer_descs(&self) -> Vec<LayerDesc> {
        vec![
            LayerDesc { name: "embed.w".into(), len: self.embed.w.len() },
            LayerDesc { name: "dense1.w".into(), len: self.dense1.w.len() },
            LayerDesc { name: "dense1.b".into(), len: self.dense1.b.len() },
            LayerDesc { name: "dense2.w".into(), len: self.dense2.w.len() },
            LayerDesc { name: "dense2.b".into(), len: self.dense2.b.len() },
        ]
    }

    /// Raw (unmasked) forward pass for a (current, destination, hour) query.
    pub fn forward(&self, current: u32, dst: u32, hour: u8) -> TpgTape {
        let e = self.dims.embed;
        let mut x = Vec::with_capacity(2 * e + 1);
        x.extend_from_slice(self.embed.lookup(current));
        x.extend_from_slice(self.embed.lookup(dst));
        x.push(hour as f64 / 23.0);
        let h1 = self.dense1.forward(&x);
        let probs = self.dense2.forward(&h1);
        TpgTape { x, h1, probs }
    }

    /// Cross-entropy of the true offset class under the unmasked softmax.
    pub fn loss(&self, sample: &TransitionSample) -> (f64, TpgTape) {
        let tape = self.forward(sample.current, sample.dst, sample.hour.hour());
        let loss = cross_entropy(&tape.probs, sample.label as usize);
        (loss, tape)
    }

    /// Accumulate this sample's loss gradient into `grad` (flat, canonical
    /// order). When `current == dst` the shared embedding row receives both
    /// contributions.
    pub fn backward(&self, sample: &TransitionSample, tape: &TpgTape, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.param_count());
        let mut s = Slicer::new(grad);
        let g_embed = s.take(self.embed.w.len());
        let g1w = s.take(self.dense1.w.len());
        let g1b = s.take(self.dense1.b.len());
        let g2w = s.take(self.dense2.w.len());
        let g2b = s.take(self.dense2.b.len());
        s.finish();

        let mut d_logits = vec![0.0; tape.probs.len()];
        softmax_ce_grad(&tape.probs, sample.label as usize, &mut d_logits);
        let dh1 = self.dense2.backward(&tape.h1, &tape.probs, &d_logits, g2w, g2b);
        let dx = self.dense1.backward(&tape.x, &tape.h1, &dh1, g1w, g1b);
        let e = self.dims.embed;
        self.embed.backward(sample.current, &dx[..e], g_embed);
        self.embed.backward(sample.dst, &dx[e..2 * e], g_embed);
    }

    /// Reachability-masked next-step distribution: classes that leave the
    /// grid, land on a never-occupied cell, or stay in place get zero
    /// probability; the rest renormalize. If the model puts literally no
    /// mass on any reachable class, the distribution falls back to uniform
    /// over reachable classes. All-zero output means the cell has no
    /// reachable neighbor at all.
    pub fn masked_distribution(&self, current: u32, dst: u32, hour: u8) -> Vec<f64> {
        let mut probs = self.forward(current, dst, hour).probs;
        apply_reachability_mask(
            &mut probs,
            self.occupied.full(current),
            &self.shape,
            &self.occupied,
            self.nb,
        );
        probs
    }

    /// Fraction of samples whose masked argmax class equals the label.
    pub fn accuracy(&self, samples: &[TransitionSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples
            .iter()
            .filter(|s| {
                let dist = self.masked_distribution(s.current, s.dst, s.hour.hour());
                argmax_lowest(&dist) == s.label as usize
            })
            .count();
        hits as f64 / samples.len() as f64
    }

    /// Mean distance in meters between the predicted and the actual next
    /// cell over `samples`. Offsets alone determine it: both candidate
    /// cells share the same current cell.
    pub fn mean_prediction_error_m(&self, samples: &[TransitionSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let total: f64 = samples
            .iter()
            .map(|s| {
                let dist = self.masked_distribution(s.current, s.dst, s.hour.hour());
                offset_distance_m(
                    self.nb,
                    self.shape.cell_size_m,
                    argmax_lowest(&dist),
                    s.label as usize,
                )
            })
            .sum();
        total / samples.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = TpgManifest {
            model: "tpg".into(),
            format_version: 1,
            rows: self.shape.n_rows,
            cols: self.shape.n_cols,
            cell_m: self.shape.cell_size_m,
            occupied: self.occupied.clone(),
            neighborhood_s: self.nb.s,
            dataset_size: self.dataset_size,
            embed: self.dims.embed,
            hidden: self.dims.hidden,
            layers: self.layer_descs(),
        };
        let value = serde_json::to_value(&manifest)
            .map_err(|e| Error::ModelFile(format!("manifest encode: {e}")))?;
        write_model(path, &value, &self.params())
    }

    pub fn load(path: &Path) -> Result<TpgModel> {
        let (value, payload) = read_model(path)?;
        let manifest: TpgManifest = serde_json::from_value(value)
            .map_err(|e| Error::ModelFile(format!("{}: bad manifest: {e}", path.display())))?;
        if manifest.model != "tpg" {
            return Err(Error::ModelFile(format!(
                "{}: expected a transition-probability model, found {:?}",
                path.display(),
                manifest.model
            )));
        }
        let shape = GridShape::new(manifest.rows, manifest.cols, manifest.cell_m)?;
        let nb = NeighborhoodSpec::new(manifest.neighborhood_s)?;
        let dims = TpgDims { embed: manifest.embed, hidden: manifest.hidden };
        let mut rng = derive_rng(0, &[]);
        let mut model =
            TpgModel::new(shape, manifest.occupied, nb, manifest.dataset_size, dims, &mut rng)?;
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
struct TpgManifest {
    model: String,
    format_version: u32,
    rows: usize,
    cols: usize,
    cell_m: f64,
    occupied: OccupiedCellIndex,
    neighborhood_s: usize,
    dataset_size: usize,
    embed: usize,
    hidden: usize,
    layers: Vec<LayerDesc>,
}

/// Zero out unreachable offset classes and renormalize. Returns the number
/// of reachable classes; a positive count with zero surviving mass falls
/// back to uniform over the reachable classes.
pub fn apply_reachability_mask(
    probs: &mut [f64],
    current: CellId,
    shape: &GridShape,
    occupied: &OccupiedCellIndex,
    nb: NeighborhoodSpec,
) -> usize {
    debug_assert_eq!(probs.len(), nb.class_count());
    let center = nb.center_class();
    let mut n_valid = 0;
    for (class, p) in probs.iter_mut().enumerate() {
        let reachable = class != center
            && shape
                .offset_to_cell(current, class, nb)
                .is_some_and(|cell| occupied.contains(cell));
        if reachable {
            n_valid += 1;
        } else {
            *p = 0.0;
        }
    }
    if n_valid == 0 {
        return 0;
    }
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    } else {
        let u = 1.0 / n_valid as f64;
        for (class, p) in probs.iter_mut().enumerate() {
            let reachable = class != center
                && shape
                    .offset_to_cell(current, class, nb)
                    .is_some_and(|cell| occupied.contains(cell));
            *p = if reachable { u } else { 0.0 };
        }
    }
    n_valid
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Distance in meters between the cells two offset classes point at (from
/// any common current cell).
pub fn offset_distance_m(nb: NeighborhoodSpec, cell_size_m: f64, class_a: usize, class_b: usize) -> f64 {
    let side = nb.side() as isize;
    let (ra, ca) = ((class_a as isize) / side, (class_a as isize) % side);
    let (rb, cb) = ((class_b as isize) / side, (class_b as isize) % side);
    ((ra - rb) as f64).hypot((ca - cb) as f64) * cell_size_m
}

/// RNG stream tag for this model's draws.
const TPG_STREAM: u64 = 2;
const PURPOSE_BATCH: u64 = 0;
const PURPOSE_DP_NOISE: u64 = 2;

/// Train the transition model with DP-SGD; the privacy cost lands on
/// `ledger` with the trajectory count as the sampling universe.
pub fn tpg_train(
    dataset: &Dataset,
    occupied: &OccupiedCellIndex,
    nb: NeighborhoodSpec,
    dims: TpgDims,
    cfg: &DpSgdConfig,
    seed: u64,
    ledger: &mut PrivacyLedger,
) -> Result<(TpgModel, TrainReport)> {
    cfg.validate()?;
    let set = extract_transition_samples(dataset, occupied, nb)?;
    let n_traj = set.n_trajectories();
    if n_traj == 0 {
        return Err(Error::Data("no trajectory produced any transition sample".into()));
    }
    let q = cfg.sampling_rate(n_traj);
    let steps = steps_per_epoch(n_traj, cfg.batch_size) * cfg.epochs as u64;

    let mut init_rng = derive_rng(seed, &[TPG_STREAM, 0]);
    let mut model = TpgModel::new(dataset.shape, occupied.clone(), nb, n_traj, dims, &mut init_rng)?;
    let mut params = model.params();
    let mut grad_sum = vec![0.0; params.len()];
    let mut per_grad = vec![0.0; params.len()];
    let mut clip = ClipStats::default();
    let mut loss_trace = Vec::with_capacity(steps as usize);

    for step in 0..steps {
        let mut batch_rng = derive_rng(seed, &[TPG_STREAM, 1, step, PURPOSE_BATCH]);
        let mut dp_rng = derive_rng(seed, &[TPG_STREAM, 1, step, PURPOSE_DP_NOISE]);

        let batch = sample_batch_two_stage(&set.traj_ranges, cfg.batch_size, &mut batch_rng);
        grad_sum.iter_mut().for_each(|g| *g = 0.0);
        let mut loss_sum = 0.0;
        for &i in &batch {
            let sample = &set.samples[i as usize];
            let (loss, tape) = model.loss(sample);
            loss_sum += loss;
            per_grad.iter_mut().for_each(|g| *g = 0.0);
            model.backward(sample, &tape, &mut per_grad);
            clip_and_check(&mut per_grad, cfg.clip_norm, &mut clip);
            for (s, &g) in grad_sum.iter_mut().zip(&per_grad) {
                *s += g;
            }
        }
        apply_noisy_update(&mut params, &grad_sum, cfg, cfg.batch_size as f64, &mut dp_rng);
        model.set_params(&params)?;
        loss_trace.push(loss_sum / batch.len() as f64);
    }

    ledger.compose(q, cfg.noise_multiplier, steps)?;
    Ok((model, TrainReport { steps, sampling_rate: q, clip, loss_trace }))
}

/// Finite-difference check of one sample's full gradient; returns the
/// vector-norm relative error.
pub fn gradcheck(model: &TpgModel, sample: &TransitionSample, fd_step: f64) -> f64 {
    let params = model.params();
    let mut analytic = vec![0.0; params.len()];
    let (_, tape) = model.loss(sample);
    model.backward(sample, &tape, &mut analytic);
    let mut probe = model.clone();
    let numeric = crate::nn::finite_difference_grad(&params, fd_step, |p| {
        probe.set_params(p).unwrap();
        probe.loss(sample).0
    });
    relative_l2_error(&analytic, &numeric)
}
