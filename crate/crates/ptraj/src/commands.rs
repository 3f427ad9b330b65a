//! Command implementations behind the CLI binary.
//!
//! Each command returns the text it wants on stdout and writes its artifacts
//! into the output directory, always accompanied by a run manifest (config
//! hash, seed, input/output digests) so a run can be audited and reproduced.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::accountant::PrivacyLedger;
use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::dp::{steps_per_epoch, TrainReport};
use crate::error::{Error, Result};
use crate::generate::{generate, GenerateOptions};
use crate::grid::GridShape;
use crate::metrics::{evaluate, EvalOptions};
use crate::preprocess::{parse_holidays, preprocess_logs, read_log_dir, PreprocessOptions};
use crate::ti::{ti_train, TiModel};
use crate::tpg::{tpg_train, TpgModel};
use crate::util::atomic_write;

/// Which model(s) `train` should fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainTarget {
    Ti,
    Tpg,
    Both,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the reproducibility record every command writes next to its
/// outputs: the config hash, the seed, and a digest per input and output.
struct RunManifest {
    command: &'static str,
    text: String,
}

impl RunManifest {
    fn new(command: &'static str, cfg: &RunConfig, seed: u64) -> Self {
        let mut text = String::new();
        writeln!(text, "command = {command}").unwrap();
        writeln!(text, "version = {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(text, "config_hash = {}", cfg.hash()).unwrap();
        writeln!(text, "seed = {seed}").unwrap();
        RunManifest { command, text }
    }

    fn input(&mut self, name: &str, bytes: &[u8]) {
        writeln!(self.text, "input {name} sha256={}", sha256_hex(bytes)).unwrap();
    }

    /// Write an artifact into `out_dir` and record its digest.
    fn emit(&mut self, out_dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        atomic_write(&out_dir.join(name), bytes)?;
        writeln!(self.text, "output {name} sha256={}", sha256_hex(bytes)).unwrap();
        Ok(())
    }

    fn finish(self, out_dir: &Path) -> Result<()> {
        atomic_write(&out_dir.join(format!("manifest_{}.txt", self.command)), self.text.as_bytes())
    }
}

fn preprocess_options(cfg: &RunConfig) -> Result<PreprocessOptions> {
    let mut opts = PreprocessOptions {
        max_speed_kmh: cfg.max_speed_kmh,
        utc_offset_secs: cfg.utc_offset_secs,
        ..PreprocessOptions::default()
    };
    if let Some(path) = &cfg.holidays_file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        opts.holidays = parse_holidays(&text)?;
    }
    Ok(opts)
}

fn check_grid(expected: &GridShape, found: &GridShape, what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::Config(format!(
            "{what} uses a {}x{} grid at {} m, but the config describes {}x{} at {} m",
            found.n_rows,
            found.n_cols,
            found.cell_size_m,
            expected.n_rows,
            expected.n_cols,
            expected.cell_size_m,
        )));
    }
    Ok(())
}

/// Trajectory-length summary of a dataset: max, mean, population std.
fn length_stats(dataset: &Dataset) -> (usize, f64, f64) {
    let n = dataset.len().max(1) as f64;
    let lens: Vec<f64> = dataset.trajectories.iter().map(|t| t.len() as f64).collect();
    let max = lens.iter().copied().fold(0.0, f64::max) as usize;
    let mean = lens.iter().sum::<f64>() / n;
    let var = lens.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
    (max, mean, var.sqrt())
}

/// Grid raw taxi logs into a trajectory dataset.
///
/// Writes `dataset.txt` (the processed corpus), `preprocess_stats.txt`, and
/// a run manifest. The pipeline is deterministic, so reruns over the same
/// logs produce byte-identical outputs.
pub fn cmd_preprocess(cfg: &RunConfig, raw_dir: &Path, out_dir: &Path) -> Result<String> {
    let spec = cfg.grid_spec()?;
    let nb = cfg.neighborhood()?;
    let opts = preprocess_options(cfg)?;
    let logs = read_log_dir(raw_dir)?;

    let mut manifest = RunManifest::new("preprocess", cfg, 0);
    for log in &logs {
        let mut text = String::new();
        for p in &log.points {
            writeln!(text, "{} {} {} {}", p.lat, p.lon, u8::from(p.occupied), p.timestamp).unwrap();
        }
        manifest.input(&log.taxi_id, text.as_bytes());
    }

    let (dataset, stats) = preprocess_logs(&logs, &spec, nb, &opts);
    if dataset.is_empty() {
        return Err(Error::Data("no trajectory survived preprocessing".into()));
    }

    let (max_len, mean_len, std_len) = length_stats(&dataset);
    let mut report = String::from("# preprocessing report\n");
    writeln!(report, "{}", stats.report()).unwrap();
    writeln!(report, "dataset_size={}", dataset.len()).unwrap();
    writeln!(report, "occupied_cells={}", dataset.occupied_index().len()).unwrap();
    writeln!(report, "max_len={max_len} mean_len={mean_len:.3} std_len={std_len:.3}").unwrap();

    manifest.emit(out_dir, "dataset.txt", dataset.to_text().as_bytes())?;
    manifest.emit(out_dir, "preprocess_stats.txt", report.as_bytes())?;
    manifest.finish(out_dir)?;
    Ok(report)
}

fn train_summary(out: &mut String, name: &str, report: &TrainReport) {
    let (start, end) = report.loss_ends(50);
    writeln!(
        out,
        "{name}: steps={} sampling_rate={:.6} loss {:.4} -> {:.4}",
        report.steps, report.sampling_rate, start, end
    )
    .unwrap();
    writeln!(
        out,
        "{name}: examples={} clipped={} violations={} max_post_clip_norm={:.6}",
        report.clip.examples, report.clip.clipped, report.clip.violations, report.clip.max_post_clip_norm
    )
    .unwrap();
}

/// Fit the requested model(s) with DP-SGD and account the privacy cost.
///
/// Writes the model files, `privacy.txt` (the ledger: phases, alpha table,
/// epsilon at the configured delta), `train_report.txt`, and a manifest.
pub fn cmd_train(
    cfg: &RunConfig,
    dataset_path: &Path,
    target: TrainTarget,
    seed: u64,
    out_dir: &Path,
) -> Result<String> {
    let dataset = Dataset::read(dataset_path)?;
    check_grid(&cfg.grid_spec()?.shape, &dataset.shape, "dataset")?;
    let occupied = dataset.occupied_index();
    let nb = cfg.neighborhood()?;

    let mut manifest = RunManifest::new("train", cfg, seed);
    manifest.input("dataset", dataset.to_text().as_bytes());

    let mut ledger = PrivacyLedger::new();
    let mut report = String::from("# training report\n");

    if matches!(target, TrainTarget::Ti | TrainTarget::Both) {
        let (model, train) = ti_train(&dataset, &occupied, cfg.ti_dims(), &cfg.ti_dp(), seed, &mut ledger)?;
        model.save(&out_dir.join("ti.model"))?;
        let bytes = std::fs::read(out_dir.join("ti.model")).map_err(|e| Error::io(out_dir, e))?;
        writeln!(manifest.text, "output ti.model sha256={}", sha256_hex(&bytes)).unwrap();
        train_summary(&mut report, "ti", &train);
    }
    if matches!(target, TrainTarget::Tpg | TrainTarget::Both) {
        let (model, train) =
            tpg_train(&dataset, &occupied, nb, cfg.tpg_dims(), &cfg.tpg_dp(), seed, &mut ledger)?;
        model.save(&out_dir.join("tpg.model"))?;
        let bytes = std::fs::read(out_dir.join("tpg.model")).map_err(|e| Error::io(out_dir, e))?;
        writeln!(manifest.text, "output tpg.model sha256={}", sha256_hex(&bytes)).unwrap();
        train_summary(&mut report, "tpg", &train);
    }

    let delta = cfg.delta_for(dataset.len());
    let privacy = ledger.report(delta)?;
    manifest.emit(out_dir, "privacy.txt", privacy.as_bytes())?;
    manifest.emit(out_dir, "train_report.txt", report.as_bytes())?;
    manifest.finish(out_dir)?;

    let mut out = report;
    let eps = ledger.epsilon(delta)?;
    if ledger.is_non_private() {
        writeln!(out, "epsilon=inf lambda=0 delta={delta}").unwrap();
        writeln!(out, "WARNING: NON-PRIVATE RUN (a training phase used sigma=0)").unwrap();
    } else {
        writeln!(out, "epsilon={:.6} lambda={} delta={delta}", eps.epsilon, eps.lambda).unwrap();
    }
    Ok(out)
}

/// Sample a synthetic dataset from trained models.
///
/// Reads only the model files and the seed — never the training data — so
/// the output's privacy follows from the models' by post-processing.
pub fn cmd_generate(
    cfg: &RunConfig,
    ti_path: &Path,
    tpg_path: &Path,
    count_override: Option<usize>,
    seed: u64,
    out_dir: &Path,
) -> Result<String> {
    let ti = TiModel::load(ti_path)?;
    let tpg = TpgModel::load(tpg_path)?;
    check_grid(&cfg.grid_spec()?.shape, &ti.shape, "initialization model")?;

    let mut manifest = RunManifest::new("generate", cfg, seed);
    manifest.input("ti.model", &std::fs::read(ti_path).map_err(|e| Error::io(ti_path, e))?);
    manifest.input("tpg.model", &std::fs::read(tpg_path).map_err(|e| Error::io(tpg_path, e))?);

    let opts = GenerateOptions {
        count: count_override.or(cfg.gen_count),
        max_retries: u32::try_from(cfg.gen_max_retries)
            .map_err(|_| Error::Config("gen_max_retries does not fit in 32 bits".into()))?,
    };
    let (synthetic, report) = generate(&ti, &tpg, seed, &opts)?;

    let mut text = String::from("# generation report\n");
    writeln!(
        text,
        "requested={} generated={} skipped={} attempts={}",
        report.requested, report.generated, report.skipped, report.attempts
    )
    .unwrap();
    if report.skipped_fraction() > 0.01 {
        writeln!(
            text,
            "WARNING: {:.2}% of requested trajectories were skipped; the transition \
             model may be routing poorly",
            100.0 * report.skipped_fraction()
        )
        .unwrap();
    }

    manifest.emit(out_dir, "synthetic.txt", synthetic.to_text().as_bytes())?;
    manifest.emit(out_dir, "generate_report.txt", text.as_bytes())?;
    manifest.finish(out_dir)?;
    Ok(text)
}

/// Score a synthetic dataset against the original it imitates.
///
/// Writes `evaluation.txt` with the per-hour trip-length divergence, the
/// frequent-pattern true-positive rates, and the per-hour source/destination
/// transport distance; the same text goes to stdout.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    original_path: &Path,
    synthetic_path: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<String> {
    let original = Dataset::read(original_path)?;
    let synthetic = Dataset::read(synthetic_path)?;
    check_grid(&cfg.grid_spec()?.shape, &original.shape, "original dataset")?;

    let mut manifest = RunManifest::new("evaluate", cfg, seed);
    manifest.input("original", original.to_text().as_bytes());
    manifest.input("synthetic", synthetic.to_text().as_bytes());

    let opts = EvalOptions { emd_trip_cap: cfg.emd_trip_cap, seed, ..EvalOptions::default() };
    let report = evaluate(&original, &synthetic, &opts)?;
    let text = report.to_text();

    manifest.emit(out_dir, "evaluation.txt", text.as_bytes())?;
    manifest.finish(out_dir)?;
    Ok(text)
}

/// Compute the privacy cost of a hypothetical training run.
///
/// Prints `epsilon=<value> lambda=<order>` and writes the full ledger
/// (alpha table included) to `accountant.txt`.
pub fn cmd_accountant(
    cfg: &RunConfig,
    dataset_size: usize,
    batch_size: usize,
    sigma: f64,
    epochs: usize,
    delta: Option<f64>,
    out_dir: &Path,
) -> Result<String> {
    if dataset_size == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("noise multiplier must be finite and >= 0, got {sigma}")));
    }
    let delta = delta.unwrap_or(1.0 / dataset_size as f64);

    let q = (batch_size as f64 / dataset_size as f64).min(1.0);
    let steps = steps_per_epoch(dataset_size, batch_size) * epochs as u64;
    let mut ledger = PrivacyLedger::new();
    ledger.compose(q, sigma, steps)?;

    let mut manifest = RunManifest::new("accountant", cfg, 0);
    manifest.emit(out_dir, "accountant.txt", ledger.report(delta)?.as_bytes())?;
    manifest.finish(out_dir)?;

    let eps = ledger.epsilon(delta)?;
    if eps.epsilon.is_infinite() {
        Ok("epsilon=inf lambda=0\n".to_string())
    } else {
        Ok(format!("epsilon={:.6} lambda={}\n", eps.epsilon, eps.lambda))
    }
}
