//! The full pipeline, end to end, through the command layer.
//!
//! Starts from raw GPS logs on disk and walks the same path the CLI binary
//! takes: preprocess into a gridded dataset, train both models with DP-SGD,
//! generate a synthetic dataset from the model files alone, and score it
//! against the original. Every stage leaves its artifacts and a run
//! manifest in the output directory.
//!
//! Run with: `cargo run --release --example end_to_end`

use std::fmt::Write as _;

use ptraj::commands::{cmd_evaluate, cmd_generate, cmd_preprocess, cmd_train, TrainTarget};
use ptraj::config::RunConfig;
use ptraj::toy::{toy_grid_spec, toy_raw_logs};

fn main() -> ptraj::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let raw = dir.path().join("raw");
    let out = dir.path().join("out");
    std::fs::create_dir(&raw).expect("create raw dir");

    // A fleet of 100 taxis, 25 trips each, written as plain-text logs.
    // DP training needs volume: the noise is calibrated per record, so more
    // records mean a better signal-to-noise ratio AND a smaller epsilon.
    for log in toy_raw_logs(100, 25, 2024) {
        let mut text = String::new();
        for p in &log.points {
            writeln!(text, "{} {} {} {}", p.lat, p.lon, u8::from(p.occupied), p.timestamp).unwrap();
        }
        std::fs::write(raw.join(format!("{}.txt", log.taxi_id)), text).expect("write log");
    }

    // The run configuration, written to disk and read back the way the CLI
    // consumes it. The grid must match the logs' city box.
    let spec = toy_grid_spec();
    let cfg = RunConfig {
        lat_min: spec.lat_min,
        lat_max: spec.lat_max,
        lon_min: spec.lon_min,
        lon_max: spec.lon_max,
        neighborhood_s: 2,
        ti_hidden: 32,
        ti_latent: 8,
        ti_learning_rate: 0.1,
        ti_epochs: 20,
        ti_batch_size: 100,
        tpg_embed: 16,
        tpg_hidden: 32,
        tpg_learning_rate: 0.2,
        tpg_epochs: 20,
        tpg_batch_size: 100,
        gen_count: Some(400),
        ..RunConfig::default()
    };
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, cfg.to_text()).expect("write config");
    let cfg = RunConfig::from_file(&cfg_path)?;
    println!("config {} (hash {})", cfg_path.display(), cfg.hash());

    println!();
    println!("--- preprocess ---");
    print!("{}", cmd_preprocess(&cfg, &raw, &out)?);

    println!();
    println!("--- train (sigma = {}) ---", cfg.ti_noise_multiplier);
    print!("{}", cmd_train(&cfg, &out.join("dataset.txt"), TrainTarget::Both, 7, &out)?);

    println!();
    println!("--- generate ---");
    print!("{}", cmd_generate(&cfg, &out.join("ti.model"), &out.join("tpg.model"), None, 8, &out)?);

    println!();
    println!("--- evaluate ---");
    print!("{}", cmd_evaluate(&cfg, &out.join("dataset.txt"), &out.join("synthetic.txt"), 9, &out)?);

    println!();
    println!("artifacts in {}:", out.display());
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .expect("read out dir")
        .map(|e| e.expect("dir entry").file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for name in names {
        println!("  {name}");
    }
    Ok(())
}
