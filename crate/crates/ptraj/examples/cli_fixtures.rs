//! Stage ready-to-use CLI inputs: raw GPS logs plus a matching config file.
//!
//! Writes the toy world's taxi logs and a `toy.cfg` tuned to its grid into a
//! directory (default `cli_fixtures/`), so the `ptraj` binary can be driven
//! by hand:
//!
//! ```sh
//! cargo run --release --example cli_fixtures -- /tmp/fix
//! ptraj --config /tmp/fix/toy.cfg --out /tmp/out preprocess /tmp/fix/raw
//! ```
//!
//! Run with: `cargo run --release --example cli_fixtures -- [dir]`

use std::fmt::Write as _;
use std::path::PathBuf;

use ptraj::config::RunConfig;
use ptraj::toy::{toy_grid_spec, toy_raw_logs};

fn main() -> ptraj::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(|| PathBuf::from("cli_fixtures"), PathBuf::from);
    let raw = dir.join("raw");
    std::fs::create_dir_all(&raw).expect("create fixture dir");

    // 60 taxis, 20 trips each: enough volume that DP-SGD at the default
    // noise still learns the toy routes.
    let logs = toy_raw_logs(60, 20, 2026);
    for log in &logs {
        let mut text = String::new();
        for p in &log.points {
            writeln!(text, "{} {} {} {}", p.lat, p.lon, u8::from(p.occupied), p.timestamp).unwrap();
        }
        std::fs::write(raw.join(format!("{}.txt", log.taxi_id)), text).expect("write log");
    }

    let spec = toy_grid_spec();
    let cfg = RunConfig {
        lat_min: spec.lat_min,
        lat_max: spec.lat_max,
        lon_min: spec.lon_min,
        lon_max: spec.lon_max,
        neighborhood_s: 2,
        ti_hidden: 32,
        ti_latent: 6,
        ti_epochs: 10,
        ti_batch_size: 100,
        tpg_embed: 12,
        tpg_hidden: 32,
        tpg_epochs: 10,
        tpg_batch_size: 100,
        ..RunConfig::default()
    };
    cfg.validate()?;
    std::fs::write(dir.join("toy.cfg"), cfg.to_text()).expect("write config");

    println!("wrote {} logs to {}", logs.len(), raw.display());
    println!("wrote config to {}", dir.join("toy.cfg").display());
    Ok(())
}
