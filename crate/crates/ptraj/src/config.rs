//! Run configuration: a flat `key = value` file and its validation.
//!
//! One file drives the whole pipeline so a run is reproducible from the
//! config plus a seed. Unknown keys are rejected rather than ignored; a typo
//! in a privacy parameter should fail loudly, not silently train with the
//! default.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::dp::DpSgdConfig;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, NeighborhoodSpec};
use crate::ti::TiDims;
use crate::tpg::TpgDims;

/// Everything a pipeline run needs besides the data and the seed.
///
/// Field names are exactly the config-file keys. Defaults describe a
/// 500 m grid over San Francisco and the training setup used throughout the
/// examples; any subset may be overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Geographic bounding box and discretization.
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub cell_size_m: f64,
    /// Transition neighborhood radius in cells.
    pub neighborhood_s: usize,

    // Preprocessing.
    pub max_speed_kmh: f64,
    pub utc_offset_secs: i32,
    /// Optional holiday blacklist file (one `YYYY-MM-DD` per line).
    pub holidays_file: Option<PathBuf>,

    // Trip-initialization model.
    pub ti_hidden: usize,
    pub ti_latent: usize,
    pub ti_learning_rate: f64,
    pub ti_epochs: usize,
    pub ti_batch_size: usize,
    pub ti_clip_norm: f64,
    pub ti_noise_multiplier: f64,

    // Transition-probability model.
    pub tpg_embed: usize,
    pub tpg_hidden: usize,
    pub tpg_learning_rate: f64,
    pub tpg_epochs: usize,
    pub tpg_batch_size: usize,
    pub tpg_clip_norm: f64,
    pub tpg_noise_multiplier: f64,

    /// Privacy failure probability; unset means `1 / dataset_size`.
    pub delta: Option<f64>,

    // Generation.
    /// Synthetic trajectories to produce; unset means one per real trajectory.
    pub gen_count: Option<usize>,
    pub gen_max_retries: usize,

    // Evaluation.
    pub emd_trip_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lat_min: 37.6017,
            lat_max: 37.8112,
            lon_min: -122.5158,
            lon_max: -122.3527,
            cell_size_m: 500.0,
            neighborhood_s: 5,
            max_speed_kmh: 150.0,
            utc_offset_secs: -28_800,
            holidays_file: None,
            ti_hidden: 100,
            ti_latent: 50,
            ti_learning_rate: 0.05,
            ti_epochs: 15,
            ti_batch_size: 200,
            ti_clip_norm: 1.0,
            ti_noise_multiplier: 1.3,
            tpg_embed: 50,
            tpg_hidden: 200,
            tpg_learning_rate: 0.05,
            tpg_epochs: 15,
            tpg_batch_size: 200,
            tpg_clip_norm: 1.0,
            tpg_noise_multiplier: 1.3,
            delta: None,
            gen_count: None,
            gen_max_retries: 20,
            emd_trip_cap: 2_000,
        }
    }
}

impl RunConfig {
    /// Parse a config file and validate the result.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config(&text)
    }

    /// The geographic grid this config describes.
    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.cell_size_m)
    }

    pub fn neighborhood(&self) -> Result<NeighborhoodSpec> {
        NeighborhoodSpec::new(self.neighborhood_s)
    }

    pub fn ti_dims(&self) -> TiDims {
        TiDims { hidden: self.ti_hidden, latent: self.ti_latent }
    }

    pub fn tpg_dims(&self) -> TpgDims {
        TpgDims { embed: self.tpg_embed, hidden: self.tpg_hidden }
    }

    pub fn ti_dp(&self) -> DpSgdConfig {
        DpSgdConfig {
            clip_norm: self.ti_clip_norm,
            noise_multiplier: self.ti_noise_multiplier,
            batch_size: self.ti_batch_size,
            learning_rate: self.ti_learning_rate,
            epochs: self.ti_epochs,
        }
    }

    pub fn tpg_dp(&self) -> DpSgdConfig {
        DpSgdConfig {
            clip_norm: self.tpg_clip_norm,
            noise_multiplier: self.tpg_noise_multiplier,
            batch_size: self.tpg_batch_size,
            learning_rate: self.tpg_learning_rate,
            epochs: self.tpg_epochs,
        }
    }

    /// The delta to account against: the configured one, or `1/n`.
    pub fn delta_for(&self, dataset_size: usize) -> f64 {
        self.delta.unwrap_or(1.0 / dataset_size.max(1) as f64)
    }

    /// Check every field, collecting the first offending key into the error.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        for (key, v) in [
            ("lat_min", self.lat_min),
            ("lat_max", self.lat_max),
            ("lon_min", self.lon_min),
            ("lon_max", self.lon_max),
        ] {
            if !v.is_finite() {
                return bad(key, "must be finite");
            }
        }
        if self.lat_min >= self.lat_max {
            return bad("lat_min", "must be less than lat_max");
        }
        if self.lon_min >= self.lon_max {
            return bad("lon_min", "must be less than lon_max");
        }
        if !(self.lat_min >= -90.0 && self.lat_max <= 90.0) {
            return bad("lat_min", "latitudes must lie in [-90, 90]");
        }
        if !(self.lon_min >= -180.0 && self.lon_max <= 180.0) {
            return bad("lon_min", "longitudes must lie in [-180, 180]");
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return bad("cell_size_m", "must be a positive length");
        }
        if self.neighborhood_s == 0 {
            return bad("neighborhood_s", "must be at least 1");
        }
        if !(self.max_speed_kmh.is_finite() && self.max_speed_kmh > 0.0) {
            return bad("max_speed_kmh", "must be a positive speed");
        }
        if self.utc_offset_secs.abs() >= 86_400 {
            return bad("utc_offset_secs", "must be within a day of UTC");
        }
        for (key, v) in [
            ("ti_hidden", self.ti_hidden),
            ("ti_latent", self.ti_latent),
            ("tpg_embed", self.tpg_embed),
            ("tpg_hidden", self.tpg_hidden),
            ("gen_max_retries", self.gen_max_retries),
            ("emd_trip_cap", self.emd_trip_cap),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        self.ti_dp()
            .validate()
            .map_err(|e| Error::Config(format!("ti training: {e}")))?;
        self.tpg_dp()
            .validate()
            .map_err(|e| Error::Config(format!("tpg training: {e}")))?;
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return bad("delta", "must lie strictly between 0 and 1");
            }
        }
        if let Some(0) = self.gen_count {
            return bad("gen_count", "must be at least 1 when set");
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("lat_min", self.lat_min.to_string());
        kv("lat_max", self.lat_max.to_string());
        kv("lon_min", self.lon_min.to_string());
        kv("lon_max", self.lon_max.to_string());
        kv("cell_size_m", self.cell_size_m.to_string());
        kv("neighborhood_s", self.neighborhood_s.to_string());
        kv("max_speed_kmh", self.max_speed_kmh.to_string());
        kv("utc_offset_secs", self.utc_offset_secs.to_string());
        if let Some(p) = &self.holidays_file {
            kv("holidays_file", p.display().to_string());
        }
        kv("ti_hidden", self.ti_hidden.to_string());
        kv("ti_latent", self.ti_latent.to_string());
        kv("ti_learning_rate", self.ti_learning_rate.to_string());
        kv("ti_epochs", self.ti_epochs.to_string());
        kv("ti_batch_size", self.ti_batch_size.to_string());
        kv("ti_clip_norm", self.ti_clip_norm.to_string());
        kv("ti_noise_multiplier", self.ti_noise_multiplier.to_string());
        kv("tpg_embed", self.tpg_embed.to_string());
        kv("tpg_hidden", self.tpg_hidden.to_string());
        kv("tpg_learning_rate", self.tpg_learning_rate.to_string());
        kv("tpg_epochs", self.tpg_epochs.to_string());
        kv("tpg_batch_size", self.tpg_batch_size.to_string());
        kv("tpg_clip_norm", self.tpg_clip_norm.to_string());
        kv("tpg_noise_multiplier", self.tpg_noise_multiplier.to_string());
        if let Some(d) = self.delta {
            kv("delta", d.to_string());
        }
        if let Some(n) = self.gen_count {
            kv("gen_count", n.to_string());
        }
        kv("gen_max_retries", self.gen_max_retries.to_string());
        kv("emd_trip_cap", self.emd_trip_cap.to_string());
        out
    }

    /// Short digest of the canonical rendering, for tying outputs to the
    /// config that produced them.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parse `key = value` lines into a config. `#` starts a comment, blank
/// lines are skipped, keys may appear at most once, unknown keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: HashSet<&str> = HashSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {lineno}: expected 'key = value', got {line:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(Error::Config(format!("line {lineno}: key {key:?} has no value")));
        }
        set_key(&mut cfg, key, value)
            .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        if let Some(dup) = seen.replace(cfg_key_name(key)) {
            return Err(Error::Config(format!("line {lineno}: duplicate key {dup:?}")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The canonical (static) spelling of a known key, for duplicate tracking.
fn cfg_key_name(key: &str) -> &'static str {
    KEYS.iter().find(|k| **k == key).expect("set_key accepted the key")
}

const KEYS: &[&str] = &[
    "lat_min",
    "lat_max",
    "lon_min",
    "lon_max",
    "cell_size_m",
    "neighborhood_s",
    "max_speed_kmh",
    "utc_offset_secs",
    "holidays_file",
    "ti_hidden",
    "ti_latent",
    "ti_learning_rate",
    "ti_epochs",
    "ti_batch_size",
    "ti_clip_norm",
    "ti_noise_multiplier",
    "tpg_embed",
    "tpg_hidden",
    "tpg_learning_rate",
    "tpg_epochs",
    "tpg_batch_size",
    "tpg_clip_norm",
    "tpg_noise_multiplier",
    "delta",
    "gen_count",
    "gen_max_retries",
    "emd_trip_cap",
];

fn set_key(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> std::result::Result<T, String> {
        value.parse().map_err(|_| format!("key {key:?}: expected {what}, got {value:?}"))
    }
    let f = |v| num::<f64>(key, v, "a number");
    let u = |v| num::<usize>(key, v, "a non-negative integer");
    match key {
        "lat_min" => cfg.lat_min = f(value)?,
        "lat_max" => cfg.lat_max = f(value)?,
        "lon_min" => cfg.lon_min = f(value)?,
        "lon_max" => cfg.lon_max = f(value)?,
        "cell_size_m" => cfg.cell_size_m = f(value)?,
        "neighborhood_s" => cfg.neighborhood_s = u(value)?,
        "max_speed_kmh" => cfg.max_speed_kmh = f(value)?,
        "utc_offset_secs" => cfg.utc_offset_secs = num::<i32>(key, value, "an integer")?,
        "holidays_file" => cfg.holidays_file = Some(PathBuf::from(value)),
        "ti_hidden" => cfg.ti_hidden = u(value)?,
        "ti_latent" => cfg.ti_latent = u(value)?,
        "ti_learning_rate" => cfg.ti_learning_rate = f(value)?,
        "ti_epochs" => cfg.ti_epochs = u(value)?,
        "ti_batch_size" => cfg.ti_batch_size = u(value)?,
        "ti_clip_norm" => cfg.ti_clip_norm = f(value)?,
        "ti_noise_multiplier" => cfg.ti_noise_multiplier = f(value)?,
        "tpg_embed" => cfg.tpg_embed = u(value)?,
        "tpg_hidden" => cfg.tpg_hidden = u(value)?,
        "tpg_learning_rate" => cfg.tpg_learning_rate = f(value)?,
        "tpg_epochs" => cfg.tpg_epochs = u(value)?,
        "tpg_batch_size" => cfg.tpg_batch_size = u(value)?,
        "tpg_clip_norm" => cfg.tpg_clip_norm = f(value)?,
        "tpg_noise_multiplier" => cfg.tpg_noise_multiplier = f(value)?,
        "delta" => cfg.delta = Some(f(value)?),
        "gen_count" => cfg.gen_count = Some(u(value)?),
        "gen_max_retries" => cfg.gen_max_retries = u(value)?,
        "emd_trip_cap" => cfg.emd_trip_cap = u(value)?,
        other => return Err(format!("unknown key {other:?}")),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate_and_describe_a_real_grid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let spec = cfg.grid_spec().unwrap();
        assert!(spec.shape.n_rows > 10 && spec.shape.n_cols > 10);
        assert_eq!(spec.shape.cell_size_m, 500.0);
        assert_eq!(cfg.neighborhood().unwrap().side(), 11);
    }

    #[test]
    fn canonical_text_roundtrips() {
        let mut cfg = RunConfig::default();
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
        cfg.delta = Some(1e-5);
        cfg.gen_count = Some(123);
        cfg.holidays_file = Some(PathBuf::from("holidays.txt"));
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn overrides_comments_and_blanks_parse() {
        let text = "\n# privacy setup\nti_noise_multiplier = 0.9\n\ntpg_epochs=30 # inline note\n  neighborhood_s   =  3\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.ti_noise_multiplier, 0.9);
        assert_eq!(cfg.tpg_epochs, 30);
        assert_eq!(cfg.neighborhood_s, 3);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.ti_epochs, RunConfig::default().ti_epochs);
    }

    #[test]
    fn bad_inputs_are_rejected_with_line_numbers() {
        for (text, needle) in [
            ("speling = 1", "unknown key"),
            ("ti_epochs = frog", "expected a non-negative integer"),
            ("lat_min 37.0", "expected 'key = value'"),
            ("delta =", "has no value"),
            ("cell_size_m = 500\ncell_size_m = 250", "duplicate key"),
        ] {
            let err = parse_config(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} -> {err}");
            assert!(err.contains("line "), "{text:?} -> {err}");
        }
    }

    #[test]
    fn validation_catches_out_of_range_values() {
        for (text, needle) in [
            ("lat_min = 40\nlat_max = 38", "lat_min"),
            ("neighborhood_s = 0", "neighborhood_s"),
            ("ti_noise_multiplier = -1", "ti training"),
            ("tpg_batch_size = 0", "tpg training"),
            ("delta = 1.5", "delta"),
            ("gen_count = 0", "gen_count"),
        ] {
            let err = parse_config(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?} -> {err}");
        }
    }

    #[test]
    fn delta_defaults_to_one_over_n() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.delta_for(121_622), 1.0 / 121_622.0);
        cfg.delta = Some(1e-6);
        assert_eq!(cfg.delta_for(121_622), 1e-6);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.ti_noise_multiplier = 0.9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    proptest! {
        #[test]
        fn numeric_fields_roundtrip_through_text(
            lr in 1e-6f64..10.0,
            sigma in 0.0f64..8.0,
            clip in 1e-3f64..100.0,
            epochs in 1usize..500,
            batch in 1usize..5_000,
        ) {
            let cfg = RunConfig {
                ti_learning_rate: lr,
                tpg_noise_multiplier: sigma,
                ti_clip_norm: clip,
                tpg_epochs: epochs,
                ti_batch_size: batch,
                ..RunConfig::default()
            };
            prop_assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
        }
    }
}
