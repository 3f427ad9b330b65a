//! Differentially private synthetic trajectory generation.
//!
//! `ptraj` turns raw GPS taxi logs into a pair of small neural models trained
//! with DP-SGD — one for trip endpoints, one for next-cell transitions — and
//! then samples synthetic trajectories from those models alone. The synthetic
//! traces can be released in place of the raw data; the privacy cost of the
//! released models is tracked by a moments accountant.
//!
//! The pipeline has five stages, each usable as a library call or through the
//! thin `ptraj` binary:
//!
//! 1. [`preprocess`]: raw GPS logs → discretized, cleaned trajectories on a
//!    uniform grid ([`grid`]).
//! 2. [`ti`]: train a trip-initialization VAE over (source, destination, hour)
//!    triples with DP-SGD ([`dp`]).
//! 3. [`tpg`]: train a next-cell transition classifier the same way.
//! 4. [`generate`]: sample endpoint triples and connect them with
//!    most-probable routes — no access to the original data.
//! 5. [`metrics`]: compare synthetic against real data (trip length
//!    distributions, frequent patterns, earth mover's distance).
//!
//! The [`accountant`] module computes the (ε, δ) privacy guarantee for any
//! training configuration, and [`commands`] wires the stages together with
//! on-disk file formats. See the crate examples for runnable end-to-end
//! walkthroughs of every stage.

pub mod accountant;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod dp;
pub mod error;
pub mod generate;
pub mod grid;
pub mod metrics;
pub mod model_file;
pub mod nn;
pub mod preprocess;
pub mod ti;
pub mod toy;
pub mod tpg;
mod util;

pub use error::{Error, Result};
