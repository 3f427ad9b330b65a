//! Privacy-cost tables for a city-scale training run.
//!
//! Shows how the (epsilon, delta) guarantee of DP-SGD training moves with
//! the noise multiplier and the number of epochs, using the moments
//! accountant. No training happens; the cost depends only on the sampling
//! rate, the noise, and the step count.
//!
//! Run with: `cargo run --release --example accountant_sweep`

use ptraj::accountant::PrivacyLedger;
use ptraj::dp::steps_per_epoch;

fn epsilon_for(n: usize, batch: usize, sigma: f64, epochs: u64, delta: f64) -> (f64, u32) {
    let q = batch as f64 / n as f64;
    let steps = steps_per_epoch(n, batch) * epochs;
    let mut ledger = PrivacyLedger::new();
    ledger.compose(q, sigma, steps).expect("accountant handles these ranges");
    let r = ledger.epsilon(delta).expect("delta is valid");
    (r.epsilon, r.lambda)
}

fn main() {
    // A 121,622-trip dataset trained with batches of 200, the setup the
    // default config describes.
    let n = 121_622;
    let batch = 200;
    let delta = 1.0 / n as f64;

    println!("dataset_size={n} batch={batch} delta=1/{n}");
    println!();
    println!("epsilon by noise multiplier (30 epochs):");
    println!("{:>8}  {:>10}  {:>6}", "sigma", "epsilon", "lambda");
    for sigma in [0.7, 0.9, 1.1, 1.3, 1.6, 2.0] {
        let (eps, lambda) = epsilon_for(n, batch, sigma, 30, delta);
        println!("{sigma:>8.1}  {eps:>10.4}  {lambda:>6}");
    }

    println!();
    println!("epsilon by epochs (sigma = 1.3):");
    println!("{:>8}  {:>10}  {:>6}", "epochs", "epsilon", "lambda");
    for epochs in [5, 15, 30, 60, 120] {
        let (eps, lambda) = epsilon_for(n, batch, 1.3, epochs, delta);
        println!("{epochs:>8}  {eps:>10.4}  {lambda:>6}");
    }

    println!();
    println!("More noise buys a smaller epsilon; more epochs spend budget.");
    println!("sigma = 1.3 over 30 epochs lands near epsilon = 1, a common target.");
}
