//! Scoring a synthetic dataset against the original.
//!
//! Compares datasets with the three utility metrics: per-hour trip-length
//! divergence, frequent-pattern true-positive rate, and per-hour earth
//! mover's distance between source/destination distributions. Two
//! independent draws from the same toy distribution score near-perfectly; a
//! deliberately corrupted copy does not.
//!
//! Run with: `cargo run --release --example evaluate_utility`

use ptraj::dataset::{Dataset, Trajectory};
use ptraj::metrics::{evaluate, EvalOptions};
use ptraj::toy::toy_corpus;

fn main() -> ptraj::Result<()> {
    let real = toy_corpus(1_500, 1).dataset;
    let fresh = toy_corpus(1_500, 2).dataset;

    let opts = EvalOptions::default();
    println!("== independent draw from the same route distribution ==");
    print!("{}", evaluate(&real, &fresh, &opts)?.to_text());

    // Corruption: chop every trajectory to its first three cells. Lengths
    // shrink (divergence up), long patterns vanish (hit rate down), and
    // destinations move (transport distance up).
    let corrupted = Dataset::new(
        real.shape,
        real.trajectories
            .iter()
            .map(|t| {
                let cells = t.cells.iter().copied().take(3).collect();
                Trajectory::new(cells, t.hour).expect("prefix of a valid trajectory")
            })
            .collect(),
    );
    println!();
    println!("== truncated copy of the same data ==");
    print!("{}", evaluate(&real, &corrupted, &opts)?.to_text());

    let perfect = evaluate(&real, &real, &opts)?;
    println!();
    println!(
        "self-comparison sanity: mean JSD {:?}, mean EMD {:?}",
        perfect.mean_jsd(),
        perfect.mean_emd()
    );
    Ok(())
}
