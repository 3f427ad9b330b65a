//! Differentially private training of both models.
//!
//! Draws a toy corpus with three known routes, trains the trip-endpoint
//! model and the transition model with DP-SGD (per-example clipping +
//! Gaussian noise), and prints the training diagnostics together with the
//! privacy ledger the run accumulated.
//!
//! Run with: `cargo run --release --example train_models`

use ptraj::accountant::PrivacyLedger;
use ptraj::dp::DpSgdConfig;
use ptraj::ti::{ti_train, TiDims};
use ptraj::toy::toy_corpus;
use ptraj::tpg::{tpg_train, TpgDims};

fn main() -> ptraj::Result<()> {
    let toy = toy_corpus(600, 7);
    let occupied = toy.dataset.occupied_index();
    println!(
        "training corpus: {} trajectories, {} occupied cells, {} routes",
        toy.dataset.len(),
        occupied.len(),
        toy.routes.len()
    );

    let dp = DpSgdConfig {
        clip_norm: 1.0,
        noise_multiplier: 1.1,
        batch_size: 50,
        learning_rate: 0.1,
        epochs: 8,
    };
    let mut ledger = PrivacyLedger::new();

    let dims = TiDims { hidden: 32, latent: 8 };
    let (_ti, report) = ti_train(&toy.dataset, &occupied, dims, &dp, 1, &mut ledger)?;
    let (start, end) = report.loss_ends(20);
    println!();
    println!("endpoint model: {} steps at sampling rate {:.4}", report.steps, report.sampling_rate);
    println!("  loss {start:.3} -> {end:.3}");
    println!(
        "  clipped {} of {} example gradients, max post-clip norm {:.4}",
        report.clip.clipped, report.clip.examples, report.clip.max_post_clip_norm
    );

    let dims = TpgDims { embed: 16, hidden: 32 };
    let (_tpg, report) = tpg_train(&toy.dataset, &occupied, toy.nb, dims, &dp, 1, &mut ledger)?;
    let (start, end) = report.loss_ends(20);
    println!();
    println!(
        "transition model: {} steps at sampling rate {:.4}",
        report.steps, report.sampling_rate
    );
    println!("  loss {start:.3} -> {end:.3}");
    println!(
        "  clipped {} of {} example gradients, max post-clip norm {:.4}",
        report.clip.clipped, report.clip.examples, report.clip.max_post_clip_norm
    );

    // Both phases share one ledger: their moments add up.
    let delta = 1.0 / toy.dataset.len() as f64;
    println!();
    print!("{}", ledger.report(delta)?);
    Ok(())
}
