//! Held-out ghost error as the calibration set grows.
//!
//! cargo run --release --example calibration_sweep

use ghostalign::analysis::{calibration_sweep, SweepConfig};
use ghostalign::recovery::{Solver, DEFAULT_EPS};
use ghostalign::simulator::build_toy_model;

fn main() -> ghostalign::Result<()> {
    let model = build_toy_model(12, 64, 7)?;
    let spec = model.boundary(4, 3)?;
    let cfg = SweepConfig {
        sizes: vec![1, 2, 4, 8, 16, 32],
        seq_len: 64,
        seeds: (0..5).collect(),
        heldout_tokens: 2048,
        heldout_seed: 1_000_003,
        eps: DEFAULT_EPS,
        solver: Solver::RidgeNormal,
    };
    let report = calibration_sweep(&model, &spec, &cfg)?;
    println!(
        "{:>6} {:>7} {:>12} {:>10} {:>12} {:>10}",
        "seqs", "tokens", "residual", "± std", "e2e_mse", "± std"
    );
    for s in &report.summary {
        println!(
            "{:>6} {:>7} {:>12.4} {:>10.4} {:>12.3e} {:>10.1e}",
            s.size, s.tokens, s.residual_mean, s.residual_std, s.mse_mean, s.mse_std
        );
    }
    Ok(())
}
