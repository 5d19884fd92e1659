//! Fitting from batches without holding the whole calibration set.
//!
//! cargo run --example streaming_gram

use ghostalign::linalg::GramAccumulator;
use ghostalign::recovery::{fit_ghost, fit_ghost_accumulated, Solver, DEFAULT_EPS};
use ghostalign::simulator::build_toy_model;

fn main() -> ghostalign::Result<()> {
    let model = build_toy_model(12, 64, 7)?;
    let spec = model.boundary(4, 3)?;
    let mut acc = GramAccumulator::new(64, 64);
    for batch in 0..32 {
        let pair = model.forward_capture(&model.sample_inputs(256, batch), &spec)?;
        acc.accumulate(pair.pre(), pair.gap())?;
    }
    let streamed = fit_ghost_accumulated(&acc, DEFAULT_EPS)?;
    println!("accumulated {} tokens", acc.token_count());

    // Same fit from the concatenated batches.
    let inputs: Vec<_> = (0..32).map(|b| model.sample_inputs(256, b)).collect();
    let all = ghostalign::Matrix::vstack(&inputs)?;
    let pair = model.forward_capture(&all, &spec)?;
    let direct = fit_ghost(&pair, DEFAULT_EPS, Solver::RidgeNormal)?;
    println!(
        "relative difference {:.2e}",
        streamed.relative_distance(&direct.m_star)
    );
    Ok(())
}
