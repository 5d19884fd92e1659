//! SVD pseudo-inverse and ridge normal equations give the same operator once
//! the calibration set comfortably exceeds the width; they part ways on the
//! square system, where the ridge term shows.
//!
//! cargo run --example solver_equivalence

use ghostalign::recovery::{fit_ghost, Solver, DEFAULT_EPS};
use ghostalign::simulator::build_toy_model;

fn main() -> ghostalign::Result<()> {
    let model = build_toy_model(12, 64, 3)?;
    let spec = model.boundary(2, 3)?;
    println!(
        "{:>7} {:>14} {:>14} {:>14}",
        "tokens", "‖ΔM‖/‖M‖", "svd resid", "ridge resid"
    );
    for tokens in [64, 128, 512, 4096] {
        let pair = model.forward_capture(&model.sample_inputs(tokens, 1), &spec)?;
        let svd = fit_ghost(&pair, DEFAULT_EPS, Solver::SvdPinv)?;
        let ridge = fit_ghost(&pair, DEFAULT_EPS, Solver::RidgeNormal)?;
        println!(
            "{tokens:>7} {:>14.3e} {:>14.3e} {:>14.3e}",
            ridge.m_star.relative_distance(&svd.m_star),
            svd.fit_residual,
            ridge.fit_residual
        );
    }
    Ok(())
}
