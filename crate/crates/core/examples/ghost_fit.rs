//! Fit the ghost operator across a pruned block of the toy model and
//! compare the boundary residual to doing nothing.
//!
//! cargo run --example ghost_fit

use ghostalign::recovery::{fit_ghost, Solver, DEFAULT_EPS};
use ghostalign::simulator::build_toy_model;

fn main() -> ghostalign::Result<()> {
    let model = build_toy_model(12, 64, 7)?;
    let spec = model.boundary(4, 3)?;
    let calib = model.sample_inputs(32 * 256, 0);
    let pair = model.forward_capture(&calib, &spec)?;

    let ghost = fit_ghost(&pair, DEFAULT_EPS, Solver::RidgeNormal)?;
    let identity = pair.gap().frobenius_norm();
    println!(
        "pruned layers {:?}, {} calibration tokens",
        spec.layers(),
        pair.token_count()
    );
    println!("identity residual  {identity:.4}");
    println!("ghost residual     {:.4}", ghost.fit_residual);
    println!("‖M*‖_F             {:.4}", ghost.m_star.frobenius_norm());
    println!(
        "reduction          {:.1}%",
        100.0 * (1.0 - ghost.fit_residual / identity)
    );
    Ok(())
}
