//! All four boundary operators on held-out tokens, with end-to-end error.
//!
//! cargo run --example baselines

use ghostalign::analysis::{evaluate_method, Split};
use ghostalign::recovery::{fit_method, Method, Solver, DEFAULT_EPS};
use ghostalign::simulator::build_toy_model;

fn main() -> ghostalign::Result<()> {
    let model = build_toy_model(12, 64, 7)?;
    let spec = model.boundary(4, 3)?;
    let pair = model.forward_capture(&model.sample_inputs(8192, 0), &spec)?;
    let heldout = model.sample_inputs(2048, 1_000_003);

    println!(
        "{:<10} {:>12} {:>12} {:>12}",
        "method", "mae", "residual", "e2e_mse"
    );
    for method in Method::ALL {
        let op = fit_method(method, &pair, Solver::RidgeNormal, DEFAULT_EPS)?;
        let r = evaluate_method(
            &model,
            &spec,
            method.as_str(),
            Some(&op),
            &heldout,
            Split::Heldout,
        )?;
        println!(
            "{:<10} {:>12.5} {:>12.4} {:>12.3e}",
            method.as_str(),
            r.boundary_mae,
            r.alignment_residual,
            r.end_to_end_mse.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
