//! How much of a fitted operator is anti-symmetric, and therefore out of
//! reach of any `H·diag(d)·Hᵀ` patch.
//!
//! cargo run --example symmetry

use ghostalign::recovery::{
    decompose_symmetry, fit_ghost, fit_hadamard_patch, Solver, DEFAULT_EPS,
};
use ghostalign::simulator::build_toy_model;

fn main() -> ghostalign::Result<()> {
    println!("{:>5} {:>10} {:>10} {:>10}", "seed", "‖M‖", "sym", "asym");
    for seed in 0..5 {
        let model = build_toy_model(12, 64, seed)?;
        let pair =
            model.forward_capture(&model.sample_inputs(4096, seed), &model.boundary(3, 3)?)?;
        let m = fit_ghost(&pair, DEFAULT_EPS, Solver::RidgeNormal)?.m_star;
        let d = decompose_symmetry(&m)?;
        println!(
            "{seed:>5} {:>10.4} {:>10.3} {:>10.3}",
            d.norm_total,
            d.sym_ratio(),
            d.asym_ratio()
        );
    }

    // The rotated baseline is symmetric by construction.
    let model = build_toy_model(12, 64, 0)?;
    let pair = model.forward_capture(&model.sample_inputs(1024, 0), &model.boundary(3, 3)?)?;
    let patch = fit_hadamard_patch(&pair)?;
    println!(
        "rotate patch asym ratio: {}",
        decompose_symmetry(&patch.fused)?.asym_ratio()
    );
    Ok(())
}
