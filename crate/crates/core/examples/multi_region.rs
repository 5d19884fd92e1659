//! Non-adjacent layers chosen by removal loss, each gap patched separately.
//!
//! cargo run --example multi_region

use ghostalign::analysis::{evaluate_regions, Split};
use ghostalign::pruning::select_by_removal_loss;
use ghostalign::recovery::{fit_method, Method, Solver, DEFAULT_EPS};
use ghostalign::simulator::{build_toy_model, PrunedRegion};

fn main() -> ghostalign::Result<()> {
    let model = build_toy_model(12, 64, 11)?;
    let calib = model.sample_inputs(4096, 0);
    let heldout = model.sample_inputs(2048, 1_000_003);
    let chosen = select_by_removal_loss(&model, &calib, 4)?.chosen;
    let regions = chosen.regions(model.num_layers())?;
    println!("removing {chosen:?} as {} region(s)", regions.len());

    for method in [Method::Identity, Method::Ghost] {
        let ops = regions
            .iter()
            .map(|spec| {
                fit_method(
                    method,
                    &model.forward_capture(&calib, spec)?,
                    Solver::RidgeNormal,
                    DEFAULT_EPS,
                )
            })
            .collect::<ghostalign::Result<Vec<_>>>()?;
        let pruned: Vec<PrunedRegion> = regions
            .iter()
            .zip(&ops)
            .map(|(s, op)| PrunedRegion {
                spec: *s,
                op: Some(op),
            })
            .collect();
        let r = evaluate_regions(&model, &pruned, method.as_str(), &heldout, Split::Heldout)?;
        println!(
            "{:<9} mae {:.5}  e2e mse {:.3e}",
            method.as_str(),
            r.boundary_mae,
            r.end_to_end_mse.unwrap()
        );
    }
    Ok(())
}
