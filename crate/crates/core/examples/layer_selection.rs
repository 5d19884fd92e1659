//! Which layers each pruning criterion would remove.
//!
//! cargo run --example layer_selection

use ghostalign::pruning::{
    block_influence_scores, select_by_removal_loss, select_contiguous_block,
};
use ghostalign::simulator::build_toy_model;

fn main() -> ghostalign::Result<()> {
    let model = build_toy_model(12, 64, 7)?;
    let calib = model.sample_inputs(2048, 0);
    let n = 3;

    let cos = select_contiguous_block(&model, &calib, n)?;
    println!("streamline cosine by block start:");
    for (s, v) in cos.scores.iter().enumerate() {
        println!("  [{s:>2}, {:>2})  {v:.5}", s + n);
    }
    println!("  chosen: {:?}\n", cos.chosen);

    let bi = block_influence_scores(&model, &calib, n)?;
    println!("block influence chosen: {:?}", bi.chosen);
    let rl = select_by_removal_loss(&model, &calib, n)?;
    println!("removal loss chosen:    {:?}", rl.chosen);
    Ok(())
}
