//! Write and read a calibration dump in the ACTB layout.
//!
//! cargo run --example actb_roundtrip

use ghostalign::actdata::{
    encode_actb, load_calibration_pair, write_calibration_pair, Dtype, DumpMetadata, DumpSource,
};
use ghostalign::simulator::build_toy_model;
use ghostalign::Matrix;

fn main() -> ghostalign::Result<()> {
    let header = &encode_actb(&Matrix::from_rows(&[[2.5]]), Dtype::F64)[..28];
    println!("header of a 1x1 f64 file: {header:02x?}");

    let model = build_toy_model(6, 16, 1)?;
    let spec = model.boundary(2, 2)?;
    let pair = model.forward_capture(&model.sample_inputs(4 * 32, 0), &spec)?;
    let meta = DumpMetadata {
        model_id: "toy-L6-C16-seed1".into(),
        pre_layer: 2,
        post_layer: 4,
        seq_len: 32,
        num_sequences: 4,
        token_count: 128,
        seed: 0,
        source: DumpSource::Simulator,
    };
    let dir = std::env::temp_dir().join("ghostalign-actb-example");
    for dtype in [Dtype::F64, Dtype::F32] {
        write_calibration_pair(&dir, pair.pre(), pair.post(), &meta, dtype)?;
        let (pre, post, back) = load_calibration_pair(&dir)?;
        assert_eq!(back, meta);
        println!(
            "{dtype:?}: max |Δpre| {:.2e}, max |Δpost| {:.2e}",
            pre.max_abs_diff(pair.pre()),
            post.max_abs_diff(pair.post())
        );
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
