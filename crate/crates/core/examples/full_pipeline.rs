//! Everything `ghostalign run` does, driven from the library.
//!
//! cargo run --release --example full_pipeline [workdir]

use ghostalign::config::RunConfig;
use ghostalign::pipeline::run_pipeline;

fn main() -> ghostalign::Result<()> {
    let workdir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("ghostalign-pipeline"));
    let config =
        RunConfig::from_json_str(r#"{"calibration": {"num_sequences": 16, "seq_len": 128}}"#)?;
    let summary = run_pipeline(&config, &workdir, true)?;
    print!("{}", summary.to_table());
    println!("artifacts in {}", workdir.display());
    Ok(())
}
