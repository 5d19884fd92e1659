use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ghostalign::actdata::read_json;
use ghostalign::config::RunConfig;
use ghostalign::pipeline::{run_pipeline, MethodEval};
use ghostalign::recovery::{Method, SymmetrySummary};
use ghostalign::simulator::ModelConfig;

const SMALL: &str = r#"{
  "model": {"num_layers": 6, "hidden_dim": 16, "seed": 3},
  "pruning": {"n": 2},
  "calibration": {"num_sequences": 4, "seq_len": 64},
  "eval": {"heldout_tokens": 256}
}"#;

fn ghostalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghostalign"))
        .args(args)
        .env_remove("GHOSTALIGN_WORKDIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let path = entry.path();
        if path.is_dir() {
            for (name, bytes) in tree_bytes(&path) {
                out.push((
                    format!("{}/{name}", entry.file_name().to_string_lossy()),
                    bytes,
                ));
            }
        } else {
            out.push((
                entry.file_name().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            ));
        }
    }
    out.sort();
    out
}

#[test]
fn run_writes_every_artifact_and_ghost_wins_on_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let work = tmp.path().join("run");
    let out = ghostalign(&["run", "--config", &cfg, "--workdir", work.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ghost"));

    for name in [
        "config.effective.json",
        "model.json",
        "scores.json",
        "pre.actb",
        "post.actb",
        "meta.json",
        "summary.csv",
        "summary.txt",
    ] {
        assert!(work.join(name).exists(), "{name}");
    }
    let mut residuals = Vec::new();
    for m in Method::ALL {
        assert!(work.join(format!("operator_{m}.actb")).exists());
        assert!(work.join(format!("operator_{m}.json")).exists());
        assert!(work.join(format!("eval_{m}.csv")).exists());
        let eval: MethodEval = read_json(work.join(format!("eval_{m}.json"))).unwrap();
        assert_eq!(eval.heldout.token_count, 256);
        assert_eq!(eval.calibration.token_count, 256);
        residuals.push((m, eval.calibration.alignment_residual));
    }
    let ghost = residuals
        .iter()
        .find(|(m, _)| *m == Method::Ghost)
        .unwrap()
        .1;
    assert!(residuals.iter().all(|&(_, r)| ghost <= r * (1.0 + 1e-12)));
    let model: ModelConfig = read_json(work.join("model.json")).unwrap();
    assert_eq!((model.num_layers, model.hidden_dim, model.seed), (6, 16, 3));
    let csv = fs::read_to_string(work.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        code(&ghostalign(&[
            "run",
            "--config",
            &cfg,
            "--workdir",
            a.to_str().unwrap(),
            "--threads",
            "1"
        ])),
        0
    );
    assert_eq!(
        code(&ghostalign(&[
            "run",
            "--config",
            &cfg,
            "--workdir",
            b.to_str().unwrap(),
            "--threads",
            "4"
        ])),
        0
    );
    assert_eq!(tree_bytes(&a), tree_bytes(&b));

    // Occupied workdir needs --force; the forced rerun reproduces the same bytes.
    let again = ghostalign(&["run", "--config", &cfg, "--workdir", a.to_str().unwrap()]);
    assert_eq!(code(&again), 2);
    assert_eq!(
        code(&ghostalign(&[
            "run",
            "--config",
            &cfg,
            "--workdir",
            a.to_str().unwrap(),
            "--force"
        ])),
        0
    );
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn rotate_on_odd_width_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"hidden_dim": 63}, "fit": {"method": "rotate"}}"#,
    );
    let out = ghostalign(&[
        "run",
        "--config",
        &cfg,
        "--workdir",
        tmp.path().join("w").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("63"));
    assert!(!tmp.path().join("w").exists());

    // Without rotate, an odd width runs end to end.
    let cfg = write_config(
        tmp.path(),
        r#"{"model": {"hidden_dim": 63, "num_layers": 4}, "pruning": {"n": 1}, "fit": {"method": "ghost"},
            "calibration": {"num_sequences": 2, "seq_len": 64}, "eval": {"heldout_tokens": 128}}"#,
    );
    let out = ghostalign(&[
        "run",
        "--config",
        &cfg,
        "--workdir",
        tmp.path().join("w").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for text in [
        r#"{"fit": {"lambda": 1}}"#,
        r#"{"fit": {"eps": 0}}"#,
        "not json",
    ] {
        let cfg = write_config(tmp.path(), text);
        let out = ghostalign(&[
            "run",
            "--config",
            &cfg,
            "--workdir",
            tmp.path().join("w").to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 2, "{text}");
    }
    assert_eq!(code(&ghostalign(&["run", "--threads", "0"])), 2);
    assert_eq!(code(&ghostalign(&["bogus"])), 2);
}

#[test]
fn stepwise_subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dump = tmp.path().join("dump");
    let d = dump.to_str().unwrap();
    let out = ghostalign(&["simulate", "--config", &cfg, "--workdir", d, "--start", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        (meta["pre_layer"].as_i64(), meta["post_layer"].as_i64()),
        (Some(2), Some(4))
    );

    let op = tmp.path().join("ghost.actb");
    let o = op.to_str().unwrap();
    let out = ghostalign(&["fit", d, "--method", "ghost", "--solver", "svd", "--out", o]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let info: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(info["solver"], "svd_pinv");
    assert_eq!(info["token_count"], 256);

    // Refuses to overwrite without --force.
    assert_eq!(code(&ghostalign(&["fit", d, "--out", o])), 2);

    let model = dump.join("model.json");
    let out = ghostalign(&[
        "eval",
        "--config",
        &cfg,
        "--operator",
        o,
        "--model-config",
        model.to_str().unwrap(),
        "--spec",
        "2:2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["split"], "heldout");
    assert!(report["end_to_end_mse"].as_f64().unwrap() >= 0.0);

    let out = ghostalign(&["eval", "--operator", o, "--dump", d]);
    assert_eq!(code(&out), 0);

    let out = ghostalign(&["decompose", "--operator", o]);
    assert_eq!(code(&out), 0);
    let s: SymmetrySummary = serde_json::from_slice(&out.stdout).unwrap();
    assert!((s.sym_ratio.powi(2) + s.asym_ratio.powi(2) - 1.0).abs() <= 1e-10);

    let out = ghostalign(&[
        "select",
        "--config",
        &cfg,
        "--criterion",
        "removal_loss",
        "--n",
        "2",
    ]);
    assert_eq!(code(&out), 0);
    let scores: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(scores["scores"].as_array().unwrap().len(), 6);
}

#[test]
fn malformed_dump_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dump = tmp.path().join("dump");
    let d = dump.to_str().unwrap();
    assert_eq!(
        code(&ghostalign(&[
            "simulate",
            "--config",
            &cfg,
            "--workdir",
            d,
            "--start",
            "1"
        ])),
        0
    );
    let mut bytes = fs::read(dump.join("pre.actb")).unwrap();
    bytes[3] = b'X';
    fs::write(dump.join("pre.actb"), bytes).unwrap();
    let out = ghostalign(&[
        "fit",
        d,
        "--out",
        tmp.path().join("op.actb").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn sweep_writes_csv_and_report_collects_evals() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = ghostalign(&[
        "sweep",
        "--config",
        &cfg,
        "--spec",
        "1:2",
        "--sizes",
        "2,4",
        "--seeds",
        "0..3",
        "--seq-len",
        "32",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("size,seed,residual,mse"));
    assert_eq!(lines.count(), 6);

    let work = tmp.path().join("run");
    let w = work.to_str().unwrap();
    assert_eq!(
        code(&ghostalign(&["run", "--config", &cfg, "--workdir", w])),
        0
    );
    let out = Command::new(env!("CARGO_BIN_EXE_ghostalign"))
        .arg("report")
        .env("GHOSTALIGN_WORKDIR", w)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let per_channel = fs::read_to_string(work.join("per_channel_mae.csv")).unwrap();
    assert_eq!(
        per_channel.lines().next(),
        Some("channel,identity,diag,rotate,ghost")
    );
    assert_eq!(per_channel.lines().count(), 17);
}

#[test]
fn library_pipeline_handles_split_selections() {
    // Removal loss may pick non-adjacent layers; each run gets its own operator.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json_str(
        r#"{"model": {"num_layers": 8, "hidden_dim": 16, "seed": 1},
            "pruning": {"criterion": "removal_loss", "n": 3},
            "calibration": {"num_sequences": 2, "seq_len": 128},
            "eval": {"heldout_tokens": 256}}"#,
    )
    .unwrap();
    let summary = run_pipeline(&cfg, tmp.path(), false).unwrap();
    let pruned: usize = summary.regions.iter().map(|r| r.1).sum();
    assert_eq!(pruned, 3);
    for k in 1..summary.regions.len() {
        assert!(tmp.path().join(format!("region{k}/pre.actb")).exists());
    }
    let ghost = summary
        .rows
        .iter()
        .find(|r| r.method == Method::Ghost)
        .unwrap();
    let identity = summary
        .rows
        .iter()
        .find(|r| r.method == Method::Identity)
        .unwrap();
    assert!(ghost.calib_residual <= identity.calib_residual);
}
