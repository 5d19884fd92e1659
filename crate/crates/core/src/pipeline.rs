//! End-to-end run: simulate → select → fit → eval → summary.
//!
//! Output layout inside the work directory:
//!
//! ```text
//! config.effective.json   model.json   scores.json
//! pre.actb  post.actb  meta.json          (first pruned region)
//! operator_<method>.actb / .json          (first pruned region)
//! region<k>/…                             (further regions, if any)
//! eval_<method>.json  eval_<method>.csv   (held-out per-channel MAE)
//! summary.csv  summary.txt
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actdata::{write_calibration_pair, write_json, Dtype, DumpMetadata, DumpSource};
use crate::analysis::{evaluate_regions, EvalReport, Split};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pruning::select;
use crate::recovery::{fit_method, save_operator, Method, Operator, OperatorInfo};
use crate::simulator::{PrunedRegion, ToyModel};

pub const SUMMARY_CSV: &str = "summary.csv";

/// Both evaluation splits for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodEval {
    pub calibration: EvalReport,
    pub heldout: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub calib_residual: f64,
    pub heldout_residual: f64,
    pub heldout_boundary_mae: f64,
    pub heldout_end_to_end_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineSummary {
    pub workdir: PathBuf,
    pub regions: Vec<(usize, usize)>,
    pub rows: Vec<SummaryRow>,
}

impl PipelineSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,calib_residual,heldout_residual,heldout_boundary_mae,heldout_end_to_end_mse\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e}",
                r.method,
                r.calib_residual,
                r.heldout_residual,
                r.heldout_boundary_mae,
                r.heldout_end_to_end_mse
            )
            .unwrap();
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let blocks: Vec<String> = self
            .regions
            .iter()
            .map(|(s, n)| format!("[{s}, {})", s + n))
            .collect();
        writeln!(out, "pruned blocks: {}", blocks.join(" ")).unwrap();
        writeln!(
            out,
            "{:<10} {:>14} {:>14} {:>14} {:>14}",
            "method", "calib_resid", "heldout_resid", "heldout_mae", "e2e_mse"
        )
        .unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<10} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
                r.method.as_str(),
                r.calib_residual,
                r.heldout_residual,
                r.heldout_boundary_mae,
                r.heldout_end_to_end_mse
            )
            .unwrap();
        }
        out
    }
}

/// Fails with [`Error::Exists`] if `dir` already holds files and `force`
/// is off.
pub fn prepare_workdir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Error::Exists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn model_id(model: &ToyModel) -> String {
    let c = model.config();
    format!("toy-L{}-C{}-seed{}", c.num_layers, c.hidden_dim, c.seed)
}

/// Runs every stage for `config` inside `workdir`.
pub fn run_pipeline(config: &RunConfig, workdir: &Path, force: bool) -> Result<PipelineSummary> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    prepare_workdir(workdir, force).map_err(|e| e.in_stage("config"))?;
    write_json(workdir.join("config.effective.json"), config).map_err(|e| e.in_stage("config"))?;

    let model = ToyModel::from_config(&config.model).map_err(|e| e.in_stage("simulate"))?;
    write_json(workdir.join("model.json"), model.config()).map_err(|e| e.in_stage("simulate"))?;
    let calib_inputs =
        model.sample_inputs(config.calibration.token_count(), config.calibration.seed);
    let heldout_inputs = model.sample_inputs(config.eval.heldout_tokens, config.eval.heldout_seed);

    let scores = select(
        config.pruning.criterion,
        &model,
        &calib_inputs,
        &calib_inputs,
        config.pruning.n,
    )
    .map_err(|e| e.in_stage("select"))?;
    write_json(workdir.join("scores.json"), &scores).map_err(|e| e.in_stage("select"))?;
    let regions = scores
        .chosen
        .regions(model.num_layers())
        .map_err(|e| e.in_stage("select"))?;

    let stage = |e: Error| e.in_stage("simulate");
    let mut pairs = Vec::with_capacity(regions.len());
    for (k, spec) in regions.iter().enumerate() {
        let pair = model.forward_capture(&calib_inputs, spec).map_err(stage)?;
        let meta = DumpMetadata {
            model_id: model_id(&model),
            pre_layer: spec.start() as i64,
            post_layer: spec.post() as i64,
            seq_len: config.calibration.seq_len as u64,
            num_sequences: config.calibration.num_sequences as u64,
            token_count: config.calibration.token_count() as u64,
            seed: config.calibration.seed,
            source: DumpSource::Simulator,
        };
        write_calibration_pair(
            region_dir(workdir, k),
            pair.pre(),
            pair.post(),
            &meta,
            Dtype::F64,
        )
        .map_err(stage)?;
        pairs.push(pair);
    }

    let methods = config.fit.method.methods();
    let mut fitted: Vec<(Method, Vec<Operator>)> = Vec::new();
    for &method in &methods {
        let stage = |e: Error| e.in_stage("fit");
        let mut ops = Vec::with_capacity(pairs.len());
        for (k, pair) in pairs.iter().enumerate() {
            let op = fit_method(method, pair, config.fit.solver, config.fit.solver_eps())
                .map_err(stage)?;
            let info = OperatorInfo::describe(method, &op, pair).map_err(stage)?;
            save_operator(
                region_dir(workdir, k).join(format!("operator_{method}.actb")),
                &op,
                &info,
            )
            .map_err(stage)?;
            ops.push(op);
        }
        fitted.push((method, ops));
    }

    let mut rows = Vec::with_capacity(fitted.len());
    for (method, ops) in &fitted {
        let stage = |e: Error| e.in_stage("eval");
        let pruned: Vec<PrunedRegion<'_>> = regions
            .iter()
            .zip(ops)
            .map(|(spec, op)| PrunedRegion {
                spec: *spec,
                op: Some(op),
            })
            .collect();
        let name = method.as_str();
        let calibration =
            evaluate_regions(&model, &pruned, name, &calib_inputs, Split::Calibration)
                .map_err(stage)?;
        let heldout = evaluate_regions(&model, &pruned, name, &heldout_inputs, Split::Heldout)
            .map_err(stage)?;
        fs::write(
            workdir.join(format!("eval_{name}.csv")),
            heldout.per_channel_csv(),
        )
        .map_err(|e| stage(Error::io(workdir, e)))?;
        rows.push(SummaryRow {
            method: *method,
            calib_residual: calibration.alignment_residual,
            heldout_residual: heldout.alignment_residual,
            heldout_boundary_mae: heldout.boundary_mae,
            heldout_end_to_end_mse: heldout.end_to_end_mse.unwrap_or(f64::NAN),
        });
        write_json(
            workdir.join(format!("eval_{name}.json")),
            &MethodEval {
                calibration,
                heldout,
            },
        )
        .map_err(stage)?;
    }

    let summary = PipelineSummary {
        workdir: workdir.to_path_buf(),
        regions: regions.iter().map(|s| (s.start(), s.count())).collect(),
        rows,
    };
    let stage = |e: std::io::Error| Error::io(workdir, e).in_stage("summary");
    fs::write(workdir.join(SUMMARY_CSV), summary.to_csv()).map_err(stage)?;
    fs::write(workdir.join("summary.txt"), summary.to_table()).map_err(stage)?;
    Ok(summary)
}

fn region_dir(workdir: &Path, k: usize) -> PathBuf {
    if k == 0 {
        workdir.to_path_buf()
    } else {
        workdir.join(format!("region{k}"))
    }
}
