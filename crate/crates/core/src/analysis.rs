//! Boundary and end-to-end error metrics, plus the calibration-size sweep.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::pruning::mean_squared_error;
use crate::recovery::{apply_operator, fit_ghost, Operator, Solver};
use crate::simulator::{ActivationPair, BoundarySpec, PrunedRegion, ToyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Calibration,
    Heldout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub boundary_mae: f64,
    pub per_channel_mae: Vec<f64>,
    /// `‖X_pre·W − X_post‖_F` on the evaluated boundary pair.
    pub alignment_residual: f64,
    /// MSE between dense and pruned final states; absent when evaluating a
    /// dump without a model.
    pub end_to_end_mse: Option<f64>,
    pub token_count: u64,
    pub split: Split,
}

impl EvalReport {
    /// `channel,mae` rows for plotting.
    pub fn per_channel_csv(&self) -> String {
        let mut out = String::from("channel,mae\n");
        for (j, v) in self.per_channel_mae.iter().enumerate() {
            writeln!(out, "{j},{v:e}").unwrap();
        }
        out
    }
}

fn check_same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// Mean of `|target − received|` over every entry.
pub fn boundary_mae(target: &Matrix, received: &Matrix) -> Result<f64> {
    check_same_shape("boundary_mae", target, received)?;
    let n = target.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = target
        .as_slice()
        .iter()
        .zip(received.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Token-averaged `|target − received|` for each channel.
pub fn per_channel_mae(target: &Matrix, received: &Matrix) -> Result<Vec<f64>> {
    check_same_shape("per_channel_mae", target, received)?;
    let (rows, cols) = target.shape();
    let mut acc = vec![0.0; cols];
    for t in 0..rows {
        for ((a, x), y) in acc.iter_mut().zip(target.row(t)).zip(received.row(t)) {
            *a += (x - y).abs();
        }
    }
    if rows > 0 {
        acc.iter_mut().for_each(|a| *a /= rows as f64);
    }
    Ok(acc)
}

/// Boundary metrics for one operator on one pair (no end-to-end term).
pub fn boundary_report(
    method: &str,
    op: Option<&Operator>,
    pair: &ActivationPair,
    split: Split,
) -> Result<EvalReport> {
    let received = match op {
        Some(op) => apply_operator(pair.pre(), op)?,
        None => pair.pre().clone(),
    };
    Ok(EvalReport {
        method: method.to_string(),
        boundary_mae: boundary_mae(pair.post(), &received)?,
        per_channel_mae: per_channel_mae(pair.post(), &received)?,
        alignment_residual: received.sub(pair.post())?.frobenius_norm(),
        end_to_end_mse: None,
        token_count: pair.token_count() as u64,
        split,
    })
}

/// Boundary metrics on the dense-model pair captured from `inputs`, plus
/// end-to-end MSE of the pruned-and-patched model on the same inputs.
pub fn evaluate_method(
    model: &ToyModel,
    spec: &BoundarySpec,
    method: &str,
    op: Option<&Operator>,
    inputs: &Matrix,
    split: Split,
) -> Result<EvalReport> {
    evaluate_regions(
        model,
        &[PrunedRegion { spec: *spec, op }],
        method,
        inputs,
        split,
    )
}

/// Multi-block form of [`evaluate_method`]. Boundary metrics are averaged
/// over regions and residuals combined in quadrature.
pub fn evaluate_regions(
    model: &ToyModel,
    regions: &[PrunedRegion<'_>],
    method: &str,
    inputs: &Matrix,
    split: Split,
) -> Result<EvalReport> {
    if regions.is_empty() {
        return Err(Error::Domain("no pruned regions to evaluate".into()));
    }
    let c = model.hidden_dim();
    let mut per_channel = vec![0.0; c];
    let mut mae = 0.0;
    let mut residual_sq = 0.0;
    for region in regions {
        let pair = model.forward_capture(inputs, &region.spec)?;
        let r = boundary_report(method, region.op, &pair, split)?;
        per_channel
            .iter_mut()
            .zip(&r.per_channel_mae)
            .for_each(|(a, v)| *a += v);
        mae += r.boundary_mae;
        residual_sq += r.alignment_residual * r.alignment_residual;
    }
    let k = regions.len() as f64;
    per_channel.iter_mut().for_each(|a| *a /= k);
    let dense = model.dense_forward(inputs)?;
    let pruned = model.forward_pruned_regions(inputs, regions)?;
    Ok(EvalReport {
        method: method.to_string(),
        boundary_mae: mae / k,
        per_channel_mae: per_channel,
        alignment_residual: residual_sq.sqrt(),
        end_to_end_mse: Some(mean_squared_error(&dense, &pruned)),
        token_count: inputs.rows() as u64,
        split,
    })
}

/// Parameters of a calibration-size sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Numbers of calibration sequences.
    pub sizes: Vec<usize>,
    pub seq_len: usize,
    pub seeds: Vec<u64>,
    pub heldout_tokens: usize,
    pub heldout_seed: u64,
    pub eps: f64,
    pub solver: Solver,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub seed: u64,
    /// Calibration-split alignment residual.
    pub residual: f64,
    /// Held-out end-to-end MSE.
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub size: usize,
    pub tokens: usize,
    pub residual_mean: f64,
    pub residual_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

impl SweepReport {
    /// `size,seed,residual,mse`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,seed,residual,mse\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:e},{:e}", r.size, r.seed, r.residual, r.mse).unwrap();
        }
        out
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fits the ghost operator on `size × seq_len` calibration tokens for every
/// `(size, seed)` cell and evaluates it on one fixed held-out split.
pub fn calibration_sweep(
    model: &ToyModel,
    spec: &BoundarySpec,
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    if cfg.sizes.is_empty() || cfg.sizes.contains(&0) {
        return Err(Error::Domain(
            "sweep sizes must be non-empty and positive".into(),
        ));
    }
    if cfg.seeds.is_empty() || cfg.seq_len == 0 {
        return Err(Error::Domain(
            "sweep needs at least one seed and seq_len >= 1".into(),
        ));
    }
    let heldout = model.sample_inputs(cfg.heldout_tokens, cfg.heldout_seed);
    let dense = model.dense_forward(&heldout)?;
    let cells: Vec<(usize, u64)> = cfg
        .sizes
        .iter()
        .flat_map(|&size| cfg.seeds.iter().map(move |&seed| (size, seed)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(size, seed)| {
            let calib = model.sample_inputs(size * cfg.seq_len, seed);
            let pair = model.forward_capture(&calib, spec)?;
            let ghost = Operator::Ghost(fit_ghost(&pair, cfg.eps, cfg.solver)?);
            let residual = match &ghost {
                Operator::Ghost(g) => g.fit_residual,
                _ => unreachable!(),
            };
            let pruned = model.forward_pruned(&heldout, spec, Some(&ghost))?;
            Ok(SweepRow {
                size,
                seed,
                residual,
                mse: mean_squared_error(&dense, &pruned),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = cfg
        .sizes
        .iter()
        .map(|&size| {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.size == size).collect();
            let res: Vec<f64> = cell.iter().map(|r| r.residual).collect();
            let mse: Vec<f64> = cell.iter().map(|r| r.mse).collect();
            let (residual_mean, residual_std) = mean_std(&res);
            let (mse_mean, mse_std) = mean_std(&mse);
            SweepSummary {
                size,
                tokens: size * cfg.seq_len,
                residual_mean,
                residual_std,
                mse_mean,
                mse_std,
            }
        })
        .collect();
    Ok(SweepReport { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::build_toy_model;

    #[test]
    fn mae_examples() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(boundary_mae(&a, &a).unwrap(), 0.0);
        assert_eq!(boundary_mae(&a.map(|v| v + 1.0), &a).unwrap(), 1.0);
        let mut b = a.clone();
        b[(0, 0)] += 2.0;
        b[(1, 0)] += 2.0;
        assert_eq!(per_channel_mae(&b, &a).unwrap(), vec![2.0, 0.0]);
        assert!(boundary_mae(&a, &Matrix::zeros(2, 3)).is_err());
        assert!(per_channel_mae(&a, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn none_and_identity_agree() {
        let model = build_toy_model(6, 8, 1).unwrap();
        let spec = model.boundary(2, 2).unwrap();
        let x = model.sample_inputs(50, 4);
        let a = evaluate_method(&model, &spec, "m", None, &x, Split::Heldout).unwrap();
        let b = evaluate_method(
            &model,
            &spec,
            "m",
            Some(&Operator::Identity(8)),
            &x,
            Split::Heldout,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_block_scores_zero() {
        let model = build_toy_model(6, 8, 1).unwrap().with_zero_layers(2..4);
        let spec = model.boundary(2, 2).unwrap();
        let x = model.sample_inputs(50, 4);
        let r = evaluate_method(&model, &spec, "identity", None, &x, Split::Heldout).unwrap();
        assert_eq!(r.boundary_mae, 0.0);
        assert_eq!(r.end_to_end_mse, Some(0.0));
    }

    #[test]
    fn sweep_with_single_sequence_runs() {
        let model = build_toy_model(4, 16, 2).unwrap();
        let spec = model.boundary(1, 2).unwrap();
        let cfg = SweepConfig {
            sizes: vec![1],
            seq_len: 4,
            seeds: vec![0, 1],
            heldout_tokens: 32,
            heldout_seed: 99,
            eps: 1e-6,
            solver: Solver::RidgeNormal,
        };
        let r = calibration_sweep(&model, &spec, &cfg).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r
            .rows
            .iter()
            .all(|row| row.residual.is_finite() && row.mse.is_finite()));
        assert!(r.to_csv().starts_with("size,seed,residual,mse\n1,0,"));
        assert!(calibration_sweep(
            &model,
            &spec,
            &SweepConfig {
                sizes: vec![],
                ..cfg
            }
        )
        .is_err());
    }
}
