//! Layer-selection criteria run on calibration activations.
//!
//! * `streamline_cosine`: contiguous block of `n` layers whose boundary
//!   states are most similar.
//! * `block_influence`: `1 − cos(X⁽ℓ⁾, X⁽ℓ⁺¹⁾)` per layer, lowest `n` pruned.
//! * `removal_loss`: output error with each layer skipped alone, lowest `n`
//!   pruned jointly.
//!
//! Ties always resolve to the lowest index.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::simulator::{BoundarySpec, ToyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    StreamlineCosine,
    BlockInfluence,
    RemovalLoss,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::StreamlineCosine => "streamline_cosine",
            Criterion::BlockInfluence => "block_influence",
            Criterion::RemovalLoss => "removal_loss",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "streamline_cosine" | "streamline" => Ok(Criterion::StreamlineCosine),
            "block_influence" | "bi" => Ok(Criterion::BlockInfluence),
            "removal_loss" => Ok(Criterion::RemovalLoss),
            _ => Err(format!(
                "unknown criterion `{s}` (expected streamline_cosine, block_influence or removal_loss)"
            )),
        }
    }
}

/// How two token-by-channel states are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosineMode {
    /// Mean over tokens of the per-row cosine.
    #[default]
    PerToken,
    /// Cosine of the two matrices flattened to vectors.
    Flattened,
}

/// Output error used by the removal-loss criterion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalMetric {
    /// Mean squared error of the final hidden state.
    #[default]
    HiddenMse,
    /// Mean per-token `KL(dense ‖ pruned)` over the toy output head.
    LogitKl,
}

/// What a criterion picked.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Block(BoundarySpec),
    /// Sorted ascending.
    Layers(Vec<usize>),
}

impl Selection {
    /// Maximal contiguous runs of the selected layers.
    pub fn regions(&self, num_layers: usize) -> Result<Vec<BoundarySpec>> {
        match self {
            Selection::Block(spec) => Ok(vec![*spec]),
            Selection::Layers(layers) => {
                let mut out = Vec::new();
                let mut iter = layers.iter().copied().peekable();
                while let Some(start) = iter.next() {
                    let mut end = start + 1;
                    while iter.peek() == Some(&end) {
                        iter.next();
                        end += 1;
                    }
                    out.push(BoundarySpec::new(start, end - start, num_layers)?);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerScores {
    pub criterion: Criterion,
    /// Indexed by block start for `streamline_cosine`, by layer otherwise.
    pub scores: Vec<f64>,
    pub chosen: Selection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cosine_mode: Option<CosineMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub removal_metric: Option<RemovalMetric>,
}

/// Cosine of two vectors; 1 when both are zero, 0 when exactly one is.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a);
    let nb = dot(b, b);
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot(a, b) / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0),
    }
}

/// Similarity of two equally shaped states.
pub fn state_cosine(a: &Matrix, b: &Matrix, mode: CosineMode) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "state_cosine",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    if a.rows() == 0 {
        return Err(Error::Domain("no calibration tokens".into()));
    }
    Ok(match mode {
        CosineMode::PerToken => {
            (0..a.rows())
                .map(|t| cosine(a.row(t), b.row(t)))
                .sum::<f64>()
                / a.rows() as f64
        }
        CosineMode::Flattened => cosine(a.as_slice(), b.as_slice()),
    })
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `n` smallest scores, ties to the lowest index, returned
/// in ascending index order.
fn lowest_n(scores: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]).then(i.cmp(&j)));
    let mut chosen: Vec<usize> = idx.into_iter().take(n).collect();
    chosen.sort_unstable();
    chosen
}

fn check_n(n: usize, num_layers: usize) -> Result<()> {
    if n == 0 || n >= num_layers {
        return Err(Error::Domain(format!(
            "cannot prune {n} of {num_layers} layers (need 1 <= n <= {})",
            num_layers - 1
        )));
    }
    Ok(())
}

/// Mean boundary similarity for every block start `s ∈ [0, L − n]`, given
/// the `L + 1` dense states.
pub fn contiguous_block_scores(states: &[Matrix], n: usize, mode: CosineMode) -> Result<Vec<f64>> {
    let num_layers = states.len().saturating_sub(1);
    check_n(n, num_layers)?;
    (0..=num_layers - n)
        .into_par_iter()
        .map(|s| state_cosine(&states[s], &states[s + n], mode))
        .collect()
}

/// Contiguous block of `n` layers with the most similar boundary states.
pub fn select_contiguous_block(model: &ToyModel, calib: &Matrix, n: usize) -> Result<LayerScores> {
    select_contiguous_block_with(model, calib, n, CosineMode::PerToken)
}

pub fn select_contiguous_block_with(
    model: &ToyModel,
    calib: &Matrix,
    n: usize,
    mode: CosineMode,
) -> Result<LayerScores> {
    check_n(n, model.num_layers())?;
    let states = model.layer_states(calib)?;
    let scores = contiguous_block_scores(&states, n, mode)?;
    let start = argmax_lowest(&scores);
    Ok(LayerScores {
        criterion: Criterion::StreamlineCosine,
        chosen: Selection::Block(model.boundary(start, n)?),
        scores,
        cosine_mode: Some(mode),
        removal_metric: None,
    })
}

/// Block-influence score per layer; the `n` least influential are chosen.
pub fn block_influence_scores(model: &ToyModel, calib: &Matrix, n: usize) -> Result<LayerScores> {
    check_n(n, model.num_layers())?;
    let states = model.layer_states(calib)?;
    let scores = (0..model.num_layers())
        .into_par_iter()
        .map(|l| Ok(1.0 - state_cosine(&states[l], &states[l + 1], CosineMode::PerToken)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(LayerScores {
        criterion: Criterion::BlockInfluence,
        chosen: Selection::Layers(lowest_n(&scores, n)),
        scores,
        cosine_mode: Some(CosineMode::PerToken),
        removal_metric: None,
    })
}

/// Output error with each layer removed on its own; the `n` cheapest are
/// chosen and removed together.
pub fn select_by_removal_loss(
    model: &ToyModel,
    eval_inputs: &Matrix,
    n: usize,
) -> Result<LayerScores> {
    select_by_removal_loss_with(model, eval_inputs, n, RemovalMetric::HiddenMse)
}

pub fn select_by_removal_loss_with(
    model: &ToyModel,
    eval_inputs: &Matrix,
    n: usize,
    metric: RemovalMetric,
) -> Result<LayerScores> {
    check_n(n, model.num_layers())?;
    if eval_inputs.rows() == 0 {
        return Err(Error::Domain("no evaluation tokens".into()));
    }
    let dense = model.dense_forward(eval_inputs)?;
    let dense_logp = match metric {
        RemovalMetric::LogitKl => Some(log_softmax_rows(&model.logits(&dense)?)),
        RemovalMetric::HiddenMse => None,
    };
    let scores = (0..model.num_layers())
        .into_par_iter()
        .map(|l| {
            let pruned = model.forward_pruned(eval_inputs, &model.boundary(l, 1)?, None)?;
            match &dense_logp {
                None => Ok(mean_squared_error(&dense, &pruned)),
                Some(p) => Ok(mean_kl(p, &log_softmax_rows(&model.logits(&pruned)?))),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(LayerScores {
        criterion: Criterion::RemovalLoss,
        chosen: Selection::Layers(lowest_n(&scores, n)),
        scores,
        cosine_mode: None,
        removal_metric: Some(metric),
    })
}

/// Runs a criterion by name with its default variant.
pub fn select(
    criterion: Criterion,
    model: &ToyModel,
    calib: &Matrix,
    eval_inputs: &Matrix,
    n: usize,
) -> Result<LayerScores> {
    match criterion {
        Criterion::StreamlineCosine => select_contiguous_block(model, calib, n),
        Criterion::BlockInfluence => block_influence_scores(model, calib, n),
        Criterion::RemovalLoss => select_by_removal_loss(model, eval_inputs, n),
    }
}

pub(crate) fn mean_squared_error(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.as_slice().len().max(1) as f64;
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

fn log_softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for t in 0..out.rows() {
        let row = out.row_mut(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

fn mean_kl(logp: &Matrix, logq: &Matrix) -> f64 {
    let total: f64 = (0..logp.rows())
        .map(|t| {
            logp.row(t)
                .iter()
                .zip(logq.row(t))
                .map(|(p, q)| p.exp() * (p - q))
                .sum::<f64>()
                .max(0.0)
        })
        .sum();
    total / logp.rows().max(1) as f64
}
