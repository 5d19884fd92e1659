//! Boundary operators that stand in for a removed block.
//!
//! Every operator maps the state entering the first surviving layer,
//! `x ↦ x·W`. The ghost operator is the unconstrained least-squares map
//! `W* = I + M*` with `M* = X_pre† Δ`; the baselines restrict `W` to a
//! per-channel diagonal or to the symmetric family `H·diag(d)·Hᵀ`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actdata::{read_actb, read_json, write_actb, write_json, Dtype};
use crate::error::{Error, Result};
use crate::linalg::{
    dot, hadamard_matrix, pinv_apply, ridge_solve, thin_svd, GramAccumulator, Matrix,
};
use crate::simulator::ActivationPair;

/// Default truncation threshold and ridge coefficient.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Recovery method applied at the pruning boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain pruning, `W = I`.
    Identity,
    /// Per-channel scaling, `W = diag(s)`.
    Diag,
    /// Hadamard-rotated diagonal, `W = H·diag(d)·Hᵀ`.
    Rotate,
    /// Unconstrained `W* = I + M*`.
    Ghost,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Identity,
        Method::Diag,
        Method::Rotate,
        Method::Ghost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::Diag => "diag",
            Method::Rotate => "rotate",
            Method::Ghost => "ghost",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown method `{s}` (expected identity, diag, rotate or ghost)")
            })
    }
}

/// How `M*` is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// `V Σ† Uᵀ Δ` from a thin SVD of `X_pre`.
    SvdPinv,
    /// `(X_preᵀX_pre + εI) M = X_preᵀΔ`.
    #[default]
    RidgeNormal,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::SvdPinv => "svd",
            Solver::RidgeNormal => "ridge",
        })
    }
}

impl FromStr for Solver {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "svd" | "svd_pinv" => Ok(Solver::SvdPinv),
            "ridge" | "ridge_normal" => Ok(Solver::RidgeNormal),
            _ => Err(format!("unknown solver `{s}` (expected svd or ridge)")),
        }
    }
}

/// Fitted `W* = I + M*` and how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct GhostOperator {
    pub m_star: Matrix,
    pub eps_used: f64,
    pub solver: Solver,
    /// `‖X_pre·(I + M*) − X_post‖_F` on the fit set.
    pub fit_residual: f64,
    pub token_count: u64,
}

impl GhostOperator {
    pub fn dim(&self) -> usize {
        self.m_star.rows()
    }

    pub fn w_star(&self) -> Matrix {
        Matrix::identity(self.dim())
            .add(&self.m_star)
            .expect("square")
    }
}

/// Per-channel scaling `W = diag(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScale {
    pub s: Vec<f64>,
    /// Channels with zero calibration energy, left at `s = 1`.
    pub degenerate: Vec<usize>,
}

/// Symmetric baseline `W = H·diag(d)·Hᵀ`, stored fused.
#[derive(Clone, Debug, PartialEq)]
pub struct HadamardPatch {
    pub d: Vec<f64>,
    pub fused: Matrix,
    /// Rotated channels with zero energy, left at `d = 1`.
    pub degenerate: Vec<usize>,
}

impl HadamardPatch {
    pub fn from_diagonal(d: Vec<f64>) -> Result<Self> {
        let h = hadamard_matrix(d.len())?;
        let fused = h.scale_columns(&d)?.matmul(&h.transpose())?;
        Ok(HadamardPatch {
            d,
            fused,
            degenerate: Vec::new(),
        })
    }
}

/// Any boundary operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    Identity(usize),
    Ghost(GhostOperator),
    ChannelScale(ChannelScale),
    Hadamard(HadamardPatch),
    /// `x ↦ x + x·M` for an arbitrary square `M`, e.g. read back from disk.
    Additive(Matrix),
}

impl Operator {
    pub fn dim(&self) -> usize {
        match self {
            Operator::Identity(c) => *c,
            Operator::Ghost(g) => g.dim(),
            Operator::ChannelScale(s) => s.s.len(),
            Operator::Hadamard(h) => h.d.len(),
            Operator::Additive(m) => m.rows(),
        }
    }

    /// The full `W` with `x ↦ x·W`.
    pub fn matrix(&self) -> Matrix {
        match self {
            Operator::Identity(c) => Matrix::identity(*c),
            Operator::Ghost(g) => g.w_star(),
            Operator::ChannelScale(s) => Matrix::from_diag(&s.s),
            Operator::Hadamard(h) => h.fused.clone(),
            Operator::Additive(m) => Matrix::identity(m.rows()).add(m).expect("square"),
        }
    }

    /// `W − I`; exact `M*` for ghost operators.
    pub fn additive_part(&self) -> Matrix {
        match self {
            Operator::Ghost(g) => g.m_star.clone(),
            Operator::Additive(m) => m.clone(),
            other => other
                .matrix()
                .sub(&Matrix::identity(other.dim()))
                .expect("square"),
        }
    }
}

/// `x·W` for the given operator.
///
/// Ghost and additive operators are evaluated as `x + x·M`.
pub fn apply_operator(x: &Matrix, op: &Operator) -> Result<Matrix> {
    if x.cols() != op.dim() {
        return Err(Error::shape(
            "apply_operator",
            format!(
                "input has {} channels, operator is {}x{}",
                x.cols(),
                op.dim(),
                op.dim()
            ),
        ));
    }
    match op {
        Operator::Identity(_) => Ok(x.clone()),
        Operator::Ghost(GhostOperator { m_star: m, .. }) | Operator::Additive(m) => {
            let mut out = x.matmul(m)?;
            for (o, v) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
                *o += v;
            }
            Ok(out)
        }
        Operator::ChannelScale(s) => x.scale_columns(&s.s),
        Operator::Hadamard(h) => x.matmul(&h.fused),
    }
}

/// `‖X_pre·W − X_post‖_F`.
pub fn alignment_residual(pair: &ActivationPair, op: &Operator) -> Result<f64> {
    Ok(apply_operator(pair.pre(), op)?
        .sub(pair.post())?
        .frobenius_norm())
}

fn check_pre_nonzero(pre: &Matrix) -> Result<()> {
    if pre.rows() == 0 || pre.cols() == 0 {
        return Err(Error::DegenerateInput(
            "empty calibration activations".into(),
        ));
    }
    if pre.as_slice().iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput(
            "X_pre is identically zero; the calibration capture is broken".into(),
        ));
    }
    Ok(())
}

/// Least-squares fit of `M* = argmin ‖X_pre·M − Δ‖_F`.
///
/// With [`Solver::SvdPinv`] singular values at or below `eps·σ₁` are
/// dropped, giving the minimum-norm solution; with [`Solver::RidgeNormal`]
/// `eps` is the Tikhonov coefficient.
pub fn fit_ghost(pair: &ActivationPair, eps: f64, solver: Solver) -> Result<GhostOperator> {
    check_pre_nonzero(pair.pre())?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let m_star = match solver {
        Solver::SvdPinv => {
            let f = thin_svd(pair.pre())?;
            pinv_apply(&f, pair.gap(), eps)?
        }
        Solver::RidgeNormal => {
            let mut acc = GramAccumulator::new(pair.dim(), pair.dim());
            acc.accumulate(pair.pre(), pair.gap())?;
            ridge_solve(acc.gram(), acc.cross(), eps)?
        }
    };
    let mut op = GhostOperator {
        m_star,
        eps_used: eps,
        solver,
        fit_residual: 0.0,
        token_count: pair.token_count() as u64,
    };
    op.fit_residual = alignment_residual(pair, &Operator::Ghost(op.clone()))?;
    Ok(op)
}

/// Ridge fit of `M*` from a streamed accumulator of `X_preᵀX_pre` and
/// `X_preᵀΔ`.
pub fn fit_ghost_accumulated(acc: &GramAccumulator, eps: f64) -> Result<Matrix> {
    if acc.token_count() == 0 || acc.gram().as_slice().iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput(
            "accumulated Gram matrix is zero".into(),
        ));
    }
    ridge_solve(acc.gram(), acc.cross(), eps)
}

/// Column-wise scalar regression `s_j = ⟨a_j, b_j⟩ / ⟨a_j, a_j⟩`; returns
/// the scales and the indices of zero-energy columns (set to 1).
fn per_column_scale(a: &Matrix, b: &Matrix) -> (Vec<f64>, Vec<usize>) {
    let at = a.transpose();
    let bt = b.transpose();
    let t = a.rows();
    let mut degenerate = Vec::new();
    let s = (0..a.cols())
        .map(|j| {
            let aj = &at.as_slice()[j * t..(j + 1) * t];
            let bj = &bt.as_slice()[j * t..(j + 1) * t];
            let energy = dot(aj, aj);
            if energy == 0.0 {
                degenerate.push(j);
                1.0
            } else {
                dot(aj, bj) / energy
            }
        })
        .collect();
    (s, degenerate)
}

/// Per-channel least-squares scaling of `X_pre` onto `X_post`.
pub fn fit_channel_scale(pair: &ActivationPair) -> ChannelScale {
    let (s, degenerate) = per_column_scale(pair.pre(), pair.post());
    ChannelScale { s, degenerate }
}

/// Best `H·diag(d)·Hᵀ`: per-channel regression in the Hadamard-rotated basis.
pub fn fit_hadamard_patch(pair: &ActivationPair) -> Result<HadamardPatch> {
    let h = hadamard_matrix(pair.dim())?;
    let y = pair.pre().matmul(&h)?;
    let z = pair.post().matmul(&h)?;
    let (d, degenerate) = per_column_scale(&y, &z);
    let mut patch = HadamardPatch::from_diagonal(d)?;
    patch.degenerate = degenerate;
    Ok(patch)
}

/// Fits the requested method. `eps` and `solver` only affect `ghost`.
pub fn fit_method(
    method: Method,
    pair: &ActivationPair,
    solver: Solver,
    eps: f64,
) -> Result<Operator> {
    Ok(match method {
        Method::Identity => Operator::Identity(pair.dim()),
        Method::Diag => Operator::ChannelScale(fit_channel_scale(pair)),
        Method::Rotate => Operator::Hadamard(fit_hadamard_patch(pair)?),
        Method::Ghost => Operator::Ghost(fit_ghost(pair, eps, solver)?),
    })
}

/// `M = M_sym + M_asym` with Frobenius norms of each part.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryDecomposition {
    pub m_sym: Matrix,
    pub m_asym: Matrix,
    pub norm_total: f64,
    pub norm_sym: f64,
    pub norm_asym: f64,
}

impl SymmetryDecomposition {
    /// `‖M_sym‖ / ‖M‖`, zero for `M = 0`.
    pub fn sym_ratio(&self) -> f64 {
        ratio(self.norm_sym, self.norm_total)
    }

    pub fn asym_ratio(&self) -> f64 {
        ratio(self.norm_asym, self.norm_total)
    }

    pub fn summary(&self) -> SymmetrySummary {
        SymmetrySummary {
            norm_total: self.norm_total,
            norm_sym: self.norm_sym,
            norm_asym: self.norm_asym,
            sym_ratio: self.sym_ratio(),
            asym_ratio: self.asym_ratio(),
        }
    }
}

fn ratio(part: f64, total: f64) -> f64 {
    if total == 0.0 {
        0.0
    } else {
        part / total
    }
}

/// JSON shape of a decomposition report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySummary {
    pub norm_total: f64,
    pub norm_sym: f64,
    pub norm_asym: f64,
    pub sym_ratio: f64,
    pub asym_ratio: f64,
}

pub fn decompose_symmetry(m: &Matrix) -> Result<SymmetryDecomposition> {
    if !m.is_square() {
        return Err(Error::shape(
            "decompose_symmetry",
            format!("{:?} is not square", m.shape()),
        ));
    }
    let mt = m.transpose();
    let m_sym = m.add(&mt)?.scale(0.5);
    let m_asym = m.sub(&mt)?.scale(0.5);
    Ok(SymmetryDecomposition {
        norm_total: m.frobenius_norm(),
        norm_sym: m_sym.frobenius_norm(),
        norm_asym: m_asym.frobenius_norm(),
        m_sym,
        m_asym,
    })
}

/// JSON sidecar written next to an operator's ACTB matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorInfo {
    pub method: Method,
    /// The ACTB file holds `M = W − I`; `x ↦ x + x·M`.
    pub form: String,
    pub dim: usize,
    pub solver: Option<Solver>,
    pub eps: Option<f64>,
    pub fit_residual: f64,
    pub token_count: u64,
}

pub const ADDITIVE_FORM: &str = "identity_plus_additive";

impl OperatorInfo {
    pub fn describe(method: Method, op: &Operator, pair: &ActivationPair) -> Result<Self> {
        let (solver, eps) = match op {
            Operator::Ghost(g) => (Some(g.solver), Some(g.eps_used)),
            _ => (None, None),
        };
        Ok(OperatorInfo {
            method,
            form: ADDITIVE_FORM.into(),
            dim: op.dim(),
            solver,
            eps,
            fit_residual: alignment_residual(pair, op)?,
            token_count: pair.token_count() as u64,
        })
    }
}

/// Sidecar path for an operator file: `op.actb` → `op.json`.
pub fn operator_sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `M = W − I` as f64 ACTB plus the JSON sidecar.
pub fn save_operator(path: impl AsRef<Path>, op: &Operator, info: &OperatorInfo) -> Result<()> {
    let path = path.as_ref();
    write_actb(path, &op.additive_part(), Dtype::F64)?;
    write_json(operator_sidecar(path), info)
}

/// Reads an operator written by [`save_operator`].
pub fn load_operator(path: impl AsRef<Path>) -> Result<(Operator, OperatorInfo)> {
    let path = path.as_ref();
    let info: OperatorInfo = read_json(operator_sidecar(path))?;
    let m = read_actb(path)?;
    if !m.is_square() || m.rows() != info.dim {
        return Err(Error::Consistency(format!(
            "operator matrix is {:?}, sidecar says dim {}",
            m.shape(),
            info.dim
        )));
    }
    if info.form != ADDITIVE_FORM {
        return Err(Error::Consistency(format!(
            "unknown operator form `{}`",
            info.form
        )));
    }
    let op = match info.method {
        Method::Identity => Operator::Identity(info.dim),
        Method::Ghost => Operator::Ghost(GhostOperator {
            m_star: m,
            eps_used: info.eps.unwrap_or(DEFAULT_EPS),
            solver: info.solver.unwrap_or_default(),
            fit_residual: info.fit_residual,
            token_count: info.token_count,
        }),
        _ => Operator::Additive(m),
    };
    Ok((op, info))
}
