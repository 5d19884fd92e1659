//! JSON run configuration.
//!
//! Every section and key is optional; missing keys take the defaults below
//! and unknown keys are rejected with their dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::hadamard_matrix;
use crate::pruning::Criterion;
use crate::recovery::{Method, Solver, DEFAULT_EPS};
use crate::simulator::ModelConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub pruning: PruningConfig,
    pub fit: FitConfig,
    pub calibration: CalibrationConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruningConfig {
    pub criterion: Criterion,
    pub n: usize,
}

impl Default for PruningConfig {
    fn default() -> Self {
        PruningConfig {
            criterion: Criterion::StreamlineCosine,
            n: 3,
        }
    }
}

/// `all` or a single method; a single method is always compared against
/// `identity`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    #[default]
    All,
    Identity,
    Diag,
    Rotate,
    Ghost,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        let single = match self {
            MethodChoice::All => return Method::ALL.to_vec(),
            MethodChoice::Identity => Method::Identity,
            MethodChoice::Diag => Method::Diag,
            MethodChoice::Rotate => Method::Rotate,
            MethodChoice::Ghost => Method::Ghost,
        };
        let mut out = vec![Method::Identity, single];
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub method: MethodChoice,
    pub solver: Solver,
    /// Ridge coefficient for the normal-equation solver.
    pub eps: f64,
    /// Relative singular-value cutoff for the SVD solver.
    pub truncation: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            method: MethodChoice::All,
            solver: Solver::RidgeNormal,
            eps: DEFAULT_EPS,
            truncation: DEFAULT_EPS,
        }
    }
}

impl FitConfig {
    /// The `eps` handed to `fit_ghost` for the configured solver.
    pub fn solver_eps(&self) -> f64 {
        match self.solver {
            Solver::RidgeNormal => self.eps,
            Solver::SvdPinv => self.truncation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub num_sequences: usize,
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            num_sequences: 32,
            seq_len: 256,
            seed: 0,
        }
    }
}

impl CalibrationConfig {
    pub fn token_count(&self) -> usize {
        self.num_sequences * self.seq_len
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub heldout_tokens: usize,
    pub heldout_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            heldout_tokens: 2048,
            heldout_seed: 1_000_003,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub workdir: Option<PathBuf>,
}

impl RunConfig {
    /// Range and compatibility checks, in the order a run would hit them.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let l = self.model.num_layers;
        if self.pruning.n == 0 || self.pruning.n >= l {
            return Err(Error::config(
                "pruning.n",
                format!("{} is outside [1, {}]", self.pruning.n, l - 1),
            ));
        }
        if !(self.fit.eps > 0.0 && self.fit.eps.is_finite()) {
            return Err(Error::config(
                "fit.eps",
                format!("{} must be positive", self.fit.eps),
            ));
        }
        if !(self.fit.truncation > 0.0 && self.fit.truncation.is_finite()) {
            return Err(Error::config(
                "fit.truncation",
                format!("{} must be positive", self.fit.truncation),
            ));
        }
        if self.calibration.num_sequences == 0 {
            return Err(Error::config(
                "calibration.num_sequences",
                "must be at least 1",
            ));
        }
        if self.calibration.seq_len == 0 {
            return Err(Error::config("calibration.seq_len", "must be at least 1"));
        }
        if self.eval.heldout_tokens == 0 {
            return Err(Error::config("eval.heldout_tokens", "must be at least 1"));
        }
        if self.fit.method.methods().contains(&Method::Rotate) {
            hadamard_matrix(self.model.hidden_dim)?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<RunConfig> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        let template = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
        check_known_keys(&value, &template, "")?;
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::config("<value>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn check_known_keys(value: &Value, template: &Value, prefix: &str) -> Result<()> {
    let (Value::Object(given), Value::Object(known)) = (value, template) else {
        if prefix.is_empty() && !value.is_object() {
            return Err(Error::config("<root>", "expected a JSON object"));
        }
        return Ok(());
    };
    for (key, v) in given {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match known.get(key) {
            None => return Err(Error::config(path, "unknown key")),
            Some(t) if t.is_object() => {
                if !v.is_object() {
                    return Err(Error::config(path, "expected an object"));
                }
                check_known_keys(v, t, &path)?;
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json_str(&text)
}
