//! Model and input descriptions, from builtin names or JSON files.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use perturbmc_core::controlled::{ControlledFamily, InputSpec};
use perturbmc_core::markov::{matrix_from_rows, StochasticMatrix};
use perturbmc_core::timing::{build_queue_model, QueueModel};

use crate::CliError;

pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_Q_BAR: usize = 18;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Builtin {
        builtin: String,
        rho: Option<f64>,
        lambda: Option<f64>,
        q_bar: Option<usize>,
    },
    Explicit {
        p0: Vec<Vec<f64>>,
        e: Vec<Vec<f64>>,
        #[serde(default)]
        w: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        domain: Option<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InputFile {
    Builtin {
        builtin: String,
        gamma: f64,
        #[serde(default)]
        epsilon: Option<f64>,
    },
    Explicit {
        states: Vec<f64>,
        #[serde(alias = "K")]
        k: Vec<Vec<f64>>,
        #[serde(default)]
        epsilon: Option<f64>,
    },
}

/// A loaded model: the queue keeps its structure for queue-specific figures.
#[derive(Debug, Clone)]
pub enum Model {
    Queue(QueueModel),
    Matrices { family: ControlledFamily, source: String },
}

impl Model {
    pub fn family(&self) -> &ControlledFamily {
        match self {
            Model::Queue(q) => q.family(),
            Model::Matrices { family, .. } => family,
        }
    }

    pub fn queue(&self) -> Result<&QueueModel, CliError> {
        match self {
            Model::Queue(q) => Ok(q),
            Model::Matrices { .. } => Err(CliError::Validation("this figure needs the builtin queue model".into())),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::Queue(q) => write!(f, "queue lambda={} q_bar={}", q.lambda(), q.q_bar()),
            Model::Matrices { family, source } => write!(f, "matrices d={} source={source}", family.dim()),
        }
    }
}

/// Raw input chain before the zero-mean check, so `validate` can report it.
#[derive(Debug, Clone)]
pub struct RawInput {
    pub states: Vec<f64>,
    pub k: Vec<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub label: String,
}

impl RawInput {
    pub fn three_state(gamma: f64) -> Result<Self, CliError> {
        let spec = InputSpec::three_state(gamma, 0.0)?;
        Ok(RawInput {
            states: spec.states().to_vec(),
            k: perturbmc_core::markov::matrix_to_rows(spec.k().matrix()),
            epsilon: None,
            gamma: Some(gamma),
            label: format!("three-state gamma={gamma}"),
        })
    }

    pub fn build(&self, epsilon: f64) -> Result<InputSpec, CliError> {
        if let Some(g) = self.gamma {
            return Ok(InputSpec::three_state(g, epsilon)?);
        }
        let k = StochasticMatrix::from_rows(&self.k)?;
        Ok(InputSpec::new(self.states.clone(), k, epsilon)?)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn queue_from(rho: Option<f64>, lambda: Option<f64>, q_bar: Option<usize>) -> Result<Model, CliError> {
    let q_bar = q_bar.unwrap_or(DEFAULT_Q_BAR);
    let q = match (rho, lambda) {
        (Some(_), Some(_)) => return Err(CliError::Validation("give either rho or lambda, not both".into())),
        (_, Some(l)) => QueueModel::with_lambda(l, q_bar)?,
        (r, None) => build_queue_model(r.unwrap_or(DEFAULT_RHO), q_bar)?,
    };
    Ok(Model::Queue(q))
}

/// `queue` or a JSON file path.
pub fn load_model(arg: &str) -> Result<Model, CliError> {
    if arg == "queue" {
        return queue_from(None, None, None);
    }
    match read_json::<ModelFile>(Path::new(arg))? {
        ModelFile::Builtin { builtin, rho, lambda, q_bar } => {
            if builtin != "queue" {
                return Err(CliError::Validation(format!("unknown builtin model {builtin:?}")));
            }
            queue_from(rho, lambda, q_bar)
        }
        ModelFile::Explicit { p0, e, w, domain } => {
            let p0 = matrix_from_rows(&p0)?;
            let e = matrix_from_rows(&e)?;
            let w = match w {
                Some(w) => matrix_from_rows(&w)?,
                None => DMatrix::zeros(p0.nrows(), p0.ncols()),
            };
            let family = ControlledFamily::from_taylor(p0, e, w, domain.unwrap_or((-1.0, 1.0)))?;
            Ok(Model::Matrices { family, source: arg.to_string() })
        }
    }
}

/// `three-state` (with `gamma`) or a JSON file path.
pub fn load_input(arg: &str, gamma: f64) -> Result<RawInput, CliError> {
    if arg == "three-state" {
        return RawInput::three_state(gamma);
    }
    match read_json::<InputFile>(Path::new(arg))? {
        InputFile::Builtin { builtin, gamma, epsilon } => {
            if builtin != "three-state" {
                return Err(CliError::Validation(format!("unknown builtin input {builtin:?}")));
            }
            let mut raw = RawInput::three_state(gamma)?;
            raw.epsilon = epsilon;
            Ok(raw)
        }
        InputFile::Explicit { states, k, epsilon } => Ok(RawInput {
            states,
            k,
            epsilon,
            gamma: None,
            label: format!("explicit source={arg}"),
        }),
    }
}

/// Parses `lo:hi`.
pub fn parse_lags(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let lo: i64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let hi: i64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if lo > hi {
        return Err(format!("empty lag range {s}"));
    }
    Ok((lo, hi))
}
