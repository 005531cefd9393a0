//! Pointwise, MC-dropout, Bayes-by-Backprop and SGHMC models with float,
//! simulated-quantisation and integer execution.

pub mod network;
pub mod predictive;
pub mod quantised;
pub mod sites;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use network::{softplus, softplus_inv, Gradients, Layer, LayerGrad, Network, Tape, Task, WeightGrad, Weights};
pub use predictive::{bbb_sample_weights, mcd_forward, predictive, sghmc_forward, Executable, PredictiveSummary};
pub use quantised::{mask_integer, ExecMode, MaskStage, QuantisedLayer, QuantisedNetwork, QuantisedWeights};
pub use sites::{LayerSites, NetSites, Site};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pointwise,
    Mcd,
    Bbb,
    Sghmc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pointwise, Method::Mcd, Method::Bbb, Method::Sghmc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pointwise => "pointwise",
            Method::Mcd => "mcd",
            Method::Bbb => "bbb",
            Method::Sghmc => "sghmc",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown method `{s}` (expected pointwise, mcd, bbb or sghmc)")))
    }
}

/// Execution mode of an evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Float,
    Simulated,
    Integer,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Float, Mode::Simulated, Mode::Integer];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Float => "float",
            Mode::Simulated => "simulated",
            Mode::Integer => "integer",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown mode `{s}` (expected float, simulated or integer)")))
    }
}

/// Weight snapshots collected along one SGHMC run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SghmcEnsemble<T> {
    pub members: Vec<Network<T>>,
}

impl<T: Scalar> SghmcEnsemble<T> {
    pub fn new(members: Vec<Network<T>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Structure("an ensemble needs at least one snapshot".into()));
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"), tag = "method", content = "model", rename_all = "kebab-case")]
pub enum BayesianModel<T> {
    Pointwise(Network<T>),
    Mcd(Network<T>),
    Bbb(Network<T>),
    Sghmc(SghmcEnsemble<T>),
}

impl<T: Scalar> BayesianModel<T> {
    pub fn method(&self) -> Method {
        match self {
            BayesianModel::Pointwise(_) => Method::Pointwise,
            BayesianModel::Mcd(_) => Method::Mcd,
            BayesianModel::Bbb(_) => Method::Bbb,
            BayesianModel::Sghmc(_) => Method::Sghmc,
        }
    }

    pub fn members(&self) -> Vec<&Network<T>> {
        match self {
            BayesianModel::Pointwise(n) | BayesianModel::Mcd(n) | BayesianModel::Bbb(n) => vec![n],
            BayesianModel::Sghmc(e) => e.members.iter().collect(),
        }
    }

    pub fn task(&self) -> Task {
        self.members()[0].task
    }

    /// Network evaluated by pass `l`.
    pub fn member(&self, l: usize) -> Result<&Network<T>> {
        match self {
            BayesianModel::Sghmc(e) => e.members.get(l).ok_or_else(|| {
                Error::Parameter(format!("snapshot index {l} out of range for {} snapshots", e.len()))
            }),
            other => Ok(other.members()[0]),
        }
    }

    /// Float output of pass `l`.
    pub fn sample(&self, x: &Tensor<T>, l: usize, rng: &mut SeededRng) -> Result<Tensor<T>> {
        Ok(self.member(l)?.forward(x, rng, None, false, false)?.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, MODEL_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json(path, MODEL_FORMAT)
    }
}

/// A finalised model: one quantised network, or one per SGHMC snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct QuantisedModel<T> {
    pub method: Method,
    pub bits_w: u32,
    pub bits_a: u32,
    pub members: Vec<QuantisedNetwork<T>>,
}

impl<T: Scalar> QuantisedModel<T> {
    pub fn task(&self) -> Task {
        self.members[0].task
    }

    pub fn member(&self, l: usize) -> Result<&QuantisedNetwork<T>> {
        if self.method == Method::Sghmc {
            self.members.get(l).ok_or_else(|| {
                Error::Parameter(format!("snapshot index {l} out of range for {} snapshots", self.members.len()))
            })
        } else {
            Ok(&self.members[0])
        }
    }

    pub fn sample(&self, x: &Tensor<T>, l: usize, rng: &mut SeededRng, mode: ExecMode) -> Result<Tensor<T>> {
        self.member(l)?.forward(x, rng, mode)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, QUANTISED_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = load_json(path, QUANTISED_FORMAT)?;
        if m.members.is_empty() {
            return Err(Error::Format("quantised model has no networks".into()));
        }
        Ok(m)
    }
}

pub const MODEL_FORMAT: &str = "qbnn-model";
pub const QUANTISED_FORMAT: &str = "qbnn-quantised";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<P> {
    format: String,
    version: u32,
    payload: P,
}

fn save_json<P: Serialize>(path: &Path, format: &str, payload: &P) -> Result<()> {
    let env = Envelope {
        format: format.to_string(),
        version: FORMAT_VERSION,
        payload,
    };
    let text = serde_json::to_string(&env).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn load_json<P: DeserializeOwned>(path: &Path, format: &str) -> Result<P> {
    let text = std::fs::read_to_string(path)?;
    let env: Envelope<P> = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if env.format != format {
        return Err(Error::Format(format!("expected a `{format}` file, found `{}`", env.format)));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", env.version)));
    }
    Ok(env.payload)
}
