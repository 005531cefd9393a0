//! Quantisation-aware fine-tuning and finalisation.
//!
//! Starting from a float model: insert fake-quantisation sites, fine-tune
//! briefly while the observers track each site's range, freeze the ranges
//! into scales and zero-points, then quantise weights and precompute the
//! offline kernel constants. SGHMC snapshots go through this independently.

use serde::{Deserialize, Serialize};

use crate::bayes::network::Network;
use crate::bayes::quantised::QuantisedNetwork;
use crate::bayes::sites::NetSites;
use crate::bayes::{BayesianModel, Method, QuantisedModel, SghmcEnsemble};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::train::fit::TrainConfig;
use crate::train::log::{LogRecord, ObserverRange, TrainLog};
use crate::train::loss::{data_nll, evaluate, Reduction};
use crate::train::optim::Adam;
use crate::tensor::Tensor;
use crate::train::TrainData;

pub const MIN_WEIGHT_BITS: u32 = 3;
pub const MAX_WEIGHT_BITS: u32 = 8;
pub const MIN_ACTIVATION_BITS: u32 = 3;
pub const MAX_ACTIVATION_BITS: u32 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QatConfig {
    /// Fine-tuning epochs; zero means a single calibration pass.
    pub epochs: usize,
    /// Fine-tuning learning rate relative to the main training rate.
    pub lr_factor: f64,
    /// Observer EMA momentum.
    pub momentum: f64,
    pub bits_w: u32,
    pub bits_a: u32,
    /// Drop the BBB KL gradient while fine-tuning.
    pub skip_regulariser: bool,
}

impl Default for QatConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr_factor: 0.01,
            momentum: crate::quant::DEFAULT_MOMENTUM,
            bits_w: 8,
            bits_a: 7,
            skip_regulariser: true,
        }
    }
}

impl QatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_WEIGHT_BITS..=MAX_WEIGHT_BITS).contains(&self.bits_w) {
            return Err(Error::Parameter(format!(
                "weight bits must lie in [{MIN_WEIGHT_BITS}, {MAX_WEIGHT_BITS}], got {}",
                self.bits_w
            )));
        }
        if !(MIN_ACTIVATION_BITS..=MAX_ACTIVATION_BITS).contains(&self.bits_a) {
            return Err(Error::Parameter(format!(
                "activation bits must lie in [{MIN_ACTIVATION_BITS}, {MAX_ACTIVATION_BITS}], got {}",
                self.bits_a
            )));
        }
        if !(self.lr_factor >= 0.0) {
            return Err(Error::Parameter("lr_factor must be non-negative".into()));
        }
        if !(self.momentum > 0.0 && self.momentum <= 1.0) {
            return Err(Error::Parameter("observer momentum must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QatOutcome<T> {
    /// The float model after fine-tuning (same topology as the input).
    pub model: BayesianModel<T>,
    pub quantised: QuantisedModel<T>,
    /// Set when the float model did not beat a constant predictor on the
    /// training data before fine-tuning.
    pub flagged_unconverged: bool,
}

/// Mean training NLL of `net` against that of a constant predictor
/// (zero output for standardised regression, uniform for classification).
fn looks_unconverged<T: Scalar>(net: &Network<T>, data: &TrainData<T>, obs_var: f64, rng: &mut SeededRng) -> Result<bool> {
    let (out, _) = net.forward(&data.x, rng, None, false, false)?;
    let (nll, _) = data_nll(net.task, &out, &data.y, obs_var, Reduction::Mean)?;
    // Zero output is the mean for standardised targets and uniform logits.
    let baseline_out = Tensor::zeros(data.y.shape());
    let (base, _) = data_nll(net.task, &baseline_out, &data.y, obs_var, Reduction::Mean)?;
    Ok(!nll.is_finite() || nll >= base)
}

#[allow(clippy::too_many_arguments)]
fn finetune_member<T: Scalar>(
    net: &mut Network<T>,
    member: usize,
    method: Method,
    data: &TrainData<T>,
    train: &TrainConfig,
    cfg: &QatConfig,
    rng: &mut SeededRng,
    log: &mut TrainLog<'_>,
) -> Result<QuantisedNetwork<T>> {
    let mut sites = NetSites::for_network(net, cfg.bits_w, cfg.bits_a, T::of(cfg.momentum))?;
    let objective = train.objective(method, data.len(), !cfg.skip_regulariser);
    let mut opt = Adam::new(train.lr * cfg.lr_factor)?;
    let snapshot = |sites: &NetSites<T>| {
        sites
            .snapshot()
            .into_iter()
            .map(|(site, min, max)| ObserverRange { site, min, max })
            .collect()
    };
    if cfg.epochs == 0 {
        for idx in data.batch_indices(train.batch_size, rng)? {
            let (x, _) = data.batch(&idx)?;
            net.forward(&x, rng, Some(&mut sites), true, false)?;
        }
        log.emit(&LogRecord::Observers {
            member,
            epoch: 0,
            sites: snapshot(&sites),
        })?;
    }
    for epoch in 0..cfg.epochs {
        let batches = data.batch_indices(train.batch_size, rng)?;
        let (mut total, mut d, mut r) = (0.0, 0.0, 0.0);
        for idx in &batches {
            let (x, y) = data.batch(idx)?;
            let (loss, grads) = evaluate(net, &x, &y, rng, &objective, Some(&mut sites), true)?;
            if !loss.total.is_finite() {
                return Err(Error::Training(format!("QAT: non-finite loss at epoch {epoch}")));
            }
            opt.step(&mut net.params_mut(), &grads.tensors())?;
            total += loss.total;
            d += loss.data;
            r += loss.regulariser;
        }
        let n = batches.len() as f64;
        log.emit(&LogRecord::Epoch {
            phase: "qat".into(),
            method: method.to_string(),
            member,
            epoch,
            total: total / n,
            data: d / n,
            regulariser: r / n,
        })?;
        log.emit(&LogRecord::Observers {
            member,
            epoch,
            sites: snapshot(&sites),
        })?;
    }
    sites.freeze()?;
    QuantisedNetwork::finalise(net, &sites)
}

/// Fine-tunes `model` with simulated quantisation and finalises it.
pub fn qat_finetune<T: Scalar>(
    model: &BayesianModel<T>,
    data: &TrainData<T>,
    train: &TrainConfig,
    cfg: &QatConfig,
    rng: &mut SeededRng,
    log: &mut TrainLog<'_>,
) -> Result<QatOutcome<T>> {
    cfg.validate()?;
    train.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("calibration data is empty".into()));
    }
    let method = model.method();
    let flagged = looks_unconverged(model.members()[0], data, train.obs_var(), rng)?;
    if flagged {
        log.emit(&LogRecord::Warning {
            message: format!("{method} model does not beat a constant predictor; fine-tuning anyway"),
        })?;
    }
    let mut nets: Vec<Network<T>> = model.members().into_iter().cloned().collect();
    let mut members = Vec::with_capacity(nets.len());
    for (i, net) in nets.iter_mut().enumerate() {
        members.push(finetune_member(net, i, method, data, train, cfg, rng, log)?);
    }
    let tuned = match model {
        BayesianModel::Pointwise(_) => BayesianModel::Pointwise(nets.remove(0)),
        BayesianModel::Mcd(_) => BayesianModel::Mcd(nets.remove(0)),
        BayesianModel::Bbb(_) => BayesianModel::Bbb(nets.remove(0)),
        BayesianModel::Sghmc(_) => BayesianModel::Sghmc(SghmcEnsemble::new(nets)?),
    };
    Ok(QatOutcome {
        model: tuned,
        quantised: QuantisedModel {
            method,
            bits_w: cfg.bits_w,
            bits_a: cfg.bits_a,
            members,
        },
        flagged_unconverged: flagged,
    })
}
