//! Float training for each method.

use serde::{Deserialize, Serialize};

use crate::bayes::network::{Network, Task};
use crate::bayes::{BayesianModel, Method};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::train::log::{LogRecord, TrainLog};
use crate::train::loss::{evaluate, LossValue, Objective};
use crate::train::optim::Adam;
use crate::train::sghmc::{collect_sghmc_samples, SghmcSchedule, SghmcState};
use crate::train::TrainData;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SghmcConfig {
    /// Adam epochs before sampling starts (part of burn-in).
    pub pretrain_epochs: usize,
    /// Per-datum step size; the sampler uses `eta = lr / N`.
    pub lr: f64,
    pub friction: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub samples: usize,
    /// Step budget; defaults to exactly `burn_in + samples * thinning`.
    pub run_length: Option<usize>,
}

impl Default for SghmcConfig {
    fn default() -> Self {
        Self {
            pretrain_epochs: 50,
            lr: 0.002,
            friction: 0.05,
            burn_in: 1000,
            thinning: 50,
            samples: 20,
            run_length: None,
        }
    }
}

impl SghmcConfig {
    pub fn schedule(&self) -> SghmcSchedule {
        SghmcSchedule {
            burn_in: self.burn_in,
            thinning: self.thinning,
            samples: self.samples,
            run_length: self.run_length.unwrap_or(self.burn_in + self.samples * self.thinning),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam learning rate.
    pub lr: f64,
    /// L2 coefficient on weights for pointwise and dropout training.
    pub weight_decay: f64,
    /// Drop probability for MC dropout.
    pub dropout: f64,
    /// Regression observation noise, in training-target units.
    pub obs_std: f64,
    /// Gaussian prior standard deviation for BBB and SGHMC.
    pub prior_std: f64,
    /// Initial BBB standard deviation relative to the He weight scale.
    pub bbb_init_std: f64,
    pub sghmc: SghmcConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            dropout: 0.1,
            obs_std: 1.0,
            prior_std: 1.0,
            bbb_init_std: 0.05,
            sghmc: SghmcConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.obs_std > 0.0) || !(self.prior_std > 0.0) || !(self.bbb_init_std > 0.0) {
            return bad("obs_std, prior_std and bbb_init_std must be positive");
        }
        self.sghmc.schedule().validate()
    }

    pub fn obs_var(&self) -> f64 {
        self.obs_std * self.obs_std
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_std * self.prior_std
    }

    /// The objective a method is trained and fine-tuned under. `kl` toggles
    /// the BBB regulariser.
    pub fn objective(&self, method: Method, data_len: usize, kl: bool) -> Objective {
        let nb = data_len.div_ceil(self.batch_size) as f64;
        match method {
            Method::Pointwise | Method::Mcd => Objective::mle(self.obs_var(), self.weight_decay),
            Method::Bbb => Objective::elbo(self.obs_var(), if kl { 1.0 / nb } else { 0.0 }, self.prior_var()),
            Method::Sghmc => Objective::mle(self.obs_var(), 1.0 / (data_len as f64 * self.prior_var())),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Batch-averaged loss of the last epoch.
    pub final_loss: LossValue,
    pub epochs: usize,
    pub sghmc_steps: usize,
}

/// Adam epochs on `objective`; returns the last epoch's mean loss.
#[allow(clippy::too_many_arguments)]
pub(crate) fn adam_epochs<T: Scalar>(
    net: &mut Network<T>,
    data: &TrainData<T>,
    objective: &Objective,
    opt: &mut Adam<T>,
    epochs: usize,
    batch_size: usize,
    rng: &mut SeededRng,
    log: &mut TrainLog<'_>,
    phase: &str,
    method: Method,
) -> Result<LossValue> {
    let mut last = LossValue::default();
    for epoch in 0..epochs {
        let mut acc = LossValue::default();
        let batches = data.batch_indices(batch_size, rng)?;
        for idx in &batches {
            let (x, y) = data.batch(idx)?;
            let (loss, grads) = evaluate(net, &x, &y, rng, objective, None, false)?;
            if !loss.total.is_finite() {
                return Err(Error::Training(format!("{phase}: non-finite loss at epoch {epoch}")));
            }
            opt.step(&mut net.params_mut(), &grads.tensors())?;
            acc.total += loss.total;
            acc.data += loss.data;
            acc.regulariser += loss.regulariser;
        }
        let n = batches.len() as f64;
        last = LossValue {
            total: acc.total / n,
            data: acc.data / n,
            regulariser: acc.regulariser / n,
        };
        log.emit(&LogRecord::Epoch {
            phase: phase.to_string(),
            method: method.to_string(),
            member: 0,
            epoch,
            total: last.total,
            data: last.data,
            regulariser: last.regulariser,
        })?;
    }
    Ok(last)
}

/// Trains `method` on an MLP with the given layer widths.
pub fn train_model<T: Scalar>(
    method: Method,
    widths: &[usize],
    task: Task,
    data: &TrainData<T>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    log: &mut TrainLog<'_>,
) -> Result<(BayesianModel<T>, FitReport)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let net = Network::mlp(widths, task, rng)?;
    if net.output_dim() != data.y.cols() || net.input_dim() != data.x.cols() {
        return Err(Error::Structure(format!(
            "widths {widths:?} do not fit data with {} inputs and {} targets",
            data.x.cols(),
            data.y.cols()
        )));
    }
    let objective = cfg.objective(method, data.len(), true);
    let mut report = FitReport {
        epochs: cfg.epochs,
        ..FitReport::default()
    };
    let model = match method {
        Method::Pointwise | Method::Mcd | Method::Bbb => {
            let mut net = match method {
                Method::Mcd => net.with_dropout(cfg.dropout)?,
                Method::Bbb => net.into_gaussian(cfg.bbb_init_std)?,
                _ => net,
            };
            let mut opt = Adam::new(cfg.lr)?;
            report.final_loss = adam_epochs(
                &mut net,
                data,
                &objective,
                &mut opt,
                cfg.epochs,
                cfg.batch_size,
                rng,
                log,
                "train",
                method,
            )?;
            match method {
                Method::Mcd => BayesianModel::Mcd(net),
                Method::Bbb => BayesianModel::Bbb(net),
                _ => BayesianModel::Pointwise(net),
            }
        }
        Method::Sghmc => {
            let mut net = net;
            let mut opt = Adam::new(cfg.lr)?;
            let s = &cfg.sghmc;
            adam_epochs(
                &mut net,
                data,
                &objective,
                &mut opt,
                s.pretrain_epochs,
                cfg.batch_size,
                rng,
                log,
                "sghmc-pretrain",
                method,
            )?;
            let n = data.len();
            let potential = Objective::potential(cfg.obs_var(), n, cfg.prior_var());
            let mut state = SghmcState::new(s.lr / n as f64, s.friction, 1.0)?;
            let schedule = s.schedule();
            let mut batches: Vec<Vec<usize>> = Vec::new();
            let mut total = 0.0;
            let mut count = 0usize;
            let ensemble = collect_sghmc_samples(
                &net,
                |cur, _step, rng| {
                    if batches.is_empty() {
                        batches = data.batch_indices(cfg.batch_size, rng)?;
                        batches.reverse();
                    }
                    let idx = batches.pop().expect("refilled above");
                    let (x, y) = data.batch(&idx)?;
                    let (loss, g) = evaluate(cur, &x, &y, rng, &potential, None, false)?;
                    if !loss.total.is_finite() {
                        return Err(Error::Training("SGHMC: non-finite potential".into()));
                    }
                    total += loss.total;
                    count += 1;
                    Ok(g)
                },
                &mut state,
                &schedule,
                rng,
            )?;
            report.sghmc_steps = schedule.steps();
            report.final_loss = LossValue {
                total: total / count.max(1) as f64,
                data: total / count.max(1) as f64,
                regulariser: 0.0,
            };
            log.emit(&LogRecord::Epoch {
                phase: "sghmc".into(),
                method: method.to_string(),
                member: 0,
                epoch: 0,
                total: report.final_loss.total,
                data: report.final_loss.data,
                regulariser: 0.0,
            })?;
            BayesianModel::Sghmc(ensemble)
        }
    };
    Ok((model, report))
}
