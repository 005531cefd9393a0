//! Monte Carlo predictive summaries.

use crate::bayes::network::{softplus, Task, Weights};
use crate::bayes::quantised::ExecMode;
use crate::bayes::{BayesianModel, Method, Mode, QuantisedModel};
use crate::error::{Error, Result};
use crate::quant::RequantMode;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A model bound to an execution mode.
#[derive(Clone, Copy, Debug)]
pub enum Executable<'a, T> {
    Float(&'a BayesianModel<T>),
    Quantised(&'a QuantisedModel<T>, ExecMode),
}

impl<'a, T: Scalar> Executable<'a, T> {
    /// Selects the float model or its finalised counterpart. Quantised modes
    /// require `quantised` to be present.
    pub fn select(
        float: &'a BayesianModel<T>,
        quantised: Option<&'a QuantisedModel<T>>,
        mode: Mode,
        requant: RequantMode,
    ) -> Result<Self> {
        match (mode, quantised) {
            (Mode::Float, _) => Ok(Executable::Float(float)),
            (Mode::Simulated, Some(q)) => Ok(Executable::Quantised(q, ExecMode::Simulated)),
            (Mode::Integer, Some(q)) => Ok(Executable::Quantised(q, ExecMode::Integer(requant))),
            (m, None) => Err(Error::State(format!("{m} execution requires a finalised quantised model"))),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Executable::Float(m) => m.method(),
            Executable::Quantised(q, _) => q.method,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Executable::Float(m) => m.task(),
            Executable::Quantised(q, _) => q.task(),
        }
    }

    /// Number of distinct snapshots (SGHMC) or `None` for sampling models.
    pub fn snapshots(&self) -> Option<usize> {
        match self {
            Executable::Float(BayesianModel::Sghmc(e)) => Some(e.len()),
            Executable::Quantised(q, _) if q.method == Method::Sghmc => Some(q.members.len()),
            _ => None,
        }
    }

    /// Raw output (regression value or logits) of pass `l`.
    pub fn pass(&self, x: &Tensor<T>, l: usize, rng: &mut SeededRng) -> Result<Tensor<T>> {
        match self {
            Executable::Float(m) => m.sample(x, l, rng),
            Executable::Quantised(q, mode) => q.sample(x, l, rng, *mode),
        }
    }
}

/// Mean and population variance of `L` passes. Classification outputs are
/// probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary<T> {
    pub mean: Tensor<T>,
    pub variance: Tensor<T>,
    pub samples: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> PredictiveSummary<T> {
    /// Summarises per-pass outputs, accumulating in `f64`.
    pub fn from_samples(samples: Vec<Tensor<T>>, retain: bool) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Parameter("at least one sample is required".into()))?;
        let shape = first.shape().to_vec();
        if samples.iter().any(|s| s.shape() != shape.as_slice()) {
            return Err(Error::Shape {
                op: "predictive",
                detail: "per-pass outputs differ in shape".into(),
            });
        }
        let n = samples.len() as f64;
        let len = first.len();
        let mut mean = vec![0.0f64; len];
        for s in &samples {
            for (m, v) in mean.iter_mut().zip(s.data()) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; len];
        for s in &samples {
            for ((acc, v), m) in var.iter_mut().zip(s.data()).zip(&mean) {
                let d = v.as_f64() - m;
                *acc += d * d;
            }
        }
        let mean = Tensor::new(shape.clone(), mean.into_iter().map(T::of).collect())?;
        let variance = Tensor::new(shape, var.into_iter().map(|v| T::of(v / n)).collect())?;
        Ok(Self {
            mean,
            variance,
            samples: retain.then_some(samples),
        })
    }
}

fn run_passes<T: Scalar>(exe: &Executable<'_, T>, x: &Tensor<T>, samples: usize, rng: &mut SeededRng) -> Result<Vec<Tensor<T>>> {
    if samples == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    if let Some(n) = exe.snapshots() {
        if samples > n {
            return Err(Error::Parameter(format!("{samples} passes requested from {n} snapshots")));
        }
    }
    let base = SeededRng::new(rng.next_u64());
    let passes = if exe.method() == Method::Pointwise { 1 } else { samples };
    let mut outs = Vec::with_capacity(passes);
    for l in 0..passes {
        let mut r = base.child(l as u64);
        let out = exe.pass(x, l, &mut r)?;
        outs.push(match exe.task() {
            Task::Regression => out,
            Task::Classification => out.softmax_rows(),
        });
    }
    Ok(outs)
}

/// `L`-pass predictive summary.
///
/// Pass `l` runs with `child(l)` of a generator seeded from one draw of
/// `rng`. SGHMC uses snapshot `l` for pass `l`; a pointwise model is
/// evaluated once since every pass is identical.
pub fn predictive<T: Scalar>(
    exe: &Executable<'_, T>,
    x: &Tensor<T>,
    samples: usize,
    rng: &mut SeededRng,
    retain: bool,
) -> Result<PredictiveSummary<T>> {
    PredictiveSummary::from_samples(run_passes(exe, x, samples, rng)?, retain)
}

/// One MC-dropout pass.
pub fn mcd_forward<T: Scalar>(exe: &Executable<'_, T>, x: &Tensor<T>, rng: &mut SeededRng) -> Result<Tensor<T>> {
    if exe.method() != Method::Mcd {
        return Err(Error::Parameter(format!("expected an MC dropout model, got {}", exe.method())));
    }
    exe.pass(x, 0, rng)
}

/// One pass through SGHMC snapshot `l` (zero-based). No randomness is used.
pub fn sghmc_forward<T: Scalar>(exe: &Executable<'_, T>, l: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
    if exe.method() != Method::Sghmc {
        return Err(Error::Parameter(format!("expected an SGHMC ensemble, got {}", exe.method())));
    }
    exe.pass(x, l, &mut SeededRng::new(0))
}

/// One draw of every layer's weights from a Bayes-by-Backprop model.
pub fn bbb_sample_weights<T: Scalar>(exe: &Executable<'_, T>, rng: &mut SeededRng) -> Result<Vec<Tensor<T>>> {
    if exe.method() != Method::Bbb {
        return Err(Error::Parameter(format!("expected a Bayes-by-Backprop model, got {}", exe.method())));
    }
    match exe {
        Executable::Float(m) => m.members()[0]
            .layers
            .iter()
            .map(|l| match &l.weights {
                Weights::Gaussian { mu, rho } => mu.add(&rho.map(softplus).mul(&rng.gaussian::<T>(mu.shape()))?),
                Weights::Point(w) => Ok(w.clone()),
            })
            .collect(),
        Executable::Quantised(q, mode) => q.members[0].sample_weights(rng, *mode),
    }
}
