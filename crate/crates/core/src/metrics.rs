//! Accuracy and uncertainty metrics. Inputs are predictive means (and
//! variances); all accumulation is in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_BINS: usize = 10;
const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(shape_err(op, format!("{a} predictions for {b} targets")));
    }
    if a == 0 {
        return Err(Error::Parameter(format!("{op}: empty input")));
    }
    Ok(())
}

pub fn rmse<T: Scalar>(preds: &[T], targets: &[T]) -> Result<f64> {
    check_len("rmse", preds.len(), targets.len())?;
    let sse: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, y)| (y.as_f64() - p.as_f64()).powi(2))
        .sum();
    Ok((sse / preds.len() as f64).sqrt())
}

/// Mean Gaussian negative log-likelihood; variances are floored at
/// [`VARIANCE_FLOOR`].
pub fn nll_regression<T: Scalar>(mean: &[T], var: &[T], targets: &[T]) -> Result<f64> {
    check_len("nll_regression", mean.len(), targets.len())?;
    check_len("nll_regression", var.len(), targets.len())?;
    let total: f64 = mean
        .iter()
        .zip(var)
        .zip(targets)
        .map(|((m, v), y)| {
            let v = v.as_f64().max(VARIANCE_FLOOR);
            v.ln() / 2.0 + (y.as_f64() - m.as_f64()).powi(2) / (2.0 * v) + LOG_SQRT_2PI
        })
        .sum();
    Ok(total / mean.len() as f64)
}

fn check_probs<T: Scalar>(op: &'static str, probs: &Tensor<T>) -> Result<()> {
    if probs.shape().len() != 2 || probs.rows() == 0 {
        return Err(shape_err(op, format!("expected an I x K matrix, got {:?}", probs.shape())));
    }
    for i in 0..probs.rows() {
        let s: f64 = probs.row(i).iter().map(|p| p.as_f64()).sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::Parameter(format!("{op}: row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Mean cross-entropy against one-hot targets; log floored at
/// `ln(PROB_FLOOR)`.
pub fn nll_classification<T: Scalar>(probs: &Tensor<T>, one_hot: &Tensor<T>) -> Result<f64> {
    check_probs("nll_classification", probs)?;
    if probs.shape() != one_hot.shape() {
        return Err(shape_err(
            "nll_classification",
            format!("{:?} vs targets {:?}", probs.shape(), one_hot.shape()),
        ));
    }
    let mut total = 0.0;
    for i in 0..probs.rows() {
        let y = one_hot.row(i);
        let ones = y.iter().filter(|v| **v == T::one()).count();
        let zeros = y.iter().filter(|v| **v == T::zero()).count();
        if ones != 1 || ones + zeros != y.len() {
            return Err(Error::Parameter(format!("target row {i} is not one-hot")));
        }
        let k = y.iter().position(|v| *v == T::one()).unwrap_or(0);
        total -= probs.at(i, k).as_f64().max(PROB_FLOOR).ln();
    }
    Ok(total / probs.rows() as f64)
}

/// One-hot encoding of class labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Parameter(format!("label {bad} outside {classes} classes")));
    }
    Tensor::new(
        vec![labels.len(), classes],
        labels
            .iter()
            .flat_map(|&l| (0..classes).map(move |k| if k == l { T::one() } else { T::zero() }))
            .collect(),
    )
}

/// Average entropy of the predictive rows, in nats.
pub fn avg_predictive_entropy<T: Scalar>(probs: &Tensor<T>) -> Result<f64> {
    check_probs("avg_predictive_entropy", probs)?;
    let total: f64 = (0..probs.rows())
        .map(|i| {
            -probs
                .row(i)
                .iter()
                .map(|p| {
                    let p = p.as_f64();
                    if p > 0.0 {
                        p * p.ln()
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / probs.rows() as f64)
}

/// Equal-width confidence bins over `(0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub counts: Vec<usize>,
    /// Per-bin accuracy and mean confidence; zero for empty bins.
    pub accuracy: Vec<f64>,
    pub confidence: Vec<f64>,
}

impl CalibrationBins {
    /// Bin index (zero-based) for confidence `c`: `ceil(c B) - 1`, with
    /// `c = 0` going to the first bin.
    pub fn bin_of(c: f64, bins: usize) -> usize {
        let b = (c * bins as f64).ceil() as usize;
        b.clamp(1, bins) - 1
    }

    pub fn build<T: Scalar>(probs: &Tensor<T>, labels: &[usize], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Parameter("ECE needs at least one bin".into()));
        }
        check_probs("ece", probs)?;
        check_len("ece", probs.rows(), labels.len())?;
        let mut counts = vec![0usize; bins];
        let mut correct = vec![0usize; bins];
        let mut conf = vec![0.0f64; bins];
        for (i, pred) in probs.argmax_rows().into_iter().enumerate() {
            let c = probs.at(i, pred).as_f64();
            let b = Self::bin_of(c, bins);
            counts[b] += 1;
            conf[b] += c;
            if pred == labels[i] {
                correct[b] += 1;
            }
        }
        let per = |v: f64, n: usize| if n == 0 { 0.0 } else { v / n as f64 };
        Ok(Self {
            accuracy: correct.iter().zip(&counts).map(|(&k, &n)| per(k as f64, n)).collect(),
            confidence: conf.iter().zip(&counts).map(|(&s, &n)| per(s, n)).collect(),
            counts,
        })
    }

    pub fn ece(&self) -> f64 {
        let n: usize = self.counts.iter().sum();
        self.counts
            .iter()
            .zip(self.accuracy.iter().zip(&self.confidence))
            .map(|(&k, (a, c))| k as f64 / n as f64 * (a - c).abs())
            .sum()
    }
}

pub fn ece<T: Scalar>(probs: &Tensor<T>, labels: &[usize], bins: usize) -> Result<f64> {
    Ok(CalibrationBins::build(probs, labels, bins)?.ece())
}

/// Fraction of rows whose argmax (lowest index on ties) misses the label.
pub fn classification_error<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    check_len("classification_error", probs.rows(), labels.len())?;
    let wrong = probs
        .argmax_rows()
        .into_iter()
        .zip(labels)
        .filter(|(p, l)| p != *l)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: Option<f64>,
    pub nll: Option<f64>,
    pub ape: Option<f64>,
    pub ece: Option<f64>,
    pub classification_error: Option<f64>,
}

impl MetricsReport {
    /// Regression metrics in original target units: predictions and
    /// variances are mapped back through `y = y_std * z + y_mean` and
    /// `obs_var` (in original units) is added to the predictive variance.
    pub fn regression<T: Scalar>(
        mean: &Tensor<T>,
        var: &Tensor<T>,
        targets: &[T],
        y_mean: f64,
        y_std: f64,
        obs_var: f64,
    ) -> Result<Self> {
        let m: Vec<f64> = mean.data().iter().map(|v| v.as_f64() * y_std + y_mean).collect();
        let v: Vec<f64> = var.data().iter().map(|v| v.as_f64() * y_std * y_std + obs_var).collect();
        let y: Vec<f64> = targets.iter().map(|v| v.as_f64()).collect();
        Ok(Self {
            rmse: Some(rmse(&m, &y)?),
            nll: Some(nll_regression(&m, &v, &y)?),
            ..Self::default()
        })
    }

    pub fn classification<T: Scalar>(probs: &Tensor<T>, labels: &[usize], bins: usize) -> Result<Self> {
        let k = probs.cols();
        Ok(Self {
            nll: Some(nll_classification(probs, &one_hot(labels, k)?)?),
            ape: Some(avg_predictive_entropy(probs)?),
            ece: Some(ece(probs, labels, bins)?),
            classification_error: Some(classification_error(probs, labels)?),
            rmse: None,
        })
    }

    /// `(name, value)` pairs for the metrics present, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("rmse", self.rmse),
            ("nll", self.nll),
            ("ape", self.ape),
            ("ece", self.ece),
            ("error", self.classification_error),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.map(|v| (n, v)))
        .collect()
    }
}
