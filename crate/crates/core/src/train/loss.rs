//! Data likelihood terms, the Gaussian KL regulariser and the combined
//! per-batch objective.

use serde::{Deserialize, Serialize};

use crate::bayes::network::{sigmoid, softplus, Gradients, Network, Task, WeightGrad, Weights};
use crate::bayes::sites::NetSites;
use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A loss value split into its data and regulariser parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub data: f64,
    pub regulariser: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Sum,
    Mean,
}

/// Negative log-likelihood of a batch and its gradient with respect to the
/// network output. Regression uses a Gaussian with variance `obs_var`;
/// classification a softmax categorical over the logits.
pub fn data_nll<T: Scalar>(
    task: Task,
    out: &Tensor<T>,
    y: &Tensor<T>,
    obs_var: f64,
    reduction: Reduction,
) -> Result<(f64, Tensor<T>)> {
    if out.shape() != y.shape() {
        return Err(shape_err("data_nll", format!("output {:?} vs targets {:?}", out.shape(), y.shape())));
    }
    let n = out.rows() as f64;
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n,
    };
    let (value, grad) = match task {
        Task::Regression => {
            if !(obs_var > 0.0) {
                return Err(Error::Parameter(format!("observation variance must be positive, got {obs_var}")));
            }
            let log_norm = 0.5 * (2.0 * std::f64::consts::PI * obs_var).ln();
            let mut total = 0.0;
            let grad = out.zip_map(y, |f, t| T::of((f.as_f64() - t.as_f64()) / obs_var * scale))?;
            for (f, t) in out.data().iter().zip(y.data()) {
                let r = f.as_f64() - t.as_f64();
                total += 0.5 * r * r / obs_var + log_norm;
            }
            (total, grad)
        }
        Task::Classification => {
            let probs = out.softmax_rows();
            let mut total = 0.0;
            for i in 0..out.rows() {
                let row = out.row(i);
                let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
                let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
                for (v, t) in row.iter().zip(y.row(i)) {
                    total -= t.as_f64() * (v.as_f64() - lse);
                }
            }
            let grad = probs.zip_map(y, |p, t| T::of((p.as_f64() - t.as_f64()) * scale))?;
            (total, grad)
        }
    };
    Ok((value * scale, grad))
}

/// `KL(N(mu, sigma^2) || N(0, prior_var))` for one weight.
pub fn kl_gaussian(mu: f64, sigma: f64, prior_var: f64) -> f64 {
    0.5 * (prior_var / (sigma * sigma)).ln() + (sigma * sigma + mu * mu) / (2.0 * prior_var) - 0.5
}

/// Summed KL of every Gaussian layer; gradients with respect to `mu` and
/// `rho` are added, scaled by `weight`, into `grads`.
pub fn kl_term<T: Scalar>(net: &Network<T>, prior_var: f64, weight: f64, grads: Option<&mut Gradients<T>>) -> Result<f64> {
    let mut total = 0.0;
    let mut grads = grads;
    for (li, layer) in net.layers.iter().enumerate() {
        let Weights::Gaussian { mu, rho } = &layer.weights else {
            continue;
        };
        let mut g_mu = Vec::with_capacity(mu.len());
        let mut g_rho = Vec::with_capacity(mu.len());
        for (&m, &r) in mu.data().iter().zip(rho.data()) {
            let s = softplus(r).as_f64();
            if !(s > 0.0) {
                return Err(Error::Training(format!("layer {li}: non-positive standard deviation {s}")));
            }
            let m = m.as_f64();
            total += kl_gaussian(m, s, prior_var);
            g_mu.push(T::of(weight * m / prior_var));
            g_rho.push(T::of(weight * (-1.0 / s + s / prior_var) * sigmoid(r).as_f64()));
        }
        if let Some(g) = grads.as_deref_mut() {
            if let WeightGrad::Gaussian { mu: gm, rho: gr } = &mut g.layers[li].weights {
                for (a, b) in gm.data_mut().iter_mut().zip(g_mu) {
                    *a += b;
                }
                for (a, b) in gr.data_mut().iter_mut().zip(g_rho) {
                    *a += b;
                }
            }
        }
    }
    Ok(total * weight)
}

/// `0.5 * decay * |w|^2` over point weights and Gaussian means (not biases);
/// the gradient is added into `grads`.
pub fn l2_term<T: Scalar>(net: &Network<T>, decay: f64, grads: Option<&mut Gradients<T>>) -> f64 {
    if decay == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut grads = grads;
    for (li, layer) in net.layers.iter().enumerate() {
        let w = match &layer.weights {
            Weights::Point(w) => w,
            Weights::Gaussian { mu, .. } => mu,
        };
        total += 0.5 * decay * w.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
        if let Some(g) = grads.as_deref_mut() {
            let gw = match &mut g.layers[li].weights {
                WeightGrad::Point(gw) => gw,
                WeightGrad::Gaussian { mu, .. } => mu,
            };
            for (a, &b) in gw.data_mut().iter_mut().zip(w.data()) {
                *a += T::of(decay) * b;
            }
        }
    }
    total
}

/// Per-batch training objective:
/// `data_scale * NLL + kl_weight * KL + 0.5 * weight_decay * |w|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub reduction: Reduction,
    pub data_scale: f64,
    pub obs_var: f64,
    pub kl_weight: f64,
    pub prior_var: f64,
    pub weight_decay: f64,
}

impl Objective {
    /// Mean NLL with L2 decay (pointwise and dropout training).
    pub fn mle(obs_var: f64, weight_decay: f64) -> Self {
        Self {
            reduction: Reduction::Mean,
            data_scale: 1.0,
            obs_var,
            kl_weight: 0.0,
            prior_var: 1.0,
            weight_decay,
        }
    }

    /// Summed NLL plus `kl_weight * KL`.
    pub fn elbo(obs_var: f64, kl_weight: f64, prior_var: f64) -> Self {
        Self {
            reduction: Reduction::Sum,
            data_scale: 1.0,
            obs_var,
            kl_weight,
            prior_var,
            weight_decay: 0.0,
        }
    }

    /// Minibatch estimate of the potential `U(w) = N * mean NLL + |w|^2 / (2 prior_var)`.
    pub fn potential(obs_var: f64, dataset_size: usize, prior_var: f64) -> Self {
        Self {
            reduction: Reduction::Mean,
            data_scale: dataset_size as f64,
            obs_var,
            kl_weight: 0.0,
            prior_var,
            weight_decay: 1.0 / prior_var,
        }
    }
}

/// Evaluates `objective` on one batch with a single forward pass and
/// returns the loss together with parameter gradients.
pub fn evaluate<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    rng: &mut SeededRng,
    objective: &Objective,
    sites: Option<&mut NetSites<T>>,
    observe: bool,
) -> Result<(LossValue, Gradients<T>)> {
    let (out, tape) = net.forward(x, rng, sites, observe, true)?;
    let tape = tape.expect("tape requested");
    let (nll, d_out) = data_nll(net.task, &out, y, objective.obs_var, objective.reduction)?;
    let d_out = d_out.scale(T::of(objective.data_scale));
    let mut grads = net.backward(&tape, &d_out)?;
    let mut reg = 0.0;
    if objective.kl_weight != 0.0 {
        reg += kl_term(net, objective.prior_var, objective.kl_weight, Some(&mut grads))?;
    }
    reg += l2_term(net, objective.weight_decay, Some(&mut grads));
    let data = nll * objective.data_scale;
    Ok((
        LossValue {
            total: data + reg,
            data,
            regulariser: reg,
        },
        grads,
    ))
}

/// ELBO loss of a Bayes-by-Backprop network on one batch: summed NLL under
/// one weight draw plus `kl_weight` times the KL to `N(0, prior_var)`.
pub fn elbo_loss<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    rng: &mut SeededRng,
    kl_weight: f64,
    obs_var: f64,
    prior_var: f64,
) -> Result<(LossValue, Gradients<T>)> {
    if !net.is_gaussian() {
        return Err(Error::Structure("ELBO requires Gaussian weights".into()));
    }
    evaluate(net, x, y, rng, &Objective::elbo(obs_var, kl_weight, prior_var), None, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_identity_and_closed_form() {
        assert!(kl_gaussian(0.0, 1.0, 1.0).abs() < 1e-15);
        let v = kl_gaussian(0.0, 1.0, 4.0);
        assert!((v - (2f64.ln() - 0.5 + 1.0 / 8.0)).abs() < 1e-12);
        assert!((v - 0.3181).abs() < 1e-4);
    }

    #[test]
    fn kl_of_prior_matching_network_is_zero() {
        let mut rng = SeededRng::new(1);
        let mut net = Network::<f64>::mlp(&[3, 4, 2], Task::Regression, &mut rng)
            .unwrap()
            .into_gaussian(0.1)
            .unwrap();
        for l in &mut net.layers {
            if let Weights::Gaussian { mu, rho } = &mut l.weights {
                *mu = Tensor::zeros(mu.shape());
                *rho = Tensor::full(rho.shape(), crate::bayes::softplus_inv(1.0));
            }
        }
        assert!(kl_term(&net, 1.0, 1.0, None).unwrap().abs() < 1e-12);
    }

    #[test]
    fn regression_nll_matches_gaussian_density() {
        let out = Tensor::from_rows(&[vec![1.0f64], vec![2.0]]);
        let y = Tensor::from_rows(&[vec![1.5f64], vec![2.0]]);
        let (v, g) = data_nll(Task::Regression, &out, &y, 0.5, Reduction::Sum).unwrap();
        let lp = |r: f64| 0.5 * r * r / 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 0.5).ln();
        assert!((v - lp(0.5) - lp(0.0)).abs() < 1e-12);
        assert_eq!(g.data(), &[-1.0, 0.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let out = Tensor::<f64>::zeros(&[2, 10]);
        let mut y = Tensor::zeros(&[2, 10]);
        y.data_mut()[3] = 1.0;
        y.data_mut()[17] = 1.0;
        let (v, g) = data_nll(Task::Classification, &out, &y, 1.0, Reduction::Mean).unwrap();
        assert!((v - 10f64.ln()).abs() < 1e-12);
        assert!((g.data()[3] - (0.1 - 1.0) / 2.0).abs() < 1e-12);
    }
}
