//! Multilayer perceptrons with point or factorised-Gaussian weights.

use serde::{Deserialize, Serialize};

use crate::bayes::sites::NetSites;
use crate::error::{shape_err, Error, Result};
use crate::quant::{fake_quant, fake_quant_bias, noise_params, QuantParams};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classification,
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    if y > T::of(20.0) {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub enum Weights<T> {
    Point(Tensor<T>),
    /// `w = mu + softplus(rho) * eps`.
    Gaussian { mu: Tensor<T>, rho: Tensor<T> },
}

impl<T: Scalar> Weights<T> {
    pub fn shape(&self) -> &[usize] {
        match self {
            Weights::Point(w) => w.shape(),
            Weights::Gaussian { mu, .. } => mu.shape(),
        }
    }
}

/// A dense layer `x W + b`. A positive `dropout` masks the layer input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Layer<T> {
    pub weights: Weights<T>,
    pub bias: Tensor<T>,
    pub dropout: f64,
}

impl<T: Scalar> Layer<T> {
    pub fn inputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// ReLU MLP; every layer but the last is followed by a ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
    pub task: Task,
}

#[derive(Clone, Debug)]
enum WeightJacobian<T> {
    /// `dw_eff / dW`, absent when it is the identity.
    Point(Option<Tensor<T>>),
    Gaussian { d_mu: Option<Tensor<T>>, d_rho: Tensor<T> },
}

#[derive(Clone, Debug)]
struct LayerTape<T> {
    x: Tensor<T>,
    w: Tensor<T>,
    dx_dh: Option<Tensor<T>>,
    dw: WeightJacobian<T>,
    dout_dz: Option<Tensor<T>>,
}

/// Values recorded by [`Network::forward`] for [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    layers: Vec<LayerTape<T>>,
    dx_in: Option<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightGrad<T> {
    Point(Tensor<T>),
    Gaussian { mu: Tensor<T>, rho: Tensor<T> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: WeightGrad<T>,
    pub bias: Tensor<T>,
}

/// Gradients in the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
    /// Gradient with respect to the network input.
    pub input: Tensor<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Flattened in [`Network::params_mut`] order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match &l.weights {
                WeightGrad::Point(w) => out.push(w),
                WeightGrad::Gaussian { mu, rho } => {
                    out.push(mu);
                    out.push(rho);
                }
            }
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match &mut l.weights {
                WeightGrad::Point(w) => out.push(w),
                WeightGrad::Gaussian { mu, rho } => {
                    out.push(mu);
                    out.push(rho);
                }
            }
            out.push(&mut l.bias);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

fn mul_opt<T: Scalar>(a: Option<Tensor<T>>, b: &Tensor<T>) -> Result<Tensor<T>> {
    match a {
        Some(a) => a.mul(b),
        None => Ok(b.clone()),
    }
}

impl<T: Scalar> Network<T> {
    /// Point-weight MLP with He-normal weights and zero biases.
    pub fn mlp(widths: &[usize], task: Task, rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Structure(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let std = (2.0 / w[0] as f64).sqrt();
                Layer {
                    weights: Weights::Point(rng.gaussian::<T>(&[w[0], w[1]]).scale(T::of(std))),
                    bias: Tensor::zeros(&[w[1]]),
                    dropout: 0.0,
                }
            })
            .collect();
        Ok(Self { layers, task })
    }

    /// Sets the drop probability on every layer except the first.
    pub fn with_dropout(mut self, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("drop probability must lie in [0, 1), got {p}")));
        }
        for l in self.layers.iter_mut().skip(1) {
            l.dropout = p;
        }
        Ok(self)
    }

    /// Converts point weights into Gaussian ones centred on them, with
    /// `softplus(rho) = std_factor * sqrt(2 / fan_in)`.
    pub fn into_gaussian(mut self, std_factor: f64) -> Result<Self> {
        if std_factor <= 0.0 {
            return Err(Error::Parameter("initial standard deviation must be positive".into()));
        }
        for l in &mut self.layers {
            if let Weights::Point(w) = &l.weights {
                let sigma = std_factor * (2.0 / w.rows() as f64).sqrt();
                let rho = Tensor::full(w.shape(), softplus_inv(T::of(sigma)));
                l.weights = Weights::Gaussian { mu: w.clone(), rho };
            }
        }
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn is_gaussian(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.weights, Weights::Gaussian { .. }))
    }

    /// Trainable tensors: per layer the weight tensor(s), then the bias.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match &mut l.weights {
                Weights::Point(w) => out.push(w),
                Weights::Gaussian { mu, rho } => {
                    out.push(mu);
                    out.push(rho);
                }
            }
            out.push(&mut l.bias);
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            match &l.weights {
                Weights::Point(w) => out.push(w),
                Weights::Gaussian { mu, rho } => {
                    out.push(mu);
                    out.push(rho);
                }
            }
            out.push(&l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// One stochastic forward pass.
    ///
    /// Dropout masks and weight noise are drawn from `rng` layer by layer in
    /// a fixed order, so two passes from equal generators match. With
    /// `sites` present every consumed tensor is fake-quantised; `observe`
    /// additionally updates the site observers first. A tape for
    /// [`Network::backward`] is returned when `record` is set.
    pub fn forward(
        &self,
        x: &Tensor<T>,
        rng: &mut SeededRng,
        mut sites: Option<&mut NetSites<T>>,
        observe: bool,
        record: bool,
    ) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(shape_err(
                "forward",
                format!("input {:?} for a network taking {} features", x.shape(), self.input_dim()),
            ));
        }
        if let Some(s) = &sites {
            if s.layers.len() != self.layers.len() {
                return Err(Error::Structure("quantisation sites do not match the network".into()));
            }
        }
        let (mut h, dx_in, mut in_params) = match sites.as_deref_mut() {
            Some(s) => {
                let (q, ste) = s.input.apply(x, observe)?;
                (q, Some(ste), s.input.params)
            }
            None => (x.clone(), None, None),
        };
        let last = self.layers.len() - 1;
        let mut tapes = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut ls = sites.as_deref_mut().map(|s| &mut s.layers[li]);

            // Input masking.
            let (xin, dx_dh) = if layer.dropout > 0.0 {
                let keep = T::one() / T::of(1.0 - layer.dropout);
                let factor = rng.bernoulli_mask::<T>(h.shape(), layer.dropout)?.scale(keep);
                let masked = h.mul(&factor)?;
                match ls.as_deref_mut().and_then(|l| l.mask.as_mut()) {
                    Some(site) => {
                        let (q, ste) = site.apply(&masked, observe)?;
                        in_params = site.params;
                        (q, Some(factor.mul(&ste)?))
                    }
                    None => (masked, Some(factor)),
                }
            } else {
                (h, None)
            };

            // Effective weights.
            let (w, dw) = match (&layer.weights, ls.as_deref_mut()) {
                (Weights::Point(w), None) => (w.clone(), WeightJacobian::Point(None)),
                (Weights::Point(w), Some(l)) => {
                    let (q, ste) = l.weight.apply(w, observe)?;
                    (q, WeightJacobian::Point(Some(ste)))
                }
                (Weights::Gaussian { mu, rho }, l) => {
                    let sigma = rho.map(softplus);
                    let dsig = rho.map(sigmoid);
                    let eps = rng.gaussian::<T>(mu.shape());
                    match l {
                        None => {
                            let w = mu.add(&sigma.mul(&eps)?)?;
                            (w, WeightJacobian::Gaussian { d_mu: None, d_rho: eps.mul(&dsig)? })
                        }
                        Some(l) => {
                            let missing = || Error::Structure("Gaussian layer without noise sites".into());
                            let (mu_q, s_mu) = l.mean.as_mut().ok_or_else(missing)?.apply(mu, observe)?;
                            let (sig_q, s_sig) = l.std.as_mut().ok_or_else(missing)?.apply(&sigma, observe)?;
                            let eps_q = fake_quant(&eps, &noise_params());
                            let prod = sig_q.mul(&eps_q)?;
                            let (p_q, s_p) = l.noise.as_mut().ok_or_else(missing)?.apply(&prod, observe)?;
                            let (w, s_w) = l.weight.apply(&mu_q.add(&p_q)?, observe)?;
                            let d_mu = s_w.mul(&s_mu)?;
                            let d_rho = s_w.mul(&s_p)?.mul(&eps_q)?.mul(&s_sig)?.mul(&dsig)?;
                            (w, WeightJacobian::Gaussian { d_mu: Some(d_mu), d_rho })
                        }
                    }
                }
            };

            let bias = match ls.as_deref_mut() {
                Some(l) => {
                    let ip: QuantParams<T> =
                        in_params.ok_or_else(|| Error::State("input site has no parameters".into()))?;
                    fake_quant_bias(&layer.bias, &ip, &l.weight.params()?)
                }
                None => layer.bias.clone(),
            };
            let z = xin.matmul(&w)?.add_row(&bias)?;
            let (a, relu_mask) = if li < last {
                let mask = z.map(|v| if v > T::zero() { T::one() } else { T::zero() });
                (z.relu(), Some(mask))
            } else {
                (z, None)
            };
            let (out, dout_dz) = match ls {
                Some(l) => {
                    let (q, ste) = l.output.apply(&a, observe)?;
                    in_params = l.output.params;
                    let d = match relu_mask {
                        Some(m) => ste.mul(&m)?,
                        None => ste,
                    };
                    (q, Some(d))
                }
                None => (a, relu_mask),
            };
            if record {
                tapes.push(LayerTape {
                    x: xin,
                    w,
                    dx_dh,
                    dw,
                    dout_dz,
                });
            }
            h = out;
        }
        let tape = record.then_some(Tape { layers: tapes, dx_in });
        Ok((h, tape))
    }

    /// Backpropagates `d_out = dL/d(output)` through a recorded pass.
    /// Rounding steps use the straight-through estimator.
    pub fn backward(&self, tape: &Tape<T>, d_out: &Tensor<T>) -> Result<Gradients<T>> {
        if tape.layers.len() != self.layers.len() {
            return Err(Error::Structure("tape does not match the network".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (layer, t) in self.layers.iter().zip(&tape.layers).rev() {
            let dz = match &t.dout_dz {
                Some(m) => d.mul(m)?,
                None => d,
            };
            let dw_eff = t.x.matmul_tn(&dz)?;
            let db = dz.col_sums();
            let dx = dz.matmul_nt(&t.w)?;
            let weights = match (&t.dw, &layer.weights) {
                (WeightJacobian::Point(j), Weights::Point(_)) => WeightGrad::Point(mul_opt(j.clone(), &dw_eff)?),
                (WeightJacobian::Gaussian { d_mu, d_rho }, Weights::Gaussian { .. }) => WeightGrad::Gaussian {
                    mu: mul_opt(d_mu.clone(), &dw_eff)?,
                    rho: dw_eff.mul(d_rho)?,
                },
                _ => return Err(Error::Structure("tape does not match the network".into())),
            };
            grads.push(LayerGrad { weights, bias: db });
            d = match &t.dx_dh {
                Some(m) => dx.mul(m)?,
                None => dx,
            };
        }
        grads.reverse();
        let input = match &tape.dx_in {
            Some(m) => d.mul(m)?,
            None => d,
        };
        Ok(Gradients { layers: grads, input })
    }
}
