//! Finalised quantised networks.
//!
//! A [`QuantisedNetwork`] is produced from a float network and its frozen
//! sites. It carries only integer weights, quantisation parameters and
//! offline constants, and runs in two modes:
//!
//! * simulated: dequantised weights with fake-quantised activations in float
//!   arithmetic, bit-compatible with the training-time simulation;
//! * integer: integer tensors end to end, from quantising the input to
//!   dequantising the final output.
//!
//! Both modes consume the random stream in the same order as
//! [`Network::forward`](crate::bayes::Network::forward), so equal generators
//! give matching dropout masks and weight noise.

use serde::{Deserialize, Serialize};

use crate::bayes::network::{softplus, Network, Task, Weights};
use crate::bayes::sites::NetSites;
use crate::error::{shape_err, Error, Result};
use crate::quant::fixed_point::apply_sum;
use crate::quant::kernel::column_sums;
use crate::quant::{
    dequantise, fake_quant, noise_params, precompute_offline, quantise, quantised_matmul, IntTensor,
    OfflineConstants, QuantParams, RequantMode, Requantiser,
};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dropout on the layer input. The mask and the `1/(1-p)` rescaling are
/// folded into one requantisation onto the masked-product grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct MaskStage<T> {
    pub drop: f64,
    /// Grid of the incoming activation.
    pub source: QuantParams<T>,
    /// Grid of the masked product, which is the kernel input.
    pub params: QuantParams<T>,
    /// `S_source / ((1 - p) S_params)`.
    pub requant: Requantiser,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub enum QuantisedWeights<T> {
    Fixed {
        weights: IntTensor<T>,
        offline: OfflineConstants,
    },
    /// Integer mean and standard deviation; weights are sampled per pass.
    Gaussian {
        mean: IntTensor<T>,
        std: IntTensor<T>,
        noise: QuantParams<T>,
        weight: QuantParams<T>,
        /// `S_std S_eps / S_noise`.
        noise_requant: Requantiser,
        /// `S_mean / S_weight` and `S_noise / S_weight`.
        mean_requant: Requantiser,
        product_requant: Requantiser,
        const_term: i32,
        fused_bias: Vec<i32>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct QuantisedLayer<T> {
    pub mask: Option<MaskStage<T>>,
    pub weights: QuantisedWeights<T>,
    /// Grid of the kernel input.
    pub input_params: QuantParams<T>,
    pub output_params: QuantParams<T>,
    /// `S_input S_weight / S_output`.
    pub requant: Requantiser,
    pub relu: bool,
}

impl<T: Scalar> QuantisedLayer<T> {
    pub fn weight_params(&self) -> QuantParams<T> {
        match &self.weights {
            QuantisedWeights::Fixed { weights, .. } => *weights.params(),
            QuantisedWeights::Gaussian { weight, .. } => *weight,
        }
    }

    fn fused_bias(&self) -> &[i32] {
        match &self.weights {
            QuantisedWeights::Fixed { offline, .. } => &offline.fused_bias,
            QuantisedWeights::Gaussian { fused_bias, .. } => fused_bias,
        }
    }

    fn shape(&self) -> (usize, usize) {
        match &self.weights {
            QuantisedWeights::Fixed { weights, .. } => (weights.rows(), weights.cols()),
            QuantisedWeights::Gaussian { mean, .. } => (mean.rows(), mean.cols()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    Simulated,
    Integer(RequantMode),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct QuantisedNetwork<T> {
    pub task: Task,
    pub input_params: QuantParams<T>,
    pub layers: Vec<QuantisedLayer<T>>,
}

fn frozen<T: Scalar>(p: Option<QuantParams<T>>, what: &str) -> Result<QuantParams<T>> {
    p.ok_or_else(|| Error::State(format!("{what} site is not calibrated")))
}

impl<T: Scalar> QuantisedNetwork<T> {
    /// Quantises `net` under the parameters held by `sites`, which must have
    /// been calibrated.
    pub fn finalise(net: &Network<T>, sites: &NetSites<T>) -> Result<Self> {
        if sites.layers.len() != net.layers.len() {
            return Err(Error::Structure("quantisation sites do not match the network".into()));
        }
        let input_params = frozen(sites.input.params, "input")?;
        let mut prev = input_params;
        let last = net.layers.len() - 1;
        let mut layers = Vec::with_capacity(net.layers.len());
        for (li, (layer, ls)) in net.layers.iter().zip(&sites.layers).enumerate() {
            let (mask, kin) = match (&ls.mask, layer.dropout > 0.0) {
                (Some(site), true) => {
                    let params = frozen(site.params, "mask")?;
                    let real = prev.scale.as_f64() / ((1.0 - layer.dropout) * params.scale.as_f64());
                    let stage = MaskStage {
                        drop: layer.dropout,
                        source: prev,
                        params,
                        requant: Requantiser::new(real)?,
                    };
                    (Some(stage), params)
                }
                (None, false) => (None, prev),
                _ => return Err(Error::Structure(format!("layer {li}: dropout and mask site disagree"))),
            };
            let output_params = frozen(ls.output.params, "output")?;
            let wp = frozen(ls.weight.params, "weight")?;
            let weights = match &layer.weights {
                Weights::Point(w) => {
                    let qw = quantise(w, &wp);
                    let offline = precompute_offline(&qw, &kin, Some(&layer.bias))?;
                    QuantisedWeights::Fixed { weights: qw, offline }
                }
                Weights::Gaussian { mu, rho } => {
                    let missing = || Error::Structure(format!("layer {li}: Gaussian weights without noise sites"));
                    let mp = frozen(ls.mean.as_ref().ok_or_else(missing)?.params, "mean")?;
                    let sp = frozen(ls.std.as_ref().ok_or_else(missing)?.params, "std")?;
                    let np = frozen(ls.noise.as_ref().ok_or_else(missing)?.params, "noise")?;
                    let eps: QuantParams<T> = noise_params();
                    let sigma = rho.map(softplus);
                    let (m, f) = (mu.rows(), mu.cols());
                    let off = precompute_offline(&IntTensor::new(vec![m, f], vec![wp.zero_point; m * f], wp)?, &kin, Some(&layer.bias))?;
                    QuantisedWeights::Gaussian {
                        mean: quantise(mu, &mp),
                        std: quantise(&sigma, &sp),
                        noise: np,
                        weight: wp,
                        noise_requant: Requantiser::new(
                            sp.scale.as_f64() * eps.scale.as_f64() / np.scale.as_f64(),
                        )?,
                        mean_requant: Requantiser::new(mp.scale.as_f64() / wp.scale.as_f64())?,
                        product_requant: Requantiser::new(np.scale.as_f64() / wp.scale.as_f64())?,
                        const_term: off.const_term,
                        fused_bias: off.fused_bias,
                    }
                }
            };
            let requant = Requantiser::new(kin.scale.as_f64() * wp.scale.as_f64() / output_params.scale.as_f64())?;
            layers.push(QuantisedLayer {
                mask,
                weights,
                input_params: kin,
                output_params,
                requant,
                relu: li < last,
            });
            prev = output_params;
        }
        Ok(Self {
            task: net.task,
            input_params,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].shape().0
    }

    /// Weights used by one pass, in real units. Gaussian layers draw fresh
    /// noise from `rng`; dropout masks are not drawn.
    pub fn sample_weights(&self, rng: &mut SeededRng, mode: ExecMode) -> Result<Vec<Tensor<T>>> {
        self.layers
            .iter()
            .map(|l| match mode {
                ExecMode::Simulated => self.weights_simulated(l, rng),
                ExecMode::Integer(rm) => Ok(dequantise(&self.weights_integer(l, rng, rm)?)),
            })
            .collect()
    }

    fn weights_simulated(&self, l: &QuantisedLayer<T>, rng: &mut SeededRng) -> Result<Tensor<T>> {
        match &l.weights {
            QuantisedWeights::Fixed { weights, .. } => Ok(dequantise(weights)),
            QuantisedWeights::Gaussian {
                mean, std, noise, weight, ..
            } => {
                let eps = fake_quant(&rng.gaussian::<T>(mean.shape()), &noise_params());
                let prod = fake_quant(&dequantise(std).mul(&eps)?, noise);
                Ok(fake_quant(&dequantise(mean).add(&prod)?, weight))
            }
        }
    }

    fn weights_integer(&self, l: &QuantisedLayer<T>, rng: &mut SeededRng, rm: RequantMode) -> Result<IntTensor<T>> {
        match &l.weights {
            QuantisedWeights::Fixed { weights, .. } => Ok(weights.clone()),
            QuantisedWeights::Gaussian {
                mean,
                std,
                noise,
                weight,
                noise_requant,
                mean_requant,
                product_requant,
                ..
            } => {
                let eps = quantise(&rng.gaussian::<T>(mean.shape()), &noise_params());
                let (zm, zs, zn, zw) = (
                    i64::from(mean.params().zero_point),
                    i64::from(std.params().zero_point),
                    i64::from(noise.zero_point),
                    i64::from(weight.zero_point),
                );
                let data = mean
                    .data()
                    .iter()
                    .zip(std.data())
                    .zip(eps.data())
                    .map(|((&qm, &qs), &qe)| {
                        let prod = (i64::from(qs) - zs) * i64::from(qe);
                        let qp = (zn + noise_requant.apply(prod, rm))
                            .clamp(i64::from(noise.qmin()), i64::from(noise.qmax()));
                        let sum = apply_sum(&[(i64::from(qm) - zm, mean_requant), (qp - zn, product_requant)], rm);
                        (zw + sum).clamp(i64::from(weight.qmin()), i64::from(weight.qmax())) as i32
                    })
                    .collect();
                IntTensor::new(mean.shape().to_vec(), data, *weight)
            }
        }
    }

    /// One pass; returns the real-valued output.
    pub fn forward(&self, x: &Tensor<T>, rng: &mut SeededRng, mode: ExecMode) -> Result<Tensor<T>> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(shape_err(
                "quantised forward",
                format!("input {:?} for a network taking {} features", x.shape(), self.input_dim()),
            ));
        }
        match mode {
            ExecMode::Simulated => self.forward_simulated(x, rng),
            ExecMode::Integer(rm) => Ok(dequantise(&self.forward_integer(&quantise(x, &self.input_params), rng, rm)?)),
        }
    }

    fn forward_simulated(&self, x: &Tensor<T>, rng: &mut SeededRng) -> Result<Tensor<T>> {
        let mut h = fake_quant(x, &self.input_params);
        for l in &self.layers {
            let xin = match &l.mask {
                Some(m) => {
                    let keep = T::one() / T::of(1.0 - m.drop);
                    let factor = rng.bernoulli_mask::<T>(h.shape(), m.drop)?.scale(keep);
                    fake_quant(&h.mul(&factor)?, &m.params)
                }
                None => h,
            };
            let w = self.weights_simulated(l, rng)?;
            let acc = l.input_params.scale.as_f64() * l.weight_params().scale.as_f64();
            let bias = Tensor::new(
                vec![l.fused_bias().len()],
                l.fused_bias().iter().map(|&b| T::of(f64::from(b) * acc)).collect(),
            )?;
            let mut z = xin.matmul(&w)?.add_row(&bias)?;
            if l.relu {
                z = z.relu();
            }
            h = fake_quant(&z, &l.output_params);
        }
        Ok(h)
    }

    /// Integer pass from a quantised input to the quantised output.
    pub fn forward_integer(&self, q: &IntTensor<T>, rng: &mut SeededRng, rm: RequantMode) -> Result<IntTensor<T>> {
        if q.params() != &self.input_params {
            return Err(Error::State("input is not on the network input grid".into()));
        }
        let mut q = q.clone();
        for l in &self.layers {
            let qx = match &l.mask {
                Some(m) => mask_integer(&q, m, rng, rm)?,
                None => q,
            };
            q = match &l.weights {
                QuantisedWeights::Fixed { weights, offline } => {
                    quantised_matmul(&qx, weights, offline, &l.requant, rm, &l.output_params, l.relu)?
                }
                QuantisedWeights::Gaussian {
                    const_term, fused_bias, ..
                } => {
                    let qw = self.weights_integer(l, rng, rm)?;
                    let off = OfflineConstants {
                        col_sums_w: column_sums(&qw)?,
                        const_term: *const_term,
                        fused_bias: fused_bias.clone(),
                        inner: qw.rows(),
                        input_zero_point: l.input_params.zero_point,
                        weight_zero_point: qw.params().zero_point,
                    };
                    quantised_matmul(&qx, &qw, &off, &l.requant, rm, &l.output_params, l.relu)?
                }
            };
        }
        Ok(q)
    }
}

/// Integer dropout: dropped entries become the zero-point of the masked
/// grid, kept entries are requantised by the fused `1/(1-p)` factor.
pub fn mask_integer<T: Scalar>(
    q: &IntTensor<T>,
    m: &MaskStage<T>,
    rng: &mut SeededRng,
    rm: RequantMode,
) -> Result<IntTensor<T>> {
    if q.params() != &m.source {
        return Err(Error::State("mask input is not on the expected grid".into()));
    }
    let keep = rng.bernoulli_mask::<T>(q.shape(), m.drop)?;
    let (zs, zx) = (i64::from(m.source.zero_point), i64::from(m.params.zero_point));
    let (lo, hi) = (i64::from(m.params.qmin()), i64::from(m.params.qmax()));
    let data = q
        .data()
        .iter()
        .zip(keep.data())
        .map(|(&v, &k)| {
            if k == T::zero() {
                zx as i32
            } else {
                (zx + m.requant.apply(i64::from(v) - zs, rm)).clamp(lo, hi) as i32
            }
        })
        .collect();
    IntTensor::new(q.shape().to_vec(), data, m.params)
}
