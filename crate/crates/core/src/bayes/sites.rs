//! Simulated-quantisation (SQ) sites and their placement in a network.
//!
//! Every tensor that an integer kernel consumes gets exactly one site:
//!
//! * the network input;
//! * per layer, the weights (for Gaussian layers: the mean, the positive
//!   standard deviation, the noise product and the sampled weight);
//! * per MC-dropout layer, the masked-and-rescaled input;
//! * per layer, the activation output (after the fused ReLU on hidden layers).
//!
//! Weight-like sites use signed grids of `bits_w`; activation sites use
//! unsigned grids of `bits_a`.

use serde::{Deserialize, Serialize};

use crate::bayes::network::{Network, Weights};
use crate::error::{Error, Result};
use crate::quant::{fake_quant, ste_mask, QuantParams, RangeObserver};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Site<T> {
    pub observer: RangeObserver<T>,
    pub bits: u32,
    pub signed: bool,
    pub params: Option<QuantParams<T>>,
}

impl<T: Scalar> Site<T> {
    pub fn new(bits: u32, signed: bool, momentum: T) -> Result<Self> {
        Ok(Self {
            observer: RangeObserver::new(momentum)?,
            bits,
            signed,
            params: None,
        })
    }

    /// Fake-quantises `t`. With `observe` set the observer first records `t`
    /// and the parameters are re-derived from the updated range; otherwise
    /// the current (frozen) parameters are used.
    pub fn apply(&mut self, t: &Tensor<T>, observe: bool) -> Result<(Tensor<T>, Tensor<T>)> {
        if observe {
            self.observer.observe(t)?;
            self.params = Some(self.observer.derive_params(self.bits, self.signed)?);
        }
        let p = self.params()?;
        Ok((fake_quant(t, &p), ste_mask(t, &p)))
    }

    pub fn params(&self) -> Result<QuantParams<T>> {
        self.params
            .ok_or_else(|| Error::State("quantisation site has no parameters yet".into()))
    }

    /// Re-derives parameters from the observer's final range.
    pub fn freeze(&mut self) -> Result<QuantParams<T>> {
        let p = self.observer.derive_params(self.bits, self.signed)?;
        self.params = Some(p);
        Ok(p)
    }
}

/// Sites attached to one layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct LayerSites<T> {
    /// Masked, rescaled input (MC dropout layers only).
    pub mask: Option<Site<T>>,
    /// Effective weight entering the matmul.
    pub weight: Site<T>,
    /// Gaussian layers: mean, positive standard deviation, noise product.
    pub mean: Option<Site<T>>,
    pub std: Option<Site<T>>,
    pub noise: Option<Site<T>>,
    pub output: Site<T>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct NetSites<T> {
    pub input: Site<T>,
    pub layers: Vec<LayerSites<T>>,
    pub bits_w: u32,
    pub bits_a: u32,
}

impl<T: Scalar> NetSites<T> {
    pub fn for_network(net: &Network<T>, bits_w: u32, bits_a: u32, momentum: T) -> Result<Self> {
        let w = || Site::new(bits_w, true, momentum);
        let a = || Site::new(bits_a, false, momentum);
        let mut layers = Vec::with_capacity(net.layers.len());
        for layer in &net.layers {
            let gaussian = matches!(layer.weights, Weights::Gaussian { .. });
            layers.push(LayerSites {
                mask: if layer.dropout > 0.0 { Some(a()?) } else { None },
                weight: w()?,
                mean: if gaussian { Some(w()?) } else { None },
                std: if gaussian { Some(w()?) } else { None },
                noise: if gaussian { Some(w()?) } else { None },
                output: a()?,
            });
        }
        Ok(Self {
            input: a()?,
            layers,
            bits_w,
            bits_a,
        })
    }

    /// Freezes every site at its observer's final range.
    pub fn freeze(&mut self) -> Result<()> {
        self.input.freeze()?;
        for l in &mut self.layers {
            for site in [
                l.mask.as_mut(),
                Some(&mut l.weight),
                l.mean.as_mut(),
                l.std.as_mut(),
                l.noise.as_mut(),
                Some(&mut l.output),
            ]
            .into_iter()
            .flatten()
            {
                site.freeze()?;
            }
        }
        Ok(())
    }

    /// `(name, a, b)` for every initialised observer, for logging.
    pub fn snapshot(&self) -> Vec<(String, f64, f64)> {
        let mut out = Vec::new();
        let mut push = |name: String, s: &Site<T>| {
            if let Some((a, b)) = s.observer.range() {
                out.push((name, a.as_f64(), b.as_f64()));
            }
        };
        push("input".into(), &self.input);
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(s) = &l.mask {
                push(format!("layer{i}.mask"), s);
            }
            if let Some(s) = &l.mean {
                push(format!("layer{i}.mean"), s);
            }
            if let Some(s) = &l.std {
                push(format!("layer{i}.std"), s);
            }
            if let Some(s) = &l.noise {
                push(format!("layer{i}.noise"), s);
            }
            push(format!("layer{i}.weight"), &l.weight);
            push(format!("layer{i}.output"), &l.output);
        }
        out
    }
}
