//! Quantised Bayesian neural networks.
//!
//! Small multilayer perceptrons trained as Monte Carlo dropout, Bayes-by-Backprop
//! or SGHMC ensembles, fine-tuned with simulated quantisation and executed with
//! integer-only arithmetic. Numeric code is generic over [`Scalar`] (`f32` for
//! the forward passes, `f64` for gradient checks); the aliases below name the
//! common instantiations.

// Negated comparisons are used on purpose so that NaN settings are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod conv;
pub mod error;
pub mod metrics;
pub mod quant;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type QuantParams32 = quant::QuantParams<f32>;
pub type IntTensor32 = quant::IntTensor<f32>;
pub type Network32 = bayes::Network<f32>;
pub type Network64 = bayes::Network<f64>;
pub type BayesianModel32 = bayes::BayesianModel<f32>;
pub type QuantisedModel32 = bayes::QuantisedModel<f32>;
