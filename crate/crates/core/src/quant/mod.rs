//! Uniform affine quantisation: range observers, parameter derivation,
//! simulated (fake) quantisation and the integer matmul kernel.

pub mod fake;
pub mod fixed_point;
pub mod kernel;
pub mod observer;
pub mod params;

pub use fake::{fake_quant, fake_quant_grad, ste_mask};
pub use fixed_point::{FixedPointMultiplier, RequantMode, Requantiser};
pub use kernel::{fake_quant_bias, precompute_offline, quantised_matmul, OfflineConstants, QuantisedLinear};
pub use observer::{RangeObserver, DEFAULT_MOMENTUM};
pub use params::{dequantise, grid, quantise, IntTensor, QuantParams};

/// The fixed grid for integer Gaussian noise: `S = 0.0236`, `Z = 0`, 8-bit
/// signed, covering roughly `[-3.02, 3.00]`.
pub const NOISE_SCALE: f64 = 0.0236;
pub const NOISE_BITS: u32 = 8;

pub fn noise_params<T: crate::Scalar>() -> QuantParams<T> {
    QuantParams::new(T::of(NOISE_SCALE), 0, NOISE_BITS, true).expect("fixed noise grid is valid")
}
