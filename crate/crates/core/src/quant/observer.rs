use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::params::QuantParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default EMA momentum for observers during quantisation-aware fine-tuning.
pub const DEFAULT_MOMENTUM: f64 = 0.01;

/// Running clamping range `[a, b]` aggregated by exponential moving average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct RangeObserver<T> {
    min: T,
    max: T,
    momentum: T,
    initialised: bool,
}

impl<T: Scalar> RangeObserver<T> {
    pub fn new(momentum: T) -> Result<Self> {
        if !(momentum > T::zero() && momentum <= T::one()) {
            return Err(Error::Parameter(format!(
                "observer momentum must lie in (0, 1], got {momentum}"
            )));
        }
        Ok(Self {
            min: T::zero(),
            max: T::zero(),
            momentum,
            initialised: false,
        })
    }

    pub fn is_initialised(&self) -> bool {
        self.initialised
    }

    /// Current `(a, b)`; `None` before the first observation.
    pub fn range(&self) -> Option<(T, T)> {
        self.initialised.then_some((self.min, self.max))
    }

    /// First call records `min(t), max(t)`; later calls apply
    /// `a <- (1 - m) a + m min(t)` and likewise for `b`.
    pub fn observe(&mut self, t: &Tensor<T>) -> Result<()> {
        if t.is_empty() {
            return Err(Error::Parameter("cannot observe an empty tensor".into()));
        }
        let (lo, hi) = (t.min(), t.max());
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Parameter("observed tensor has non-finite entries".into()));
        }
        if self.initialised {
            let m = self.momentum;
            self.min = (T::one() - m) * self.min + m * lo;
            self.max = (T::one() - m) * self.max + m * hi;
        } else {
            self.min = lo;
            self.max = hi;
            self.initialised = true;
        }
        Ok(())
    }

    pub fn derive_params(&self, bits: u32, signed: bool) -> Result<QuantParams<T>> {
        let (a, b) = self
            .range()
            .ok_or_else(|| Error::State("observer has not seen any data".into()))?;
        QuantParams::from_range(a, b, bits, signed)
    }
}
