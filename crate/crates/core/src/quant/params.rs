use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 8;

/// Scale, zero-point and grid of a uniform affine quantiser: `f = S (q - Z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct QuantParams<T> {
    pub scale: T,
    pub zero_point: i32,
    pub bits: u32,
    pub signed: bool,
}

/// Integer grid bounds for `bits` and signedness.
pub fn grid(bits: u32, signed: bool) -> (i32, i32) {
    if signed {
        (-(1 << (bits - 1)), (1 << (bits - 1)) - 1)
    } else {
        (0, (1 << bits) - 1)
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "bit-width must lie in [{MIN_BITS}, {MAX_BITS}], got {bits}"
        )))
    }
}

impl<T: Scalar> QuantParams<T> {
    pub fn new(scale: T, zero_point: i32, bits: u32, signed: bool) -> Result<Self> {
        check_bits(bits)?;
        if !(scale > T::zero() && scale.is_finite()) {
            return Err(Error::Parameter(format!("scale must be positive, got {scale}")));
        }
        let (lo, hi) = grid(bits, signed);
        if !(lo..=hi).contains(&zero_point) {
            return Err(Error::Parameter(format!(
                "zero-point {zero_point} outside [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            scale,
            zero_point,
            bits,
            signed,
        })
    }

    /// Derives parameters from a clamping range `[a, b]`.
    ///
    /// The range is first widened to contain 0, then `S = (b - a) / (2^n - 1)`
    /// and `Z = qmin + round(-a / S)`, clamped to the grid. Because `Z` is an
    /// integer, real 0 always lands exactly on a grid point. A zero-width range
    /// (only possible for an all-zero tensor) uses `S = 1`.
    pub fn from_range(a: T, b: T, bits: u32, signed: bool) -> Result<Self> {
        check_bits(bits)?;
        if !(a.is_finite() && b.is_finite()) || a > b {
            return Err(Error::Parameter(format!("invalid clamping range [{a}, {b}]")));
        }
        let a = a.min(T::zero());
        let b = b.max(T::zero());
        let (qmin, qmax) = grid(bits, signed);
        let levels = T::from_int(i64::from(qmax - qmin));
        let width = b - a;
        let scale = if width > T::zero() && (width / levels) > T::min_positive_value() {
            width / levels
        } else {
            T::one()
        };
        let z = (-a / scale).round().as_f64() + f64::from(qmin);
        let zero_point = z.clamp(f64::from(qmin), f64::from(qmax)) as i32;
        Self::new(scale, zero_point, bits, signed)
    }

    pub fn qmin(&self) -> i32 {
        grid(self.bits, self.signed).0
    }

    pub fn qmax(&self) -> i32 {
        grid(self.bits, self.signed).1
    }

    /// Real interval the grid covers, `[S (qmin - Z), S (qmax - Z)]`.
    pub fn real_range(&self) -> (T, T) {
        (
            self.dequantise_value(self.qmin()),
            self.dequantise_value(self.qmax()),
        )
    }

    /// `clamp(round(f / S) + Z)`, rounding half away from zero.
    #[inline]
    pub fn quantise_value(&self, f: T) -> i32 {
        let q = (f / self.scale).round().as_f64() + f64::from(self.zero_point);
        let q = if q.is_nan() { f64::from(self.zero_point) } else { q };
        q.clamp(f64::from(self.qmin()), f64::from(self.qmax())) as i32
    }

    #[inline]
    pub fn dequantise_value(&self, q: i32) -> T {
        self.scale * T::from_int(i64::from(q) - i64::from(self.zero_point))
    }

    /// Whether `f` lies inside the representable range (the STE pass-through set).
    #[inline]
    pub fn in_range(&self, f: T) -> bool {
        let (lo, hi) = self.real_range();
        f >= lo && f <= hi
    }

    pub fn cast<U: Scalar>(&self) -> QuantParams<U> {
        QuantParams {
            scale: U::of(self.scale.as_f64()),
            zero_point: self.zero_point,
            bits: self.bits,
            signed: self.signed,
        }
    }
}

/// Integer tensor together with the parameters that give it meaning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct IntTensor<T> {
    shape: Vec<usize>,
    data: Vec<i32>,
    params: QuantParams<T>,
}

impl<T: Scalar> IntTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<i32>, params: QuantParams<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || n == 0 {
            return Err(Error::Shape {
                op: "IntTensor::new",
                detail: format!("shape {shape:?} with {} elements", data.len()),
            });
        }
        if let Some(q) = data
            .iter()
            .find(|&&q| q < params.qmin() || q > params.qmax())
        {
            return Err(Error::Parameter(format!(
                "integer {q} outside [{}, {}]",
                params.qmin(),
                params.qmax()
            )));
        }
        Ok(Self {
            shape,
            data,
            params,
        })
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<i32>, params: QuantParams<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            params,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn params(&self) -> &QuantParams<T> {
        &self.params
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 1 {
            self.shape[0]
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[i32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

pub fn quantise<T: Scalar>(t: &Tensor<T>, params: &QuantParams<T>) -> IntTensor<T> {
    IntTensor {
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|&f| params.quantise_value(f)).collect(),
        params: *params,
    }
}

pub fn dequantise<T: Scalar>(q: &IntTensor<T>) -> Tensor<T> {
    Tensor::new(
        q.shape.clone(),
        q.data.iter().map(|&v| q.params.dequantise_value(v)).collect(),
    )
    .expect("IntTensor shape is valid")
}
