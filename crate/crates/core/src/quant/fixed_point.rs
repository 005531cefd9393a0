//! Integer realisation of real requantisation multipliers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A positive real `x` stored as `mantissa * 2^(-31 - right_shift)` with the
/// mantissa normalised to `[2^30, 2^31)`.
///
/// Multipliers of 1 or more are represented with a negative `right_shift`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointMultiplier {
    pub mantissa: i32,
    pub right_shift: i32,
}

/// Rounds `v / 2^shift` half away from zero.
#[inline]
pub fn rounding_shift(v: i128, shift: u32) -> i128 {
    if shift == 0 {
        return v;
    }
    if shift >= 126 {
        return 0;
    }
    let half = 1i128 << (shift - 1);
    if v >= 0 {
        (v + half) >> shift
    } else {
        -((-v + half) >> shift)
    }
}

impl FixedPointMultiplier {
    pub fn from_real(x: f64) -> Result<Self> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Parameter(format!(
                "requantisation multiplier must be positive and finite, got {x}"
            )));
        }
        // x = frac * 2^exp with frac in [0.5, 1)
        let mut exp = x.log2().floor() as i32 + 1;
        let mut frac = x / 2f64.powi(exp);
        while frac >= 1.0 {
            frac /= 2.0;
            exp += 1;
        }
        while frac < 0.5 {
            frac *= 2.0;
            exp -= 1;
        }
        let mut mantissa = (frac * 2f64.powi(31)).round() as i64;
        if mantissa == 1i64 << 31 {
            mantissa /= 2;
            exp += 1;
        }
        let right_shift = -exp;
        if right_shift < -31 {
            return Err(Error::Parameter(format!("multiplier {x} too large")));
        }
        Ok(Self {
            mantissa: mantissa as i32,
            right_shift,
        })
    }

    pub fn to_real(self) -> f64 {
        f64::from(self.mantissa) * 2f64.powi(-31 - self.right_shift)
    }

    /// `round(v * x)` half away from zero, in pure integer arithmetic.
    #[inline]
    pub fn apply(self, v: i64) -> i64 {
        let prod = i128::from(v) * i128::from(self.mantissa);
        let shift = 31 + self.right_shift;
        rounding_shift(prod, shift as u32) as i64
    }
}

/// How the real multiplier `S_w S_i / S_o` is applied to accumulators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequantMode {
    /// Mantissa and shift; the integer-only path.
    #[default]
    FixedPoint,
    /// Real-valued multiplier in `f64`, for comparison against the
    /// simulated float path.
    RealMultiplier,
}

/// A requantisation factor carrying both representations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Requantiser {
    pub real: f64,
    pub fixed: FixedPointMultiplier,
}

impl Requantiser {
    pub fn new(real: f64) -> Result<Self> {
        Ok(Self {
            real,
            fixed: FixedPointMultiplier::from_real(real)?,
        })
    }

    #[inline]
    pub fn apply(&self, v: i64, mode: RequantMode) -> i64 {
        match mode {
            RequantMode::FixedPoint => self.fixed.apply(v),
            RequantMode::RealMultiplier => (v as f64 * self.real).round() as i64,
        }
    }
}

/// `round(sum_k v_k * x_k)` over several fixed-point multipliers with a
/// single final rounding, so `a*x + b*y` rounds like the real-valued sum.
pub fn apply_sum(terms: &[(i64, &Requantiser)], mode: RequantMode) -> i64 {
    match mode {
        RequantMode::RealMultiplier => terms
            .iter()
            .map(|(v, r)| *v as f64 * r.real)
            .sum::<f64>()
            .round() as i64,
        RequantMode::FixedPoint => {
            // Align every term to a common exponent. Terms whose multiplier is
            // more than 2^48 smaller than the largest lose low bits first.
            let min_shift = terms.iter().map(|(_, r)| r.fixed.right_shift).min().unwrap_or(0);
            let max_shift = terms.iter().map(|(_, r)| r.fixed.right_shift).max().unwrap_or(0);
            let common = max_shift.min(min_shift + 48);
            let acc: i128 = terms
                .iter()
                .map(|(v, r)| {
                    let prod = i128::from(*v) * i128::from(r.fixed.mantissa);
                    let s = r.fixed.right_shift;
                    if s <= common {
                        prod << (common - s) as u32
                    } else {
                        rounding_shift(prod, (s - common) as u32)
                    }
                })
                .sum();
            rounding_shift(acc, (31 + common) as u32) as i64
        }
    }
}
