//! Integer-only linear layer.
//!
//! With `f = S (q - Z)` substituted into `f_o = f_i f_w`, each output is
//!
//! ```text
//! q_o = Z_o + (S_w S_i / S_o) * (M Z_w Z_i - Z_i sum_m q_w - Z_w sum_m q_i + q_i q_w + b_q)
//! ```
//!
//! where the weight column sums, the constant `M Z_w Z_i` and the bias
//! `b_q = round(b / (S_w S_i))` do not depend on the input and are computed
//! once when the layer is finalised.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::quant::fixed_point::{RequantMode, Requantiser};
use crate::quant::params::{IntTensor, QuantParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input-independent terms of the integer matmul.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfflineConstants {
    /// Per output column `sum_m q_w[m, f]`.
    pub col_sums_w: Vec<i32>,
    /// `M * Z_w * Z_i`.
    pub const_term: i32,
    /// Bias in accumulator scale `S_w S_i` with zero offset.
    pub fused_bias: Vec<i32>,
    /// Inner dimension `M`.
    pub inner: usize,
    /// Zero-points the constants were computed for.
    pub input_zero_point: i32,
    pub weight_zero_point: i32,
}

/// Narrows a 64-bit intermediate to the 32-bit accumulator.
///
/// Accumulation is carried in 64 bits and checked once per output. Because
/// two's-complement wrapping is associative this gives the same value a
/// 32-bit accumulator would whenever the final sum fits. Overflow is a hard
/// error in debug builds and saturates in release builds.
#[inline]
pub(crate) fn narrow_acc(v: i64, op: &'static str) -> Result<i32> {
    match i32::try_from(v) {
        Ok(x) => Ok(x),
        Err(_) if cfg!(debug_assertions) => Err(Error::Overflow(op)),
        Err(_) => Ok(v.clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32),
    }
}

/// Per-column sums of an `M x F` integer weight matrix.
pub fn column_sums<T: Scalar>(qw: &IntTensor<T>) -> Result<Vec<i32>> {
    let f = qw.cols();
    let mut sums = vec![0i64; f];
    for m in 0..qw.rows() {
        for (s, &q) in sums.iter_mut().zip(qw.row(m)) {
            *s += i64::from(q);
        }
    }
    sums.into_iter().map(|s| narrow_acc(s, "column sums")).collect()
}

/// Bias requantised into the accumulator scale `S_w S_i`.
pub fn fuse_bias<T: Scalar>(bias: &Tensor<T>, in_params: &QuantParams<T>, w_params: &QuantParams<T>) -> Result<Vec<i32>> {
    let acc_scale = in_params.scale.as_f64() * w_params.scale.as_f64();
    bias.data()
        .iter()
        .map(|b| {
            let v = (b.as_f64() / acc_scale).round();
            if v.abs() > f64::from(i32::MAX) {
                Err(Error::Overflow("bias fusion"))
            } else {
                Ok(v as i32)
            }
        })
        .collect()
}

/// Float-path counterpart of [`fuse_bias`]: the bias rounded onto the
/// accumulator grid and returned in real units.
pub fn fake_quant_bias<T: Scalar>(bias: &Tensor<T>, in_params: &QuantParams<T>, w_params: &QuantParams<T>) -> Tensor<T> {
    let acc_scale = in_params.scale.as_f64() * w_params.scale.as_f64();
    bias.map(|b| T::of((b.as_f64() / acc_scale).round() * acc_scale))
}

pub fn precompute_offline<T: Scalar>(
    qw: &IntTensor<T>,
    in_params: &QuantParams<T>,
    bias: Option<&Tensor<T>>,
) -> Result<OfflineConstants> {
    let w_params = qw.params();
    let (m, f) = (qw.rows(), qw.cols());
    let fused_bias = match bias {
        Some(b) if b.len() != f => {
            return Err(shape_err(
                "precompute_offline",
                format!("bias of {} for {f} output columns", b.len()),
            ))
        }
        Some(b) => fuse_bias(b, in_params, w_params)?,
        None => vec![0; f],
    };
    let const_term = narrow_acc(
        m as i64 * i64::from(w_params.zero_point) * i64::from(in_params.zero_point),
        "offline constant",
    )?;
    Ok(OfflineConstants {
        col_sums_w: column_sums(qw)?,
        const_term,
        fused_bias,
        inner: m,
        input_zero_point: in_params.zero_point,
        weight_zero_point: w_params.zero_point,
    })
}

/// Integer matmul of `qi (I x M)` and `qw (M x F)` producing `q_o` under
/// `out_params`. With `relu` set the lower clamp is raised to `Z_o`, which
/// fuses a following ReLU.
pub fn quantised_matmul<T: Scalar>(
    qi: &IntTensor<T>,
    qw: &IntTensor<T>,
    off: &OfflineConstants,
    requant: &Requantiser,
    mode: RequantMode,
    out_params: &QuantParams<T>,
    relu: bool,
) -> Result<IntTensor<T>> {
    let (rows, m, f) = (qi.rows(), qi.cols(), qw.cols());
    if qw.rows() != m || off.inner != m || off.col_sums_w.len() != f || off.fused_bias.len() != f {
        return Err(shape_err(
            "quantised_matmul",
            format!(
                "input {:?}, weights {:?}, constants for M={} F={}",
                qi.shape(),
                qw.shape(),
                off.inner,
                off.col_sums_w.len()
            ),
        ));
    }
    let z_i = qi.params().zero_point;
    let z_w = qw.params().zero_point;
    if z_i != off.input_zero_point || z_w != off.weight_zero_point {
        return Err(Error::State(format!(
            "offline constants computed for zero-points ({}, {}), got ({z_i}, {z_w})",
            off.input_zero_point, off.weight_zero_point
        )));
    }
    let z_o = out_params.zero_point;
    let lo = if relu { out_params.qmin().max(z_o) } else { out_params.qmin() };
    let hi = out_params.qmax();

    let mut out = Vec::with_capacity(rows * f);
    let mut acc = vec![0i64; f];
    for i in 0..rows {
        let row = qi.row(i);
        acc.iter_mut().for_each(|a| *a = 0);
        let mut row_sum = 0i64;
        for (k, &a) in row.iter().enumerate() {
            row_sum += i64::from(a);
            let a = i64::from(a);
            for (s, &w) in acc.iter_mut().zip(qw.row(k)) {
                *s += a * i64::from(w);
            }
        }
        let row_term = i64::from(z_w) * row_sum;
        for ((&dot, &cs), &b) in acc.iter().zip(&off.col_sums_w).zip(&off.fused_bias) {
            let total = i64::from(off.const_term) - i64::from(z_i) * i64::from(cs) - row_term + dot + i64::from(b);
            let total = narrow_acc(total, "quantised_matmul")?;
            let q = i64::from(z_o) + requant.apply(i64::from(total), mode);
            out.push(q.clamp(i64::from(lo), i64::from(hi)) as i32);
        }
    }
    Ok(IntTensor::from_parts_unchecked(vec![rows, f], out, *out_params))
}

/// A finalised integer linear layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct QuantisedLinear<T> {
    pub weights: IntTensor<T>,
    pub offline: OfflineConstants,
    pub input_params: QuantParams<T>,
    pub output_params: QuantParams<T>,
    pub requant: Requantiser,
    pub relu: bool,
}

impl<T: Scalar> QuantisedLinear<T> {
    pub fn new(
        weights: IntTensor<T>,
        bias: Option<&Tensor<T>>,
        input_params: QuantParams<T>,
        output_params: QuantParams<T>,
        relu: bool,
    ) -> Result<Self> {
        let offline = precompute_offline(&weights, &input_params, bias)?;
        let requant = Requantiser::new(
            weights.params().scale.as_f64() * input_params.scale.as_f64() / output_params.scale.as_f64(),
        )?;
        Ok(Self {
            weights,
            offline,
            input_params,
            output_params,
            requant,
            relu,
        })
    }

    pub fn forward(&self, qi: &IntTensor<T>, mode: RequantMode) -> Result<IntTensor<T>> {
        quantised_matmul(
            qi,
            &self.weights,
            &self.offline,
            &self.requant,
            mode,
            &self.output_params,
            self.relu,
        )
    }
}
