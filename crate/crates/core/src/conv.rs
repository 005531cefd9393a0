//! Valid (unpadded, stride-1) 2-D convolution lowered to matrix products via
//! im2col, so the integer path reuses [`QuantisedLinear`].
//!
//! Activations are `[N, C, H, W]`; filters `[C_out, C_in, KH, KW]`.

use crate::error::{shape_err, Result};
use crate::quant::{IntTensor, QuantisedLinear, RequantMode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims4(shape: &[usize], op: &'static str) -> Result<[usize; 4]> {
    match shape {
        &[a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(shape_err(op, format!("expected 4 dimensions, got {shape:?}"))),
    }
}

fn patch_gather<X: Copy>(data: &[X], dims: [usize; 4], kh: usize, kw: usize) -> Result<(Vec<X>, usize, usize)> {
    let [n, c, h, w] = dims;
    if kh > h || kw > w {
        return Err(shape_err("im2col", format!("kernel {kh}x{kw} larger than image {h}x{w}")));
    }
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let mut out = Vec::with_capacity(n * ho * wo * c * kh * kw);
    for b in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                for ch in 0..c {
                    for dy in 0..kh {
                        let base = ((b * c + ch) * h + y + dy) * w + x;
                        out.extend_from_slice(&data[base..base + kw]);
                    }
                }
            }
        }
    }
    Ok((out, ho, wo))
}

/// Rows are output positions `(n, y, x)`, columns are `(c, dy, dx)`.
pub fn im2col<T: Scalar>(x: &Tensor<T>, kh: usize, kw: usize) -> Result<Tensor<T>> {
    let dims = dims4(x.shape(), "im2col")?;
    let (data, ho, wo) = patch_gather(x.data(), dims, kh, kw)?;
    Tensor::new(vec![dims[0] * ho * wo, dims[1] * kh * kw], data)
}

/// Filters `[C_out, C_in, KH, KW]` as an `(C_in KH KW) x C_out` matrix.
pub fn filters_as_matrix<T: Scalar>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let [co, ci, kh, kw] = dims4(w.shape(), "filters_as_matrix")?;
    Tensor::new(vec![co, ci * kh * kw], w.data().to_vec())?.transpose()
}

/// `[N * HO * WO, C_out]` rows back to `[N, C_out, HO, WO]`.
fn rows_to_nchw<X: Copy + Default>(rows: &[X], n: usize, co: usize, ho: usize, wo: usize) -> Vec<X> {
    let mut out = vec![X::default(); rows.len()];
    for b in 0..n {
        for p in 0..ho * wo {
            for c in 0..co {
                out[(b * co + c) * ho * wo + p] = rows[(b * ho * wo + p) * co + c];
            }
        }
    }
    out
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let [n, ci, h, wd] = dims4(x.shape(), "conv2d")?;
    let [co, ci2, kh, kw] = dims4(w.shape(), "conv2d")?;
    if ci != ci2 {
        return Err(shape_err("conv2d", format!("{ci} input channels vs filters for {ci2}")));
    }
    let cols = im2col(x, kh, kw)?;
    let mut rows = cols.matmul(&filters_as_matrix(w)?)?;
    if let Some(b) = bias {
        rows = rows.add_row(b)?;
    }
    let (ho, wo) = (h - kh + 1, wd - kw + 1);
    Tensor::new(vec![n, co, ho, wo], rows_to_nchw(rows.data(), n, co, ho, wo))
}

/// Integer convolution; `layer` holds the filters in matrix form (see
/// [`filters_as_matrix`]) and `kh x kw` gives their spatial extent.
pub fn quantised_conv2d<T: Scalar>(
    qx: &IntTensor<T>,
    layer: &QuantisedLinear<T>,
    kh: usize,
    kw: usize,
    mode: RequantMode,
) -> Result<IntTensor<T>> {
    let dims = dims4(qx.shape(), "quantised_conv2d")?;
    let (data, ho, wo) = patch_gather(qx.data(), dims, kh, kw)?;
    let cols = IntTensor::new(vec![dims[0] * ho * wo, dims[1] * kh * kw], data, *qx.params())?;
    let rows = layer.forward(&cols, mode)?;
    let co = rows.cols();
    let out = rows_to_nchw(rows.data(), dims[0], co, ho, wo);
    IntTensor::new(vec![dims[0], co, ho, wo], out, *rows.params())
}
