//! Simulated quantisation for training: round-and-dequantise forward,
//! straight-through backward.

use crate::quant::params::QuantParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `dequantise(quantise(t))` elementwise.
pub fn fake_quant<T: Scalar>(t: &Tensor<T>, p: &QuantParams<T>) -> Tensor<T> {
    t.map(|f| p.dequantise_value(p.quantise_value(f)))
}

/// Diagonal of the straight-through Jacobian: 1 where `t` lies inside the
/// representable range, 0 where the forward pass saturates.
pub fn ste_mask<T: Scalar>(t: &Tensor<T>, p: &QuantParams<T>) -> Tensor<T> {
    t.map(|f| if p.in_range(f) { T::one() } else { T::zero() })
}

/// Backward pass of [`fake_quant`]: passes `upstream` through on the
/// non-saturated set and zeroes it elsewhere.
pub fn fake_quant_grad<T: Scalar>(t: &Tensor<T>, upstream: &Tensor<T>, p: &QuantParams<T>) -> Tensor<T> {
    t.zip_map(upstream, |f, g| if p.in_range(f) { g } else { T::zero() })
        .expect("gradient shape matches input shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_are_fixed() {
        let p = QuantParams::new(0.25f64, 3, 4, false).unwrap();
        let on_grid = Tensor::from_fn(&[16], |q| p.dequantise_value(q as i32));
        assert_eq!(fake_quant(&on_grid, &p), on_grid);
    }

    #[test]
    fn straight_through_gradient() {
        let p = QuantParams::from_range(-1.0f64, 2.0, 8, false).unwrap();
        let (_, b) = p.real_range();
        let t = Tensor::new(vec![4], vec![-0.5, 0.0, 1.3, b + 1.0]).unwrap();
        let g = fake_quant_grad(&t, &Tensor::ones(&[4]), &p);
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, 0.0]);
        assert_eq!(ste_mask(&t, &p), g);
    }
}
