//! First-order optimisers over lists of parameter tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn check_grads<T: Scalar>(params: &[&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Structure(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "optimiser step",
                detail: format!("parameter {i} is {:?}, gradient {:?}", p.shape(), g.shape()),
            });
        }
        let bad = g.data().iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::Training(format!(
                "non-finite gradient: {bad} of {} entries in parameter tensor {i} {:?}",
                g.len(),
                g.shape()
            )));
        }
    }
    Ok(())
}

fn zeros_like<T: Scalar>(params: &[&mut Tensor<T>]) -> Vec<Tensor<T>> {
    params.iter().map(|p| Tensor::zeros(p.shape())).collect()
}

/// Classical momentum: `v <- mu v - lr g`, `w <- w + v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if lr < 0.0 || !(0.0..=1.0).contains(&momentum) {
            return Err(Error::Parameter(format!("invalid SGD settings lr={lr} momentum={momentum}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay: 0.0,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }
}

/// One step of [`Sgd`].
pub fn sgd_step<T: Scalar>(params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], state: &mut Sgd<T>) -> Result<()> {
    check_grads(params, grads)?;
    if state.velocity.is_empty() {
        state.velocity = zeros_like(params);
    }
    let (lr, mu, wd) = (T::of(state.lr), T::of(state.momentum), T::of(state.weight_decay));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi - lr * (gi + wd * *w);
            *w += *vi;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr >= 0.0) {
            return Err(Error::Parameter(format!("invalid Adam learning rate {lr}")));
        }
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        check_grads(params, grads)?;
        if self.m.is_empty() {
            self.m = zeros_like(params);
            self.v = zeros_like(params);
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (lr, eps, wd) = (T::of(self.lr), T::of(self.eps), T::of(self.weight_decay));
        let (c1, c2) = (T::of(c1), T::of(c2));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi + wd * *w;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(w: &Tensor<f64>) -> (f64, Tensor<f64>) {
        // 0.5 * sum a_i w_i^2 with a = 1..n
        let a = Tensor::from_fn(w.shape(), |i| (i + 1) as f64);
        let loss = w.data().iter().zip(a.data()).map(|(x, a)| 0.5 * a * x * x).sum();
        (loss, w.mul(&a).unwrap())
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = Tensor::from_rows(&[vec![1.0f64, -2.0]]);
        let g = Tensor::zeros(&[1, 2]);
        let mut s = Sgd::new(0.1, 0.9).unwrap();
        sgd_step(&mut [&mut w], &[&g], &mut s).unwrap();
        assert_eq!(w.data(), &[1.0, -2.0]);
    }

    #[test]
    fn unit_rate_subtracts_gradient() {
        let mut w = Tensor::from_rows(&[vec![1.0f64, -2.0]]);
        let g = Tensor::from_rows(&[vec![0.25f64, 0.5]]);
        let mut s = Sgd::new(1.0, 0.0).unwrap();
        sgd_step(&mut [&mut w], &[&g], &mut s).unwrap();
        assert_eq!(w.data(), &[0.75, -2.5]);
    }

    #[test]
    fn descends_a_quadratic_bowl() {
        let mut w = Tensor::from_rows(&[vec![1.0f64, -2.0, 0.5, 3.0]]);
        let mut s = Sgd::new(0.05, 0.5).unwrap();
        let mut prev = bowl(&w).0;
        for _ in 0..100 {
            let (_, g) = bowl(&w);
            sgd_step(&mut [&mut w], &[&g], &mut s).unwrap();
            let now = bowl(&w).0;
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn adam_descends() {
        let mut w = Tensor::from_rows(&[vec![1.0f64, -2.0, 0.5, 3.0]]);
        let mut opt = Adam::new(0.05).unwrap();
        let start = bowl(&w).0;
        for _ in 0..200 {
            let (_, g) = bowl(&w);
            opt.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert!(bowl(&w).0 < 1e-2 * start);
    }

    #[test]
    fn nan_gradient_is_a_training_error() {
        let mut w = Tensor::from_rows(&[vec![1.0f64, 2.0]]);
        let g = Tensor::from_rows(&[vec![f64::NAN, 0.0]]);
        let mut s = Sgd::new(0.1, 0.0).unwrap();
        let err = sgd_step(&mut [&mut w], &[&g], &mut s).unwrap_err();
        assert!(matches!(err, Error::Training(ref m) if m.contains("1 of 2")));
        assert_eq!(w.data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut w = Tensor::<f64>::zeros(&[2, 2]);
        let g = Tensor::zeros(&[4]);
        let mut s = Sgd::new(0.1, 0.0).unwrap();
        assert!(sgd_step(&mut [&mut w], &[&g], &mut s).is_err());
    }
}
