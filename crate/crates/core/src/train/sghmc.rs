//! Stochastic gradient Hamiltonian Monte Carlo.
//!
//! Update with step size `eta`, friction `C` and no gradient-noise estimate:
//!
//! ```text
//! v <- v - eta * grad U(w) - C v + N(0, 2 C eta)
//! w <- w + v
//! ```
//!
//! Without noise this is momentum SGD with momentum `1 - C` and rate `eta`.

use serde::{Deserialize, Serialize};

use crate::bayes::network::{Gradients, Network};
use crate::bayes::SghmcEnsemble;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::optim::check_grads;

#[derive(Clone, Debug)]
pub struct SghmcState<T> {
    pub step_size: f64,
    pub friction: f64,
    /// Multiplies the injected noise; `0` turns the sampler into momentum SGD.
    pub noise_scale: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SghmcState<T> {
    pub fn new(step_size: f64, friction: f64, noise_scale: f64) -> Result<Self> {
        if !(step_size > 0.0) || !(0.0..=1.0).contains(&friction) || noise_scale < 0.0 {
            return Err(Error::Parameter(format!(
                "invalid SGHMC settings step={step_size} friction={friction} noise={noise_scale}"
            )));
        }
        if friction == 0.0 && noise_scale > 0.0 {
            return Err(Error::Parameter("noise injection requires positive friction".into()));
        }
        Ok(Self {
            step_size,
            friction,
            noise_scale,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }
}

pub fn sghmc_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut SghmcState<T>,
    rng: &mut SeededRng,
) -> Result<()> {
    check_grads(params, grads)?;
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    }
    let eta = T::of(state.step_size);
    let c = T::of(state.friction);
    let noise = (2.0 * state.friction * state.step_size).sqrt() * state.noise_scale;
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let xi = if noise > 0.0 { T::of(noise * rng.normal()) } else { T::zero() };
            *vi = *vi - eta * gi - c * *vi + xi;
            *w += *vi;
        }
    }
    Ok(())
}

/// When snapshots are taken along a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SghmcSchedule {
    pub burn_in: usize,
    pub thinning: usize,
    pub samples: usize,
    /// Step budget; `burn_in + samples * thinning` must fit in it.
    pub run_length: usize,
}

impl SghmcSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.thinning == 0 {
            return Err(Error::Parameter("SGHMC needs at least one sample and a positive thinning interval".into()));
        }
        let needed = self.burn_in + self.samples * self.thinning;
        if needed > self.run_length {
            return Err(Error::Parameter(format!(
                "schedule needs {needed} steps but the run has {}",
                self.run_length
            )));
        }
        Ok(())
    }

    /// Steps actually taken.
    pub fn steps(&self) -> usize {
        self.burn_in + self.samples * self.thinning
    }
}

/// Runs the sampler from `net` and collects `schedule.samples` deep copies,
/// one after every `thinning` steps past burn-in. `grad` returns a
/// minibatch estimate of the gradient of the potential.
pub fn collect_sghmc_samples<T, G>(
    net: &Network<T>,
    mut grad: G,
    state: &mut SghmcState<T>,
    schedule: &SghmcSchedule,
    rng: &mut SeededRng,
) -> Result<SghmcEnsemble<T>>
where
    T: Scalar,
    G: FnMut(&Network<T>, usize, &mut SeededRng) -> Result<Gradients<T>>,
{
    schedule.validate()?;
    let mut current = net.clone();
    let mut members = Vec::with_capacity(schedule.samples);
    for step in 1..=schedule.steps() {
        let g = grad(&current, step, rng)?;
        let grads = g.tensors();
        sghmc_step(&mut current.params_mut(), &grads, state, rng)?;
        if step > schedule.burn_in && (step - schedule.burn_in).is_multiple_of(schedule.thinning) {
            members.push(current.clone());
        }
    }
    SghmcEnsemble::new(members)
}
