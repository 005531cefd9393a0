//! Training loops for the four methods and quantisation-aware fine-tuning.

pub mod fit;
pub mod log;
pub mod loss;
pub mod optim;
pub mod qat;
pub mod sghmc;

pub use fit::{train_model, FitReport, SghmcConfig, TrainConfig};
pub use log::{LogRecord, TrainLog};
pub use loss::{data_nll, elbo_loss, evaluate, kl_gaussian, kl_term, LossValue, Objective, Reduction};
pub use optim::{sgd_step, Adam, Sgd};
pub use qat::{qat_finetune, QatConfig, QatOutcome};
pub use sghmc::{collect_sghmc_samples, sghmc_step, SghmcSchedule, SghmcState};

use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inputs and targets. Regression targets are `N x 1`; classification
/// targets are one-hot `N x K`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData<T> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
}

impl<T: Scalar> TrainData<T> {
    pub fn new(x: Tensor<T>, y: Tensor<T>) -> Result<Self> {
        if x.shape().len() != 2 || y.shape().len() != 2 || x.rows() != y.rows() {
            return Err(shape_err(
                "TrainData",
                format!("inputs {:?} and targets {:?}", x.shape(), y.shape()),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shuffled minibatch index sets covering every row once; the last
    /// batch may be short.
    pub fn batch_indices(&self, batch_size: usize, rng: &mut SeededRng) -> Result<Vec<Vec<usize>>> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut idx);
        Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
    }

    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.x.select_rows(idx)?, self.y.select_rows(idx)?))
    }

    pub fn num_batches(&self, batch_size: usize) -> usize {
        self.len().div_ceil(batch_size.max(1))
    }
}
