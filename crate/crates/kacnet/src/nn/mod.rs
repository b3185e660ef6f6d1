//! Parameterized building blocks: projections, the recurrent cell, batch
//! normalization, the Adam optimizer and the weight regularizer.

mod adam;
mod batchnorm;
mod fc;
mod lstm;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use batchnorm::{BatchNorm, BoundBatchNorm, RunningStats};
pub use fc::{BoundFc, FcLayer};
pub use lstm::{BoundLstm, LstmCell};

use rand::Rng;

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::error::Result;

/// Uniform Xavier initialization for a `[rows × cols]` weight matrix
/// (fan_out = rows, fan_in = cols).
pub fn xavier_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = xavier_bound(cols, rows);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("xavier shape")
}

pub(crate) fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Sum of squared Frobenius norms of the given weight matrices. Biases are
/// excluded, so the value is invariant to them by construction.
pub fn l2_regularizer(tape: &mut Tape, weights: &[TensorId]) -> Result<TensorId> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for &w in weights {
        let sq = tape.mul(w, w)?;
        let s = tape.sum(sq);
        total = tape.add(total, s)?;
    }
    Ok(total)
}
