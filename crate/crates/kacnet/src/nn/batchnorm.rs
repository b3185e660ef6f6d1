//! Batch normalization over the rows of a feature matrix.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::error::{Error, Result};

/// Learned scale/shift plus running statistics. Train mode normalizes by
/// batch statistics and folds them into the running averages; eval mode uses
/// the running statistics only.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub scale: Tensor,
    pub shift: Tensor,
    pub stats: RunningStats,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Copy, Clone)]
pub struct BoundBatchNorm {
    pub scale: TensorId,
    pub shift: TensorId,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            scale: Tensor::full(&[dim], 1.0),
            shift: Tensor::zeros(&[dim]),
            stats: RunningStats {
                mean: vec![0.0; dim],
                var: vec![1.0; dim],
            },
            momentum: 0.9,
            eps: 1e-5,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundBatchNorm {
        BoundBatchNorm {
            scale: tape.input(self.scale.clone(), trainable),
            shift: tape.input(self.shift.clone(), trainable),
        }
    }

    /// Normalize `x[rows × dim]` by batch statistics. Requires at least two
    /// rows and folds the batch statistics into the running averages.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        bound: &BoundBatchNorm,
        x: TensorId,
    ) -> Result<TensorId> {
        let rows = tape.value(x).shape()[0];
        if rows < 2 {
            return Err(Error::Contract(format!(
                "batch norm in train mode needs at least 2 rows, got {}",
                rows
            )));
        }
        let (y, batch) = tape.batch_norm_train(x, bound.scale, bound.shift, self.eps)?;
        for j in 0..self.stats.mean.len() {
            self.stats.mean[j] =
                self.momentum * self.stats.mean[j] + (1.0 - self.momentum) * batch.mean[j];
            self.stats.var[j] =
                self.momentum * self.stats.var[j] + (1.0 - self.momentum) * batch.var[j];
        }
        Ok(y)
    }

    /// Normalize by the running statistics only.
    pub fn forward_eval(
        &self,
        tape: &mut Tape,
        bound: &BoundBatchNorm,
        x: TensorId,
    ) -> Result<TensorId> {
        tape.batch_norm_eval(
            x,
            bound.scale,
            bound.shift,
            &self.stats.mean,
            &self.stats.var,
            self.eps,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn forward(bn: &mut BatchNorm, x: Tensor, train: bool) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = bn.bind(&mut tape, false);
        let xid = tape.constant(x);
        let y = if train {
            bn.forward_train(&mut tape, &bound, xid)?
        } else {
            bn.forward_eval(&mut tape, &bound, xid)?
        };
        Ok(tape.value(y).data().to_vec())
    }

    #[test]
    fn train_mode_standardizes_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = 16;
        let dim = 3;
        // Column variance well above eps so the ε-regularized denominator
        // stays within the 1e-6 tolerance on unit variance.
        let data: Vec<f64> = (0..rows * dim)
            .map(|_| rng.random_range(-40.0..40.0))
            .collect();
        let mut bn = BatchNorm::new(dim);
        let y = forward(&mut bn, Tensor::matrix(rows, dim, data).unwrap(), true).unwrap();
        for j in 0..dim {
            let col: Vec<f64> = (0..rows).map(|i| y[i * dim + j]).collect();
            let mean: f64 = col.iter().sum::<f64>() / rows as f64;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows as f64;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_with_batch_statistics_matches_train_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows = 8;
        let dim = 2;
        let data: Vec<f64> = (0..rows * dim)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let x = Tensor::matrix(rows, dim, data.clone()).unwrap();

        let mut bn = BatchNorm::new(dim);
        let y_train = forward(&mut bn, x.clone(), true).unwrap();

        // Plant the batch statistics as the running statistics.
        let mut bn_eval = BatchNorm::new(dim);
        for j in 0..dim {
            let col: Vec<f64> = (0..rows).map(|i| data[i * dim + j]).collect();
            let mean: f64 = col.iter().sum::<f64>() / rows as f64;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows as f64;
            bn_eval.stats.mean[j] = mean;
            bn_eval.stats.var[j] = var;
        }
        let y_eval = forward(&mut bn_eval, x, false).unwrap();
        for (a, b) in y_train.iter().zip(&y_eval) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let mut bn = BatchNorm::new(2);
        let x = Tensor::matrix(4, 2, vec![3.0, 1.0, 3.0, 2.0, 3.0, 3.0, 3.0, 4.0]).unwrap();
        let y = forward(&mut bn, x, true).unwrap();
        for i in 0..4 {
            assert_eq!(y[i * 2], 0.0);
        }
    }

    #[test]
    fn train_mode_rejects_single_row() {
        let mut bn = BatchNorm::new(2);
        let err = forward(&mut bn, Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap(), true).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let mut bn = BatchNorm::new(1);
        bn.momentum = 0.5;
        forward(&mut bn, Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap(), true).unwrap();
        // batch mean 1, batch var 1
        assert!((bn.stats.mean[0] - 0.5).abs() < 1e-12);
        assert!((bn.stats.var[0] - 1.0).abs() < 1e-12);
    }
}
