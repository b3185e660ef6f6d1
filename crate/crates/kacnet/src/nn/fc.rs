//! Fully-connected projection layer.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, TensorId};
use crate::error::Result;

use super::xavier_uniform;

/// Affine projection `x · Wᵀ + b` with weight stored as `[out × in]`.
#[derive(Clone, Debug)]
pub struct FcLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl FcLayer {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        FcLayer {
            weight: xavier_uniform(rng, out_dim, in_dim),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundFc {
        BoundFc {
            weight: tape.input(self.weight.clone(), trainable),
            bias: tape.input(self.bias.clone(), trainable),
        }
    }
}

/// Tape handles for one forward pass over an [`FcLayer`].
#[derive(Copy, Clone)]
pub struct BoundFc {
    pub weight: TensorId,
    pub bias: TensorId,
}

impl BoundFc {
    /// Batched forward: `x[n × in] → [n × out]`.
    pub fn forward(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let y = tape.matmul_nt(x, self.weight)?;
        tape.add_row(y, self.bias)
    }

    /// Single-vector forward: `x[in] → [out]`.
    pub fn forward_vec(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let y = tape.matvec(self.weight, x)?;
        tape.add(y, self.bias)
    }
}
