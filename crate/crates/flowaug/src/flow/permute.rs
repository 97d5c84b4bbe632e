//! Fixed random coordinate permutation.
//!
//! A volume-preserving layer that shuffles coordinates between coupling
//! layers so that successive couplings transform different halves. The
//! permutation is drawn once (seeded) at construction and is part of the
//! model, not of training state: it has no parameters and a log-determinant
//! of exactly zero.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Coordinate shuffle `y[:, j] = x[:, perm[j]]` with stored inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutationLayer {
    perm: Vec<usize>,
    inv: Vec<usize>,
}

impl PermutationLayer {
    /// Draws a permutation of `dim` coordinates via seeded Fisher–Yates.
    pub fn new(dim: usize, rng: &mut Rng) -> Self {
        let perm = crate::rng::shuffled_indices(dim, rng);
        Self::from_perm(perm).expect("shuffled indices form a permutation")
    }

    /// Builds the layer from an explicit permutation (checkpoint loading).
    pub fn from_perm(perm: Vec<usize>) -> Result<Self> {
        let dim = perm.len();
        let mut inv = vec![usize::MAX; dim];
        for (j, &p) in perm.iter().enumerate() {
            if p >= dim || inv[p] != usize::MAX {
                return Err(Error::invalid("permutation", format!("{perm:?} is not a bijection")));
            }
            inv[p] = j;
        }
        Ok(PermutationLayer { perm, inv })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// The forward index table (serialized into checkpoints).
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// `y[:, j] = x[:, perm[j]]`; log-determinant is exactly zero.
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::permute_cols(x, &self.perm)
    }

    /// Exact inverse shuffle.
    pub fn inverse<T: Scalar>(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        ops::permute_cols(y, &self.inv)
    }

    pub fn traced_forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        g.permute_cols(x, &self.perm)
    }

    pub fn traced_inverse<T: Scalar>(&self, g: &mut Graph<T>, y: NodeId) -> Result<NodeId> {
        g.permute_cols(y, &self.inv)
    }
}
