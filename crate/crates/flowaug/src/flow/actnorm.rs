//! Activation normalization: a learned per-coordinate affine map.
//!
//! `y = x * scale + bias`, where the scale is stored as a log so positivity
//! is structural rather than enforced. The layer is data-initialized from
//! the first training batch to `scale = 1/std`, `bias = -mean/std`, which
//! standardizes that batch; afterwards both vectors train freely.
//!
//! Per-sample log-determinant: `sum(log_scale)` — identical across a batch.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Learned per-coordinate affine transform with positive scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ActNormLayer<T: Scalar> {
    log_scale: Tensor<T>,
    bias: Tensor<T>,
    initialized: bool,
}

impl<T: Scalar> ActNormLayer<T> {
    /// A fresh, uninitialized layer; `forward`/`inverse` error until
    /// [`Self::init_from_batch`] runs (or a checkpoint restores state).
    pub fn new(dim: usize) -> Self {
        ActNormLayer {
            log_scale: Tensor::zeros(&[dim]),
            bias: Tensor::zeros(&[dim]),
            initialized: false,
        }
    }

    /// Restores a layer from stored parameters (checkpoint loading).
    pub fn from_parts(log_scale: Tensor<T>, bias: Tensor<T>, initialized: bool) -> Result<Self> {
        if log_scale.rank() != 1 || bias.rank() != 1 || log_scale.numel() != bias.numel() {
            return Err(Error::invalid(
                "actnorm parameters",
                format!("log_scale {:?} vs bias {:?}", log_scale.shape(), bias.shape()),
            ));
        }
        Ok(ActNormLayer { log_scale, bias, initialized })
    }

    pub fn dim(&self) -> usize {
        self.log_scale.numel()
    }

    pub fn initialized(&self) -> bool {
        self.initialized
    }

    /// The (strictly positive) per-coordinate scale.
    pub fn scale(&self) -> Tensor<T> {
        ops::exp(&self.log_scale)
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    /// Data-dependent initialization from the first batch:
    /// `scale = 1/std`, `bias = -mean/std` (population std over the batch),
    /// so the initialized layer standardizes this batch per-coordinate.
    ///
    /// Errors if already initialized, or if a coordinate has zero variance
    /// (duplicate inputs would make the scale infinite, naming the
    /// coordinate).
    pub fn init_from_batch(&mut self, x: &Tensor<T>) -> Result<()> {
        if self.initialized {
            return Err(Error::invalid("actnorm init", "layer is already initialized".to_string()));
        }
        if x.rank() != 2 || x.shape()[1] != self.dim() {
            return Err(Error::shape(
                "actnorm init",
                format!("need [n, {}], got {:?}", self.dim(), x.shape()),
            ));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let nf = T::narrow(n as f64);
        let xd = x.data();
        for j in 0..c {
            let mut mean = T::zero();
            for i in 0..n {
                mean = mean + xd[i * c + j];
            }
            mean = mean / nf;
            let mut var = T::zero();
            for i in 0..n {
                let d = xd[i * c + j] - mean;
                var = var + d * d;
            }
            var = var / nf;
            if var <= T::zero() {
                return Err(Error::numerical(
                    "actnorm init",
                    format!("zero variance at coordinate {j}; scale would be infinite"),
                ));
            }
            let std = var.sqrt();
            self.log_scale.data_mut()[j] = -std.ln();
            self.bias.data_mut()[j] = -mean / std;
        }
        self.initialized = true;
        Ok(())
    }

    fn ensure_init(&self) -> Result<()> {
        if !self.initialized {
            return Err(Error::invalid(
                "actnorm",
                "forward/inverse before first-batch initialization".to_string(),
            ));
        }
        Ok(())
    }

    /// `y = x * scale + bias`; per-sample log-determinant `sum(log_scale)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, T)> {
        self.ensure_init()?;
        let scaled = ops::mul_row(x, &self.scale())?;
        let y = ops::add_row(&scaled, &self.bias)?;
        Ok((y, ops::sum_all(&self.log_scale).item()?))
    }

    /// `x = (y - bias) / scale`, exact inverse of [`Self::forward`].
    pub fn inverse(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.ensure_init()?;
        let neg_bias = ops::scale(&self.bias, T::narrow(-1.0));
        let shifted = ops::add_row(y, &neg_bias)?;
        let inv_scale = ops::exp(&ops::scale(&self.log_scale, T::narrow(-1.0)));
        ops::mul_row(&shifted, &inv_scale)
    }

    /// Traced forward over bound parameter nodes; returns the output and the
    /// scalar log-determinant node (`sum(log_scale)`, shared by all rows).
    pub fn traced_forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        log_scale: NodeId,
        bias: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        self.ensure_init()?;
        let scale = g.exp(log_scale)?;
        let scaled = g.mul_row(x, scale)?;
        let y = g.add_row(scaled, bias)?;
        let logdet = g.sum_all(log_scale)?;
        Ok((y, logdet))
    }

    /// Traced inverse with the current parameters baked in as constants
    /// (gradients flow through `y` only).
    pub fn traced_inverse(&self, g: &mut Graph<T>, y: NodeId) -> Result<NodeId> {
        self.ensure_init()?;
        let neg_bias = g.constant(ops::scale(&self.bias, T::narrow(-1.0)))?;
        let inv_scale =
            g.constant(ops::exp(&ops::scale(&self.log_scale, T::narrow(-1.0))))?;
        let shifted = g.add_row(y, neg_bias)?;
        g.mul_row(shifted, inv_scale)
    }

    /// Parameter tensors in declaration order (`log_scale`, `bias`).
    pub fn params(&self) -> [&Tensor<T>; 2] {
        [&self.log_scale, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.log_scale, &mut self.bias]
    }
}
