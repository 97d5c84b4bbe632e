//! Affine coupling layer.
//!
//! Coordinates split at `split`: the first block passes through unchanged
//! and parameterizes an elementwise affine map of the second block,
//!
//! ```text
//! y[..split] = x[..split]
//! y[split..] = x[split..] * exp(s(x[..split])) + t(x[..split])
//! ```
//!
//! making the Jacobian triangular and inversion exact. `s` and `t` come from
//! one two-layer subnet `input -> hidden (ReLU) -> 2*(dim-split)`, whose
//! output splits into `s` (first half) then `t` (second half). The raw `s`
//! is soft-bounded to `|s| <= clamp` nats via `clamp * tanh(s/clamp)` before
//! exponentiation, so scale factors stay in `[e^-clamp, e^clamp]`.
//!
//! When the model is label-conditional, a one-hot label block is appended to
//! the subnet input (width `split + label_width`).
//!
//! Per-sample log-determinant: `sum(s_clamped)` over the transformed block.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops;
use crate::rng::{uniform, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Graph handles for one coupling layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct CouplingNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

/// Affine coupling transform with a two-layer conditioner subnet.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer<T: Scalar> {
    dim: usize,
    split: usize,
    label_width: usize,
    clamp: f64,
    /// `[split + label_width, hidden]`
    w1: Tensor<T>,
    /// `[hidden]`
    b1: Tensor<T>,
    /// `[hidden, 2 * (dim - split)]`, zero-initialized so the layer starts
    /// as the identity map.
    w2: Tensor<T>,
    /// `[2 * (dim - split)]`
    b2: Tensor<T>,
}

impl<T: Scalar> CouplingLayer<T> {
    /// New layer with Kaiming-uniform first layer and zero last layer
    /// (identity transform until training moves `w2`/`b2`).
    pub fn new(
        dim: usize,
        split: usize,
        hidden: usize,
        label_width: usize,
        clamp: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dim < 2 || split == 0 || split >= dim {
            return Err(Error::invalid(
                "coupling split",
                format!("split {split} of dim {dim}; need 1 <= split < dim (dim >= 2)"),
            ));
        }
        if hidden == 0 {
            return Err(Error::invalid("coupling hidden width", "zero".to_string()));
        }
        if !(clamp > 0.0) {
            return Err(Error::invalid("scale clamp", format!("{clamp}; need > 0")));
        }
        let fan_in = split + label_width;
        let out = 2 * (dim - split);
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut w1 = Tensor::zeros(&[fan_in, hidden]);
        for v in w1.data_mut() {
            *v = uniform(rng, -bound, bound);
        }
        Ok(CouplingLayer {
            dim,
            split,
            label_width,
            clamp,
            w1,
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, out]),
            b2: Tensor::zeros(&[out]),
        })
    }

    /// Restores a layer from stored parameters (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dim: usize,
        split: usize,
        label_width: usize,
        clamp: f64,
        w1: Tensor<T>,
        b1: Tensor<T>,
        w2: Tensor<T>,
        b2: Tensor<T>,
    ) -> Result<Self> {
        let hidden = b1.numel();
        let out = 2 * (dim - split);
        let ok = w1.shape() == [split + label_width, hidden]
            && b1.shape() == [hidden]
            && w2.shape() == [hidden, out]
            && b2.shape() == [out];
        if !ok {
            return Err(Error::invalid("coupling parameters", "shape set is inconsistent".to_string()));
        }
        Ok(CouplingLayer { dim, split, label_width, clamp, w1, b1, w2, b2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn label_width(&self) -> usize {
        self.label_width
    }

    pub fn hidden(&self) -> usize {
        self.b1.numel()
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    /// Subnet evaluation on the pass-through block: returns `(s, t)`, with
    /// `s` already soft-clamped.
    fn subnet(&self, x1: &Tensor<T>, label: Option<&Tensor<T>>) -> Result<(Tensor<T>, Tensor<T>)> {
        let net_in = match label {
            Some(l) => ops::concat_cols(x1, l)?,
            None => x1.clone(),
        };
        let h = ops::relu(&ops::add_row(&ops::matmul(&net_in, &self.w1)?, &self.b1)?);
        let out = ops::add_row(&ops::matmul(&h, &self.w2)?, &self.b2)?;
        let half = self.dim - self.split;
        let s_raw = ops::slice_cols(&out, 0, half)?;
        let t = ops::slice_cols(&out, half, 2 * half)?;
        let c = T::narrow(self.clamp);
        let s = ops::scale(&ops::tanh(&ops::scale(&s_raw, T::one() / c)), c);
        Ok((s, t))
    }

    fn check_batch(&self, x: &Tensor<T>, label: Option<&Tensor<T>>) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.dim {
            return Err(Error::shape(
                "coupling",
                format!("need [n, {}], got {:?}", self.dim, x.shape()),
            ));
        }
        match (self.label_width, label) {
            (0, None) => Ok(()),
            (0, Some(_)) => {
                Err(Error::invalid("label", "layer is unconditional but a label was supplied".to_string()))
            }
            (w, Some(l)) => {
                if l.rank() != 2 || l.shape() != [x.shape()[0], w] {
                    return Err(Error::shape(
                        "coupling label",
                        format!("need [{}, {w}], got {:?}", x.shape()[0], l.shape()),
                    ));
                }
                Ok(())
            }
            (_, None) => {
                Err(Error::invalid("label", "conditional layer evaluated without a label".to_string()))
            }
        }
    }

    /// Forward transform; returns `(y, per-sample logdet [n,1])`.
    pub fn forward(&self, x: &Tensor<T>, label: Option<&Tensor<T>>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_batch(x, label)?;
        let x1 = ops::slice_cols(x, 0, self.split)?;
        let x2 = ops::slice_cols(x, self.split, self.dim)?;
        let (s, t) = self.subnet(&x1, label)?;
        let y2 = ops::add(&ops::mul(&x2, &ops::exp(&s))?, &t)?;
        let y = ops::concat_cols(&x1, &y2)?;
        let logdet = ops::row_sum(&s)?;
        Ok((y, logdet))
    }

    /// Exact inverse: `x2 = (y2 - t) * exp(-s)` with `s, t` recomputed from
    /// the untouched pass-through block.
    pub fn inverse(&self, y: &Tensor<T>, label: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.check_batch(y, label)?;
        let y1 = ops::slice_cols(y, 0, self.split)?;
        let y2 = ops::slice_cols(y, self.split, self.dim)?;
        let (s, t) = self.subnet(&y1, label)?;
        let neg_s = ops::scale(&s, T::narrow(-1.0));
        let x2 = ops::mul(&ops::sub(&y2, &t)?, &ops::exp(&neg_s))?;
        ops::concat_cols(&y1, &x2)
    }

    /// Traced subnet over parameter nodes; mirrors [`Self::subnet`] op for op.
    fn traced_subnet(
        &self,
        g: &mut Graph<T>,
        x1: NodeId,
        label: Option<NodeId>,
        nodes: &CouplingNodes,
    ) -> Result<(NodeId, NodeId)> {
        let net_in = match label {
            Some(l) => g.concat_cols(x1, l)?,
            None => x1,
        };
        let lin1 = g.matmul(net_in, nodes.w1)?;
        let pre = g.add_row(lin1, nodes.b1)?;
        let h = g.relu(pre)?;
        let lin2 = g.matmul(h, nodes.w2)?;
        let out = g.add_row(lin2, nodes.b2)?;
        let half = self.dim - self.split;
        let s_raw = g.slice_cols(out, 0, half)?;
        let t = g.slice_cols(out, half, 2 * half)?;
        let c = T::narrow(self.clamp);
        let scaled = g.scale(s_raw, T::one() / c)?;
        let tanhed = g.tanh(scaled)?;
        let s = g.scale(tanhed, c)?;
        Ok((s, t))
    }

    /// Traced forward; returns `(y, per-sample logdet [n,1])`.
    pub fn traced_forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        label: Option<NodeId>,
        nodes: &CouplingNodes,
    ) -> Result<(NodeId, NodeId)> {
        let x1 = g.slice_cols(x, 0, self.split)?;
        let x2 = g.slice_cols(x, self.split, self.dim)?;
        let (s, t) = self.traced_subnet(g, x1, label, nodes)?;
        let es = g.exp(s)?;
        let scaled = g.mul(x2, es)?;
        let y2 = g.add(scaled, t)?;
        let y = g.concat_cols(x1, y2)?;
        let logdet = g.row_sum(s)?;
        Ok((y, logdet))
    }

    /// Traced inverse with parameters as constants (for decoding paths that
    /// differentiate w.r.t. the latent input only).
    pub fn traced_inverse(
        &self,
        g: &mut Graph<T>,
        y: NodeId,
        label: Option<NodeId>,
    ) -> Result<NodeId> {
        let nodes = CouplingNodes {
            w1: g.constant(self.w1.clone())?,
            b1: g.constant(self.b1.clone())?,
            w2: g.constant(self.w2.clone())?,
            b2: g.constant(self.b2.clone())?,
        };
        let y1 = g.slice_cols(y, 0, self.split)?;
        let y2 = g.slice_cols(y, self.split, self.dim)?;
        let (s, t) = self.traced_subnet(g, y1, label, &nodes)?;
        let diff = g.sub(y2, t)?;
        let neg_s = g.neg(s)?;
        let ens = g.exp(neg_s)?;
        let x2 = g.mul(diff, ens)?;
        g.concat_cols(y1, x2)
    }

    /// Parameter tensors in declaration order (`w1`, `b1`, `w2`, `b2`).
    pub fn params(&self) -> [&Tensor<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}
