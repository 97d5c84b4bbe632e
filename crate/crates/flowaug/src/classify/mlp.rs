//! Multilayer perceptron classifier (ReLU hidden layers, linear logits).

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops;
use crate::rng::{uniform, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Architecture description of an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    /// Hidden widths; may be empty (a linear classifier).
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid(
                "mlp spec",
                format!(
                    "all widths must be positive: input {}, hidden {:?}, classes {}",
                    self.input_dim, self.hidden, self.classes
                ),
            ));
        }
        Ok(())
    }

    /// Layer in/out widths, first to last.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden);
        widths.push(self.classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Fully connected classifier; parameters interleave as `w0, b0, w1, b1, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Scalar> {
    spec: MlpSpec,
    weights: Vec<Tensor<T>>,
    biases: Vec<Tensor<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Kaiming-uniform weights (`±sqrt(6/fan_in)`), zero biases.
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let mut w = Tensor::zeros(&[fan_in, fan_out]);
            for v in w.data_mut() {
                *v = uniform(rng, -bound, bound);
            }
            weights.push(w);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Ok(Mlp { spec, weights, biases })
    }

    /// Restores from stored parameters (checkpoint loading).
    pub fn from_parts(spec: MlpSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if params.len() != 2 * dims.len() {
            return Err(Error::invalid(
                "mlp parameters",
                format!("{} tensors for {} layers", params.len(), dims.len()),
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, (fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &params[2 * i];
            let b = &params[2 * i + 1];
            if w.shape() != [*fan_in, *fan_out] || b.shape() != [*fan_out] {
                return Err(Error::invalid(
                    "mlp parameters",
                    format!("layer {i} shapes {:?}/{:?} for ({fan_in}, {fan_out})", w.shape(), b.shape()),
                ));
            }
            weights.push(w.clone());
            biases.push(b.clone());
        }
        Ok(Mlp { spec, weights, biases })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w as &mut Tensor<T>, b as &mut Tensor<T>])
            .collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.spec.input_dim {
            return Err(Error::shape(
                "mlp",
                format!("need [n, {}], got {:?}", self.spec.input_dim, x.shape()),
            ));
        }
        Ok(())
    }

    /// `(logits, penultimate features)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for i in 0..last {
            h = ops::relu(&ops::add_row(&ops::matmul(&h, &self.weights[i])?, &self.biases[i])?);
        }
        let logits = ops::add_row(&ops::matmul(&h, &self.weights[last])?, &self.biases[last])?;
        Ok((logits, h))
    }

    /// Traced logits. `param_ids` must align with [`Self::params`] order;
    /// `None` bakes the current parameters in as constants (input-gradient
    /// uses, e.g. perturbation search).
    pub fn traced_logits(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        param_ids: Option<&[NodeId]>,
    ) -> Result<NodeId> {
        let ids: Vec<NodeId> = match param_ids {
            Some(ids) => {
                if ids.len() != 2 * self.weights.len() {
                    return Err(Error::invalid(
                        "mlp binding",
                        format!("{} ids for {} tensors", ids.len(), 2 * self.weights.len()),
                    ));
                }
                ids.to_vec()
            }
            None => self
                .params()
                .into_iter()
                .map(|p| g.constant(p.clone()))
                .collect::<Result<_>>()?,
        };
        let mut h = x;
        let last = self.weights.len() - 1;
        for i in 0..last {
            let lin = g.matmul(h, ids[2 * i])?;
            let pre = g.add_row(lin, ids[2 * i + 1])?;
            h = g.relu(pre)?;
        }
        let lin = g.matmul(h, ids[2 * last])?;
        g.add_row(lin, ids[2 * last + 1])
    }
}
