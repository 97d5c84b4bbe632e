//! Label classifiers (fully connected and convolutional), the cross-entropy
//! objective, first-order optimizers with learning-rate schedules, and the
//! multi-phase training loop.

pub mod cnn;
pub mod mlp;
pub mod optim;
pub mod train;

pub use cnn::{Cnn, CnnSpec};
pub use mlp::{Mlp, MlpSpec};
pub use optim::{schedule_rate, LrSchedule, Optimizer};
pub use train::{train_classifier, EpochRecord, TrainOptions, TrainPhase, TrainingHistory};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A label classifier; every variant exposes logits, penultimate features,
/// a flat parameter list, and a traced path for gradients.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier<T: Scalar> {
    Mlp(Mlp<T>),
    Cnn(Cnn<T>),
}

impl<T: Scalar> Classifier<T> {
    pub fn input_dim(&self) -> usize {
        match self {
            Classifier::Mlp(m) => m.spec().input_dim,
            Classifier::Cnn(c) => c.spec().input_dim(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Classifier::Mlp(m) => m.spec().classes,
            Classifier::Cnn(c) => c.spec().classes,
        }
    }

    /// `(logits, penultimate features)`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        match self {
            Classifier::Mlp(m) => m.forward(x),
            Classifier::Cnn(c) => c.forward(x),
        }
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.0)
    }

    /// Penultimate-layer activations (feature embedding for distribution
    /// comparisons).
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x)?.1)
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Classifier::Mlp(m) => m.params(),
            Classifier::Cnn(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Classifier::Mlp(m) => m.params_mut(),
            Classifier::Cnn(c) => c.params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Registers every parameter as a gradient-tracked graph input, in
    /// [`Self::params`] order.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<Vec<NodeId>> {
        self.params().into_iter().map(|p| g.input(&p.clone().requiring_grad())).collect()
    }

    /// Traced logits; `param_ids` aligns with [`Self::params`] order, `None`
    /// bakes the current parameters in as constants (for input gradients).
    pub fn traced_logits(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        param_ids: Option<&[NodeId]>,
    ) -> Result<NodeId> {
        match self {
            Classifier::Mlp(m) => m.traced_logits(g, x, param_ids),
            Classifier::Cnn(c) => c.traced_logits(g, x, param_ids),
        }
    }
}

fn check_labels(n: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for {n} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(
            "cross_entropy label",
            format!("label {bad} out of {classes} classes"),
        ));
    }
    Ok(())
}

/// Flat gather table selecting each row's true-label entry.
fn label_indices(classes: usize, labels: &[usize]) -> Vec<usize> {
    labels.iter().enumerate().map(|(i, &l)| i * classes + l).collect()
}

/// Per-sample cross-entropy `−log softmax(logits)[label]`, shaped `[n, 1]`.
pub fn per_sample_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::shape("cross_entropy", format!("logits must be [n, k], got {:?}", logits.shape())));
    }
    let (n, classes) = (logits.shape()[0], logits.shape()[1]);
    check_labels(n, classes, labels)?;
    let ls = ops::log_softmax_rows(logits)?;
    let picked = ops::gather(&ls, &label_indices(classes, labels), &[n, 1])?;
    Ok(ops::scale(&picked, T::narrow(-1.0)))
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    ops::mean_all(&per_sample_cross_entropy(logits, labels)?).item()
}

/// Traced mean cross-entropy; composes the same kernels as the plain path,
/// so values agree bit for bit.
pub fn traced_cross_entropy<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    let shape = g.value(logits).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("cross_entropy", format!("logits must be [n, k], got {shape:?}")));
    }
    let (n, classes) = (shape[0], shape[1]);
    check_labels(n, classes, labels)?;
    let ls = g.log_softmax_rows(logits)?;
    let picked = g.gather(ls, &label_indices(classes, labels), &[n, 1])?;
    let per_sample = g.neg(picked)?;
    g.mean_all(per_sample)
}
