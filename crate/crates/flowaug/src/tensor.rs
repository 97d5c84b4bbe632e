//! Dense n-dimensional array with optional gradient storage.
//!
//! [`Tensor`] is a row-major buffer plus a shape. It carries two pieces of
//! autodiff bookkeeping: a `requires_grad` flag (consulted when the tensor is
//! registered as a graph input) and an optional `grad` buffer of identical
//! shape, populated when gradients are materialized.
//!
//! Rank conventions used across the crate:
//! * rank 0 (`[]`) — scalar, one element;
//! * rank 1 (`[n]`) — vector;
//! * rank 2 (`[rows, cols]`) — matrix; batches are matrices with one sample
//!   per row.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense real array. Cloning copies the buffer (and any gradient).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, validating that `shape` is well-formed (all extents
    /// positive) and consistent with `data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape("Tensor::new", format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} implies {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    /// Rank-0 scalar.
    pub fn scalar(v: T) -> Self {
        Tensor { shape: vec![], data: vec![v], requires_grad: false, grad: None }
    }

    /// Rank-1 vector from a `Vec`.
    pub fn vector(data: Vec<T>) -> Self {
        Tensor { shape: vec![data.len()], data, requires_grad: false, grad: None }
    }

    /// Rank-2 matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); numel], requires_grad: false, grad: None }
    }

    /// Constant-filled tensor of the given shape.
    pub fn filled(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![v; numel], requires_grad: false, grad: None }
    }

    /// Builder-style flag set, consumed when registering graph inputs.
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Whether gradients should be tracked for this tensor.
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `true` for shapes `[]`, `[1]`, `[1,1]`, ... (exactly one element).
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Consumes the tensor, returning its buffer.
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows of a rank-2 tensor (rank-1 tensors count as a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a rank-2 tensor (length for rank-1).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    /// Element access for rank-2 tensors, row-major.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Extracts row `r` of a rank-2 tensor as a rank-1 tensor.
    pub fn row(&self, r: usize) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::shape("Tensor::row", format!("need rank 2, got {:?}", self.shape)));
        }
        let c = self.shape[1];
        if r >= self.shape[0] {
            return Err(Error::invalid("row index", format!("{r} out of {}", self.shape[0])));
        }
        Ok(Tensor::vector(self.data[r * c..(r + 1) * c].to_vec()))
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::NonScalarOutput { shape: self.shape.clone() });
        }
        Ok(self.data[0])
    }

    /// Reinterprets the buffer under a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) || numel != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshape",
                format!("cannot view {:?} ({} elems) as {shape:?}", self.shape, self.data.len()),
            ));
        }
        let mut out = self.clone();
        out.shape = shape.to_vec();
        Ok(out)
    }

    /// Attaches a gradient buffer; must match the tensor's shape.
    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "Tensor::set_grad",
                format!("grad has {} elements, tensor has {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// The attached gradient, if any, viewed with the tensor's shape.
    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    /// Removes and returns the attached gradient.
    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    /// Index of the largest element; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0usize;
        for (i, &v) in self.data.iter().enumerate().skip(1) {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// `true` when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with the first non-finite flat index when strict checks apply.
    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(index) => Err(Error::NonFinite { op, index }),
        }
    }

    /// Widens to an `f64` buffer (used by precision-independent metrics).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.widen()).collect()
    }

    /// Builds a tensor by narrowing an `f64` slice into `T`.
    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Tensor::new(shape.to_vec(), data.iter().map(|&v| T::narrow(v)).collect())
    }

    /// Elementwise map into a new tensor (gradient not carried over).
    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Euclidean norm of the flattened buffer.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v.widen() * v.widen()).sum::<f64>().sqrt()
    }

    /// Max-magnitude norm of the flattened buffer.
    pub fn linf_norm(&self) -> f64 {
        self.data.iter().map(|v| v.widen().abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_shape() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn scalar_has_rank_zero_and_one_element() {
        let s = Tensor::scalar(3.5f64);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.numel(), 1);
        assert!(s.is_scalar());
        assert_eq!(s.item().unwrap(), 3.5);
    }

    #[test]
    fn grad_shape_is_enforced() {
        let mut t = Tensor::<f64>::zeros(&[2, 2]);
        assert!(t.set_grad(vec![1.0; 4]).is_ok());
        assert!(t.set_grad(vec![1.0; 3]).is_err());
        assert_eq!(t.grad(), Some(&[1.0; 4][..]));
        assert_eq!(t.take_grad(), Some(vec![1.0; 4]));
        assert!(t.grad().is_none());
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        let t = Tensor::vector(vec![0.25f64, 0.25, 0.25, 0.25]);
        assert_eq!(t.argmax(), 0);
        let t = Tensor::vector(vec![0.1f64, 0.7, 0.7, 0.1]);
        assert_eq!(t.argmax(), 1);
    }

    #[test]
    fn reshape_preserves_data_and_checks_count() {
        let t = Tensor::matrix(2, 3, (0..6).map(|v| v as f64).collect()).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn finite_check_names_offending_index() {
        let t = Tensor::vector(vec![1.0f64, f64::NAN, 2.0]);
        match t.ensure_finite("unit") {
            Err(Error::NonFinite { op, index }) => {
                assert_eq!(op, "unit");
                assert_eq!(index, 1);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn norms_match_hand_values() {
        let t = Tensor::vector(vec![3.0f64, -4.0]);
        assert_eq!(t.l2_norm(), 5.0);
        assert_eq!(t.linf_norm(), 4.0);
    }
}
