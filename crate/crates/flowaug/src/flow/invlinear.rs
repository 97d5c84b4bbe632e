//! Invertible linear layer stored in LU-decomposed form.
//!
//! The dense weight is never stored. Instead the layer keeps
//!
//! * a fixed permutation `perm` (the pivoting, chosen at construction),
//! * a unit-lower-triangular factor `L` (strictly-lower entries learnable),
//! * an upper-triangular factor `U` whose diagonal is `sign_i * exp(log_mag_i)`
//!   with fixed signs and learnable log-magnitudes, strictly-upper entries
//!   learnable.
//!
//! So `W = Q·L·U` with `Q` the permutation matrix for `perm`, which makes
//! invertibility structural (every factor is invertible by construction) and
//! the log-determinant free: `log|det W| = Σ_i log_mag_i`.
//!
//! Batches are rows, so the forward map `y = Wx` becomes
//! `Y = ((X·Uᵀ)·Lᵀ)` followed by a column permutation. Both the plain and
//! traced paths assemble the dense factors with the same `scatter_add` /
//! `transpose` / `matmul` kernels, so their outputs are bit-identical.
//!
//! A freshly constructed layer has `L = U = I`, i.e. its weight is exactly an
//! (orthogonal) permutation matrix and its log-determinant is exactly zero.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::ops;
use crate::rng::{shuffled_indices, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Graph handles for the layer's learnable tensors.
#[derive(Clone, Copy, Debug)]
pub struct InvLinearNodes {
    /// Packed strictly-lower entries of `L`; absent iff the layer is 1-D.
    pub lower: Option<NodeId>,
    /// Packed strictly-upper entries of `U`; absent iff the layer is 1-D.
    pub upper: Option<NodeId>,
    pub log_mag: NodeId,
}

/// Invertible linear map parameterized as permutation × lower × upper.
#[derive(Clone, Debug, PartialEq)]
pub struct InvLinearLayer<T: Scalar> {
    dim: usize,
    /// Column gather for the forward output: `y[:, j] = (X·Uᵀ·Lᵀ)[:, perm[j]]`.
    perm: Vec<usize>,
    /// Fixed diagonal signs of `U` (±1).
    signs: Vec<i8>,
    /// Packed strictly-lower entries of `L`, row-major `(i, j)` with `i > j`;
    /// `None` iff `dim == 1` (no such entries exist).
    lower: Option<Tensor<T>>,
    /// Packed strictly-upper entries of `U`, row-major `(i, j)` with `i < j`;
    /// `None` iff `dim == 1`.
    upper: Option<Tensor<T>>,
    /// `[dim]` log-magnitudes of the `U` diagonal.
    log_mag: Tensor<T>,
}

/// Flat indices of the packed strictly-lower entries inside a `[c, c]` matrix.
fn lower_indices(c: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(c * (c - 1) / 2);
    for i in 1..c {
        for j in 0..i {
            idx.push(i * c + j);
        }
    }
    idx
}

/// Flat indices of the packed strictly-upper entries inside a `[c, c]` matrix.
fn upper_indices(c: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            idx.push(i * c + j);
        }
    }
    idx
}

fn diag_indices(c: usize) -> Vec<usize> {
    (0..c).map(|i| i * c + i).collect()
}

fn eye<T: Scalar>(c: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[c, c]);
    for i in 0..c {
        t.data_mut()[i * c + i] = T::one();
    }
    t
}

fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}

impl<T: Scalar> InvLinearLayer<T> {
    /// New layer whose weight is a random permutation matrix (`L = U = I`),
    /// so it starts volume-preserving with log-determinant exactly zero.
    pub fn new(dim: usize, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("invlinear dim", "zero".to_string()));
        }
        let packed = dim * (dim - 1) / 2;
        let off = |_: ()| -> Option<Tensor<T>> {
            if packed == 0 {
                None
            } else {
                Some(Tensor::zeros(&[packed]))
            }
        };
        Ok(InvLinearLayer {
            dim,
            perm: shuffled_indices(dim, rng),
            signs: vec![1; dim],
            lower: off(()),
            upper: off(()),
            log_mag: Tensor::zeros(&[dim]),
        })
    }

    /// Restores a layer from stored pieces (checkpoint loading).
    pub fn from_parts(
        dim: usize,
        perm: Vec<usize>,
        signs: Vec<i8>,
        lower: Option<Tensor<T>>,
        upper: Option<Tensor<T>>,
        log_mag: Tensor<T>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("invlinear dim", "zero".to_string()));
        }
        let mut seen = vec![false; dim];
        if perm.len() != dim || perm.iter().any(|&p| p >= dim || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("invlinear permutation", format!("{perm:?} is not a bijection on 0..{dim}")));
        }
        if signs.len() != dim || signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("invlinear signs", "need ±1 per coordinate".to_string()));
        }
        let packed = dim * (dim - 1) / 2;
        let packed_ok = |t: &Option<Tensor<T>>| match t {
            None => packed == 0,
            Some(t) => packed > 0 && t.shape() == [packed],
        };
        if !packed_ok(&lower) || !packed_ok(&upper) || log_mag.shape() != [dim] {
            return Err(Error::invalid(
                "invlinear parameters",
                format!("packed/off-diagonal shapes inconsistent with dim {dim}"),
            ));
        }
        Ok(InvLinearLayer { dim, perm, signs, lower, upper, log_mag })
    }

    /// Factors a dense invertible matrix `w` (given row-major as `[c, c]`)
    /// into this layer's form via partial-pivoting LU decomposition.
    pub fn from_dense(w: &Tensor<T>) -> Result<Self> {
        if w.rank() != 2 || w.shape()[0] != w.shape()[1] {
            return Err(Error::shape("invlinear from_dense", format!("need square matrix, got {:?}", w.shape())));
        }
        let c = w.shape()[0];
        let mut a: Vec<f64> = w.data().iter().map(|v| v.widen()).collect();
        // Row-selection array: after elimination, row k of LU came from w row sel[k].
        let mut sel: Vec<usize> = (0..c).collect();
        for k in 0..c {
            let mut piv = k;
            for r in k + 1..c {
                if a[r * c + k].abs() > a[piv * c + k].abs() {
                    piv = r;
                }
            }
            if a[piv * c + k] == 0.0 {
                return Err(Error::numerical(
                    "lu factorization",
                    format!("matrix is singular at column {k}"),
                ));
            }
            if piv != k {
                sel.swap(k, piv);
                for j in 0..c {
                    a.swap(k * c + j, piv * c + j);
                }
            }
            let d = a[k * c + k];
            for r in k + 1..c {
                let f = a[r * c + k] / d;
                a[r * c + k] = f; // store the L multiplier in place
                for j in k + 1..c {
                    a[r * c + j] -= f * a[k * c + j];
                }
            }
        }
        // LU rows satisfy (L·U)[k, :] = w[sel[k], :], i.e. w = Q·L·U with
        // y_i = (LUx)_{perm[i]} where perm inverts sel.
        let perm = invert_permutation(&sel);
        let mut signs = Vec::with_capacity(c);
        let mut log_mag = Tensor::zeros(&[c]);
        for i in 0..c {
            let d = a[i * c + i];
            signs.push(if d < 0.0 { -1 } else { 1 });
            log_mag.data_mut()[i] = T::narrow(d.abs().ln());
        }
        let packed = c * (c - 1) / 2;
        let (lower, upper) = if packed == 0 {
            (None, None)
        } else {
            let mut lo = Tensor::zeros(&[packed]);
            for (slot, &flat) in lower_indices(c).iter().enumerate() {
                lo.data_mut()[slot] = T::narrow(a[flat]);
            }
            let mut up = Tensor::zeros(&[packed]);
            for (slot, &flat) in upper_indices(c).iter().enumerate() {
                up.data_mut()[slot] = T::narrow(a[flat]);
            }
            (Some(lo), Some(up))
        };
        InvLinearLayer::from_parts(c, perm, signs, lower, upper, log_mag)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    fn signs_tensor(&self) -> Tensor<T> {
        let data: Vec<T> = self.signs.iter().map(|&s| T::narrow(f64::from(s))).collect();
        Tensor::new(vec![self.dim], data).expect("sign vector is nonempty")
    }

    /// Dense unit-lower factor `L`.
    fn dense_l(&self) -> Result<Tensor<T>> {
        let mut l = eye(self.dim);
        if let Some(packed) = &self.lower {
            let scattered = ops::scatter_add(packed, &lower_indices(self.dim), &[self.dim, self.dim])?;
            l = ops::add(&l, &scattered)?;
        }
        Ok(l)
    }

    /// Dense upper factor `U` (diagonal `sign_i * exp(log_mag_i)`).
    fn dense_u(&self) -> Result<Tensor<T>> {
        let diag_vals = ops::mul(&ops::exp(&self.log_mag), &self.signs_tensor())?;
        let mut u = ops::scatter_add(&diag_vals, &diag_indices(self.dim), &[self.dim, self.dim])?;
        if let Some(packed) = &self.upper {
            let scattered = ops::scatter_add(packed, &upper_indices(self.dim), &[self.dim, self.dim])?;
            u = ops::add(&u, &scattered)?;
        }
        Ok(u)
    }

    /// `(L⁻¹)ᵀ` by forward substitution (exact unit-triangular inversion).
    fn l_inverse_t(&self) -> Tensor<T> {
        let c = self.dim;
        // l[i][j] for i > j, else implied (i == j → 1, i < j → 0).
        let at = |i: usize, j: usize| -> f64 {
            let packed = self.lower.as_ref().expect("i > j implies dim > 1");
            let slot = i * (i - 1) / 2 + j;
            packed.data()[slot].widen()
        };
        // Solve L X = I column by column; X is unit lower.
        let mut x = vec![0.0f64; c * c];
        for col in 0..c {
            for i in 0..c {
                let mut v = if i == col { 1.0 } else { 0.0 };
                for k in 0..i {
                    v -= at(i, k) * x[k * c + col];
                }
                x[i * c + col] = v;
            }
        }
        let mut out = Tensor::zeros(&[c, c]);
        for i in 0..c {
            for j in 0..c {
                out.data_mut()[j * c + i] = T::narrow(x[i * c + j]);
            }
        }
        out
    }

    /// `(U⁻¹)ᵀ` by back substitution.
    fn u_inverse_t(&self) -> Tensor<T> {
        let c = self.dim;
        let at = |i: usize, j: usize| -> f64 {
            // strictly-upper packed slot for (i, j), i < j: rows 0..i
            // contribute (c-1-0)+(c-1-1)+… entries.
            let packed = self.upper.as_ref().expect("i < j implies dim > 1");
            let before: usize = (0..i).map(|r| c - 1 - r).sum();
            packed.data()[before + (j - i - 1)].widen()
        };
        let diag = |i: usize| -> f64 {
            f64::from(self.signs[i]) * self.log_mag.data()[i].widen().exp()
        };
        let mut x = vec![0.0f64; c * c];
        for col in 0..c {
            for i in (0..c).rev() {
                let mut v = if i == col { 1.0 } else { 0.0 };
                for k in i + 1..c {
                    v -= at(i, k) * x[k * c + col];
                }
                x[i * c + col] = v / diag(i);
            }
        }
        let mut out = Tensor::zeros(&[c, c]);
        for i in 0..c {
            for j in 0..c {
                out.data_mut()[j * c + i] = T::narrow(x[i * c + j]);
            }
        }
        out
    }

    /// Dense weight `W` reconstructed through the real forward path
    /// (feeds the identity batch through `forward`); intended for tests
    /// and diagnostics.
    pub fn dense_weight(&self) -> Result<Tensor<T>> {
        let (wt, _) = self.forward(&eye(self.dim))?;
        Ok(ops::transpose(&wt)?)
    }

    fn check_batch(&self, x: &Tensor<T>, what: &'static str) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != self.dim {
            return Err(Error::shape(what, format!("need [n, {}], got {:?}", self.dim, x.shape())));
        }
        Ok(())
    }

    /// Forward transform; returns `(y, scalar logdet)` — the logdet applies
    /// to every sample in the batch.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_batch(x, "invlinear")?;
        let ut = ops::transpose(&self.dense_u()?)?;
        let lt = ops::transpose(&self.dense_l()?)?;
        let xu = ops::matmul(x, &ut)?;
        let xul = ops::matmul(&xu, &lt)?;
        let y = ops::permute_cols(&xul, &self.perm)?;
        let logdet = ops::sum_all(&self.log_mag);
        Ok((y, logdet))
    }

    /// Exact inverse: undo the column permutation, then multiply by the
    /// triangular inverses (computed by substitution).
    pub fn inverse(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(y, "invlinear inverse")?;
        let xul = ops::permute_cols(y, &invert_permutation(&self.perm))?;
        let v = ops::matmul(&xul, &self.l_inverse_t())?;
        ops::matmul(&v, &self.u_inverse_t())
    }

    /// Traced forward over learnable-parameter nodes; mirrors
    /// [`Self::forward`] op for op.
    pub fn traced_forward(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        nodes: &InvLinearNodes,
    ) -> Result<(NodeId, NodeId)> {
        let c = self.dim;
        let exp_lm = g.exp(nodes.log_mag)?;
        let signs = g.constant(self.signs_tensor())?;
        let diag_vals = g.mul(exp_lm, signs)?;
        let mut u = g.scatter_add(diag_vals, &diag_indices(c), &[c, c])?;
        if let Some(up) = nodes.upper {
            let scattered = g.scatter_add(up, &upper_indices(c), &[c, c])?;
            u = g.add(u, scattered)?;
        }
        let mut l = g.constant(eye(c))?;
        if let Some(lo) = nodes.lower {
            let scattered = g.scatter_add(lo, &lower_indices(c), &[c, c])?;
            l = g.add(l, scattered)?;
        }
        let ut = g.transpose(u)?;
        let lt = g.transpose(l)?;
        let xu = g.matmul(x, ut)?;
        let xul = g.matmul(xu, lt)?;
        let y = g.permute_cols(xul, &self.perm)?;
        let logdet = g.sum_all(nodes.log_mag)?;
        Ok((y, logdet))
    }

    /// Traced inverse with the triangular inverses folded into constants
    /// (decoding paths differentiate w.r.t. the latent input only).
    pub fn traced_inverse(&self, g: &mut Graph<T>, y: NodeId) -> Result<NodeId> {
        let xul = g.permute_cols(y, &invert_permutation(&self.perm))?;
        let li = g.constant(self.l_inverse_t())?;
        let ui = g.constant(self.u_inverse_t())?;
        let v = g.matmul(xul, li)?;
        g.matmul(v, ui)
    }

    /// Learnable tensors in declaration order (`lower?`, `upper?`, `log_mag`).
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(3);
        if let Some(l) = &self.lower {
            out.push(l);
        }
        if let Some(u) = &self.upper {
            out.push(u);
        }
        out.push(&self.log_mag);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(3);
        if let Some(l) = &mut self.lower {
            out.push(l);
        }
        if let Some(u) = &mut self.upper {
            out.push(u);
        }
        out.push(&mut self.log_mag);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_standard_normal, rng_from};
    use approx::assert_abs_diff_eq;

    fn random_batch(n: usize, dim: usize, seed: u64) -> Tensor<f64> {
        let mut rng = rng_from(seed);
        let mut x = Tensor::zeros(&[n, dim]);
        fill_standard_normal(&mut rng, x.data_mut());
        x
    }

    /// Layer with every learnable entry randomized (far from a permutation).
    fn random_layer(dim: usize, seed: u64) -> InvLinearLayer<f64> {
        let mut rng = rng_from(seed);
        let mut layer = InvLinearLayer::new(dim, &mut rng).unwrap();
        for p in layer.params_mut() {
            fill_standard_normal(&mut rng, p.data_mut());
            for v in p.data_mut() {
                *v *= 0.5;
            }
        }
        layer
    }

    /// Test-side oracle: log|det| by Gaussian elimination with partial
    /// pivoting on a dense matrix.
    fn elimination_log_abs_det(w: &Tensor<f64>) -> f64 {
        let c = w.shape()[0];
        let mut a = w.data().to_vec();
        let mut acc = 0.0f64;
        for k in 0..c {
            let mut piv = k;
            for r in k + 1..c {
                if a[r * c + k].abs() > a[piv * c + k].abs() {
                    piv = r;
                }
            }
            if piv != k {
                for j in 0..c {
                    a.swap(k * c + j, piv * c + j);
                }
            }
            let d = a[k * c + k];
            assert!(d.abs() > 1e-300, "singular test matrix");
            acc += d.abs().ln();
            for r in k + 1..c {
                let f = a[r * c + k] / d;
                for j in k..c {
                    a[r * c + j] -= f * a[k * c + j];
                }
            }
        }
        acc
    }

    #[test]
    fn fresh_layer_is_a_permutation_with_exact_zero_logdet() {
        let mut rng = rng_from(7);
        let layer = InvLinearLayer::<f64>::new(6, &mut rng).unwrap();
        let x = random_batch(4, 6, 8);
        let (y, logdet) = layer.forward(&x).unwrap();
        let expected = ops::permute_cols(&x, layer.perm()).unwrap();
        assert_eq!(y.data(), expected.data());
        assert_eq!(logdet.item().unwrap(), 0.0);
    }

    #[test]
    fn identity_weight_round_trips_exactly() {
        let w = eye::<f64>(4);
        let layer = InvLinearLayer::from_dense(&w).unwrap();
        let x = random_batch(3, 4, 9);
        let (y, logdet) = layer.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(logdet.item().unwrap(), 0.0);
    }

    #[test]
    fn diagonal_weight_has_cancelling_logdet() {
        let w = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 0.5]).unwrap();
        let layer = InvLinearLayer::from_dense(&w).unwrap();
        let x = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        let (y, logdet) = layer.forward(&x).unwrap();
        assert_abs_diff_eq!(y.data()[0], 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(y.data()[1], 2.0, epsilon = 1e-14);
        // ln 2 + ln 0.5 cancels.
        assert_abs_diff_eq!(logdet.item().unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn dense_factorization_reconstructs_and_matches_determinant_oracle() {
        let mut rng = rng_from(10);
        let c = 5;
        let mut w = Tensor::<f64>::zeros(&[c, c]);
        fill_standard_normal(&mut rng, w.data_mut());
        let layer = InvLinearLayer::from_dense(&w).unwrap();

        // Reconstruction: the layer's effective dense weight equals w.
        let back = layer.dense_weight().unwrap();
        for (a, b) in back.data().iter().zip(w.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        // Determinant: layer logdet vs an independent elimination oracle.
        let (_, logdet) = layer.forward(&random_batch(1, c, 11)).unwrap();
        assert_abs_diff_eq!(logdet.item().unwrap(), elimination_log_abs_det(&w), epsilon = 1e-8);

        // Application: forward equals a naive x·wᵀ product.
        let x = random_batch(3, c, 12);
        let (y, _) = layer.forward(&x).unwrap();
        for i in 0..3 {
            for j in 0..c {
                let mut dot = 0.0;
                for k in 0..c {
                    dot += x.at2(i, k) * w.at2(j, k);
                }
                assert_abs_diff_eq!(y.at2(i, j), dot, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn randomized_layer_round_trips() {
        let layer = random_layer(7, 13);
        let x = random_batch(5, 7, 14);
        let (y, _) = layer.forward(&x).unwrap();
        let back = layer.inverse(&y).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn randomized_layer_logdet_matches_its_own_dense_weight() {
        let layer = random_layer(6, 15);
        let w = layer.dense_weight().unwrap();
        let (_, logdet) = layer.forward(&random_batch(1, 6, 16)).unwrap();
        assert_abs_diff_eq!(logdet.item().unwrap(), elimination_log_abs_det(&w), epsilon = 1e-10);
    }

    #[test]
    fn traced_paths_are_bit_identical_to_plain() {
        let layer = random_layer(5, 17);
        let x = random_batch(4, 5, 18);
        let (y_plain, ld_plain) = layer.forward(&x).unwrap();
        let inv_plain = layer.inverse(&y_plain).unwrap();

        let mut g = Graph::new();
        let params = layer.params();
        let nodes = InvLinearNodes {
            lower: Some(g.input(params[0]).unwrap()),
            upper: Some(g.input(params[1]).unwrap()),
            log_mag: g.input(params[2]).unwrap(),
        };
        let x_id = g.constant(x).unwrap();
        let (y_id, ld_id) = layer.traced_forward(&mut g, x_id, &nodes).unwrap();
        assert_eq!(g.value(y_id).data(), y_plain.data());
        assert_eq!(g.value(ld_id).data(), ld_plain.data());

        let mut g2 = Graph::new();
        let y_in = g2.constant(y_plain).unwrap();
        let inv_id = layer.traced_inverse(&mut g2, y_in).unwrap();
        assert_eq!(g2.value(inv_id).data(), inv_plain.data());
    }

    #[test]
    fn one_dimensional_layer_has_no_packed_parameters() {
        let mut rng = rng_from(19);
        let mut layer = InvLinearLayer::<f64>::new(1, &mut rng).unwrap();
        assert_eq!(layer.params().len(), 1);
        layer.params_mut()[0].data_mut()[0] = 0.7;
        let x = Tensor::matrix(2, 1, vec![1.0, -2.0]).unwrap();
        let (y, logdet) = layer.forward(&x).unwrap();
        let s = 0.7f64.exp();
        assert_abs_diff_eq!(y.data()[0], s, epsilon = 1e-15);
        assert_abs_diff_eq!(y.data()[1], -2.0 * s, epsilon = 1e-15);
        assert_abs_diff_eq!(logdet.item().unwrap(), 0.7, epsilon = 1e-15);
        let back = layer.inverse(&y).unwrap();
        assert_abs_diff_eq!(back.data()[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(back.data()[1], -2.0, epsilon = 1e-14);
    }

    #[test]
    fn negative_determinant_weights_factor_with_signs() {
        // A reflection: determinant −1, log|det| = 0.
        let w = Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let layer = InvLinearLayer::<f64>::from_dense(&w).unwrap();
        let back = layer.dense_weight().unwrap();
        for (a, b) in back.data().iter().zip(w.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        let (_, logdet) = layer.forward(&random_batch(1, 2, 20)).unwrap();
        assert_abs_diff_eq!(logdet.item().unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let w = Tensor::matrix(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(InvLinearLayer::<f64>::from_dense(&w).is_err());
    }

    #[test]
    fn from_parts_validates_shapes() {
        let lm = Tensor::<f64>::vector(vec![0.0, 0.0]);
        // Non-bijective permutation.
        assert!(InvLinearLayer::from_parts(2, vec![0, 0], vec![1, 1], Some(Tensor::vector(vec![0.0])), Some(Tensor::vector(vec![0.0])), lm.clone()).is_err());
        // Bad sign.
        assert!(InvLinearLayer::from_parts(2, vec![1, 0], vec![2, 1], Some(Tensor::vector(vec![0.0])), Some(Tensor::vector(vec![0.0])), lm.clone()).is_err());
        // Missing packed entries for dim 2.
        assert!(InvLinearLayer::from_parts(2, vec![1, 0], vec![1, 1], None, None, lm.clone()).is_err());
        // Valid.
        assert!(InvLinearLayer::from_parts(2, vec![1, 0], vec![1, 1], Some(Tensor::vector(vec![0.3])), Some(Tensor::vector(vec![-0.2])), lm).is_ok());
    }
}
