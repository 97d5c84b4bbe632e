//! Pure forward kernels.
//!
//! Every arithmetic primitive lives here as a plain function on [`Tensor`]s.
//! The computation graph records these same functions, so a traced value is
//! bit-identical to an untraced one — there is exactly one implementation of
//! each kernel.
//!
//! Determinism contract: all loops run in a fixed order and all reductions
//! accumulate left-to-right, so results are reproducible across runs on the
//! same platform in the same precision.
//!
//! Shape conventions: elementwise ops require identical shapes; `*_row(s)`
//! ops operate on rank-2 matrices `[rows, cols]` and broadcast a `[cols]` (or
//! `[1, cols]`) vector across rows — the only broadcasting in the crate, and
//! always explicit in the op name.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Flat-index sentinel understood by [`gather`]: reads as 0.0 and receives
/// no gradient. Used to encode zero padding in convolution index tables.
pub const GATHER_ZERO: usize = usize::MAX;

fn check_same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_rank2<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::UnsupportedPrimitive {
            name: op,
            detail: format!("requires a rank-2 tensor, got shape {:?}", t.shape()),
        });
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// Checks that `v` is a `[cols]` or `[1, cols]` vector and returns its data.
fn row_vector<'a, T: Scalar>(op: &'static str, v: &'a Tensor<T>, cols: usize) -> Result<&'a [T]> {
    let ok = (v.rank() == 1 && v.shape()[0] == cols)
        || (v.rank() == 2 && v.shape()[0] == 1 && v.shape()[1] == cols);
    if !ok {
        return Err(Error::shape(op, format!("need [{cols}] or [1,{cols}], got {:?}", v.shape())));
    }
    Ok(v.data())
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape already validated")
}

/// Elementwise sum; shapes must match exactly.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    Ok(zip(a, b, |x, y| x + y))
}

/// Elementwise difference; shapes must match exactly.
pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("sub", a, b)?;
    Ok(zip(a, b, |x, y| x - y))
}

/// Elementwise (Hadamard) product; shapes must match exactly.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mul", a, b)?;
    Ok(zip(a, b, |x, y| x * y))
}

/// Multiplies every element by the constant `c`.
pub fn scale<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|x| x * c)
}

/// Adds the constant `c` to every element.
pub fn add_scalar<T: Scalar>(a: &Tensor<T>, c: T) -> Tensor<T> {
    a.map(|x| x + c)
}

/// Matrix product `[n,k] x [k,m] -> [n,m]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = check_rank2("matmul", a)?;
    let (k2, m) = check_rank2("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner dims {k} vs {k2}")));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::zero(); n * m];
    // i-k-j loop order: streams through b row-major, accumulation order fixed.
    for i in 0..n {
        for kk in 0..k {
            let aik = ad[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let brow = &bd[kk * m..(kk + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] = orow[j] + aik * brow[j];
            }
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Transpose of a rank-2 tensor.
pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, m) = check_rank2("transpose", a)?;
    let ad = a.data();
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = ad[i * m + j];
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Elementwise `exp`.
pub fn exp<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x.exp())
}

/// Elementwise natural logarithm.
pub fn ln<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x.ln())
}

/// Elementwise hyperbolic tangent.
pub fn tanh<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| x.tanh())
}

/// Elementwise rectifier `max(x, 0)`.
pub fn relu<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    a.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Adds a `[cols]` vector to every row of an `[n, cols]` matrix.
pub fn add_row<T: Scalar>(m: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("add_row", m)?;
    let vd = row_vector("add_row", v, c)?;
    let md = m.data();
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        for j in 0..c {
            out.push(md[i * c + j] + vd[j]);
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Multiplies every row of an `[n, cols]` matrix by a `[cols]` vector.
pub fn mul_row<T: Scalar>(m: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("mul_row", m)?;
    let vd = row_vector("mul_row", v, c)?;
    let md = m.data();
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        for j in 0..c {
            out.push(md[i * c + j] * vd[j]);
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Per-row sum of an `[n, c]` matrix, shaped `[n, 1]`.
pub fn row_sum<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("row_sum", m)?;
    let md = m.data();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = T::zero();
        for j in 0..c {
            acc = acc + md[i * c + j];
        }
        out.push(acc);
    }
    Tensor::new(vec![n, 1], out)
}

/// Per-column sum of an `[n, c]` matrix, shaped `[1, c]`.
pub fn col_sum<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("col_sum", m)?;
    let md = m.data();
    let mut out = vec![T::zero(); c];
    for i in 0..n {
        for j in 0..c {
            out[j] = out[j] + md[i * c + j];
        }
    }
    Tensor::new(vec![1, c], out)
}

/// Sum of all elements, as a rank-0 scalar.
pub fn sum_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::zero();
    for &v in a.data() {
        acc = acc + v;
    }
    Tensor::scalar(acc)
}

/// Mean of all elements, as a rank-0 scalar.
pub fn mean_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let n = T::narrow(a.numel() as f64);
    let mut acc = T::zero();
    for &v in a.data() {
        acc = acc + v;
    }
    Tensor::scalar(acc / n)
}

/// Numerically stable per-row `log(sum(exp(x)))` of an `[n, c]` matrix,
/// shaped `[n, 1]`. Rows are shifted by their maximum before exponentiation.
pub fn log_sum_exp_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("log_sum_exp_rows", m)?;
    let md = m.data();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = &md[i * c..(i + 1) * c];
        let mut hi = row[0];
        for &v in &row[1..] {
            if v > hi {
                hi = v;
            }
        }
        let mut acc = T::zero();
        for &v in row {
            acc = acc + (v - hi).exp();
        }
        out.push(hi + acc.ln());
    }
    Tensor::new(vec![n, 1], out)
}

/// Per-row softmax of an `[n, c]` matrix (stable, max-shifted).
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("softmax_rows", m)?;
    let md = m.data();
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        let row = &md[i * c..(i + 1) * c];
        let mut hi = row[0];
        for &v in &row[1..] {
            if v > hi {
                hi = v;
            }
        }
        let mut denom = T::zero();
        let start = out.len();
        for &v in row {
            let e = (v - hi).exp();
            denom = denom + e;
            out.push(e);
        }
        for slot in &mut out[start..] {
            *slot = *slot / denom;
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Per-row log-softmax: `x - log_sum_exp(x)` with a shared stable reduction.
pub fn log_softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("log_softmax_rows", m)?;
    let lse = log_sum_exp_rows(m)?;
    let md = m.data();
    let ld = lse.data();
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        for j in 0..c {
            out.push(md[i * c + j] - ld[i]);
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Reorders the columns of an `[n, c]` matrix: `out[:, j] = in[:, perm[j]]`.
pub fn permute_cols<T: Scalar>(m: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("permute_cols", m)?;
    if perm.len() != c {
        return Err(Error::shape("permute_cols", format!("perm length {} vs {c} cols", perm.len())));
    }
    let md = m.data();
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        let row = &md[i * c..(i + 1) * c];
        for &p in perm {
            out.push(row[p]);
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Column slice `[n, c] -> [n, hi-lo]` over the half-open range `lo..hi`.
pub fn slice_cols<T: Scalar>(m: &Tensor<T>, lo: usize, hi: usize) -> Result<Tensor<T>> {
    let (n, c) = check_rank2("slice_cols", m)?;
    if lo >= hi || hi > c {
        return Err(Error::invalid("slice range", format!("{lo}..{hi} of {c} cols")));
    }
    let md = m.data();
    let w = hi - lo;
    let mut out = Vec::with_capacity(n * w);
    for i in 0..n {
        out.extend_from_slice(&md[i * c + lo..i * c + hi]);
    }
    Tensor::new(vec![n, w], out)
}

/// Column concatenation `[n, a] ++ [n, b] -> [n, a+b]`.
pub fn concat_cols<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca) = check_rank2("concat_cols", a)?;
    let (nb, cb) = check_rank2("concat_cols", b)?;
    if na != nb {
        return Err(Error::shape("concat_cols", format!("{na} rows vs {nb} rows")));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(na * (ca + cb));
    for i in 0..na {
        out.extend_from_slice(&ad[i * ca..(i + 1) * ca]);
        out.extend_from_slice(&bd[i * cb..(i + 1) * cb]);
    }
    Tensor::new(vec![na, ca + cb], out)
}

/// Flat gather: `out[i] = a.flat[indices[i]]`, with [`GATHER_ZERO`] reading
/// as zero. `out_shape` must have `indices.len()` elements.
pub fn gather<T: Scalar>(a: &Tensor<T>, indices: &[usize], out_shape: &[usize]) -> Result<Tensor<T>> {
    let numel: usize = out_shape.iter().product();
    if numel != indices.len() {
        return Err(Error::shape(
            "gather",
            format!("out shape {out_shape:?} vs {} indices", indices.len()),
        ));
    }
    let ad = a.data();
    let mut out = Vec::with_capacity(indices.len());
    for &ix in indices {
        if ix == GATHER_ZERO {
            out.push(T::zero());
        } else if ix < ad.len() {
            out.push(ad[ix]);
        } else {
            return Err(Error::invalid("gather index", format!("{ix} out of {}", ad.len())));
        }
    }
    Tensor::new(out_shape.to_vec(), out)
}

/// Flat scatter-add: `out.flat[indices[i]] += a.flat[i]` into a fresh
/// zero tensor of `out_shape`. Repeated indices accumulate in input order.
pub fn scatter_add<T: Scalar>(
    a: &Tensor<T>,
    indices: &[usize],
    out_shape: &[usize],
) -> Result<Tensor<T>> {
    if indices.len() != a.numel() {
        return Err(Error::shape(
            "scatter_add",
            format!("{} indices vs {} elements", indices.len(), a.numel()),
        ));
    }
    let numel: usize = out_shape.iter().product();
    let mut out = vec![T::zero(); numel];
    for (&v, &ix) in a.data().iter().zip(indices) {
        if ix == GATHER_ZERO {
            continue;
        }
        if ix >= numel {
            return Err(Error::invalid("scatter index", format!("{ix} out of {numel}")));
        }
        out[ix] = out[ix] + v;
    }
    Tensor::new(out_shape.to_vec(), out)
}

/// Elementwise clamp to `[lo, hi]` (not differentiable; attack utility).
pub fn clamp<T: Scalar>(a: &Tensor<T>, lo: T, hi: T) -> Tensor<T> {
    a.map(|x| if x < lo { lo } else if x > hi { hi } else { x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_matches_hand_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner_dim() {
        let a = m(2, 3, &[0.0; 6]);
        let b = m(2, 2, &[0.0; 4]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn transpose_round_trips() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = transpose(&a).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(transpose(&t).unwrap().data(), a.data());
    }

    #[test]
    fn row_broadcasts_are_explicit_and_checked() {
        let x = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let v = Tensor::vector(vec![10.0, 20.0, 30.0]);
        let y = add_row(&x, &v).unwrap();
        assert_eq!(y.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let z = mul_row(&x, &v).unwrap();
        assert_eq!(z.data(), &[10.0, 40.0, 90.0, 40.0, 100.0, 180.0]);
        let bad = Tensor::vector(vec![1.0, 2.0]);
        assert!(add_row(&x, &bad).is_err());
    }

    #[test]
    fn reductions_match_hand_values() {
        let x = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(row_sum(&x).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(col_sum(&x).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(sum_all(&x).item().unwrap(), 10.0);
        assert_eq!(mean_all(&x).item().unwrap(), 2.5);
    }

    #[test]
    fn log_sum_exp_is_stable_under_large_shifts() {
        // Oracle: lse([a, b]) = max + ln(exp(a-max)+exp(b-max)).
        let x = m(1, 2, &[1000.0, 1000.0]);
        let lse = log_sum_exp_rows(&x).unwrap();
        assert_abs_diff_eq!(lse.data()[0], 1000.0 + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = m(2, 3, &[0.3, -1.2, 2.0, 5.0, 5.0, 5.0]);
        let s = softmax_rows(&x).unwrap();
        for i in 0..2 {
            let total: f64 = s.data()[i * 3..(i + 1) * 3].iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
        // Uniform row -> uniform probabilities.
        assert_abs_diff_eq!(s.data()[3], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn log_softmax_is_logits_minus_lse() {
        let x = m(1, 3, &[0.5, -0.25, 1.5]);
        let ls = log_softmax_rows(&x).unwrap();
        let lse = log_sum_exp_rows(&x).unwrap().data()[0];
        for j in 0..3 {
            assert_abs_diff_eq!(ls.data()[j], x.data()[j] - lse, epsilon = 1e-15);
        }
    }

    #[test]
    fn permute_slice_concat_are_consistent() {
        let x = m(2, 4, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let p = permute_cols(&x, &[3, 0, 2, 1]).unwrap();
        assert_eq!(p.data(), &[3.0, 0.0, 2.0, 1.0, 7.0, 4.0, 6.0, 5.0]);
        let left = slice_cols(&x, 0, 2).unwrap();
        let right = slice_cols(&x, 2, 4).unwrap();
        let back = concat_cols(&left, &right).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn gather_supports_zero_sentinel_and_bounds() {
        let x = Tensor::vector(vec![10.0f64, 20.0, 30.0]);
        let g = gather(&x, &[2, GATHER_ZERO, 0], &[3]).unwrap();
        assert_eq!(g.data(), &[30.0, 0.0, 10.0]);
        assert!(gather(&x, &[5], &[1]).is_err());
    }

    #[test]
    fn scatter_add_accumulates_duplicates() {
        let x = Tensor::vector(vec![1.0f64, 2.0, 3.0]);
        let s = scatter_add(&x, &[0, 0, 2], &[3]).unwrap();
        assert_eq!(s.data(), &[3.0, 0.0, 3.0]);
    }

    #[test]
    fn gather_is_inverse_of_scatter_for_permutations() {
        let x = Tensor::vector(vec![5.0f64, 6.0, 7.0, 8.0]);
        let perm = [2usize, 0, 3, 1];
        let scattered = scatter_add(&x, &perm, &[4]).unwrap();
        let back = gather(&scattered, &perm, &[4]).unwrap();
        assert_eq!(back.data(), x.data());
    }
}
