//! Small dense symmetric linear algebra in `f64`.
//!
//! Feature-statistics metrics need eigendecompositions of modest symmetric
//! matrices (feature covariance sizes). A cyclic Jacobi sweep is exact enough
//! (off-diagonal mass shrinks quadratically), fully deterministic, and free
//! of tuning parameters, which matters more here than speed.

use crate::error::{Error, Result};

/// Row-major square matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMat {
    n: usize,
    data: Vec<f64>,
}

impl SquareMat {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::shape(
                "square matrix",
                format!("{} values for {n}×{n}", data.len()),
            ));
        }
        Ok(SquareMat { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        SquareMat { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = SquareMat::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    pub fn transpose(&self) -> SquareMat {
        let mut out = SquareMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &SquareMat) -> Result<SquareMat> {
        if self.n != other.n {
            return Err(Error::shape(
                "square matmul",
                format!("{}×{} vs {}×{}", self.n, self.n, other.n, other.n),
            ));
        }
        let n = self.n;
        let mut out = SquareMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.at(k, j);
                }
            }
        }
        Ok(out)
    }

    /// Maximum absolute asymmetry `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> SquareMat {
        let mut out = SquareMat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(i, j, 0.5 * (self.at(i, j) + self.at(j, i)));
            }
        }
        out
    }
}

/// Eigendecomposition `A = V · diag(values) · Vᵀ` of a symmetric matrix;
/// `vectors` holds eigenvector `k` in column `k`, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct SymEig {
    pub values: Vec<f64>,
    pub vectors: SquareMat,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// `a` must be symmetric to `1e-10`; the iteration runs whole sweeps until
/// the off-diagonal mass is negligible and errors out if that takes more
/// than 100 sweeps (symmetric Jacobi converges long before that).
pub fn sym_eigen(a: &SquareMat) -> Result<SymEig> {
    let asym = a.asymmetry();
    if asym > 1e-10 {
        return Err(Error::numerical(
            "eigendecomposition",
            format!("matrix asymmetry {asym:.3e} exceeds 1e-10"),
        ));
    }
    let n = a.n;
    let mut m = a.symmetrized();
    let mut v = SquareMat::identity(n);

    let off_norm = |m: &SquareMat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m.at(i, j) * m.at(i, j);
                }
            }
        }
        s.sqrt()
    };
    let scale: f64 = {
        let frob: f64 = m.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        frob.max(1.0)
    };

    let mut converged = false;
    for _sweep in 0..100 {
        if off_norm(&m) <= 1e-14 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of m.
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                // Accumulate the rotation into the eigenvector basis.
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged && off_norm(&m) > 1e-14 * scale {
        return Err(Error::numerical(
            "eigendecomposition",
            "jacobi sweeps did not converge in 100 iterations".to_string(),
        ));
    }

    // Sort ascending by eigenvalue, carrying the vector columns along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m.at(i, i).partial_cmp(&m.at(j, j)).expect("eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&i| m.at(i, i)).collect();
    let mut vectors = SquareMat::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, v.at(k, src));
        }
    }
    Ok(SymEig { values, vectors })
}

/// Symmetric positive-semidefinite square root `A^{1/2}` via
/// eigendecomposition; eigenvalues below zero (numerical noise) clamp to 0.
pub fn sym_sqrt(a: &SquareMat) -> Result<SquareMat> {
    let eig = sym_eigen(a)?;
    let n = a.n;
    // V · diag(sqrt(λ)) · Vᵀ
    let mut scaled = SquareMat::zeros(n);
    for j in 0..n {
        let r = eig.values[j].max(0.0).sqrt();
        for i in 0..n {
            scaled.set(i, j, eig.vectors.at(i, j) * r);
        }
    }
    scaled.matmul(&eig.vectors.transpose())
}
