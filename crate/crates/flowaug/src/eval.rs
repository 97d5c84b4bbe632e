//! Metrics: accuracy, perturbation-size statistics, robustness under attack,
//! and the Fréchet distance between Gaussian feature summaries.
//!
//! Everything here is a pure function of its inputs; attack randomness is
//! derived from the spec's seed on a dedicated evaluation stream, so reports
//! are reproducible byte for byte.

use crate::attack::{perturb_sample, AttackKind, PerturbationSpec};
use crate::classify::Classifier;
use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::linalg::{sym_eigen, sym_sqrt, SquareMat};
use crate::rng::{mix, sample_rng, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows per forward pass when scoring a whole split.
const ACCURACY_CHUNK: usize = 128;

/// Classification accuracy as a percentage in `[0, 100]`. Argmax ties break
/// toward the lowest class index.
pub fn accuracy<T: Scalar>(clf: &Classifier<T>, data: &DatasetHandle<T>) -> Result<f64> {
    if data.dim() != clf.input_dim() {
        return Err(Error::shape(
            "accuracy",
            format!("data dim {} vs classifier input {}", data.dim(), clf.input_dim()),
        ));
    }
    let (n, dim) = (data.n(), data.dim());
    let mut correct = 0usize;
    for start in (0..n).step_by(ACCURACY_CHUNK) {
        let stop = (start + ACCURACY_CHUNK).min(n);
        let x = Tensor::matrix(
            stop - start,
            dim,
            data.inputs().data()[start * dim..stop * dim].to_vec(),
        )?;
        let logits = clf.logits(&x)?;
        for (i, &label) in data.labels()[start..stop].iter().enumerate() {
            if logits.row(i)?.argmax() == label {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / n as f64)
}

/// Arithmetic means of per-pair `‖x̃ − x‖₂` and `‖x̃ − x‖_∞`, measured in the
/// input (image) space regardless of where the perturbation was constructed.
pub fn perturbation_stats<T: Scalar>(pairs: &[(Tensor<T>, Tensor<T>)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("perturbation_stats", "no pairs".to_string()));
    }
    let mut sum_l2 = 0.0f64;
    let mut sum_linf = 0.0f64;
    for (i, (clean, perturbed)) in pairs.iter().enumerate() {
        if clean.shape() != perturbed.shape() {
            return Err(Error::shape(
                "perturbation_stats",
                format!("pair {i}: {:?} vs {:?}", clean.shape(), perturbed.shape()),
            ));
        }
        let diff: Vec<f64> = clean
            .data()
            .iter()
            .zip(perturbed.data())
            .map(|(a, b)| b.widen() - a.widen())
            .collect();
        sum_l2 += diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        sum_linf += diff.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    }
    Ok((sum_l2 / pairs.len() as f64, sum_linf / pairs.len() as f64))
}

/// Outcome of attacking every sample of a split and re-scoring the model.
#[derive(Clone, Debug)]
pub struct RobustnessReport {
    /// Accuracy (percent) on the untouched split.
    pub clean_acc: f64,
    /// Accuracy (percent) on perturbed samples, over the rows that survived.
    pub attacked_acc: f64,
    /// `clean_acc − attacked_acc`, by definition.
    pub drop: f64,
    /// Rows whose attack failed, with the failure text; these rows are
    /// excluded from `attacked_acc` and the perturbation means.
    pub failed: Vec<(usize, String)>,
    /// Number of rows that produced a perturbed sample.
    pub evaluated: usize,
    /// Mean image-space `‖x̃ − x‖₂` over evaluated rows.
    pub mean_l2: f64,
    /// Mean image-space `‖x̃ − x‖_∞` over evaluated rows.
    pub mean_linf: f64,
}

/// Attacks every row of `data` per `spec` and measures the accuracy drop.
/// `flow` is required for latent attack kinds. Per-sample attack failures are
/// recorded and excluded rather than aborting; an attack that fails on every
/// row is an error. Kind `none` short-circuits to a zero drop.
pub fn robustness_eval<T: Scalar>(
    clf: &Classifier<T>,
    flow: Option<&FlowModel<T>>,
    spec: &PerturbationSpec,
    data: &DatasetHandle<T>,
) -> Result<RobustnessReport> {
    spec.validate()?;
    let clean_acc = accuracy(clf, data)?;
    if spec.kind == AttackKind::None {
        return Ok(RobustnessReport {
            clean_acc,
            attacked_acc: clean_acc,
            drop: 0.0,
            failed: Vec::new(),
            evaluated: data.n(),
            mean_l2: 0.0,
            mean_linf: 0.0,
        });
    }

    let (n, dim) = (data.n(), data.dim());
    let visit_seed = mix(spec.seed, stream::EVAL);
    let mut failed = Vec::new();
    let mut correct = 0usize;
    let mut evaluated = 0usize;
    let mut sum_l2 = 0.0f64;
    let mut sum_linf = 0.0f64;
    for i in 0..n {
        let row = data.inputs().row(i)?.reshape(&[1, dim])?;
        let label = data.labels()[i];
        let mut rng = sample_rng(visit_seed, i as u64);
        match perturb_sample(flow, Some(clf), &row, label, spec, &mut rng) {
            Ok(result) => {
                let diff: Vec<f64> = row
                    .data()
                    .iter()
                    .zip(result.perturbed.data())
                    .map(|(a, b)| b.widen() - a.widen())
                    .collect();
                sum_l2 += diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                sum_linf += diff.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
                let logits = clf.logits(&result.perturbed)?;
                if logits.row(0)?.argmax() == label {
                    correct += 1;
                }
                evaluated += 1;
            }
            Err(e) => failed.push((i, e.to_string())),
        }
    }
    if evaluated == 0 {
        return Err(Error::numerical(
            "robustness evaluation",
            format!("the attack failed on all {n} samples; first: {}", failed[0].1),
        ));
    }
    let attacked_acc = 100.0 * correct as f64 / evaluated as f64;
    Ok(RobustnessReport {
        clean_acc,
        attacked_acc,
        drop: clean_acc - attacked_acc,
        failed,
        evaluated,
        mean_l2: sum_l2 / evaluated as f64,
        mean_linf: sum_linf / evaluated as f64,
    })
}

// ---------------------------------------------------------------------------
// Feature distributions
// ---------------------------------------------------------------------------

/// Maps a batch of inputs `[n, d_in]` to fixed-width feature rows
/// `[n, d_feat]`.
pub trait FeatureExtractor<T: Scalar> {
    fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

/// The trained classifier's penultimate activations — the default feature
/// space for distribution comparisons at this scale. Reports must label
/// distances computed in this space as classifier-feature distances so they
/// are never confused with published large-model feature distances.
pub struct ClassifierFeatures<'a, T: Scalar>(pub &'a Classifier<T>);

impl<T: Scalar> FeatureExtractor<T> for ClassifierFeatures<'_, T> {
    fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.0.features(x)
    }
}

/// Raw inputs as their own features (for distribution checks in data space).
pub struct IdentityFeatures;

impl<T: Scalar> FeatureExtractor<T> for IdentityFeatures {
    fn extract(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.clone())
    }
}

/// First two moments of a feature sample: mean vector, unbiased covariance,
/// and the sample count they were estimated from.
#[derive(Clone, Debug)]
pub struct GaussianSummary {
    pub mean: Vec<f64>,
    pub cov: SquareMat,
    /// Number of rows behind the estimate (always reported alongside
    /// distances, since moment quality depends on it).
    pub count: usize,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Column means and the unbiased (divide by `N − 1`) sample covariance of
/// feature rows `[N, D]`. The covariance is assembled symmetrically and must
/// be positive semidefinite up to noise (eigenvalues ≥ −1e-8).
pub fn gaussian_summary<T: Scalar>(features: &Tensor<T>) -> Result<GaussianSummary> {
    if features.rank() != 2 {
        return Err(Error::shape(
            "gaussian_summary",
            format!("need [n, d] features, got {:?}", features.shape()),
        ));
    }
    let (n, d) = (features.shape()[0], features.shape()[1]);
    if n < 2 {
        return Err(Error::invalid(
            "gaussian_summary",
            format!("need at least 2 rows to estimate a covariance, got {n}"),
        ));
    }
    let data = features.data();
    let mut mean = vec![0.0f64; d];
    for row in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += data[row * d + j].widen();
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = SquareMat::zeros(d);
    for row in 0..n {
        for i in 0..d {
            let di = data[row * d + i].widen() - mean[i];
            for j in i..d {
                let dj = data[row * d + j].widen() - mean[j];
                cov.set(i, j, cov.at(i, j) + di * dj);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov.at(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    // A sample covariance is positive semidefinite by construction; anything
    // materially below zero signals broken inputs rather than rounding.
    let eig = sym_eigen(&cov)?;
    if let Some(&lo) = eig.values.first() {
        if lo < -1e-8 {
            return Err(Error::numerical(
                "gaussian_summary",
                format!("covariance eigenvalue {lo:.3e} below -1e-8"),
            ));
        }
    }
    Ok(GaussianSummary { mean, cov, count: n })
}

/// Fréchet distance between two Gaussians:
/// `‖m_a − m_b‖² + Tr(C_a) + Tr(C_b) − 2·Tr((C_a^{1/2} C_b C_a^{1/2})^{1/2})`,
/// with matrix square roots via symmetric eigendecomposition (negative
/// eigenvalues from noise clamp to zero). Nonnegative by construction up to
/// rounding, which is clamped away.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            "frechet_distance",
            format!("summary dims {} vs {}", a.dim(), b.dim()),
        ));
    }
    let mean_term: f64 =
        a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let root_a = sym_sqrt(&a.cov)?;
    let inner = root_a.matmul(&b.cov)?.matmul(&root_a)?;
    // Mathematically symmetric; matmul rounding can leave a tiny skew.
    let cross = sym_sqrt(&inner.symmetrized())?;
    let dist = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    Ok(dist.max(0.0))
}
