//! Norm-ball projections and the perturbation procedures: random latent
//! noise, iterative latent ascent, and the image-space projected-gradient
//! baseline.
//!
//! The two iterative kinds share one core loop; the image-space baseline is
//! exactly that loop run through an identity flow plus a `[0,1]` box clip
//! after each projection, so with the identity flow and matched seeds the two
//! procedures produce bit-identical iterates.

use crate::classify::{cross_entropy, traced_cross_entropy, Classifier};
use crate::data::one_hot;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::graph::Graph;
use crate::rng::{sample_rng, standard_normal, uniform, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Norm used for perturbation budgets and step normalization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpNorm {
    L2,
    LInf,
}

impl LpNorm {
    pub fn name(self) -> &'static str {
        match self {
            LpNorm::L2 => "l2",
            LpNorm::LInf => "linf",
        }
    }
}

/// Which perturbation procedure to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    /// Pass inputs through untouched.
    None,
    /// Random latent noise: `Δ = Π(ε·η)`, `η ~ N(0, I)`.
    RandomizedLa,
    /// Iterative latent ascent on the classifier loss.
    AdversarialLa,
    /// Image-space projected gradient ascent (identity flow + box clip).
    PgdImage,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::RandomizedLa => "randomized_la",
            AttackKind::AdversarialLa => "adversarial_la",
            AttackKind::PgdImage => "pgd_image",
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, AttackKind::AdversarialLa | AttackKind::PgdImage)
    }

    /// Whether the perturbation is built in latent space (needs a flow model).
    pub fn is_latent(self) -> bool {
        matches!(self, AttackKind::RandomizedLa | AttackKind::AdversarialLa)
    }
}

/// Full description of a perturbation, sufficient to reproduce it together
/// with a base seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub kind: AttackKind,
    /// Budget norm. `None` means untruncated, which only the random kind
    /// supports.
    pub norm: Option<LpNorm>,
    /// Perturbation budget ε ≥ 0.
    pub epsilon: f64,
    /// Step size α > 0 (iterative kinds only).
    pub alpha: f64,
    /// Iteration count k (iterative kinds only).
    pub steps: usize,
    /// Base seed; per-sample generators derive from (seed, visit, index).
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn none() -> Self {
        PerturbationSpec {
            kind: AttackKind::None,
            norm: None,
            epsilon: 0.0,
            alpha: 0.0,
            steps: 0,
            seed: 0,
        }
    }

    pub fn randomized(norm: Option<LpNorm>, epsilon: f64, seed: u64) -> Self {
        PerturbationSpec { kind: AttackKind::RandomizedLa, norm, epsilon, alpha: 0.0, steps: 0, seed }
    }

    pub fn adversarial(norm: LpNorm, epsilon: f64, alpha: f64, steps: usize, seed: u64) -> Self {
        PerturbationSpec {
            kind: AttackKind::AdversarialLa,
            norm: Some(norm),
            epsilon,
            alpha,
            steps,
            seed,
        }
    }

    pub fn pgd(norm: LpNorm, epsilon: f64, alpha: f64, steps: usize, seed: u64) -> Self {
        PerturbationSpec { kind: AttackKind::PgdImage, norm: Some(norm), epsilon, alpha, steps, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(
                "perturbation spec",
                format!("budget {} must be finite and nonnegative", self.epsilon),
            ));
        }
        if self.kind.is_iterative() {
            if self.norm.is_none() {
                return Err(Error::invalid(
                    "perturbation spec",
                    format!("{} needs an explicit norm", self.kind.name()),
                ));
            }
            if !(self.alpha > 0.0 && self.alpha.is_finite()) {
                return Err(Error::invalid(
                    "perturbation spec",
                    format!("step size {} must be positive", self.alpha),
                ));
            }
        }
        Ok(())
    }

    /// Short human-readable tag, used in training history and reports.
    pub fn label(&self) -> String {
        let norm = match self.norm {
            Some(n) => n.name().to_string(),
            None => "untruncated".to_string(),
        };
        match self.kind {
            AttackKind::None => "none".to_string(),
            AttackKind::RandomizedLa => {
                format!("randomized_la({norm}, eps={})", self.epsilon)
            }
            AttackKind::AdversarialLa | AttackKind::PgdImage => format!(
                "{}({norm}, eps={}, alpha={}, k={})",
                self.kind.name(),
                self.epsilon,
                self.alpha,
                self.steps
            ),
        }
    }
}

/// Outcome of one perturbation on one sample.
#[derive(Clone, Debug)]
pub struct AttackResult<T: Scalar> {
    /// Perturbed input `x̃`, same shape as the input row.
    pub perturbed: Tensor<T>,
    /// Latent delta (latent kinds only).
    pub latent_delta: Option<Tensor<T>>,
    /// Classifier loss at `x̃` (kinds that see a classifier).
    pub loss: Option<T>,
    /// Delta norm in the spec's norm (ℓ2 when untruncated); latent-space for
    /// latent kinds, image-space for the projected-gradient baseline.
    pub delta_norm: f64,
    /// Iterations skipped by the vanishing-gradient guard.
    pub skipped_steps: usize,
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// Flat ℓ2 norm, accumulated in `f64`.
pub fn l2_norm<T: Scalar>(v: &Tensor<T>) -> f64 {
    v.data().iter().map(|x| x.widen() * x.widen()).sum::<f64>().sqrt()
}

/// Flat ℓ∞ norm.
pub fn linf_norm<T: Scalar>(v: &Tensor<T>) -> f64 {
    v.data().iter().map(|x| x.widen().abs()).fold(0.0, f64::max)
}

pub fn norm_of<T: Scalar>(v: &Tensor<T>, norm: LpNorm) -> f64 {
    match norm {
        LpNorm::L2 => l2_norm(v),
        LpNorm::LInf => linf_norm(v),
    }
}

/// Scales `v` onto the ε-sphere when it lies outside the ε-ball; inside, the
/// input is returned unchanged.
pub fn project_l2<T: Scalar>(v: &Tensor<T>, epsilon: f64) -> Tensor<T> {
    let n = l2_norm(v);
    if n <= epsilon {
        return v.clone();
    }
    if epsilon == 0.0 {
        let mut out = v.clone();
        out.data_mut().fill(T::zero());
        return out;
    }
    let factor = T::narrow(epsilon / n);
    v.map(|x| x * factor)
}

/// Component-wise clip into `[−ε, +ε]`.
pub fn project_linf<T: Scalar>(v: &Tensor<T>, epsilon: f64) -> Tensor<T> {
    let e = T::narrow(epsilon);
    v.map(|x| {
        if x > e {
            e
        } else if x < -e {
            -e
        } else {
            x
        }
    })
}

pub fn project<T: Scalar>(v: &Tensor<T>, norm: LpNorm, epsilon: f64) -> Tensor<T> {
    match norm {
        LpNorm::L2 => project_l2(v, epsilon),
        LpNorm::LInf => project_linf(v, epsilon),
    }
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// Steps with gradient ℓ2 norm below this are skipped instead of dividing by
/// a vanishing quantity.
pub const GRAD_FLOOR: f64 = 1e-12;

fn check_single_row<T: Scalar>(x: &Tensor<T>, dim: usize, what: &'static str) -> Result<()> {
    if x.rank() != 2 || x.shape() != [1, dim] {
        return Err(Error::shape(what, format!("need one [1, {dim}] row, got {:?}", x.shape())));
    }
    Ok(())
}

fn ensure_finite<T: Scalar>(t: &Tensor<T>, what: &'static str) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(what, "non-finite decode output".to_string()))
    }
}

/// One-hot conditioning row for a conditional flow, or `None` for an
/// unconditional one.
fn flow_label_row<T: Scalar>(flow: &FlowModel<T>, label: Option<usize>) -> Result<Option<Tensor<T>>> {
    if !flow.is_conditional() {
        return Ok(None);
    }
    let width = flow.label_width();
    match label {
        Some(l) if l < width => Ok(Some(one_hot(&[l], width))),
        Some(l) => Err(Error::invalid(
            "flow label",
            format!("class {l} out of conditioning width {width}"),
        )),
        None => Err(Error::invalid(
            "flow label",
            "conditional flow needs a class label".to_string(),
        )),
    }
}

/// Random start inside the ε-ball. ℓ∞ draws each component uniformly in the
/// box; ℓ2 draws a Gaussian direction, then a uniform radius in `[0, ε)`
/// (direction first, radius second).
fn random_start<T: Scalar>(dim: usize, norm: LpNorm, epsilon: f64, rng: &mut Rng) -> Tensor<T> {
    let mut delta = Tensor::zeros(&[1, dim]);
    if epsilon == 0.0 {
        return delta;
    }
    match norm {
        LpNorm::LInf => {
            for slot in delta.data_mut() {
                *slot = uniform(rng, -epsilon, epsilon);
            }
        }
        LpNorm::L2 => {
            let eta: Vec<f64> = (0..dim).map(|_| standard_normal::<f64>(rng)).collect();
            let n = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
            let radius: f64 = uniform(rng, 0.0, epsilon);
            if n >= GRAD_FLOOR {
                for (slot, e) in delta.data_mut().iter_mut().zip(&eta) {
                    *slot = T::narrow(e * radius / n);
                }
            }
        }
    }
    delta
}

/// Loss of the classifier on one decoded sample, via the plain kernels.
fn loss_at<T: Scalar>(clf: &Classifier<T>, x: &Tensor<T>, label: usize) -> Result<T> {
    cross_entropy(&clf.logits(x)?, &[label])
}

/// Gradient of the classifier loss at `decode(z + delta)` with respect to
/// `delta`; parameters of both models are constants.
fn loss_gradient<T: Scalar>(
    flow: &FlowModel<T>,
    clf: &Classifier<T>,
    z: &Tensor<T>,
    delta: &Tensor<T>,
    label: usize,
    flow_label: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let delta_id = g.input(&delta.clone().requiring_grad())?;
    let z_id = g.constant(z.clone())?;
    let point = g.add(z_id, delta_id)?;
    let label_id = match flow_label {
        Some(row) => Some(g.constant(row.clone())?),
        None => None,
    };
    let decoded = flow.traced_decode(&mut g, point, label_id)?;
    let logits = clf.traced_logits(&mut g, decoded, None)?;
    let loss = traced_cross_entropy(&mut g, logits, &[label])?;
    g.backward(loss)?;
    g.grad(delta_id)
        .ok_or_else(|| Error::numerical("attack gradient", "no gradient reached delta".to_string()))
}

/// The shared ascent loop behind both iterative kinds.
///
/// `clip_unit_box` re-expresses the delta after every projection so that
/// `z + Δ` stays inside `[0, 1]` (image-space baseline only; the clip can
/// only shrink the delta, so the budget still holds).
#[allow(clippy::too_many_arguments)]
fn ascend<T: Scalar>(
    flow: &FlowModel<T>,
    clf: &Classifier<T>,
    x: &Tensor<T>,
    label: usize,
    flow_label: Option<&Tensor<T>>,
    spec: &PerturbationSpec,
    rng: &mut Rng,
    clip_unit_box: bool,
) -> Result<AttackResult<T>> {
    let norm = spec.norm.expect("validated: iterative kinds carry a norm");
    let dim = flow.dim();
    check_single_row(x, dim, spec.kind.name())?;
    if label >= clf.num_classes() {
        return Err(Error::invalid(
            "attack label",
            format!("class {label} out of {} classes", clf.num_classes()),
        ));
    }

    if spec.epsilon == 0.0 {
        // Exact passthrough: the ball is a single point.
        let loss = loss_at(clf, x, label)?;
        return Ok(AttackResult {
            perturbed: x.clone(),
            latent_delta: Some(Tensor::zeros(&[1, dim])),
            loss: Some(loss),
            delta_norm: 0.0,
            skipped_steps: 0,
        });
    }

    let (z, _) = flow.forward(x, flow_label)?;
    let mut delta = random_start::<T>(dim, norm, spec.epsilon, rng);
    delta = project(&delta, norm, spec.epsilon);
    if clip_unit_box {
        delta = clip_delta_to_unit_box(&z, &delta);
    }

    let mut skipped = 0usize;
    for _ in 0..spec.steps {
        let grad = loss_gradient(flow, clf, &z, &delta, label, flow_label)?;
        let gnorm = l2_norm(&grad);
        if gnorm < GRAD_FLOOR {
            skipped += 1;
            continue;
        }
        let stepped = match norm {
            LpNorm::L2 => {
                let factor = T::narrow(spec.alpha / gnorm);
                let mut d = delta.clone();
                for (slot, g) in d.data_mut().iter_mut().zip(grad.data()) {
                    *slot = *slot + *g * factor;
                }
                d
            }
            LpNorm::LInf => {
                let alpha = T::narrow(spec.alpha);
                let mut d = delta.clone();
                for (slot, g) in d.data_mut().iter_mut().zip(grad.data()) {
                    let sign = if *g > T::zero() {
                        T::one()
                    } else if *g < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    *slot = *slot + alpha * sign;
                }
                d
            }
        };
        delta = project(&stepped, norm, spec.epsilon);
        if clip_unit_box {
            delta = clip_delta_to_unit_box(&z, &delta);
        }
    }

    let perturbed_latent = {
        let mut p = z.clone();
        for (slot, d) in p.data_mut().iter_mut().zip(delta.data()) {
            *slot = *slot + *d;
        }
        p
    };
    let perturbed = flow.inverse(&perturbed_latent, flow_label)?;
    ensure_finite(&perturbed, spec.kind.name())?;
    let loss = loss_at(clf, &perturbed, label)?;
    Ok(AttackResult {
        delta_norm: norm_of(&delta, norm),
        latent_delta: Some(delta),
        loss: Some(loss),
        perturbed,
        skipped_steps: skipped,
    })
}

/// Shrinks `delta` so that `base + delta` lies in `[0, 1]` component-wise.
/// Coordinates the box does not bind are left untouched (recomputing them as
/// `(b + δ) − b` would inject a rounding step where none is needed).
fn clip_delta_to_unit_box<T: Scalar>(base: &Tensor<T>, delta: &Tensor<T>) -> Tensor<T> {
    let mut out = delta.clone();
    for (slot, b) in out.data_mut().iter_mut().zip(base.data()) {
        let point = *b + *slot;
        if point < T::zero() {
            *slot = T::zero() - *b;
        } else if point > T::one() {
            *slot = T::one() - *b;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// The three procedures
// ---------------------------------------------------------------------------

/// Random latent perturbation: `x̃ = F⁻¹(F(x) + Π(ε·η))` with `η ~ N(0, I)`.
/// `norm: None` in the spec skips the projection (untruncated noise).
/// `label` conditions the flow when it is conditional.
pub fn randomized_la<T: Scalar>(
    flow: &FlowModel<T>,
    x: &Tensor<T>,
    label: Option<usize>,
    spec: &PerturbationSpec,
    rng: &mut Rng,
) -> Result<AttackResult<T>> {
    if spec.kind != AttackKind::RandomizedLa {
        return Err(Error::invalid("attack kind", format!("{} is not randomized_la", spec.kind.name())));
    }
    spec.validate()?;
    let dim = flow.dim();
    check_single_row(x, dim, "randomized_la")?;
    let flow_label = flow_label_row(flow, label)?;

    if spec.epsilon == 0.0 {
        return Ok(AttackResult {
            perturbed: x.clone(),
            latent_delta: Some(Tensor::zeros(&[1, dim])),
            loss: None,
            delta_norm: 0.0,
            skipped_steps: 0,
        });
    }

    let (z, _) = flow.forward(x, flow_label.as_ref())?;
    let mut delta = Tensor::<T>::zeros(&[1, dim]);
    let eps = T::narrow(spec.epsilon);
    for slot in delta.data_mut() {
        *slot = standard_normal::<T>(rng) * eps;
    }
    if let Some(norm) = spec.norm {
        delta = project(&delta, norm, spec.epsilon);
    }
    let mut point = z.clone();
    for (slot, d) in point.data_mut().iter_mut().zip(delta.data()) {
        *slot = *slot + *d;
    }
    let perturbed = flow.inverse(&point, flow_label.as_ref())?;
    ensure_finite(&perturbed, "randomized_la")?;
    Ok(AttackResult {
        delta_norm: norm_of(&delta, spec.norm.unwrap_or(LpNorm::L2)),
        latent_delta: Some(delta),
        loss: None,
        perturbed,
        skipped_steps: 0,
    })
}

/// Iterative latent ascent: k projected gradient steps on the classifier
/// loss of the decoded sample, searching within the latent ε-ball.
pub fn adversarial_la<T: Scalar>(
    flow: &FlowModel<T>,
    clf: &Classifier<T>,
    x: &Tensor<T>,
    label: usize,
    spec: &PerturbationSpec,
    rng: &mut Rng,
) -> Result<AttackResult<T>> {
    if spec.kind != AttackKind::AdversarialLa {
        return Err(Error::invalid("attack kind", format!("{} is not adversarial_la", spec.kind.name())));
    }
    spec.validate()?;
    let flow_label = flow_label_row(flow, Some(label))?;
    ascend(flow, clf, x, label, flow_label.as_ref(), spec, rng, false)
}

/// Image-space projected gradient ascent: the same loop through an identity
/// flow, with `x̃` clipped into `[0, 1]` after every ball projection.
pub fn pgd_image<T: Scalar>(
    clf: &Classifier<T>,
    x: &Tensor<T>,
    label: usize,
    spec: &PerturbationSpec,
    rng: &mut Rng,
) -> Result<AttackResult<T>> {
    if spec.kind != AttackKind::PgdImage {
        return Err(Error::invalid("attack kind", format!("{} is not pgd_image", spec.kind.name())));
    }
    spec.validate()?;
    if x.rank() != 2 || x.shape()[0] != 1 {
        return Err(Error::shape("pgd_image", format!("need one [1, d] row, got {:?}", x.shape())));
    }
    let identity = FlowModel::<T>::identity(x.shape()[1]);
    let mut result = ascend(&identity, clf, x, label, None, spec, rng, true)?;
    // The latent space IS image space here; report the image-space delta only.
    result.latent_delta = None;
    Ok(result)
}

// ---------------------------------------------------------------------------
// Batch driver
// ---------------------------------------------------------------------------

/// Per-sample outcome of a batch perturbation (tensors omitted).
#[derive(Clone, Debug)]
pub struct AttackOutcome<T: Scalar> {
    pub delta_norm: f64,
    pub loss: Option<T>,
    pub skipped_steps: usize,
}

/// Runs one `[1, dim]` row through the attack selected by `spec.kind`,
/// dispatching to the matching entry point. `flow` is required for the latent
/// kinds, `clf` for the gradient-driven kinds; kind `none` is rejected here
/// because only callers know what a pass-through means for them.
pub fn perturb_sample<T: Scalar>(
    flow: Option<&FlowModel<T>>,
    clf: Option<&Classifier<T>>,
    x: &Tensor<T>,
    label: usize,
    spec: &PerturbationSpec,
    rng: &mut Rng,
) -> Result<AttackResult<T>> {
    let need_flow = || {
        flow.ok_or_else(|| {
            Error::invalid("perturb_sample", format!("{} needs a flow model", spec.kind.name()))
        })
    };
    let need_clf = || {
        clf.ok_or_else(|| {
            Error::invalid("perturb_sample", format!("{} needs a classifier", spec.kind.name()))
        })
    };
    match spec.kind {
        AttackKind::None => {
            Err(Error::invalid("perturb_sample", "kind none has no attack to run".to_string()))
        }
        AttackKind::RandomizedLa => randomized_la(need_flow()?, x, Some(label), spec, rng),
        AttackKind::AdversarialLa => adversarial_la(need_flow()?, need_clf()?, x, label, spec, rng),
        AttackKind::PgdImage => pgd_image(need_clf()?, x, label, spec, rng),
    }
}

/// Applies `spec` to every row of `x`, each sample on its own generator
/// derived from `(visit_seed, row index)`, so batch order cannot change
/// results. Kind `none` passes the batch through untouched. A failing sample
/// aborts with its index named.
pub fn perturb_batch<T: Scalar>(
    flow: Option<&FlowModel<T>>,
    clf: Option<&Classifier<T>>,
    x: &Tensor<T>,
    labels: &[usize],
    spec: &PerturbationSpec,
    visit_seed: u64,
) -> Result<(Tensor<T>, Vec<AttackOutcome<T>>)> {
    spec.validate()?;
    if spec.kind == AttackKind::None {
        return Ok((x.clone(), Vec::new()));
    }
    if x.rank() != 2 {
        return Err(Error::shape("perturb_batch", format!("need [n, d], got {:?}", x.shape())));
    }
    let (n, dim) = (x.shape()[0], x.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape("perturb_batch", format!("{} labels for {n} rows", labels.len())));
    }
    let mut out = Tensor::zeros(&[n, dim]);
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i)?.reshape(&[1, dim])?;
        let mut rng = sample_rng(visit_seed, i as u64);
        let result = perturb_sample(flow, clf, &row, labels[i], spec, &mut rng)
            .map_err(|e| e.in_stage(format!("{} on sample {i}", spec.kind.name())))?;
        out.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(result.perturbed.data());
        outcomes.push(AttackOutcome {
            delta_norm: result.delta_norm,
            loss: result.loss,
            skipped_steps: result.skipped_steps,
        });
    }
    Ok((out, outcomes))
}
