//! The multi-phase training loop: every time a sample is visited it is
//! replaced by a freshly computed perturbed version per the active phase's
//! spec, gradients flow through the traced classifier, and an optimizer step
//! follows each minibatch.
//!
//! Determinism contract: batch order comes from one shuffle stream, the
//! perturbation of dataset row `j` in epoch `e` comes from a generator keyed
//! by `(spec seed, e, j)` — so two same-seed runs are bit-identical and batch
//! composition cannot change any sample's perturbation.

use crate::attack::{perturb_sample, AttackKind, PerturbationSpec};
use crate::classify::optim::{schedule_rate, LrSchedule, Optimizer};
use crate::classify::{cross_entropy, traced_cross_entropy, Classifier};
use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::graph::Graph;
use crate::rng::{mix, rng_from, sample_rng, shuffled_indices, stream, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Extra stream label (beyond [`stream`]) for the per-epoch gradient audit,
/// so consuming audit randomness never shifts batch order.
const SPOT_CHECK_ROLE: u64 = 0x53_50_4f_54;

/// Rows per forward pass when computing epoch metrics.
const METRIC_CHUNK: usize = 128;

/// Spot-check tolerance: one random coordinate per epoch must match a central
/// finite difference to this relative error (floored denominator).
const SPOT_CHECK_REL_TOL: f64 = 1e-3;

/// One stage of a training plan: a perturbation applied to every sample
/// visit, for a number of epochs.
#[derive(Clone, Debug)]
pub struct TrainPhase {
    pub perturbation: PerturbationSpec,
    /// Must be ≥ 1.
    pub epochs: usize,
}

impl TrainPhase {
    pub fn new(perturbation: PerturbationSpec, epochs: usize) -> Self {
        TrainPhase { perturbation, epochs }
    }
}

/// Loop-level knobs that are not phase-specific.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    /// Rows per optimizer step (the trailing batch may be smaller).
    pub batch_size: usize,
    /// Seed for batch shuffling and the gradient audit stream.
    pub seed: u64,
}

/// Per-epoch summary. Accuracy and loss are measured on the *clean* train and
/// test splits after the epoch's final optimizer step (perturbations shape
/// the gradients, not the reported metrics).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based position in the overall run.
    pub epoch: usize,
    /// Label of the active perturbation spec.
    pub phase: String,
    /// Learning rate of the last optimizer step in this epoch.
    pub lr: f64,
    pub train_acc: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_loss: f64,
}

impl EpochRecord {
    /// One line of the structured text log.
    pub fn log_line(&self) -> String {
        format!(
            "epoch={} phase=\"{}\" lr={:.6e} train_acc={:.4} train_loss={:.6} test_acc={:.4} test_loss={:.6}",
            self.epoch, self.phase, self.lr, self.train_acc, self.train_loss, self.test_acc, self.test_loss
        )
    }
}

/// The full epoch-by-epoch trace of one training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn total_epochs(&self) -> usize {
        self.records.len()
    }

    /// Line-oriented text log, one record per epoch.
    pub fn to_log(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.log_line());
            out.push('\n');
        }
        out
    }
}

/// Runs the multi-phase plan against `clf` in place.
///
/// Preconditions: `phases` nonempty with each spec valid and epochs ≥ 1, and
/// `flow` present exactly when some phase perturbs in latent space. A failing
/// per-sample attack aborts the run with the dataset row named. Test-split
/// metrics are always measured on clean samples (the alternative — attacking
/// the test split too — is defensible, but clean curves are what the reported
/// accuracy tables use).
#[allow(clippy::too_many_arguments)]
pub fn train_classifier<T: Scalar>(
    clf: &mut Classifier<T>,
    flow: Option<&FlowModel<T>>,
    train: &DatasetHandle<T>,
    test: &DatasetHandle<T>,
    phases: &[TrainPhase],
    optimizer: &mut Optimizer,
    schedule: &LrSchedule,
    options: &TrainOptions,
) -> Result<TrainingHistory> {
    validate_plan(clf, flow, train, test, phases, schedule, options)?;

    let n = train.n();
    let mut order_rng = rng_from(mix(options.seed, stream::CLF_TRAIN));
    let mut spot_rng = rng_from(mix(options.seed, SPOT_CHECK_ROLE));
    let mut records = Vec::new();
    let mut step: u64 = 0;
    let mut epoch_idx: usize = 0;

    for phase in phases {
        for _ in 0..phase.epochs {
            let spec = &phase.perturbation;
            let visit_seed = mix(spec.seed, epoch_idx as u64);
            let order = shuffled_indices(n, &mut order_rng);
            let mut last_rate = schedule_rate(schedule, step, epoch_idx);
            let mut audited = false;
            for chunk in order.chunks(options.batch_size) {
                let (bx, by) = assemble_batch(clf, flow, train, chunk, spec, visit_seed)?;

                let mut g = Graph::new();
                let param_ids = clf.bind(&mut g)?;
                let x_id = g.constant(bx.clone())?;
                let logits = clf.traced_logits(&mut g, x_id, Some(&param_ids))?;
                let loss_id = traced_cross_entropy(&mut g, logits, &by)?;
                g.backward(loss_id)?;
                let grads: Vec<Tensor<T>> = param_ids
                    .iter()
                    .zip(clf.params())
                    .map(|(&id, p)| g.grad(id).unwrap_or_else(|| Tensor::zeros(p.shape())))
                    .collect();

                if !audited {
                    spot_check_gradient(clf, &bx, &by, &grads, &mut spot_rng, epoch_idx)?;
                    audited = true;
                }

                let rate = schedule_rate(schedule, step, epoch_idx);
                let mut params = clf.params_mut();
                optimizer.step(&mut params, &grads, rate)?;
                step += 1;
                last_rate = rate;
            }

            let (train_acc, train_loss) = clean_metrics(clf, train)?;
            let (test_acc, test_loss) = clean_metrics(clf, test)?;
            records.push(EpochRecord {
                epoch: epoch_idx + 1,
                phase: spec.label(),
                lr: last_rate,
                train_acc,
                train_loss,
                test_acc,
                test_loss,
            });
            epoch_idx += 1;
        }
    }

    Ok(TrainingHistory { records })
}

fn validate_plan<T: Scalar>(
    clf: &Classifier<T>,
    flow: Option<&FlowModel<T>>,
    train: &DatasetHandle<T>,
    test: &DatasetHandle<T>,
    phases: &[TrainPhase],
    schedule: &LrSchedule,
    options: &TrainOptions,
) -> Result<()> {
    if phases.is_empty() {
        return Err(Error::invalid("training plan", "no phases".to_string()));
    }
    for (i, phase) in phases.iter().enumerate() {
        if phase.epochs == 0 {
            return Err(Error::invalid(
                "training plan",
                format!("phase {i} ({}) has zero epochs", phase.perturbation.label()),
            ));
        }
        phase.perturbation.validate()?;
    }
    let any_latent = phases.iter().any(|p| p.perturbation.kind.is_latent());
    match (any_latent, flow) {
        (true, None) => {
            return Err(Error::invalid(
                "training plan",
                "a latent perturbation phase needs a flow model".to_string(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::invalid(
                "training plan",
                "a flow model was supplied but no phase perturbs in latent space".to_string(),
            ))
        }
        _ => {}
    }
    schedule.validate()?;
    if options.batch_size == 0 {
        return Err(Error::invalid("training plan", "batch size must be ≥ 1".to_string()));
    }
    if train.dim() != clf.input_dim() {
        return Err(Error::shape(
            "train_classifier",
            format!("train data dim {} vs classifier input {}", train.dim(), clf.input_dim()),
        ));
    }
    if test.dim() != clf.input_dim() {
        return Err(Error::shape(
            "train_classifier",
            format!("test data dim {} vs classifier input {}", test.dim(), clf.input_dim()),
        ));
    }
    if train.num_classes() != clf.num_classes() || test.num_classes() != clf.num_classes() {
        return Err(Error::invalid(
            "train_classifier",
            format!(
                "class counts differ: train {}, test {}, classifier {}",
                train.num_classes(),
                test.num_classes(),
                clf.num_classes()
            ),
        ));
    }
    if let Some(f) = flow {
        if f.dim() != train.dim() {
            return Err(Error::shape(
                "train_classifier",
                format!("flow dim {} vs data dim {}", f.dim(), train.dim()),
            ));
        }
        if f.is_conditional() && f.label_width() < train.num_classes() {
            return Err(Error::invalid(
                "train_classifier",
                format!(
                    "flow conditioning width {} cannot cover {} classes",
                    f.label_width(),
                    train.num_classes()
                ),
            ));
        }
    }
    Ok(())
}

/// Gathers the rows named by `rows` (dataset indices), replacing each with
/// its freshly attacked version unless the phase kind is `none`. The
/// generator for row `j` depends only on `(visit_seed, j)`.
fn assemble_batch<T: Scalar>(
    clf: &Classifier<T>,
    flow: Option<&FlowModel<T>>,
    data: &DatasetHandle<T>,
    rows: &[usize],
    spec: &PerturbationSpec,
    visit_seed: u64,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let dim = data.dim();
    let mut x = Tensor::zeros(&[rows.len(), dim]);
    let mut labels = Vec::with_capacity(rows.len());
    for (slot, &j) in rows.iter().enumerate() {
        let label = data.labels()[j];
        let row = data.inputs().row(j)?.reshape(&[1, dim])?;
        let row = if spec.kind == AttackKind::None {
            row
        } else {
            let mut rng = sample_rng(visit_seed, j as u64);
            perturb_sample(flow, Some(clf), &row, label, spec, &mut rng)
                .map_err(|e| e.in_stage(format!("{} on sample {j}", spec.kind.name())))?
                .perturbed
        };
        x.data_mut()[slot * dim..(slot + 1) * dim].copy_from_slice(row.data());
        labels.push(label);
    }
    Ok((x, labels))
}

/// Central finite-difference audit of one randomly chosen parameter
/// coordinate against the analytic gradient, on the batch that produced it.
/// The parameter is restored bit-exactly afterwards.
fn spot_check_gradient<T: Scalar>(
    clf: &mut Classifier<T>,
    bx: &Tensor<T>,
    labels: &[usize],
    grads: &[Tensor<T>],
    rng: &mut Rng,
    epoch: usize,
) -> Result<()> {
    use rand::Rng as _;
    let total: usize = grads.iter().map(|g| g.numel()).sum();
    let pick = rng.random_range(0..total);
    let mut k = 0usize;
    let mut c = pick;
    while c >= grads[k].numel() {
        c -= grads[k].numel();
        k += 1;
    }
    let analytic = grads[k].data()[c].widen();
    let h = if T::BYTES == 4 { 1e-2 } else { 1e-5 };
    let base = clf.params()[k].data()[c];

    clf.params_mut()[k].data_mut()[c] = T::narrow(base.widen() + h);
    let plus: f64 = cross_entropy(&clf.logits(bx)?, labels)?.widen();
    clf.params_mut()[k].data_mut()[c] = T::narrow(base.widen() - h);
    let minus: f64 = cross_entropy(&clf.logits(bx)?, labels)?.widen();
    clf.params_mut()[k].data_mut()[c] = base;

    let fd = (plus - minus) / (2.0 * h);
    let rel = (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(0.05);
    if rel > SPOT_CHECK_REL_TOL {
        return Err(Error::numerical(
            "gradient spot check",
            format!(
                "epoch {epoch}: parameter {k} coordinate {c}: analytic {analytic:.6e} vs finite difference {fd:.6e} (rel {rel:.3e})"
            ),
        ));
    }
    Ok(())
}

/// `(accuracy, mean cross-entropy)` over a clean split, in fixed-size chunks
/// so memory stays bounded on wide models.
fn clean_metrics<T: Scalar>(clf: &Classifier<T>, data: &DatasetHandle<T>) -> Result<(f64, f64)> {
    let (n, dim) = (data.n(), data.dim());
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    for start in (0..n).step_by(METRIC_CHUNK) {
        let stop = (start + METRIC_CHUNK).min(n);
        let rows = stop - start;
        let x = Tensor::matrix(rows, dim, data.inputs().data()[start * dim..stop * dim].to_vec())?;
        let labels = &data.labels()[start..stop];
        let logits = clf.logits(&x)?;
        let chunk_loss: T = cross_entropy(&logits, labels)?;
        loss_sum += chunk_loss.widen() * rows as f64;
        for (i, &label) in labels.iter().enumerate() {
            if logits.row(i)?.argmax() == label {
                correct += 1;
            }
        }
    }
    Ok((correct as f64 / n as f64, loss_sum / n as f64))
}
