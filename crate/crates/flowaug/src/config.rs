//! Experiment configuration: schema-versioned structured text (TOML) with
//! unknown keys rejected.
//!
//! A configuration file describes one full experiment — dataset, optional
//! flow, classifier, training phases, and evaluation plan — plus the global
//! seed and element precision. Parsing is strict on purpose: a misspelled
//! key fails loudly instead of silently running a different experiment, and
//! the `schema_version` field must match [`SCHEMA_VERSION`] exactly.
//!
//! Validation goes beyond types: numeric ranges are checked, attack
//! descriptions must be internally coherent (e.g. an iterative attack needs
//! a step size, `kind = "none"` must not carry a budget), latent attacks
//! require a `[flow]` table, and every referenced file must already exist —
//! all before any compute starts.
//!
//! Seeds: every attack description accepts an optional `seed`; omitted seeds
//! default to the global `seed`. Training and evaluation pull from disjoint
//! derived streams internally, so sharing one seed everywhere still
//! decorrelates their draws.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackKind, LpNorm, PerturbationSpec};
use crate::classify::optim::ScheduleKind;
use crate::classify::{LrSchedule, Optimizer, TrainPhase};
use crate::error::{Error, Result};
use crate::flow::FlowConfig;

/// The one configuration schema this build reads and writes.
pub const SCHEMA_VERSION: u64 = 1;

fn cfg_err(detail: impl Into<String>) -> Error {
    Error::Config(detail.into())
}

// ---------------------------------------------------------------------------
// Leaf enums
// ---------------------------------------------------------------------------

/// Element precision for every tensor in the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(cfg_err(format!("precision `{other}`; expected `f32` or `f64`"))),
        }
    }
}

/// Perturbation procedure named in a phase or evaluation attack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindChoice {
    None,
    RandomizedLa,
    AdversarialLa,
    PgdImage,
}

impl KindChoice {
    fn to_kind(self) -> AttackKind {
        match self {
            KindChoice::None => AttackKind::None,
            KindChoice::RandomizedLa => AttackKind::RandomizedLa,
            KindChoice::AdversarialLa => AttackKind::AdversarialLa,
            KindChoice::PgdImage => AttackKind::PgdImage,
        }
    }
}

/// Budget norm named in an attack description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormChoice {
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    LInf,
}

impl NormChoice {
    fn to_norm(self) -> LpNorm {
        match self {
            NormChoice::L2 => LpNorm::L2,
            NormChoice::LInf => LpNorm::LInf,
        }
    }
}

/// Optimizer family for classifier training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    #[default]
    Sgd,
    Adam,
}

/// Learning-rate evolution rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleChoice {
    #[default]
    Constant,
    Exponential,
    Milestones,
    Warmup,
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// What `DatasetConfig::name` resolves to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// `gaussian_mixture_<k>`: `k` Gaussian blobs on a circle.
    GaussianMixture(usize),
    /// `two_arcs`: two interleaved half-moons.
    TwoArcs,
    /// `rings_<k>`: `k` concentric rings.
    Rings(usize),
    /// `idx`: an image/label file pair per split in IDX format.
    Idx,
}

/// Dataset selection plus the fixed training-subset draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// `gaussian_mixture_<k>`, `two_arcs`, `rings_<k>`, or `idx`.
    pub name: String,
    /// Fraction of the training split kept (class-stratified), in `(0, 1]`.
    #[serde(default = "defaults::fraction")]
    pub fraction: f64,
    /// Seed for the subset draw; independent of everything else.
    #[serde(default)]
    pub subset_seed: u64,
    /// Generation seed (synthetic names only).
    #[serde(default)]
    pub seed: u64,
    /// Training-split size (synthetic names only).
    #[serde(default = "defaults::train_n")]
    pub train_n: usize,
    /// Test-split size (synthetic names only).
    #[serde(default = "defaults::test_n")]
    pub test_n: usize,
    /// Coordinate noise (synthetic names only).
    #[serde(default = "defaults::noise")]
    pub noise: f64,
    /// Class count (`idx` only; synthetic names imply it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
}

impl DatasetConfig {
    /// Parses `name` into its dataset family (and class count, if encoded).
    pub fn kind(&self) -> Result<DatasetKind> {
        let name = self.name.as_str();
        if name == "two_arcs" {
            return Ok(DatasetKind::TwoArcs);
        }
        if name == "idx" {
            return Ok(DatasetKind::Idx);
        }
        for (prefix, build) in [
            ("gaussian_mixture_", DatasetKind::GaussianMixture as fn(usize) -> DatasetKind),
            ("rings_", DatasetKind::Rings as fn(usize) -> DatasetKind),
        ] {
            if let Some(rest) = name.strip_prefix(prefix) {
                let k: usize = rest.parse().map_err(|_| {
                    cfg_err(format!("dataset name `{name}`: `{rest}` is not a class count"))
                })?;
                if k < 2 {
                    return Err(cfg_err(format!(
                        "dataset name `{name}`: need at least 2 classes"
                    )));
                }
                return Ok(build(k));
            }
        }
        Err(cfg_err(format!(
            "dataset name `{name}`; expected `gaussian_mixture_<k>`, `two_arcs`, `rings_<k>`, or `idx`"
        )))
    }

    /// Class count implied by the name (synthetic) or declared (`idx`).
    pub fn num_classes(&self) -> Result<usize> {
        match self.kind()? {
            DatasetKind::GaussianMixture(k) | DatasetKind::Rings(k) => Ok(k),
            DatasetKind::TwoArcs => Ok(2),
            DatasetKind::Idx => self
                .classes
                .ok_or_else(|| cfg_err("idx dataset needs an explicit `classes` count".to_string())),
        }
    }

    fn idx_paths(&self) -> [(&'static str, Option<&PathBuf>); 4] {
        [
            ("train_images", self.train_images.as_ref()),
            ("train_labels", self.train_labels.as_ref()),
            ("test_images", self.test_images.as_ref()),
            ("test_labels", self.test_labels.as_ref()),
        ]
    }

    fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(cfg_err(format!(
                "dataset fraction {} must lie in (0, 1]",
                self.fraction
            )));
        }
        match kind {
            DatasetKind::Idx => {
                let classes = self.num_classes()?;
                if classes < 2 {
                    return Err(cfg_err(format!("idx dataset declares {classes} classes; need at least 2")));
                }
                for (field, path) in self.idx_paths() {
                    let path = path.ok_or_else(|| {
                        cfg_err(format!("idx dataset needs `{field}`"))
                    })?;
                    if !path.is_file() {
                        return Err(cfg_err(format!(
                            "dataset {field} file {} does not exist",
                            path.display()
                        )));
                    }
                }
            }
            _ => {
                if let Some((field, _)) = self
                    .idx_paths()
                    .iter()
                    .find(|(_, p)| p.is_some())
                {
                    return Err(cfg_err(format!(
                        "`{field}` is only meaningful for the idx dataset, not `{}`",
                        self.name
                    )));
                }
                if self.classes.is_some() {
                    return Err(cfg_err(format!(
                        "`classes` is implied by `{}`; only the idx dataset declares it",
                        self.name
                    )));
                }
                if self.train_n == 0 || self.test_n == 0 {
                    return Err(cfg_err(format!(
                        "synthetic dataset sizes must be positive, got train_n {} / test_n {}",
                        self.train_n, self.test_n
                    )));
                }
                if !(self.noise.is_finite() && self.noise >= 0.0) {
                    return Err(cfg_err(format!("dataset noise {} must be finite and ≥ 0", self.noise)));
                }
            }
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.train_images,
            &mut self.train_labels,
            &mut self.test_images,
            &mut self.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Flow
// ---------------------------------------------------------------------------

/// Flow architecture and training hyperparameters. Presence of this table
/// enables latent-space perturbations; the data dimensionality and label
/// width are filled in from the dataset when the model is assembled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTrainConfig {
    pub blocks: usize,
    /// Hidden width of each coupling subnet.
    pub hidden: usize,
    /// Condition couplings on a one-hot class label.
    #[serde(default)]
    pub conditional: bool,
    #[serde(default)]
    pub use_actnorm: bool,
    #[serde(default)]
    pub use_invlinear: bool,
    /// Soft bound (nats) on coupling log-scales.
    #[serde(default = "defaults::scale_clamp")]
    pub scale_clamp: f64,
    #[serde(default = "defaults::flow_epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::flow_batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::flow_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Load this checkpoint instead of training. Must exist at validation
    /// time; its structure must match the fields above.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl FlowTrainConfig {
    /// The structural description for `dim`-dimensional data, conditioning on
    /// `num_classes` labels when configured to.
    pub fn to_flow_config(&self, dim: usize, num_classes: usize) -> FlowConfig {
        FlowConfig {
            dim,
            blocks: self.blocks,
            hidden: self.hidden,
            label_width: if self.conditional { num_classes } else { 0 },
            use_actnorm: self.use_actnorm,
            use_invlinear: self.use_invlinear,
            scale_clamp: self.scale_clamp,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.scale_clamp > 0.0 && self.scale_clamp.is_finite()) {
            return Err(cfg_err(format!("flow scale_clamp {} must be positive", self.scale_clamp)));
        }
        if let Some(path) = &self.checkpoint {
            if !path.is_file() {
                return Err(cfg_err(format!(
                    "flow checkpoint {} does not exist",
                    path.display()
                )));
            }
        } else {
            if self.epochs == 0 {
                return Err(cfg_err("flow epochs must be ≥ 1 (or point at a checkpoint)".to_string()));
            }
            if self.batch_size == 0 {
                return Err(cfg_err("flow batch_size must be ≥ 1".to_string()));
            }
            if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                return Err(cfg_err(format!(
                    "flow learning_rate {} must be positive",
                    self.learning_rate
                )));
            }
            if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
                return Err(cfg_err(format!(
                    "flow weight_decay {} must be finite and ≥ 0",
                    self.weight_decay
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

/// Fully connected architecture: hidden widths only (empty = linear).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpArch {
    #[serde(default)]
    pub hidden: Vec<usize>,
}

/// Two-conv-stage architecture; input geometry is explicit because dataset
/// rows arrive flattened.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnArch {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "defaults::conv1")]
    pub conv1_channels: usize,
    #[serde(default = "defaults::conv2")]
    pub conv2_channels: usize,
    #[serde(default = "defaults::fc1")]
    pub fc1_width: usize,
    #[serde(default = "defaults::fc2")]
    pub fc2_width: usize,
}

/// Learning-rate evolution. Exactly the fields for `kind` may be set:
/// `exponential` needs `rate` and `interval` (steps per decay unit),
/// `milestones` needs `epochs` (0-based) and `factor`, `warmup` needs
/// `steps`. Anything else present is rejected by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default)]
    pub kind: ScheduleChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
}

impl ScheduleConfig {
    /// Builds the runtime schedule around `base` (the configured learning
    /// rate), rejecting fields that do not belong to the chosen kind.
    pub fn to_schedule(&self, base: f64) -> Result<LrSchedule> {
        let required = |name: &str, present: bool| {
            if present {
                Ok(())
            } else {
                Err(cfg_err(format!("schedule kind {:?} needs `{name}`", self.kind)))
            }
        };
        let forbidden = |name: &str, present: bool| {
            if present {
                Err(cfg_err(format!(
                    "schedule field `{name}` does not belong to kind {:?}",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        let kind = match self.kind {
            ScheduleChoice::Constant => {
                forbidden("rate", self.rate.is_some())?;
                forbidden("interval", self.interval.is_some())?;
                forbidden("epochs", self.epochs.is_some())?;
                forbidden("factor", self.factor.is_some())?;
                forbidden("steps", self.steps.is_some())?;
                ScheduleKind::Constant
            }
            ScheduleChoice::Exponential => {
                required("rate", self.rate.is_some())?;
                required("interval", self.interval.is_some())?;
                forbidden("epochs", self.epochs.is_some())?;
                forbidden("factor", self.factor.is_some())?;
                forbidden("steps", self.steps.is_some())?;
                ScheduleKind::Exponential {
                    rate: self.rate.expect("checked above"),
                    interval: self.interval.expect("checked above"),
                }
            }
            ScheduleChoice::Milestones => {
                required("epochs", self.epochs.is_some())?;
                required("factor", self.factor.is_some())?;
                forbidden("rate", self.rate.is_some())?;
                forbidden("interval", self.interval.is_some())?;
                forbidden("steps", self.steps.is_some())?;
                ScheduleKind::Milestones {
                    epochs: self.epochs.clone().expect("checked above"),
                    factor: self.factor.expect("checked above"),
                }
            }
            ScheduleChoice::Warmup => {
                required("steps", self.steps.is_some())?;
                forbidden("rate", self.rate.is_some())?;
                forbidden("interval", self.interval.is_some())?;
                forbidden("epochs", self.epochs.is_some())?;
                forbidden("factor", self.factor.is_some())?;
                ScheduleKind::LinearWarmup { steps: self.steps.expect("checked above") }
            }
        };
        let schedule = LrSchedule { base, kind };
        schedule.validate()?;
        Ok(schedule)
    }
}

/// Classifier architecture (exactly one of `mlp`/`cnn`) plus training
/// hyperparameters. `momentum`/`nesterov` apply to sgd only; adam uses its
/// customary coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default = "defaults::clf_batch")]
    pub batch_size: usize,
    #[serde(default = "defaults::clf_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerChoice,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub nesterov: bool,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp: Option<MlpArch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cnn: Option<CnnArch>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// A trained classifier for evaluation-only verbs. Must exist at
    /// validation time; ignored fields above still describe the intent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl ClassifierConfig {
    /// Fresh optimizer state per the configured family.
    pub fn to_optimizer(&self) -> Result<Optimizer> {
        match self.optimizer {
            OptimizerChoice::Sgd => Optimizer::sgd(self.momentum, self.nesterov, self.weight_decay),
            OptimizerChoice::Adam => Optimizer::adam_default(self.weight_decay),
        }
    }

    /// The learning-rate schedule rooted at `learning_rate`.
    pub fn to_schedule(&self) -> Result<LrSchedule> {
        self.schedule.to_schedule(self.learning_rate)
    }

    fn validate(&self) -> Result<()> {
        match (&self.mlp, &self.cnn) {
            (Some(_), Some(_)) => {
                return Err(cfg_err("classifier declares both `mlp` and `cnn`; pick one".to_string()));
            }
            (None, None) => {
                return Err(cfg_err("classifier needs an architecture: add `[classifier.mlp]` or `[classifier.cnn]`".to_string()));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(cfg_err("classifier batch_size must be ≥ 1".to_string()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(cfg_err(format!(
                "classifier learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        // Optimizer and schedule constructors carry the remaining numeric
        // range checks; run them now so a bad config fails before compute.
        self.to_optimizer()?;
        self.to_schedule()?;
        if let Some(ckpt) = &self.checkpoint {
            if !ckpt.is_file() {
                return Err(cfg_err(format!(
                    "classifier checkpoint {} does not exist",
                    ckpt.display()
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Attack descriptions (training phases and evaluation)
// ---------------------------------------------------------------------------

/// Builds a runtime perturbation description from optional config fields,
/// rejecting fields the kind does not use. `place` names the config location
/// for error messages.
#[allow(clippy::too_many_arguments)]
fn build_spec(
    place: &str,
    kind: KindChoice,
    norm: Option<NormChoice>,
    epsilon: Option<f64>,
    alpha: Option<f64>,
    steps: Option<usize>,
    seed: Option<u64>,
    global_seed: u64,
) -> Result<PerturbationSpec> {
    let required = |name: &str, present: bool| {
        if present {
            Ok(())
        } else {
            Err(cfg_err(format!("{place}: kind {:?} needs `{name}`", kind.to_kind().name())))
        }
    };
    let forbidden = |name: &str, present: bool| {
        if present {
            Err(cfg_err(format!(
                "{place}: `{name}` does not belong to kind {:?}",
                kind.to_kind().name()
            )))
        } else {
            Ok(())
        }
    };
    let spec = match kind {
        KindChoice::None => {
            forbidden("norm", norm.is_some())?;
            forbidden("epsilon", epsilon.is_some())?;
            forbidden("alpha", alpha.is_some())?;
            forbidden("steps", steps.is_some())?;
            forbidden("seed", seed.is_some())?;
            PerturbationSpec::none()
        }
        KindChoice::RandomizedLa => {
            required("epsilon", epsilon.is_some())?;
            forbidden("alpha", alpha.is_some())?;
            forbidden("steps", steps.is_some())?;
            PerturbationSpec::randomized(
                norm.map(NormChoice::to_norm),
                epsilon.expect("checked above"),
                seed.unwrap_or(global_seed),
            )
        }
        KindChoice::AdversarialLa | KindChoice::PgdImage => {
            required("norm", norm.is_some())?;
            required("epsilon", epsilon.is_some())?;
            required("alpha", alpha.is_some())?;
            required("steps", steps.is_some())?;
            let (norm, epsilon, alpha, steps) = (
                norm.expect("checked above").to_norm(),
                epsilon.expect("checked above"),
                alpha.expect("checked above"),
                steps.expect("checked above"),
            );
            let seed = seed.unwrap_or(global_seed);
            match kind {
                KindChoice::AdversarialLa => {
                    PerturbationSpec::adversarial(norm, epsilon, alpha, steps, seed)
                }
                _ => PerturbationSpec::pgd(norm, epsilon, alpha, steps, seed),
            }
        }
    };
    spec.validate().map_err(|e| cfg_err(format!("{place}: {e}")))?;
    Ok(spec)
}

/// One classifier-training phase: a perturbation description plus its epoch
/// count. `seed` defaults to the global seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub kind: KindChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PhaseConfig {
    /// The runtime phase, with `place` naming this phase in errors.
    pub fn to_phase(&self, place: &str, global_seed: u64) -> Result<TrainPhase> {
        if self.epochs == 0 {
            return Err(cfg_err(format!("{place}: epochs must be ≥ 1")));
        }
        let spec = build_spec(
            place, self.kind, self.norm, self.epsilon, self.alpha, self.steps, self.seed,
            global_seed,
        )?;
        Ok(TrainPhase::new(spec, self.epochs))
    }
}

/// One evaluation attack. `seed` defaults to the global seed; evaluation
/// draws come from a dedicated stream, so this may equal a phase seed
/// without correlating with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: KindChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl AttackConfig {
    pub fn to_spec(&self, place: &str, global_seed: u64) -> Result<PerturbationSpec> {
        build_spec(
            place, self.kind, self.norm, self.epsilon, self.alpha, self.steps, self.seed,
            global_seed,
        )
    }
}

// ---------------------------------------------------------------------------
// Evaluation plan
// ---------------------------------------------------------------------------

/// Image-grid emission: `rows × cols` model samples written as a portable
/// graymap, each sample reshaped to `height × width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleGridConfig {
    pub height: usize,
    pub width: usize,
    #[serde(default = "defaults::grid_rows")]
    pub rows: usize,
    #[serde(default = "defaults::grid_cols")]
    pub cols: usize,
}

/// What to measure after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Robustness is reported for each listed attack.
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
    /// Also report the classifier-feature Fréchet distance between clean and
    /// perturbed test inputs, per attack.
    #[serde(default = "defaults::frechet")]
    pub frechet: bool,
    /// Emit a grid of flow samples as a portable graymap (needs a flow).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_grid: Option<SampleGridConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { attacks: Vec::new(), frechet: defaults::frechet(), sample_grid: None }
    }
}

// ---------------------------------------------------------------------------
// The experiment
// ---------------------------------------------------------------------------

/// Everything one experiment run needs, parsed from a TOML document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must equal [`SCHEMA_VERSION`].
    pub schema_version: u64,
    /// Global seed; every unseeded stream derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::precision")]
    pub precision: Precision,
    /// Report directory; created if missing.
    #[serde(default = "defaults::out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowTrainConfig>,
    pub phases: Vec<PhaseConfig>,
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Parses a TOML document. The schema version is checked before strict
    /// field decoding so a future-schema file fails with the version, not a
    /// misleading unknown-key complaint.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| cfg_err(format!("TOML syntax: {e}")))?;
        let version = table
            .get("schema_version")
            .and_then(toml::Value::as_integer)
            .ok_or_else(|| cfg_err("missing integer `schema_version`".to_string()))?;
        if version != SCHEMA_VERSION as i64 {
            return Err(cfg_err(format!(
                "schema_version {version} is not readable by this build, which reads version {SCHEMA_VERSION}"
            )));
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| cfg_err(format!("invalid field: {e}")))
    }

    /// Reads and parses a config file; relative paths inside it are resolved
    /// against the file's directory. Does not validate — callers may first
    /// apply command-line overrides, then call [`Self::validate`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    /// Rebases relative file references onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        self.dataset.resolve_paths(base);
        if let Some(flow) = &mut self.flow {
            if let Some(ckpt) = &mut flow.checkpoint {
                if ckpt.is_relative() {
                    *ckpt = base.join(&*ckpt);
                }
            }
        }
        if let Some(ckpt) = &mut self.classifier.checkpoint {
            if ckpt.is_relative() {
                *ckpt = base.join(&*ckpt);
            }
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }

    /// Serializes the resolved configuration (for embedding in reports).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| cfg_err(format!("serialize: {e}")))
    }

    /// Every phase as a runtime training description, in order.
    pub fn to_phases(&self) -> Result<Vec<TrainPhase>> {
        self.phases
            .iter()
            .enumerate()
            .map(|(i, p)| p.to_phase(&format!("phase {}", i + 1), self.seed))
            .collect()
    }

    /// Every evaluation attack as a runtime description, in order.
    pub fn to_eval_specs(&self) -> Result<Vec<PerturbationSpec>> {
        self.eval
            .attacks
            .iter()
            .enumerate()
            .map(|(i, a)| a.to_spec(&format!("eval attack {}", i + 1), self.seed))
            .collect()
    }

    /// Whether anything in the run needs a flow model.
    pub fn needs_flow(&self) -> Result<bool> {
        let phases = self.to_phases()?;
        let evals = self.to_eval_specs()?;
        Ok(phases.iter().any(|p| p.perturbation.kind.is_latent())
            || evals.iter().any(|s| s.kind.is_latent())
            || self.eval.sample_grid.is_some())
    }

    /// Full semantic validation: ranges, coherence, and file existence.
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if let Some(flow) = &self.flow {
            flow.validate()?;
        }
        self.classifier.validate()?;
        if self.phases.is_empty() {
            return Err(cfg_err("at least one training phase is required".to_string()));
        }
        // to_phases/to_eval_specs carry the per-description checks.
        if self.needs_flow()? && self.flow.is_none() {
            return Err(cfg_err(
                "latent perturbations or sample grids are configured but there is no [flow] table".to_string(),
            ));
        }
        if let Some(grid) = &self.eval.sample_grid {
            if grid.rows == 0 || grid.cols == 0 || grid.height == 0 || grid.width == 0 {
                return Err(cfg_err("sample_grid extents must all be ≥ 1".to_string()));
            }
        }
        Ok(())
    }
}

mod defaults {
    use super::Precision;
    use std::path::PathBuf;

    pub fn fraction() -> f64 {
        1.0
    }
    pub fn train_n() -> usize {
        1000
    }
    pub fn test_n() -> usize {
        500
    }
    pub fn noise() -> f64 {
        0.05
    }
    pub fn scale_clamp() -> f64 {
        2.0
    }
    pub fn flow_epochs() -> usize {
        10
    }
    pub fn flow_batch() -> usize {
        128
    }
    pub fn flow_lr() -> f64 {
        1e-3
    }
    pub fn clf_batch() -> usize {
        64
    }
    pub fn clf_lr() -> f64 {
        0.01
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn conv1() -> usize {
        6
    }
    pub fn conv2() -> usize {
        16
    }
    pub fn fc1() -> usize {
        120
    }
    pub fn fc2() -> usize {
        84
    }
    pub fn precision() -> Precision {
        Precision::F64
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("runs")
    }
    pub fn frechet() -> bool {
        true
    }
    pub fn grid_rows() -> usize {
        4
    }
    pub fn grid_cols() -> usize {
        8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackKind;

    fn minimal() -> String {
        r#"
            schema_version = 1
            seed = 7

            [dataset]
            name = "gaussian_mixture_4"

            [classifier]
            [classifier.mlp]
            hidden = [16]

            [[phases]]
            epochs = 3
            kind = "none"
        "#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_documented_defaults() {
        let cfg = ExperimentConfig::from_toml_str(&minimal()).expect("parse");
        cfg.validate().expect("validate");
        assert_eq!(cfg.precision, Precision::F64);
        assert_eq!(cfg.out_dir, PathBuf::from("runs"));
        assert_eq!(cfg.dataset.fraction, 1.0);
        assert_eq!(cfg.dataset.train_n, 1000);
        assert_eq!(cfg.classifier.batch_size, 64);
        assert_eq!(cfg.classifier.learning_rate, 0.01);
        assert_eq!(cfg.classifier.optimizer, OptimizerChoice::Sgd);
        assert!(cfg.eval.attacks.is_empty());
        assert!(cfg.eval.frechet);
        assert!(!cfg.needs_flow().expect("coherent"));
        assert_eq!(cfg.dataset.kind().expect("kind"), DatasetKind::GaussianMixture(4));
        assert_eq!(cfg.dataset.num_classes().expect("classes"), 4);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let top = minimal() + "\nbananas = 3\n";
        let err = ExperimentConfig::from_toml_str(&top).unwrap_err().to_string();
        assert!(err.contains("bananas"), "unknown top-level key not named: {err}");

        let nested = minimal().replace("name = \"gaussian_mixture_4\"", "name = \"gaussian_mixture_4\"\nfrac = 0.5");
        let err = ExperimentConfig::from_toml_str(&nested).unwrap_err().to_string();
        assert!(err.contains("frac"), "unknown nested key not named: {err}");
    }

    #[test]
    fn schema_version_mismatch_names_both_versions() {
        let future = minimal().replace("schema_version = 1", "schema_version = 99");
        let err = ExperimentConfig::from_toml_str(&future).unwrap_err().to_string();
        assert!(err.contains("99"), "stored version missing: {err}");
        assert!(err.contains('1'), "supported version missing: {err}");

        let missing = minimal().replace("schema_version = 1", "");
        let err = ExperimentConfig::from_toml_str(&missing).unwrap_err().to_string();
        assert!(err.contains("schema_version"), "missing-field hint absent: {err}");
    }

    #[test]
    fn fraction_bounds_are_enforced() {
        for bad in ["0.0", "1.5", "-0.3"] {
            let text = minimal().replace(
                "name = \"gaussian_mixture_4\"",
                &format!("name = \"gaussian_mixture_4\"\nfraction = {bad}"),
            );
            let cfg = ExperimentConfig::from_toml_str(&text).expect("parses");
            let err = cfg.validate().unwrap_err().to_string();
            assert!(err.contains("fraction"), "fraction {bad} not rejected: {err}");
        }
    }

    #[test]
    fn dataset_names_resolve_or_fail_clearly() {
        let mut cfg = ExperimentConfig::from_toml_str(&minimal()).expect("parse");
        for (name, expected) in [
            ("two_arcs", DatasetKind::TwoArcs),
            ("rings_3", DatasetKind::Rings(3)),
            ("gaussian_mixture_10", DatasetKind::GaussianMixture(10)),
        ] {
            cfg.dataset.name = name.to_string();
            assert_eq!(cfg.dataset.kind().expect("valid name"), expected);
        }
        for bad in ["blobs", "rings_x", "gaussian_mixture_", "rings_1"] {
            cfg.dataset.name = bad.to_string();
            assert!(cfg.dataset.kind().is_err(), "`{bad}` should not resolve");
        }
    }

    #[test]
    fn idx_dataset_requires_existing_files() {
        let dir = tempfile::tempdir().expect("tempdir");
        let exists = dir.path().join("present.idx");
        std::fs::write(&exists, b"x").expect("touch");
        let missing = dir.path().join("absent.idx");

        let mut cfg = ExperimentConfig::from_toml_str(&minimal()).expect("parse");
        cfg.dataset.name = "idx".to_string();
        cfg.dataset.classes = Some(10);
        cfg.dataset.train_images = Some(exists.clone());
        cfg.dataset.train_labels = Some(exists.clone());
        cfg.dataset.test_images = Some(exists.clone());
        cfg.dataset.test_labels = Some(missing.clone());
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("test_labels"), "missing file not named: {err}");
        assert!(err.contains("absent.idx"), "missing path not shown: {err}");

        cfg.dataset.test_labels = Some(exists);
        cfg.validate().expect("all four present");

        cfg.dataset.classes = None;
        assert!(cfg.validate().is_err(), "idx without classes must fail");
    }

    #[test]
    fn synthetic_datasets_reject_idx_fields() {
        let mut cfg = ExperimentConfig::from_toml_str(&minimal()).expect("parse");
        cfg.dataset.train_images = Some(PathBuf::from("x.idx"));
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("train_images"), "stray field not named: {err}");

        let mut cfg = ExperimentConfig::from_toml_str(&minimal()).expect("parse");
        cfg.dataset.classes = Some(4);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("classes"), "stray field not named: {err}");
    }

    #[test]
    fn attack_descriptions_must_be_coherent() {
        // kind none with a budget.
        let text = minimal().replace("kind = \"none\"", "kind = \"none\"\nepsilon = 0.1");
        let cfg = ExperimentConfig::from_toml_str(&text).expect("parses");
        let err = cfg.to_phases().unwrap_err().to_string();
        assert!(err.contains("epsilon"), "stray epsilon not named: {err}");
        assert!(err.contains("phase 1"), "phase not located: {err}");

        // iterative kind missing alpha.
        let text = minimal().replace(
            "kind = \"none\"",
            "kind = \"adversarial_la\"\nnorm = \"l2\"\nepsilon = 0.1\nsteps = 3",
        );
        let cfg = ExperimentConfig::from_toml_str(&text).expect("parses");
        let err = cfg.to_phases().unwrap_err().to_string();
        assert!(err.contains("alpha"), "missing alpha not named: {err}");

        // randomized may omit the norm (untruncated) but not epsilon.
        let text = minimal().replace("kind = \"none\"", "kind = \"randomized_la\"\nepsilon = 0.05");
        let cfg = ExperimentConfig::from_toml_str(&text).expect("parses");
        let phases = cfg.to_phases().expect("valid randomized phase");
        assert_eq!(phases[0].perturbation.kind, AttackKind::RandomizedLa);
        assert_eq!(phases[0].perturbation.norm, None);

        let text = minimal().replace("kind = \"none\"", "kind = \"randomized_la\"");
        let cfg = ExperimentConfig::from_toml_str(&text).expect("parses");
        assert!(cfg.to_phases().is_err(), "randomized without epsilon must fail");
    }

    #[test]
    fn latent_phases_require_a_flow_table() {
        let latent = minimal().replace(
            "kind = \"none\"",
            "kind = \"randomized_la\"\nepsilon = 0.05",
        );
        let cfg = ExperimentConfig::from_toml_str(&latent).expect("parses");
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("[flow]"), "flow requirement not stated: {err}");

        let with_flow = latent + "\n[flow]\nblocks = 2\nhidden = 8\n";
        let cfg = ExperimentConfig::from_toml_str(&with_flow).expect("parses");
        cfg.validate().expect("flow table satisfies the latent phase");
        assert!(cfg.needs_flow().expect("coherent"));

        // Image-space training needs no flow.
        let pgd = minimal().replace(
            "kind = \"none\"",
            "kind = \"pgd_image\"\nnorm = \"linf\"\nepsilon = 0.1\nalpha = 0.05\nsteps = 3",
        );
        let cfg = ExperimentConfig::from_toml_str(&pgd).expect("parses");
        cfg.validate().expect("image-space attack without flow");
    }

    #[test]
    fn attack_seeds_default_to_the_global_seed() {
        let text = minimal().replace(
            "kind = \"none\"",
            "kind = \"randomized_la\"\nepsilon = 0.05",
        ) + "\n[flow]\nblocks = 2\nhidden = 8\n\n[[eval.attacks]]\nkind = \"randomized_la\"\nepsilon = 0.05\nseed = 123\n";
        let cfg = ExperimentConfig::from_toml_str(&text).expect("parses");
        let phases = cfg.to_phases().expect("phases");
        assert_eq!(phases[0].perturbation.seed, 7, "defaulted to global seed");
        let evals = cfg.to_eval_specs().expect("evals");
        assert_eq!(evals[0].seed, 123, "explicit seed respected");
    }

    #[test]
    fn schedule_fields_must_match_their_kind() {
        let base = 0.1;
        let mut sched = ScheduleConfig::default();
        assert_eq!(
            sched.to_schedule(base).expect("constant"),
            LrSchedule::constant(base)
        );

        sched.rate = Some(0.5);
        let err = sched.to_schedule(base).unwrap_err().to_string();
        assert!(err.contains("rate"), "stray field not named: {err}");

        let exp = ScheduleConfig {
            kind: ScheduleChoice::Exponential,
            rate: Some(0.5),
            interval: Some(10),
            ..ScheduleConfig::default()
        };
        let built = exp.to_schedule(base).expect("exponential");
        assert_eq!(built.kind, ScheduleKind::Exponential { rate: 0.5, interval: 10 });

        let missing = ScheduleConfig {
            kind: ScheduleChoice::Milestones,
            epochs: Some(vec![5, 10]),
            ..ScheduleConfig::default()
        };
        let err = missing.to_schedule(base).unwrap_err().to_string();
        assert!(err.contains("factor"), "missing field not named: {err}");

        let warm = ScheduleConfig {
            kind: ScheduleChoice::Warmup,
            steps: Some(100),
            ..ScheduleConfig::default()
        };
        assert_eq!(
            warm.to_schedule(base).expect("warmup").kind,
            ScheduleKind::LinearWarmup { steps: 100 }
        );
    }

    #[test]
    fn classifier_architecture_must_be_exactly_one() {
        let both = minimal().replace(
            "[classifier.mlp]\n            hidden = [16]",
            "[classifier.mlp]\n            hidden = [16]\n            [classifier.cnn]\n            in_channels = 1\n            height = 12\n            width = 12",
        );
        let cfg = ExperimentConfig::from_toml_str(&both).expect("parses");
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("both"), "double architecture not rejected: {err}");

        let neither = minimal().replace("[classifier.mlp]\n            hidden = [16]", "");
        let cfg = ExperimentConfig::from_toml_str(&neither).expect("parses");
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("architecture"), "missing architecture not flagged: {err}");
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let text = minimal()
            + "\n[flow]\nblocks = 2\nhidden = 8\nconditional = true\n\n[[eval.attacks]]\nkind = \"adversarial_la\"\nnorm = \"l2\"\nepsilon = 0.1\nalpha = 0.05\nsteps = 3\n\n[eval.sample_grid]\nheight = 2\nwidth = 1\n";
        let cfg = ExperimentConfig::from_toml_str(&text).expect("parse");
        let emitted = cfg.to_toml_string().expect("serialize");
        let back = ExperimentConfig::from_toml_str(&emitted).expect("reparse");
        assert_eq!(back, cfg, "round trip changed the config:\n{emitted}");
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().expect("tempdir");
        let data = dir.path().join("present.idx");
        std::fs::write(&data, b"x").expect("touch");
        let cfg_path = dir.path().join("exp.toml");
        let text = r#"
            schema_version = 1

            [dataset]
            name = "idx"
            classes = 10
            train_images = "present.idx"
            train_labels = "present.idx"
            test_images = "present.idx"
            test_labels = "present.idx"

            [classifier]
            [classifier.mlp]

            [[phases]]
            epochs = 1
            kind = "none"
        "#;
        std::fs::write(&cfg_path, text).expect("write config");
        let cfg = ExperimentConfig::load(&cfg_path).expect("load");
        assert_eq!(cfg.dataset.train_images.as_deref(), Some(data.as_path()));
        assert_eq!(cfg.out_dir, dir.path().join("runs"), "default out_dir rebased too");
        cfg.validate().expect("resolved files exist");
    }

    #[test]
    fn flow_checkpoint_reference_must_exist() {
        let text = minimal() + "\n[flow]\nblocks = 2\nhidden = 8\ncheckpoint = \"/nonexistent/flow.ckpt\"\n";
        let cfg = ExperimentConfig::from_toml_str(&text).expect("parses");
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("checkpoint"), "checkpoint reference not flagged: {err}");
        assert!(err.contains("/nonexistent/flow.ckpt"), "path not shown: {err}");
    }
}
