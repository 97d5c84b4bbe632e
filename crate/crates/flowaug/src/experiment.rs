//! End-to-end experiment pipeline: dataset assembly, flow fitting, phased
//! classifier training, robustness evaluation, and deterministic on-disk
//! reports.
//!
//! Determinism contract: every random choice derives from seeds recorded in
//! the report, file contents contain no timestamps or machine state, and
//! struct fields serialize in declaration order — so two runs of the same
//! resolved config produce byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::attack::{perturb_batch, AttackKind, PerturbationSpec};
use crate::checkpoint;
use crate::classify::{
    train_classifier, Classifier, Cnn, CnnSpec, EpochRecord, Mlp, MlpSpec, Optimizer,
    TrainOptions, TrainPhase, TrainingHistory,
};
use crate::config::{
    ClassifierConfig, DatasetConfig, DatasetKind, ExperimentConfig, FlowTrainConfig, Precision,
    SampleGridConfig, SCHEMA_VERSION,
};
use crate::data::{self, DatasetHandle, Split};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy, frechet_distance, gaussian_summary, robustness_eval, ClassifierFeatures,
    FeatureExtractor,
};
use crate::flow::FlowModel;
use crate::graph::Graph;
use crate::rng::{mix, rng_from, shuffled_indices, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Verbs
// ---------------------------------------------------------------------------

/// Which part of the pipeline a run executes. Training verbs write
/// checkpoints; evaluation verbs read them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verb {
    /// Fit (or load) the flow, then save its checkpoint.
    TrainFlow,
    /// Train the classifier; a flow, if needed, must come from a checkpoint.
    TrainClassifier,
    /// Evaluate a checkpointed classifier under the configured attacks.
    AttackEval,
    /// Accuracy, likelihood, and sample-grid numbers from checkpoints; no
    /// attacks.
    Metrics,
    /// The whole pipeline end to end.
    Run,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::TrainFlow => "train-flow",
            Verb::TrainClassifier => "train-classifier",
            Verb::AttackEval => "attack-eval",
            Verb::Metrics => "metrics",
            Verb::Run => "run",
        }
    }

    fn trains_flow(self) -> bool {
        matches!(self, Verb::TrainFlow | Verb::Run)
    }

    fn trains_classifier(self) -> bool {
        matches!(self, Verb::TrainClassifier | Verb::Run)
    }

    fn uses_classifier(self) -> bool {
        !matches!(self, Verb::TrainFlow)
    }

    fn evaluates(self) -> bool {
        matches!(self, Verb::AttackEval | Verb::Metrics | Verb::Run)
    }

    fn runs_attacks(self) -> bool {
        matches!(self, Verb::AttackEval | Verb::Run)
    }
}

// ---------------------------------------------------------------------------
// Flow fitting
// ---------------------------------------------------------------------------

/// Hyperparameters for the likelihood-fitting loop.
#[derive(Clone, Debug)]
pub struct FlowTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Run seed; batch order derives from its flow-training stream.
    pub seed: u64,
}

/// One epoch of flow fitting. Losses are the mean negative log-likelihood in
/// nats over the full split, measured after the epoch's last step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowEpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_nll: f64,
    pub test_nll: f64,
}

/// Copies `rows` of a `[n, d]` tensor into a fresh `[rows.len(), d]` tensor.
fn gather_rows<T: Scalar>(t: &Tensor<T>, rows: &[usize]) -> Tensor<T> {
    let dim = t.shape()[1];
    let mut out = Tensor::zeros(&[rows.len(), dim]);
    for (k, &r) in rows.iter().enumerate() {
        out.data_mut()[k * dim..(k + 1) * dim].copy_from_slice(&t.data()[r * dim..(r + 1) * dim]);
    }
    out
}

/// Mean negative log-likelihood of `data` under `flow`, streamed in fixed
/// chunks so memory stays flat.
pub fn dataset_nll<T: Scalar>(flow: &FlowModel<T>, data: &DatasetHandle<T>) -> Result<f64> {
    let labels = flow
        .is_conditional()
        .then(|| data::one_hot::<T>(data.labels(), flow.label_width()));
    let chunk = 256usize;
    let mut sum = 0.0f64;
    let mut at = 0usize;
    while at < data.n() {
        let hi = (at + chunk).min(data.n());
        let rows: Vec<usize> = (at..hi).collect();
        let x = gather_rows(data.inputs(), &rows);
        let l = labels.as_ref().map(|t| gather_rows(t, &rows));
        sum += flow.nll(&x, l.as_ref())?.widen() * rows.len() as f64;
        at = hi;
    }
    Ok(sum / data.n() as f64)
}

/// Fits `flow` to `train` by stochastic maximum likelihood (adam), recording
/// mean train/test NLL after every epoch. Uninitialized normalization layers
/// are calibrated on the first batch before any parameter step.
pub fn train_flow<T: Scalar>(
    flow: &mut FlowModel<T>,
    train: &DatasetHandle<T>,
    test: &DatasetHandle<T>,
    options: &FlowTrainOptions,
) -> Result<Vec<FlowEpochRecord>> {
    if options.epochs == 0 || options.batch_size == 0 {
        return Err(Error::invalid(
            "flow training plan",
            format!(
                "epochs {} and batch_size {} must both be ≥ 1",
                options.epochs, options.batch_size
            ),
        ));
    }
    if !(options.learning_rate > 0.0 && options.learning_rate.is_finite()) {
        return Err(Error::invalid(
            "flow training plan",
            format!("learning_rate {} must be positive", options.learning_rate),
        ));
    }
    for (split, data) in [("train", train), ("test", test)] {
        if data.dim() != flow.dim() {
            return Err(Error::shape(
                "train_flow",
                format!("{split} rows have {} values but the flow reads {}", data.dim(), flow.dim()),
            ));
        }
        if flow.is_conditional() && data.num_classes() > flow.label_width() {
            return Err(Error::invalid(
                "flow training plan",
                format!(
                    "{split} split has {} classes but the flow's label input is {} wide",
                    data.num_classes(),
                    flow.label_width()
                ),
            ));
        }
    }

    let train_labels = flow
        .is_conditional()
        .then(|| data::one_hot::<T>(train.labels(), flow.label_width()));
    let mut optimizer = Optimizer::adam_default(options.weight_decay)?;
    let mut order_rng = rng_from(mix(options.seed, stream::FLOW_TRAIN));
    let lr = options.learning_rate;
    let mut history = Vec::with_capacity(options.epochs);

    for epoch in 1..=options.epochs {
        let order = shuffled_indices(train.n(), &mut order_rng);
        for rows in order.chunks(options.batch_size) {
            let x = gather_rows(train.inputs(), rows);
            let labels = train_labels.as_ref().map(|t| gather_rows(t, rows));
            if !flow.is_initialized() {
                flow.initialize_actnorms(&x, labels.as_ref())?;
            }
            let mut g = Graph::new();
            let binding = flow.bind(&mut g)?;
            let x_id = g.constant(x)?;
            let label_id = match labels {
                Some(l) => Some(g.constant(l)?),
                None => None,
            };
            let loss = flow.traced_nll(&mut g, x_id, label_id, &binding)?;
            g.backward(loss)?;
            let grads: Vec<Tensor<T>> = binding
                .flat()
                .iter()
                .zip(flow.params())
                .map(|(&id, p)| g.grad(id).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            optimizer.step(&mut flow.params_mut(), &grads, lr)?;
        }
        history.push(FlowEpochRecord {
            epoch,
            lr,
            train_nll: dataset_nll(flow, train)?,
            test_nll: dataset_nll(flow, test)?,
        });
    }
    Ok(history)
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

/// Draws (or loads) the train/test splits described by `spec`. Synthetic
/// splits are drawn from separate seed streams so the test split never
/// repeats training points.
pub fn load_dataset<T: Scalar>(
    spec: &DatasetConfig,
) -> Result<(DatasetHandle<T>, DatasetHandle<T>)> {
    let train_seed = mix(spec.seed, stream::TRAIN_SPLIT);
    let test_seed = mix(spec.seed, stream::TEST_SPLIT);
    match spec.kind()? {
        DatasetKind::GaussianMixture(k) => Ok((
            data::gaussian_mixture(k, spec.train_n, spec.noise, train_seed, Split::Train)?,
            data::gaussian_mixture(k, spec.test_n, spec.noise, test_seed, Split::Test)?,
        )),
        DatasetKind::TwoArcs => Ok((
            data::two_arcs(spec.train_n, spec.noise, train_seed, Split::Train)?,
            data::two_arcs(spec.test_n, spec.noise, test_seed, Split::Test)?,
        )),
        DatasetKind::Rings(k) => Ok((
            data::rings(k, spec.train_n, spec.noise, train_seed, Split::Train)?,
            data::rings(k, spec.test_n, spec.noise, test_seed, Split::Test)?,
        )),
        DatasetKind::Idx => {
            let classes = spec.num_classes()?;
            fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
                p.as_deref().ok_or_else(|| Error::Config(format!("idx dataset needs `{what}`")))
            }
            let train = data::load_idx_pair(
                need(&spec.train_images, "train_images")?,
                need(&spec.train_labels, "train_labels")?,
                Split::Train,
                classes,
            )?;
            let test = data::load_idx_pair(
                need(&spec.test_images, "test_images")?,
                need(&spec.test_labels, "test_labels")?,
                Split::Test,
                classes,
            )?;
            Ok((train, test))
        }
    }
}

/// Builds a freshly initialized classifier matching the dataset geometry.
fn build_classifier<T: Scalar>(
    cfg: &ClassifierConfig,
    dim: usize,
    classes: usize,
    seed: u64,
) -> Result<Classifier<T>> {
    let mut rng = rng_from(mix(seed, stream::CLF_INIT));
    if let Some(arch) = &cfg.mlp {
        let spec = MlpSpec { input_dim: dim, hidden: arch.hidden.clone(), classes };
        return Ok(Classifier::Mlp(Mlp::new(spec, &mut rng)?));
    }
    let arch = cfg.cnn.as_ref().expect("validated: exactly one architecture");
    let spec = CnnSpec {
        in_channels: arch.in_channels,
        height: arch.height,
        width: arch.width,
        conv1_channels: arch.conv1_channels,
        conv2_channels: arch.conv2_channels,
        fc1_width: arch.fc1_width,
        fc2_width: arch.fc2_width,
        classes,
    };
    if spec.input_dim() != dim {
        return Err(Error::Config(format!(
            "cnn reads {}×{}×{} = {} values per row but the dataset rows have {}",
            arch.in_channels,
            arch.height,
            arch.width,
            spec.input_dim(),
            dim
        )));
    }
    Ok(Classifier::Cnn(Cnn::new(spec, &mut rng)?))
}

// ---------------------------------------------------------------------------
// Report structures (serialized as report.json, fields in declaration order)
// ---------------------------------------------------------------------------

/// Seeds derived from the run seed, recorded so any stage can be replayed in
/// isolation.
#[derive(Clone, Debug, Serialize)]
pub struct SeedReport {
    pub global: u64,
    pub dataset: u64,
    pub subset: u64,
    pub flow_init: u64,
    pub flow_shuffle: u64,
    pub classifier_init: u64,
    pub classifier_shuffle: u64,
    pub phase_attacks: Vec<u64>,
    pub eval_attacks: Vec<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetReport {
    pub train_source: String,
    pub test_source: String,
    pub dim: usize,
    pub classes: usize,
    /// Training rows before the stratified subset draw.
    pub full_train_n: usize,
    /// Training rows actually used.
    pub train_n: usize,
    pub test_n: usize,
    pub fraction: f64,
    pub per_class_train_counts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowReport {
    /// `fitted here`, or the checkpoint it was loaded from. A loaded flow may
    /// have been fitted on a different dataset; this field and
    /// `dataset.train_source` label both sides of such a transfer.
    pub source: String,
    pub dim: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub label_width: usize,
    pub use_actnorm: bool,
    pub use_invlinear: bool,
    pub scale_clamp: f64,
    pub param_count: usize,
    /// Mean NLL on the current train subset, after fitting/loading.
    pub train_nll: f64,
    /// Mean NLL on the current test split.
    pub test_nll: f64,
    pub history: Vec<FlowEpochRecord>,
    /// Where the weights live on disk after this run.
    pub checkpoint: String,
}

/// Mirror of a training-loop epoch record, shaped for serialization.
/// Accuracies here are fractions in `[0, 1]`; the evaluation section reports
/// percentages.
#[derive(Clone, Debug, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub phase: String,
    pub lr: f64,
    pub train_acc: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub test_loss: f64,
}

impl From<&EpochRecord> for EpochReport {
    fn from(r: &EpochRecord) -> Self {
        EpochReport {
            epoch: r.epoch,
            phase: r.phase.clone(),
            lr: r.lr,
            train_acc: r.train_acc,
            train_loss: r.train_loss,
            test_acc: r.test_acc,
            test_loss: r.test_loss,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseReport {
    pub label: String,
    pub epochs: usize,
    /// Absent for the identity phase, which draws nothing.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifierReport {
    /// `mlp` or `cnn`.
    pub kind: String,
    /// `trained here`, or the checkpoint it was loaded from.
    pub source: String,
    pub param_count: usize,
    /// The phase plan this run executed (empty when loaded).
    pub phases: Vec<PhaseReport>,
    pub history: Vec<EpochReport>,
    pub checkpoint: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureReport {
    pub row: usize,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttackReport {
    pub label: String,
    /// Absent for the identity perturbation.
    pub seed: Option<u64>,
    /// Percent, on the untouched test split.
    pub clean_accuracy: f64,
    /// Percent, on perturbed test rows that the attack produced.
    pub attacked_accuracy: f64,
    /// `clean_accuracy − attacked_accuracy`.
    pub accuracy_drop: f64,
    pub evaluated: usize,
    pub failed: Vec<FailureReport>,
    pub mean_l2: f64,
    pub mean_linf: f64,
    /// Classifier-feature Fréchet distance between clean and perturbed test
    /// inputs (moments of the penultimate-layer activations). This is not
    /// comparable to distances computed in other feature spaces.
    pub frechet_classifier_features: Option<f64>,
    /// Rows behind each Fréchet moment estimate.
    pub frechet_feature_rows: Option<usize>,
    /// Why the distance is absent, when it is.
    pub frechet_note: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    /// Percent, on the training subset the classifier saw.
    pub train_accuracy: f64,
    /// Percent, on the held-out test split.
    pub test_accuracy: f64,
    pub attacks: Vec<AttackReport>,
    /// Path of the sample-grid image, when one was emitted.
    pub sample_grid: Option<String>,
}

/// Everything one run measured, serialized as `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub verb: String,
    pub schema_version: u64,
    pub precision: String,
    pub seeds: SeedReport,
    pub dataset: DatasetReport,
    pub flow: Option<FlowReport>,
    pub classifier: Option<ClassifierReport>,
    pub eval: Option<EvalReport>,
    /// The resolved configuration this report answers to, as TOML.
    pub resolved_config: String,
}

/// Where a run put its outputs, plus headline numbers for callers to print.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub report_path: PathBuf,
    /// Every file the run wrote, in write order (report included).
    pub files: Vec<PathBuf>,
    /// Percent, when an evaluation ran.
    pub test_accuracy: Option<f64>,
    /// Mean test NLL, when a flow was involved.
    pub flow_test_nll: Option<f64>,
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Runs the full pipeline: [`execute`] with [`Verb::Run`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    execute(config, Verb::Run)
}

/// Runs the pipeline subset selected by `verb` at the configured precision.
/// On failure a `FAILED.txt` marker naming the failed stage is left in the
/// output directory next to whatever was already written.
pub fn execute(config: &ExperimentConfig, verb: Verb) -> Result<RunArtifacts> {
    match config.precision {
        Precision::F32 => execute_typed::<f32>(config, verb),
        Precision::F64 => execute_typed::<f64>(config, verb),
    }
}

fn execute_typed<T: Scalar>(config: &ExperimentConfig, verb: Verb) -> Result<RunArtifacts> {
    config.validate().map_err(|e| e.in_stage("configuration"))?;
    check_verb_preconditions(config, verb).map_err(|e| e.in_stage("configuration"))?;
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(&config.out_dir, e).in_stage("setup"))?;
    let marker = config.out_dir.join("FAILED.txt");
    match pipeline::<T>(config, verb) {
        Ok(artifacts) => {
            let _ = fs::remove_file(&marker);
            Ok(artifacts)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

/// Coherence checks between the chosen verb and the config, beyond what
/// config validation can know.
fn check_verb_preconditions(config: &ExperimentConfig, verb: Verb) -> Result<()> {
    let has_flow_ckpt = config.flow.as_ref().is_some_and(|f| f.checkpoint.is_some());
    let latent_phases = config
        .to_phases()?
        .iter()
        .any(|p| p.perturbation.kind.is_latent());
    let latent_evals = config.to_eval_specs()?.iter().any(|s| s.kind.is_latent());
    let grid = config.eval.sample_grid.is_some();

    let needs_existing_flow = match verb {
        Verb::TrainFlow | Verb::Run => false,
        Verb::TrainClassifier => latent_phases,
        Verb::AttackEval => latent_evals || grid,
        Verb::Metrics => grid,
    };
    if needs_existing_flow && !has_flow_ckpt {
        return Err(Error::Config(format!(
            "{} does not fit flows; point `flow.checkpoint` at one (train it with `train-flow`)",
            verb.name()
        )));
    }
    match verb {
        Verb::TrainFlow => {
            if config.flow.is_none() {
                return Err(Error::Config("train-flow needs a [flow] table".to_string()));
            }
        }
        Verb::TrainClassifier | Verb::Run => {
            if config.classifier.checkpoint.is_some() {
                return Err(Error::Config(format!(
                    "{} trains the classifier from scratch; `classifier.checkpoint` belongs to attack-eval/metrics",
                    verb.name()
                )));
            }
        }
        Verb::AttackEval | Verb::Metrics => {
            if config.classifier.checkpoint.is_none() {
                return Err(Error::Config(format!(
                    "{} evaluates a trained classifier; set `classifier.checkpoint`",
                    verb.name()
                )));
            }
        }
    }
    Ok(())
}

fn pipeline<T: Scalar>(config: &ExperimentConfig, verb: Verb) -> Result<RunArtifacts> {
    let out = &config.out_dir;
    let mut files: Vec<PathBuf> = Vec::new();

    let phases = config.to_phases().map_err(|e| e.in_stage("configuration"))?;
    let eval_specs = config.to_eval_specs().map_err(|e| e.in_stage("configuration"))?;

    // -- dataset ------------------------------------------------------------
    let stage = |e: Error| e.in_stage("dataset");
    let (train_full, test) = load_dataset::<T>(&config.dataset).map_err(stage)?;
    let train =
        data::stratified_subset(&train_full, config.dataset.fraction, config.dataset.subset_seed)
            .map_err(stage)?;
    let dataset_report = DatasetReport {
        train_source: train_full.name().to_string(),
        test_source: test.name().to_string(),
        dim: train.dim(),
        classes: train.num_classes(),
        full_train_n: train_full.n(),
        train_n: train.n(),
        test_n: test.n(),
        fraction: config.dataset.fraction,
        per_class_train_counts: train.class_counts(),
    };

    // -- flow ---------------------------------------------------------------
    let mut flow_model: Option<FlowModel<T>> = None;
    let mut flow_report: Option<FlowReport> = None;
    if let Some(fcfg) = &config.flow {
        if verb.trains_flow() || fcfg.checkpoint.is_some() {
            let stage = |e: Error| e.in_stage("flow");
            let (model, report) =
                assemble_flow::<T>(fcfg, config, verb, &train, &test, out, &mut files)
                    .map_err(stage)?;
            flow_report = Some(report);
            flow_model = Some(model);
        }
    }

    // -- classifier ---------------------------------------------------------
    let mut clf: Option<Classifier<T>> = None;
    let mut classifier_report: Option<ClassifierReport> = None;
    if verb.uses_classifier() {
        let stage = |e: Error| e.in_stage("classifier");
        let (model, report) = assemble_classifier::<T>(
            config,
            verb,
            flow_model.as_ref(),
            &phases,
            &train,
            &test,
            out,
            &mut files,
        )
        .map_err(stage)?;
        classifier_report = Some(report);
        clf = Some(model);
    }

    // -- evaluation ----------------------------------------------------------
    let mut eval_report: Option<EvalReport> = None;
    if verb.evaluates() {
        let stage = |e: Error| e.in_stage("evaluation");
        let clf_ref = clf.as_ref().expect("evaluating verbs use a classifier");
        let train_accuracy = accuracy(clf_ref, &train).map_err(stage)?;
        let test_accuracy = accuracy(clf_ref, &test).map_err(stage)?;
        let mut attacks = Vec::new();
        if verb.runs_attacks() {
            for spec in &eval_specs {
                attacks.push(
                    evaluate_attack(clf_ref, flow_model.as_ref(), spec, &test, config.eval.frechet)
                        .map_err(stage)?,
                );
            }
        }
        let sample_grid = match (&config.eval.sample_grid, flow_model.as_ref()) {
            (Some(grid), Some(flow)) => {
                let path = out.join("samples.pgm");
                write_sample_grid(flow, grid, train.num_classes(), config.seed, &path)
                    .map_err(stage)?;
                files.push(path.clone());
                Some(path.display().to_string())
            }
            _ => None,
        };
        eval_report = Some(EvalReport { train_accuracy, test_accuracy, attacks, sample_grid });
    }

    // -- report --------------------------------------------------------------
    let stage = |e: Error| e.in_stage("report");
    let report = RunReport {
        tool: format!("flowaug {}", env!("CARGO_PKG_VERSION")),
        verb: verb.name().to_string(),
        schema_version: SCHEMA_VERSION,
        precision: config.precision.name().to_string(),
        seeds: seed_report(config, &phases, &eval_specs),
        dataset: dataset_report,
        flow: flow_report,
        classifier: classifier_report,
        eval: eval_report,
        resolved_config: config.to_toml_string().map_err(stage)?,
    };
    let report_path = out.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| stage(Error::Config(format!("report serialization: {e}"))))?;
    fs::write(&report_path, json + "\n").map_err(|e| stage(Error::io(&report_path, e)))?;
    files.push(report_path.clone());
    write_csv_tables(&report, out, &mut files).map_err(stage)?;

    Ok(RunArtifacts {
        out_dir: out.clone(),
        report_path,
        files,
        test_accuracy: report.eval.as_ref().map(|e| e.test_accuracy),
        flow_test_nll: report.flow.as_ref().map(|f| f.test_nll),
    })
}

/// Fits or loads the flow per config and verb, persists it when this verb
/// owns flow training, and measures its NLL on the current splits.
#[allow(clippy::too_many_arguments)]
fn assemble_flow<T: Scalar>(
    fcfg: &FlowTrainConfig,
    config: &ExperimentConfig,
    verb: Verb,
    train: &DatasetHandle<T>,
    test: &DatasetHandle<T>,
    out: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<(FlowModel<T>, FlowReport)> {
    let descriptor = fcfg.to_flow_config(train.dim(), train.num_classes());
    let (model, source, history) = if let Some(path) = &fcfg.checkpoint {
        let model = checkpoint::load_flow_checked::<T>(path, &descriptor)?;
        (model, format!("loaded from {}", path.display()), Vec::new())
    } else {
        let mut model = FlowModel::new(
            descriptor.clone(),
            &mut rng_from(mix(config.seed, stream::FLOW_INIT)),
        )?;
        let options = FlowTrainOptions {
            epochs: fcfg.epochs,
            batch_size: fcfg.batch_size,
            learning_rate: fcfg.learning_rate,
            weight_decay: fcfg.weight_decay,
            seed: config.seed,
        };
        let history = train_flow(&mut model, train, test, &options)?;
        (model, "fitted here".to_string(), history)
    };
    let checkpoint_path = if verb.trains_flow() {
        let path = out.join("flow.ckpt");
        checkpoint::save_flow(&model, &path)?;
        files.push(path.clone());
        path
    } else {
        fcfg.checkpoint.clone().expect("non-training verbs load from checkpoints")
    };
    let report = FlowReport {
        source,
        dim: descriptor.dim,
        blocks: descriptor.blocks,
        hidden: descriptor.hidden,
        label_width: descriptor.label_width,
        use_actnorm: descriptor.use_actnorm,
        use_invlinear: descriptor.use_invlinear,
        scale_clamp: descriptor.scale_clamp,
        param_count: model.param_count(),
        train_nll: dataset_nll(&model, train)?,
        test_nll: dataset_nll(&model, test)?,
        history,
        checkpoint: checkpoint_path.display().to_string(),
    };
    Ok((model, report))
}

/// Trains or loads the classifier per verb, persisting it when trained.
#[allow(clippy::too_many_arguments)]
fn assemble_classifier<T: Scalar>(
    config: &ExperimentConfig,
    verb: Verb,
    flow: Option<&FlowModel<T>>,
    phases: &[TrainPhase],
    train: &DatasetHandle<T>,
    test: &DatasetHandle<T>,
    out: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<(Classifier<T>, ClassifierReport)> {
    let any_latent = phases.iter().any(|p| p.perturbation.kind.is_latent());
    let (model, source, history, checkpoint_path) = if verb.trains_classifier() {
        let mut model = build_classifier::<T>(
            &config.classifier,
            train.dim(),
            train.num_classes(),
            config.seed,
        )?;
        let mut optimizer = config.classifier.to_optimizer()?;
        let schedule = config.classifier.to_schedule()?;
        let options =
            TrainOptions { batch_size: config.classifier.batch_size, seed: config.seed };
        let flow_arg = if any_latent { flow } else { None };
        let history = train_classifier(
            &mut model, flow_arg, train, test, phases, &mut optimizer, &schedule, &options,
        )?;
        let path = out.join("classifier.ckpt");
        checkpoint::save_classifier(&model, &path)?;
        files.push(path.clone());
        (model, "trained here".to_string(), history, path)
    } else {
        let path = config
            .classifier
            .checkpoint
            .as_ref()
            .expect("checked in verb preconditions");
        let model = checkpoint::load_classifier::<T>(path)?;
        if model.input_dim() != train.dim() || model.num_classes() != train.num_classes() {
            return Err(Error::Checkpoint(format!(
                "classifier at {} maps {} inputs to {} classes but the dataset has {} and {}",
                path.display(),
                model.input_dim(),
                model.num_classes(),
                train.dim(),
                train.num_classes()
            )));
        }
        let source = format!("loaded from {}", path.display());
        (model, source, TrainingHistory { records: Vec::new() }, path.clone())
    };
    let phase_reports = if verb.trains_classifier() {
        phases
            .iter()
            .map(|p| PhaseReport {
                label: p.perturbation.label(),
                epochs: p.epochs,
                seed: (p.perturbation.kind != AttackKind::None).then_some(p.perturbation.seed),
            })
            .collect()
    } else {
        Vec::new()
    };
    let report = ClassifierReport {
        kind: match &model {
            Classifier::Mlp(_) => "mlp",
            Classifier::Cnn(_) => "cnn",
        }
        .to_string(),
        source,
        param_count: model.param_count(),
        phases: phase_reports,
        history: history.records.iter().map(EpochReport::from).collect(),
        checkpoint: checkpoint_path.display().to_string(),
    };
    Ok((model, report))
}

/// Measures one attack's accuracy drop and, when requested and possible, the
/// classifier-feature Fréchet distance between clean and perturbed test
/// inputs. The perturbed set is rebuilt from the evaluation seed stream, so
/// it is exactly the one the robustness numbers saw.
fn evaluate_attack<T: Scalar>(
    clf: &Classifier<T>,
    flow: Option<&FlowModel<T>>,
    spec: &PerturbationSpec,
    test: &DatasetHandle<T>,
    want_frechet: bool,
) -> Result<AttackReport> {
    let flow_arg = if spec.kind.is_latent() { flow } else { None };
    let report = robustness_eval(clf, flow_arg, spec, test)?;

    let mut frechet = None;
    let mut frechet_rows = None;
    let mut frechet_note = None;
    if want_frechet && spec.kind == AttackKind::None {
        frechet_note = Some("not defined for the identity perturbation".to_string());
    } else if want_frechet && !report.failed.is_empty() {
        frechet_note = Some(format!(
            "skipped: the attack failed on {} of {} rows, so the perturbed set is incomplete",
            report.failed.len(),
            test.n()
        ));
    } else if want_frechet {
        let visit_seed = mix(spec.seed, stream::EVAL);
        let (perturbed, _) =
            perturb_batch(flow_arg, Some(clf), test.inputs(), test.labels(), spec, visit_seed)?;
        let clean = ClassifierFeatures(clf).extract(test.inputs())?;
        let attacked = ClassifierFeatures(clf).extract(&perturbed)?;
        let a = gaussian_summary(&clean)?;
        let b = gaussian_summary(&attacked)?;
        frechet_rows = Some(a.count);
        frechet = Some(frechet_distance(&a, &b)?);
    }

    Ok(AttackReport {
        label: spec.label(),
        seed: (spec.kind != AttackKind::None).then_some(spec.seed),
        clean_accuracy: report.clean_acc,
        attacked_accuracy: report.attacked_acc,
        accuracy_drop: report.drop,
        evaluated: report.evaluated,
        failed: report
            .failed
            .iter()
            .map(|(row, error)| FailureReport { row: *row, error: error.clone() })
            .collect(),
        mean_l2: report.mean_l2,
        mean_linf: report.mean_linf,
        frechet_classifier_features: frechet,
        frechet_feature_rows: frechet_rows,
        frechet_note,
    })
}

/// Decodes a deterministic grid of flow samples into an 8-bit grayscale image
/// (binary portable graymap). Sample `i` fills tile `(i / cols, i % cols)`;
/// a conditional flow cycles class labels across the grid.
fn write_sample_grid<T: Scalar>(
    flow: &FlowModel<T>,
    grid: &SampleGridConfig,
    num_classes: usize,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let per_sample = grid.height * grid.width;
    if per_sample != flow.dim() {
        return Err(Error::invalid(
            "sample grid",
            format!(
                "each tile holds {}×{} = {per_sample} values but the flow emits {}",
                grid.height,
                grid.width,
                flow.dim()
            ),
        ));
    }
    let n = grid.rows * grid.cols;
    let label = if flow.is_conditional() {
        let cycle = num_classes.min(flow.label_width()).max(1);
        let labels: Vec<usize> = (0..n).map(|i| i % cycle).collect();
        Some(data::one_hot::<T>(&labels, flow.label_width()))
    } else {
        None
    };
    let mut rng = rng_from(mix(seed, stream::SAMPLE_GRID));
    let samples = flow.sample(n, label.as_ref(), &mut rng)?;
    let (img_w, img_h) = (grid.cols * grid.width, grid.rows * grid.height);
    let mut pixels = vec![0u8; img_w * img_h];
    for i in 0..n {
        let (tile_r, tile_c) = (i / grid.cols, i % grid.cols);
        for py in 0..grid.height {
            for px in 0..grid.width {
                let v = samples.data()[i * per_sample + py * grid.width + px].widen();
                pixels[(tile_r * grid.height + py) * img_w + tile_c * grid.width + px] =
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let mut bytes = format!("P5\n{img_w} {img_h}\n255\n").into_bytes();
    bytes.extend_from_slice(&pixels);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))
}

fn seed_report(
    config: &ExperimentConfig,
    phases: &[TrainPhase],
    eval_specs: &[PerturbationSpec],
) -> SeedReport {
    SeedReport {
        global: config.seed,
        dataset: config.dataset.seed,
        subset: config.dataset.subset_seed,
        flow_init: mix(config.seed, stream::FLOW_INIT),
        flow_shuffle: mix(config.seed, stream::FLOW_TRAIN),
        classifier_init: mix(config.seed, stream::CLF_INIT),
        classifier_shuffle: mix(config.seed, stream::CLF_TRAIN),
        phase_attacks: phases.iter().map(|p| p.perturbation.seed).collect(),
        eval_attacks: eval_specs.iter().map(|s| s.seed).collect(),
    }
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

/// Quotes a CSV field when it contains structure characters.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_csv_tables(report: &RunReport, out: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut emit = |name: &str, content: String| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        files.push(path);
        Ok(())
    };

    if let Some(c) = &report.classifier {
        if !c.history.is_empty() {
            let mut t = String::from("epoch,phase,lr,train_acc,train_loss,test_acc,test_loss\n");
            for r in &c.history {
                t.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.epoch,
                    csv_field(&r.phase),
                    r.lr,
                    r.train_acc,
                    r.train_loss,
                    r.test_acc,
                    r.test_loss
                ));
            }
            emit("history.csv", t)?;
        }
    }
    if let Some(f) = &report.flow {
        if !f.history.is_empty() {
            let mut t = String::from("epoch,lr,train_nll,test_nll\n");
            for r in &f.history {
                t.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_nll, r.test_nll));
            }
            emit("flow_history.csv", t)?;
        }
    }
    if let Some(e) = &report.eval {
        if !e.attacks.is_empty() {
            let mut t = String::from(
                "attack,seed,clean_accuracy,attacked_accuracy,accuracy_drop,evaluated,failed,mean_l2,mean_linf\n",
            );
            for a in &e.attacks {
                t.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    csv_field(&a.label),
                    a.seed.map(|s| s.to_string()).unwrap_or_default(),
                    a.clean_accuracy,
                    a.attacked_accuracy,
                    a.accuracy_drop,
                    a.evaluated,
                    a.failed.len(),
                    a.mean_l2,
                    a.mean_linf
                ));
            }
            emit("robustness.csv", t)?;

            let mut t = String::from("attack,frechet_classifier_features,feature_rows,note\n");
            for a in &e.attacks {
                t.push_str(&format!(
                    "{},{},{},{}\n",
                    csv_field(&a.label),
                    a.frechet_classifier_features.map(|v| v.to_string()).unwrap_or_default(),
                    a.frechet_feature_rows.map(|v| v.to_string()).unwrap_or_default(),
                    csv_field(a.frechet_note.as_deref().unwrap_or("")),
                ));
            }
            emit("frechet.csv", t)?;
        }
    }

    let mut t = String::from("metric,value\n");
    t.push_str(&format!("seed,{}\n", report.seeds.global));
    t.push_str(&format!("train_rows,{}\n", report.dataset.train_n));
    t.push_str(&format!("test_rows,{}\n", report.dataset.test_n));
    if let Some(f) = &report.flow {
        t.push_str(&format!("flow_train_nll,{}\n", f.train_nll));
        t.push_str(&format!("flow_test_nll,{}\n", f.test_nll));
    }
    if let Some(e) = &report.eval {
        t.push_str(&format!("train_accuracy_percent,{}\n", e.train_accuracy));
        t.push_str(&format!("test_accuracy_percent,{}\n", e.test_accuracy));
        for a in &e.attacks {
            t.push_str(&format!(
                "{},{}\n",
                csv_field(&format!("accuracy_drop {}", a.label)),
                a.accuracy_drop
            ));
        }
    }
    emit("summary.csv", t)?;
    Ok(())
}

// ---------------------------------------------------------------------------
