//! Noise-stimulus model extraction: train a victim, query it with noise,
//! fit a dropout-free clone to the stimulus/response pairs and score both
//! on the victim's validation split.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{read_bytes, read_header, read_tensor, write_bytes, write_header, write_tensor};
use crate::datasets::{DatasetError, LabeledImageSet, Registry};
use crate::nn::{
    compute_class_weights, evaluate, init_params, one_hot, predict, train, train_from, ClassWeights, EpochRecord,
    Layer, ModelConfig, ModelParams, NnError, Tensor, TrainConfig,
};
use crate::noise::{generate, NoiseError, NoiseKind, NoiseSpec, StimulusBatch};
use crate::reporting::{argmax_distribution, confusion_matrix, ConfusionMatrix, ReportError, StageTiming, NUM_CLASSES};

pub const RESPONSE_MAGIC: &[u8; 4] = b"XRSP";
pub const RESPONSE_VERSION: u32 = 1;
pub const DEFAULT_EVAL_BATCH: usize = 256;

/// Pipeline stage, used to tag errors, progress and timings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    LoadDataset,
    TrainVictim,
    EvaluateVictim,
    GenerateStimuli,
    QueryVictim,
    TrainExtracted,
    EvaluateExtracted,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::LoadDataset => "load-dataset",
            Stage::TrainVictim => "train-victim",
            Stage::EvaluateVictim => "evaluate-victim",
            Stage::GenerateStimuli => "generate-stimuli",
            Stage::QueryVictim => "query-victim",
            Stage::TrainExtracted => "train-extracted",
            Stage::EvaluateExtracted => "evaluate-extracted",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageFailure,
    },
    #[error("invalid extraction config: {0}")]
    Config(String),
    #[error("hardness ratio needs a positive pre-extraction accuracy, got {0}")]
    NonPositiveAccuracy(f64),
    #[error("response file: {0}")]
    Responses(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

type Result<T> = std::result::Result<T, ExtractionError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T, E: Into<StageFailure>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| ExtractionError::Stage { stage, source: e.into() })
    }
}

/// Hooks for progress output. All methods default to no-ops.
pub trait Progress {
    fn stage(&mut self, _stage: Stage, _detail: &str) {}
    fn epoch(&mut self, _stage: Stage, _record: &EpochRecord) {}
}

pub struct Silent;

impl Progress for Silent {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// 600000 stimuli, 50 extraction epochs.
    Full,
    /// 60000 stimuli, 10 extraction epochs.
    Reduced,
}

impl Protocol {
    pub fn stimulus_count(self) -> usize {
        match self {
            Protocol::Full => 600_000,
            Protocol::Reduced => 60_000,
        }
    }

    pub fn extract_epochs(self) -> usize {
        match self {
            Protocol::Full => 50,
            Protocol::Reduced => 10,
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Protocol::Full),
            "reduced" => Ok(Protocol::Reduced),
            _ => Err(format!("unknown protocol '{s}' (full | reduced)")),
        }
    }
}

/// Training targets for the extracted model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// The victim's full softmax vectors.
    #[default]
    Soft,
    /// One-hot argmax of the victim's responses.
    Hard,
}

impl std::str::FromStr for TargetMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "soft" => Ok(TargetMode::Soft),
            "hard" => Ok(TargetMode::Hard),
            _ => Err(format!("unknown target mode '{s}' (soft | hard)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Seeds {
    pub victim: u64,
    pub noise: u64,
    pub extract: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { victim: 1, noise: 2, extract: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExtractionConfig {
    pub dataset: String,
    pub noise: NoiseSpec,
    pub victim: TrainConfig,
    pub extract: TrainConfig,
    pub targets: TargetMode,
    pub seeds: Seeds,
    pub eval_batch_size: usize,
}

impl ExtractionConfig {
    pub fn new(dataset: impl Into<String>, kind: NoiseKind, protocol: Protocol, seeds: Seeds) -> Self {
        Self {
            dataset: dataset.into(),
            noise: NoiseSpec::new(kind, protocol.stimulus_count(), seeds.noise),
            victim: TrainConfig::default(),
            extract: TrainConfig { epochs: protocol.extract_epochs(), ..TrainConfig::default() },
            targets: TargetMode::Soft,
            seeds,
            eval_batch_size: DEFAULT_EVAL_BATCH,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExtractionError::Config(m));
        if self.victim.epochs == 0 || self.extract.epochs == 0 {
            return bad("victim and extraction epochs must both be at least 1".into());
        }
        if self.victim.batch_size == 0 || self.extract.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.noise.seed != self.seeds.noise {
            return bad(format!(
                "noise spec seed {} differs from the noise seed {}",
                self.noise.seed, self.seeds.noise
            ));
        }
        self.noise.validate().map_err(|e| ExtractionError::Config(e.to_string()))
    }
}

/// Noise images paired with the victim's softmax responses.
#[derive(Clone, Debug, PartialEq)]
pub struct StimulusResponseSet {
    pub stimuli: StimulusBatch,
    pub responses: Tensor<f32>,
}

impl StimulusResponseSet {
    pub fn new(stimuli: StimulusBatch, responses: Tensor<f32>) -> Result<Self> {
        let bad = |m: String| Err(ExtractionError::Responses(m));
        if responses.rank() != 2 || responses.dim(1) != NUM_CLASSES {
            return bad(format!("responses must be [N,10], got {:?}", responses.shape()));
        }
        if responses.dim(0) != stimuli.len() {
            return bad(format!("{} responses for {} stimuli", responses.dim(0), stimuli.len()));
        }
        for (i, row) in responses.data().chunks_exact(NUM_CLASSES).enumerate() {
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > 1e-5 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("response row {i} is not a probability vector (sum {sum})"));
            }
        }
        Ok(Self { stimuli, responses })
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn class_distribution(&self) -> [u64; NUM_CLASSES] {
        argmax_distribution(&self.responses).expect("shape checked on construction")
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self { stimuli: self.stimuli.select(indices), responses: self.responses.gather_rows(indices) }
    }
}

/// `XRSP`: the generating noise spec (JSON) and the `[N,10]` responses.
pub fn save_responses(path: &Path, spec: &NoiseSpec, responses: &Tensor<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, RESPONSE_MAGIC, RESPONSE_VERSION)?;
    let json = serde_json::to_vec(spec).map_err(|e| ExtractionError::Responses(e.to_string()))?;
    write_bytes(&mut w, &json)?;
    write_tensor(&mut w, responses)?;
    w.flush()?;
    Ok(())
}

pub fn load_responses(path: &Path) -> Result<(NoiseSpec, Tensor<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let fmt = |e: io::Error| ExtractionError::Responses(format!("{}: {e}", path.display()));
    let version = read_header(&mut r, RESPONSE_MAGIC).map_err(fmt)?;
    if version != RESPONSE_VERSION {
        return Err(ExtractionError::Responses(format!("unsupported version {version}")));
    }
    let spec = serde_json::from_slice(&read_bytes(&mut r).map_err(fmt)?)
        .map_err(|e| ExtractionError::Responses(format!("embedded spec: {e}")))?;
    let responses = read_tensor(&mut r).map_err(fmt)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(ExtractionError::Responses("trailing bytes after responses".into()));
    }
    Ok((spec, responses))
}

/// A trained (or loaded) victim and its validation accuracy.
#[derive(Clone, Debug)]
pub struct Victim {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub accuracy: f64,
    pub predictions: Vec<u8>,
    pub history: Vec<EpochRecord>,
}

/// Trains the dropout-enabled reference network on one-hot labels and
/// scores it on `validation`.
pub fn train_victim(
    train_set: &LabeledImageSet,
    validation: &LabeledImageSet,
    train_cfg: &TrainConfig,
    seed: u64,
    eval_batch: usize,
    progress: &mut dyn Progress,
) -> Result<Victim> {
    let config = ModelConfig::table1(true);
    progress.stage(Stage::TrainVictim, &format!("{} samples, {} epochs", train_set.len(), train_cfg.epochs));
    let targets = one_hot::<f32>(&train_set.labels, NUM_CLASSES);
    let mut cb = |r: &EpochRecord| progress.epoch(Stage::TrainVictim, r);
    let (params, history) = train(
        &config,
        &train_set.images,
        &targets,
        train_cfg,
        &ClassWeights::uniform(NUM_CLASSES),
        seed,
        Some(&mut cb),
    )
    .at(Stage::TrainVictim)?;
    score_victim(config, params, history, validation, eval_batch, progress)
}

/// Wraps already-trained victim parameters, scoring them on `validation`.
pub fn score_victim(
    config: ModelConfig,
    params: ModelParams<f32>,
    history: Vec<EpochRecord>,
    validation: &LabeledImageSet,
    eval_batch: usize,
    progress: &mut dyn Progress,
) -> Result<Victim> {
    progress.stage(Stage::EvaluateVictim, &format!("{} validation samples", validation.len()));
    let eval =
        evaluate(&config, &params, &validation.images, &validation.labels, eval_batch).at(Stage::EvaluateVictim)?;
    Ok(Victim { config, params, accuracy: eval.accuracy, predictions: eval.predictions, history })
}

/// Softmax responses of the victim (inference mode, dropout off).
pub fn query_victim(victim: &Victim, stimuli: StimulusBatch, batch_size: usize) -> Result<StimulusResponseSet> {
    query_model(&victim.config, &victim.params, stimuli, batch_size)
}

pub fn query_model(
    config: &ModelConfig,
    params: &ModelParams<f32>,
    stimuli: StimulusBatch,
    batch_size: usize,
) -> Result<StimulusResponseSet> {
    let responses = predict(config, params, &stimuli.images, batch_size).at(Stage::QueryVictim)?;
    StimulusResponseSet::new(stimuli, responses)
}

/// The victim's layer stack minus every dropout layer, nothing else changed.
pub fn extracted_config(victim: &ModelConfig) -> ModelConfig {
    let extracted = victim.without_dropout();
    assert_structurally_extracted(victim, &extracted);
    extracted
}

fn assert_structurally_extracted(victim: &ModelConfig, extracted: &ModelConfig) {
    let kept: Vec<&Layer> = victim.layers.iter().filter(|l| !matches!(l, Layer::Dropout { .. })).collect();
    assert_eq!(extracted.layers.iter().collect::<Vec<_>>(), kept, "extracted stack must equal victim minus dropout");
    assert_eq!(extracted.input_shape, victim.input_shape);
    assert!(!extracted.include_dropout);
}

/// Output of fitting a clone to stimulus/response pairs.
#[derive(Clone, Debug)]
pub struct Extracted {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub class_weights: ClassWeights,
    pub history: Vec<EpochRecord>,
}

/// Trains a freshly initialised clone on `pairs`, re-weighting classes by
/// the inverse frequency of the responses' argmax.
pub fn fit_extracted(
    victim_config: &ModelConfig,
    pairs: &StimulusResponseSet,
    train_cfg: &TrainConfig,
    targets: TargetMode,
    seed: u64,
    progress: &mut dyn Progress,
) -> Result<Extracted> {
    let config = extracted_config(victim_config);
    let class_weights = compute_class_weights(&pairs.responses).at(Stage::TrainExtracted)?;
    let target_tensor = match targets {
        TargetMode::Soft => pairs.responses.clone(),
        TargetMode::Hard => {
            let labels: Vec<u8> =
                pairs.responses.data().chunks_exact(NUM_CLASSES).map(|r| crate::nn::argmax(r) as u8).collect();
            one_hot(&labels, NUM_CLASSES)
        }
    };
    let init = init_params(&config, seed).at(Stage::TrainExtracted)?;
    let mut cb = |r: &EpochRecord| progress.epoch(Stage::TrainExtracted, r);
    let (params, history) = train_from(
        &config,
        init,
        &pairs.stimuli.images,
        &target_tensor,
        train_cfg,
        &class_weights,
        seed,
        Some(&mut cb),
    )
    .at(Stage::TrainExtracted)?;
    Ok(Extracted { config, params, class_weights, history })
}

/// `post / pre`.
pub fn hardness_ratio(pre: f64, post: f64) -> Result<f64> {
    if pre.is_nan() || pre <= 0.0 {
        return Err(ExtractionError::NonPositiveAccuracy(pre));
    }
    Ok(post / pre)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Histories {
    pub victim: Vec<EpochRecord>,
    pub extracted: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExtractionReport {
    pub config: ExtractionConfig,
    pub seeds: Seeds,
    pub pre_extraction_accuracy: f64,
    pub post_extraction_accuracy: f64,
    pub hardness_ratio: f64,
    pub stimulus_count: usize,
    pub class_distribution: [u64; NUM_CLASSES],
    pub class_weights: Vec<f64>,
    pub confusion_matrix: ConfusionMatrix,
    pub histories: Histories,
}

/// Optional precomputed stages; anything absent is computed.
#[derive(Default)]
pub struct PipelineInputs {
    pub victim: Option<(ModelConfig, ModelParams<f32>)>,
    pub stimuli: Option<StimulusBatch>,
}

pub struct ExtractionOutcome {
    pub report: ExtractionReport,
    pub victim: Victim,
    pub pairs: StimulusResponseSet,
    pub extracted: Extracted,
    pub timings: Vec<StageTiming>,
}

struct Clock(Vec<StageTiming>);

impl Clock {
    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.0.push(StageTiming { stage: stage.name().into(), seconds: start.elapsed().as_secs_f64() });
        Ok(out)
    }
}

/// Loads the configured dataset from `registry` and runs the pipeline.
pub fn run_extraction(
    config: &ExtractionConfig,
    registry: &Registry,
    inputs: PipelineInputs,
    progress: &mut dyn Progress,
) -> Result<ExtractionOutcome> {
    config.validate()?;
    progress.stage(Stage::LoadDataset, &config.dataset);
    let start = Instant::now();
    let (train_set, validation) = crate::datasets::load_dataset(registry, &config.dataset).at(Stage::LoadDataset)?;
    let load = StageTiming { stage: Stage::LoadDataset.name().into(), seconds: start.elapsed().as_secs_f64() };
    let mut outcome = run_extraction_on(config, &train_set, &validation, inputs, progress)?;
    outcome.timings.insert(0, load);
    Ok(outcome)
}

/// Victim training (unless supplied), stimulus generation (unless
/// supplied), querying, clone fitting and evaluation.
pub fn run_extraction_on(
    config: &ExtractionConfig,
    train_set: &LabeledImageSet,
    validation: &LabeledImageSet,
    inputs: PipelineInputs,
    progress: &mut dyn Progress,
) -> Result<ExtractionOutcome> {
    config.validate()?;
    let mut clock = Clock(Vec::new());
    let victim = match inputs.victim {
        Some((vc, vp)) => {
            if vc != ModelConfig::table1(true) {
                return Err(ExtractionError::Config("supplied victim is not the reference architecture".into()));
            }
            clock.time(Stage::EvaluateVictim, || {
                score_victim(vc, vp, Vec::new(), validation, config.eval_batch_size, progress)
            })?
        }
        None => clock.time(Stage::TrainVictim, || {
            train_victim(train_set, validation, &config.victim, config.seeds.victim, config.eval_batch_size, progress)
        })?,
    };
    let stimuli = match inputs.stimuli {
        Some(s) => s,
        None => clock.time(Stage::GenerateStimuli, || {
            progress.stage(Stage::GenerateStimuli, &format!("{} x {}", config.noise.count, config.noise.kind));
            generate(&config.noise).at(Stage::GenerateStimuli)
        })?,
    };
    let mut report_config = config.clone();
    report_config.noise = stimuli.spec.clone();
    report_config.seeds.noise = stimuli.spec.seed;
    let pairs = clock.time(Stage::QueryVictim, || {
        progress.stage(Stage::QueryVictim, &format!("{} stimuli", stimuli.len()));
        query_victim(&victim, stimuli, config.eval_batch_size)
    })?;
    let extracted = clock.time(Stage::TrainExtracted, || {
        progress.stage(Stage::TrainExtracted, &format!("{} pairs, {} epochs", pairs.len(), config.extract.epochs));
        fit_extracted(&victim.config, &pairs, &config.extract, config.targets, config.seeds.extract, progress)
    })?;
    let confusion = clock.time(Stage::EvaluateExtracted, || {
        progress.stage(Stage::EvaluateExtracted, &format!("{} validation samples", validation.len()));
        let eval = evaluate(
            &extracted.config,
            &extracted.params,
            &validation.images,
            &validation.labels,
            config.eval_batch_size,
        )
        .at(Stage::EvaluateExtracted)?;
        confusion_matrix(&eval.predictions, &validation.labels).at(Stage::EvaluateExtracted)
    })?;
    let pre = confusion_matrix(&victim.predictions, &validation.labels).at(Stage::EvaluateVictim)?.accuracy();
    let post = confusion.accuracy();
    let report = ExtractionReport {
        seeds: report_config.seeds,
        pre_extraction_accuracy: pre,
        post_extraction_accuracy: post,
        hardness_ratio: hardness_ratio(pre, post)?,
        stimulus_count: pairs.len(),
        class_distribution: pairs.class_distribution(),
        class_weights: extracted.class_weights.as_slice().to_vec(),
        confusion_matrix: confusion,
        histories: Histories { victim: victim.history.clone(), extracted: extracted.history.clone() },
        config: report_config,
    };
    Ok(ExtractionOutcome { report, victim, pairs, extracted, timings: clock.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BetaPoint {
    pub beta: f64,
    pub count: usize,
    pub accuracy: f64,
    pub loss: f64,
}

/// Trains a fresh clone per beta stratum of an Ising batch and scores each
/// on `validation`. Every stratum starts from the same initialisation.
#[allow(clippy::too_many_arguments)]
pub fn beta_sweep(
    victim: &Victim,
    ising: &StimulusBatch,
    validation: &LabeledImageSet,
    train_cfg: &TrainConfig,
    targets: TargetMode,
    seed: u64,
    eval_batch: usize,
    progress: &mut dyn Progress,
) -> Result<Vec<BetaPoint>> {
    if ising.tags.iter().any(|t| t.kind != NoiseKind::Ising || t.param.is_none()) {
        return Err(ExtractionError::Config("beta sweep needs beta-tagged Ising stimuli".into()));
    }
    let strata = ising.strata();
    if strata.len() < 2 {
        return Err(ExtractionError::Config(format!("beta sweep needs at least 2 beta strata, got {}", strata.len())));
    }
    let pairs = query_victim(victim, ising.clone(), eval_batch)?;
    let mut points = Vec::with_capacity(strata.len());
    for (beta, idx) in strata {
        progress.stage(Stage::TrainExtracted, &format!("beta {beta}: {} pairs", idx.len()));
        let subset = pairs.select(&idx);
        let fit = fit_extracted(&victim.config, &subset, train_cfg, targets, seed, progress)?;
        let eval = evaluate(&fit.config, &fit.params, &validation.images, &validation.labels, eval_batch)
            .at(Stage::EvaluateExtracted)?;
        points.push(BetaPoint { beta, count: idx.len(), accuracy: eval.accuracy, loss: eval.loss });
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DistributionResult {
    pub kind: NoiseKind,
    pub accuracy: f64,
    pub loss: f64,
    pub class_distribution: [u64; NUM_CLASSES],
}

/// One extraction per noise kind against a shared victim. `template`
/// supplies everything but the kind (count, grids, coupling, sweeps, clip,
/// seed).
#[allow(clippy::too_many_arguments)]
pub fn compare_distributions(
    victim: &Victim,
    validation: &LabeledImageSet,
    kinds: &[NoiseKind],
    template: &NoiseSpec,
    train_cfg: &TrainConfig,
    targets: TargetMode,
    extract_seed: u64,
    eval_batch: usize,
    progress: &mut dyn Progress,
) -> Result<Vec<DistributionResult>> {
    let mut results = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let spec = NoiseSpec { kind, ..template.clone() };
        progress.stage(Stage::GenerateStimuli, &format!("{} x {kind}", spec.count));
        let stimuli = generate(&spec).at(Stage::GenerateStimuli)?;
        let pairs = query_victim(victim, stimuli, eval_batch)?;
        let fit = fit_extracted(&victim.config, &pairs, train_cfg, targets, extract_seed, progress)?;
        let eval = evaluate(&fit.config, &fit.params, &validation.images, &validation.labels, eval_batch)
            .at(Stage::EvaluateExtracted)?;
        results.push(DistributionResult {
            kind,
            accuracy: eval.accuracy,
            loss: eval.loss,
            class_distribution: pairs.class_distribution(),
        });
    }
    Ok(results)
}
