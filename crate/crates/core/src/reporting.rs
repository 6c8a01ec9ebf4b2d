//! Analysis outputs: confusion matrices, argmax class histograms, report
//! JSON/CSV emission, summary tables and run manifests.
//!
//! Argmax ties go to the lowest class index everywhere.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{BetaPoint, DistributionResult, ExtractionConfig, ExtractionReport};
use crate::nn::{argmax, Tensor};
use crate::noise::{NoiseKind, NoiseSpec};

pub const NUM_CLASSES: usize = 10;
pub const REPORT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ReportError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ReportError + '_ {
    move |source| ReportError::Csv { path: path.to_path_buf(), source }
}

/// `m[t][p]` counts samples of true class `t` predicted as `p`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.0[k][k]).sum()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    /// `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Per-true-class sample counts.
    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.0.map(|row| row.iter().sum())
    }

    pub fn column_sums(&self) -> [u64; NUM_CLASSES] {
        std::array::from_fn(|p| self.0.iter().map(|row| row[p]).sum())
    }
}

pub fn confusion_matrix(predictions: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(ReportError::Invalid(format!("{} predictions vs {} labels", predictions.len(), truth.len())));
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        if p as usize >= NUM_CLASSES || t as usize >= NUM_CLASSES {
            return Err(ReportError::Invalid(format!("class index out of range: truth {t}, prediction {p}")));
        }
        m.0[t as usize][p as usize] += 1;
    }
    Ok(m)
}

/// Histogram of per-row argmax over `[N, 10]` responses.
pub fn argmax_distribution(responses: &Tensor<f32>) -> Result<[u64; NUM_CLASSES]> {
    if responses.rank() != 2 || responses.dim(1) != NUM_CLASSES {
        return Err(ReportError::Invalid(format!("responses must be [N,{NUM_CLASSES}], got {:?}", responses.shape())));
    }
    let mut counts = [0u64; NUM_CLASSES];
    for row in responses.data().chunks_exact(NUM_CLASSES) {
        counts[argmax(row)] += 1;
    }
    Ok(counts)
}

/// Checks the identities a finished report must satisfy. `validation_counts`
/// are the per-class label counts of the validation split, if known.
pub fn check_report(report: &ExtractionReport, validation_counts: Option<&[u64; NUM_CLASSES]>) -> Result<()> {
    let fail = |m: String| Err(ReportError::Invalid(m));
    if report.hardness_ratio != report.post_extraction_accuracy / report.pre_extraction_accuracy {
        return fail(format!(
            "hardness ratio {} != {} / {}",
            report.hardness_ratio, report.post_extraction_accuracy, report.pre_extraction_accuracy
        ));
    }
    if report.confusion_matrix.accuracy() != report.post_extraction_accuracy {
        return fail(format!(
            "confusion accuracy {} != post accuracy {}",
            report.confusion_matrix.accuracy(),
            report.post_extraction_accuracy
        ));
    }
    let dist: u64 = report.class_distribution.iter().sum();
    if dist != report.stimulus_count as u64 {
        return fail(format!("class distribution sums to {dist}, stimulus count is {}", report.stimulus_count));
    }
    if let Some(counts) = validation_counts {
        if &report.confusion_matrix.row_sums() != counts {
            return fail(format!(
                "confusion row sums {:?} != validation class counts {counts:?}",
                report.confusion_matrix.row_sums()
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

pub const REPORT_JSON: &str = "report.json";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const CLASSDIST_CSV: &str = "classdist.csv";
pub const HISTORY_CSV: &str = "history.csv";
pub const BETASWEEP_CSV: &str = "betasweep.csv";
pub const TABLE2_CSV: &str = "table2.csv";
pub const TABLE3_CSV: &str = "table3.csv";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| ReportError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json { path: path.to_path_buf(), source })
}

/// Writes the report in the requested formats under `dir` and returns the
/// paths written.
pub fn emit_report(report: &ExtractionReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let p = dir.join(REPORT_JSON);
        write_json(&p, report)?;
        written.push(p);
    }
    if formats.contains(&Format::Csv) {
        let p = dir.join(CONFUSION_CSV);
        write_confusion_csv(&p, &report.confusion_matrix)?;
        written.push(p);
        let p = dir.join(CLASSDIST_CSV);
        write_classdist_csv(&p, &report.class_distribution)?;
        written.push(p);
        let p = dir.join(HISTORY_CSV);
        write_history_csv(&p, report)?;
        written.push(p);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<ExtractionReport> {
    read_json(path)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(csv_err(path))
}

/// Header `0..9` (predicted class), then one row per true class.
pub fn write_confusion_csv(path: &Path, m: &ConfusionMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record((0..NUM_CLASSES).map(|k| k.to_string())).map_err(&e)?;
    for row in &m.0 {
        w.write_record(row.iter().map(|c| c.to_string())).map_err(&e)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_confusion_csv(path: &Path) -> Result<ConfusionMatrix> {
    let mut r = csv_reader(path)?;
    let mut m = ConfusionMatrix::default();
    let rows: Vec<[u64; NUM_CLASSES]> =
        r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))?;
    if rows.len() != NUM_CLASSES {
        return Err(ReportError::Invalid(format!("{}: expected 10 rows, got {}", path.display(), rows.len())));
    }
    m.0.copy_from_slice(&rows);
    Ok(m)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct ClassCount {
    class: usize,
    count: u64,
}

pub fn write_classdist_csv(path: &Path, counts: &[u64; NUM_CLASSES]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for (class, &count) in counts.iter().enumerate() {
        w.serialize(ClassCount { class, count }).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_classdist_csv(path: &Path) -> Result<[u64; NUM_CLASSES]> {
    let rows: Vec<ClassCount> =
        csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))?;
    if rows.len() != NUM_CLASSES || rows.iter().enumerate().any(|(i, r)| r.class != i) {
        return Err(ReportError::Invalid(format!("{}: expected classes 0..9 in order", path.display())));
    }
    Ok(std::array::from_fn(|i| rows[i].count))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct HistoryRow {
    model: String,
    epoch: usize,
    loss: f64,
    accuracy: f64,
}

/// `model,epoch,loss,accuracy` with `model` in {victim, extracted}.
pub fn write_history_csv(path: &Path, report: &ExtractionReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let runs = [("victim", &report.histories.victim), ("extracted", &report.histories.extracted)];
    for (model, history) in runs {
        for r in history {
            w.serialize(HistoryRow { model: model.into(), epoch: r.epoch, loss: r.loss, accuracy: r.accuracy })
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct BetaRow {
    beta: f64,
    accuracy: f64,
    loss: f64,
}

/// One row per beta: `beta,accuracy,loss`.
pub fn write_beta_sweep_csv(path: &Path, points: &[BetaPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for p in points {
        w.serialize(BetaRow { beta: p.beta, accuracy: p.accuracy, loss: p.loss }).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads `(beta, accuracy, loss)` rows.
pub fn read_beta_sweep_csv(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    let rows: Vec<BetaRow> =
        csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))?;
    Ok(rows.into_iter().map(|r| (r.beta, r.accuracy, r.loss)).collect())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Table2Row {
    kind: String,
    accuracy: f64,
    loss: f64,
}

/// `kind,accuracy,loss`, one row per noise distribution.
pub fn write_table2_csv(path: &Path, results: &[DistributionResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in results {
        w.serialize(Table2Row { kind: r.kind.name().into(), accuracy: r.accuracy, loss: r.loss })
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_table2_csv(path: &Path) -> Result<Vec<(NoiseKind, f64, f64)>> {
    let rows: Vec<Table2Row> =
        csv_reader(path)?.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))?;
    rows.into_iter()
        .map(|r| {
            let kind = r.kind.parse().map_err(|e: crate::noise::NoiseError| ReportError::Invalid(e.to_string()))?;
            Ok((kind, r.accuracy, r.loss))
        })
        .collect()
}

/// Expected ascending order of reduced-protocol accuracy by noise kind.
pub const TABLE2_ORDER: [NoiseKind; 5] =
    [NoiseKind::Uniform, NoiseKind::Normal, NoiseKind::Gumbel, NoiseKind::BernoulliHalf, NoiseKind::Ising];

/// Whether accuracies rise strictly along [`TABLE2_ORDER`], except that
/// the normal/gumbel pair may appear in either order. Kinds missing from
/// `results` make the check fail.
pub fn table2_ordering_holds(results: &[(NoiseKind, f64)]) -> std::result::Result<(), String> {
    let acc = |k: NoiseKind| {
        results.iter().find(|(kind, _)| *kind == k).map(|r| r.1).ok_or_else(|| format!("no result for {k}"))
    };
    let [u, n, g, b, i] = [
        acc(NoiseKind::Uniform)?,
        acc(NoiseKind::Normal)?,
        acc(NoiseKind::Gumbel)?,
        acc(NoiseKind::BernoulliHalf)?,
        acc(NoiseKind::Ising)?,
    ];
    let (lo, hi) = (n.min(g), n.max(g));
    let chain =
        [("uniform", u), ("min(normal,gumbel)", lo), ("max(normal,gumbel)", hi), ("bernoulli", b), ("ising", i)];
    for w in chain.windows(2) {
        if w[0].1 >= w[1].1 {
            return Err(format!("{} {:.4} is not below {} {:.4}", w[0].0, w[0].1, w[1].0, w[1].1));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Table3Row {
    pub dataset: String,
    pub pre_extraction_accuracy: f64,
    pub post_extraction_accuracy: f64,
    pub hardness_ratio: f64,
}

pub fn table3_rows(reports: &[ExtractionReport]) -> Vec<Table3Row> {
    reports
        .iter()
        .map(|r| Table3Row {
            dataset: r.config.dataset.clone(),
            pre_extraction_accuracy: r.pre_extraction_accuracy,
            post_extraction_accuracy: r.post_extraction_accuracy,
            hardness_ratio: r.hardness_ratio,
        })
        .collect()
}

pub fn write_table3_csv(path: &Path, rows: &[Table3Row]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let e = csv_err(path);
    w.write_record(["dataset", "pre", "post", "ratio"]).map_err(&e)?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.pre_extraction_accuracy.to_string(),
            r.post_extraction_accuracy.to_string(),
            r.hardness_ratio.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FormatVersions {
    pub checkpoint: u32,
    pub stimuli: u32,
    pub responses: u32,
    pub report: u32,
}

impl Default for FormatVersions {
    fn default() -> Self {
        Self {
            checkpoint: crate::nn::checkpoint::CHECKPOINT_VERSION,
            stimuli: crate::noise::STIMULUS_VERSION,
            responses: crate::extraction::RESPONSE_VERSION,
            report: REPORT_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetInfo {
    pub name: String,
    pub train_size: usize,
    pub validation_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Everything needed to re-run a command: the resolved invocation,
/// configuration echoes, seeds and artifact paths. Timings are
/// informational and are the only field expected to differ between reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunManifest {
    pub software_version: String,
    pub format_versions: FormatVersions,
    pub command: String,
    /// Arguments as typed, for the record.
    pub args: Vec<String>,
    /// Fully resolved command (every default filled in); enough to re-run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invocation: Option<serde_json::Value>,
    pub seeds: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionConfig>,
    #[serde(default)]
    pub datasets: Vec<DatasetInfo>,
    #[serde(default)]
    pub artifacts: Vec<PathBuf>,
    #[serde(default)]
    pub timings: Vec<StageTiming>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            software_version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            format_versions: FormatVersions::default(),
            command: command.into(),
            args,
            invocation: None,
            seeds: Default::default(),
            noise: None,
            extraction: None,
            datasets: Vec::new(),
            artifacts: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value.into());
    }
}
