//! End-to-end extraction on a small synthetic dataset.

use proptest::prelude::*;
use xlab_core::datasets::{synthetic_bars, LabeledImageSet, Registry};
use xlab_core::extraction::{
    beta_sweep, compare_distributions, run_extraction, run_extraction_on, train_victim, ExtractionConfig,
    ExtractionReport, PipelineInputs, Protocol, Seeds, Silent, TargetMode,
};
use xlab_core::nn::{compute_class_weights, one_hot, ModelConfig, TrainConfig};
use xlab_core::noise::{gen_ising_set, Coupling, NoiseKind, NoiseSpec};
use xlab_core::reporting::{
    check_report, confusion_matrix, emit_report, read_classdist_csv, read_confusion_csv, read_report, Format,
};

fn small_config(kind: NoiseKind, targets: TargetMode) -> ExtractionConfig {
    let mut c = ExtractionConfig::new("synthetic", kind, Protocol::Reduced, Seeds::default());
    c.noise.count = 100;
    c.noise.sweeps = 5;
    c.victim.epochs = 1;
    c.extract.epochs = 1;
    c.targets = targets;
    c.victim.batch_size = 64;
    c.extract.batch_size = 50;
    c
}

fn data() -> (LabeledImageSet, LabeledImageSet) {
    (synthetic_bars("synthetic", 320, 1), synthetic_bars("synthetic", 60, 2))
}

fn run(config: &ExtractionConfig) -> ExtractionReport {
    let (train, val) = data();
    run_extraction_on(config, &train, &val, PipelineInputs::default(), &mut Silent).unwrap().report
}

#[test]
fn report_satisfies_consistency_identities() {
    let (train, val) = data();
    let config = small_config(NoiseKind::BernoulliSweep, TargetMode::Soft);
    let out = run_extraction_on(&config, &train, &val, PipelineInputs::default(), &mut Silent).unwrap();
    let counts: [u64; 10] = val.class_counts();
    check_report(&out.report, Some(&counts)).unwrap();
    let r = &out.report;
    assert_eq!(r.hardness_ratio, r.post_extraction_accuracy / r.pre_extraction_accuracy);
    assert_eq!(r.class_distribution.iter().sum::<u64>(), 100);
    assert_eq!(r.histories.victim.len(), 1);
    assert_eq!(r.histories.extracted.len(), 1);
    assert_eq!(out.extracted.config, ModelConfig::table1(false));
    // The synthetic task is easy: one epoch gets the victim well above chance.
    assert!(r.pre_extraction_accuracy > 0.5, "victim accuracy {}", r.pre_extraction_accuracy);
    // Class weights are the balanced scheme over the response argmax.
    let w = compute_class_weights(&out.pairs.responses).unwrap();
    assert_eq!(r.class_weights, w.as_slice());
}

#[test]
fn identical_seeds_give_identical_reports() {
    for targets in [TargetMode::Soft, TargetMode::Hard] {
        let config = small_config(NoiseKind::Ising, targets);
        let (a, b) = (run(&config), run(&config));
        assert_eq!(a, b);
        let json_a = serde_json::to_string(&a).unwrap();
        assert_eq!(json_a, serde_json::to_string(&b).unwrap());
    }
    let base = small_config(NoiseKind::Uniform, TargetMode::Soft);
    let mut other = base.clone();
    other.seeds.extract += 1;
    assert_ne!(run(&base).histories.extracted, run(&other).histories.extracted);
}

#[test]
fn supplied_victim_matches_trained_victim() {
    let (train, val) = data();
    let config = small_config(NoiseKind::Gumbel, TargetMode::Soft);
    let victim = train_victim(&train, &val, &config.victim, config.seeds.victim, 256, &mut Silent).unwrap();
    let fresh = run(&config);
    let inputs = PipelineInputs { victim: Some((victim.config.clone(), victim.params.clone())), stimuli: None };
    let reused = run_extraction_on(&config, &train, &val, inputs, &mut Silent).unwrap().report;
    assert_eq!(reused.post_extraction_accuracy, fresh.post_extraction_accuracy);
    assert_eq!(reused.pre_extraction_accuracy, victim.accuracy);
    assert!(reused.histories.victim.is_empty());

    let wrong = PipelineInputs { victim: Some((ModelConfig::table1(false), victim.params.clone())), stimuli: None };
    assert!(run_extraction_on(&config, &train, &val, wrong, &mut Silent).is_err());
}

#[test]
fn emitted_report_round_trips() {
    let report = run(&small_config(NoiseKind::Normal, TargetMode::Soft));
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&report, dir.path(), &[Format::Json, Format::Csv]).unwrap();
    assert_eq!(files.len(), 4);
    assert_eq!(read_report(&dir.path().join("report.json")).unwrap(), report);
    assert_eq!(read_confusion_csv(&dir.path().join("confusion.csv")).unwrap(), report.confusion_matrix);
    assert_eq!(read_classdist_csv(&dir.path().join("classdist.csv")).unwrap(), report.class_distribution);
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "model,epoch,loss,accuracy");
    assert_eq!(history.lines().count(), 3);
    // Every key of the JSON schema is present.
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
    for key in [
        "config",
        "seeds",
        "preExtractionAccuracy",
        "postExtractionAccuracy",
        "hardnessRatio",
        "classDistribution",
        "confusionMatrix",
        "histories",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn stage_errors_are_tagged() {
    let config = small_config(NoiseKind::Uniform, TargetMode::Soft);
    let err = run_extraction(&config, &Registry::default(), PipelineInputs::default(), &mut Silent).err().unwrap();
    assert!(err.to_string().starts_with("[load-dataset]"), "{err}");
    let mut bad = config;
    bad.noise.kind = NoiseKind::BernoulliSweep;
    bad.noise.count = 105;
    let (train, val) = data();
    assert!(run_extraction_on(&bad, &train, &val, PipelineInputs::default(), &mut Silent).is_err());
}

#[test]
fn beta_sweep_needs_two_strata_and_reports_each() {
    let (train, val) = data();
    let cfg = TrainConfig { epochs: 1, batch_size: 32, ..TrainConfig::default() };
    let victim = train_victim(&train, &val, &cfg, 5, 256, &mut Silent).unwrap();
    let single = gen_ising_set(20, &[0.3], Coupling::Ferromagnetic, 3, 1).unwrap();
    assert!(beta_sweep(&victim, &single, &val, &cfg, TargetMode::Soft, 1, 256, &mut Silent).is_err());
    let two = gen_ising_set(40, &[0.0, 0.5], Coupling::Ferromagnetic, 3, 1).unwrap();
    let points = beta_sweep(&victim, &two, &val, &cfg, TargetMode::Soft, 1, 256, &mut Silent).unwrap();
    assert_eq!(points.iter().map(|p| (p.beta, p.count)).collect::<Vec<_>>(), vec![(0.0, 20), (0.5, 20)]);
    assert!(points.iter().all(|p| (0.0..=1.0).contains(&p.accuracy) && p.loss.is_finite()));
}

#[test]
fn compare_distributions_is_repeatable() {
    let (train, val) = data();
    let cfg = TrainConfig { epochs: 1, batch_size: 32, ..TrainConfig::default() };
    let victim = train_victim(&train, &val, &cfg, 5, 256, &mut Silent).unwrap();
    let mut template = NoiseSpec::new(NoiseKind::Uniform, 30, 4);
    template.sweeps = 3;
    let kinds = [NoiseKind::Uniform, NoiseKind::Uniform, NoiseKind::Ising];
    let results =
        compare_distributions(&victim, &val, &kinds, &template, &cfg, TargetMode::Soft, 6, 256, &mut Silent).unwrap();
    assert_eq!(results.len(), 3);
    assert_eq!(results[0], results[1]);
    assert_eq!(results[0].class_distribution.iter().sum::<u64>(), 30);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confusion_identities(pairs in prop::collection::vec((0u8..10, 0u8..10), 1..300)) {
        let (pred, truth): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let m = confusion_matrix(&pred, &truth).unwrap();
        prop_assert_eq!(m.total() as usize, truth.len());
        let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        prop_assert_eq!(m.accuracy(), correct as f64 / truth.len() as f64);
        let mut counts = [0u64; 10];
        truth.iter().for_each(|&t| counts[t as usize] += 1);
        prop_assert_eq!(m.row_sums(), counts);
    }

    #[test]
    fn class_weight_identity(extra in prop::collection::vec(0u8..10, 0..500)) {
        // The identity needs every class present.
        let labels: Vec<u8> = (0u8..10).chain(extra).collect();
        let responses = one_hot::<f32>(&labels, 10);
        let w = compute_class_weights(&responses).unwrap();
        let mut counts = [0u64; 10];
        labels.iter().for_each(|&l| counts[l as usize] += 1);
        let total: f64 = counts.iter().zip(w.as_slice()).map(|(&c, &wk)| c as f64 * wk).sum();
        prop_assert!((total - labels.len() as f64).abs() < 1e-9 * labels.len() as f64);
    }
}
