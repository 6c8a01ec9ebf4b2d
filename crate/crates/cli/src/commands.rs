use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use xlab_core::datasets::{load_dataset, LabeledImageSet, Registry};
use xlab_core::extraction::{
    beta_sweep, compare_distributions, query_model, run_extraction_on, save_responses, score_victim, train_victim,
    ExtractionConfig, PipelineInputs, Progress, Stage, Victim, DEFAULT_EVAL_BATCH,
};
use xlab_core::nn::checkpoint::{load_checkpoint, save_checkpoint};
use xlab_core::nn::{EpochRecord, ModelConfig, TrainConfig};
use xlab_core::noise::{default_beta_grid, default_p_grid, generate, NoiseSpec, StimulusBatch};
use xlab_core::reporting::{
    emit_report, read_json, read_report, table2_ordering_holds, table3_rows, write_beta_sweep_csv, write_classdist_csv,
    write_json, write_table2_csv, write_table3_csv, DatasetInfo, Format, RunManifest, StageTiming, BETASWEEP_CSV,
    CLASSDIST_CSV, MANIFEST_FILE, TABLE2_CSV, TABLE3_CSV,
};

use crate::args::{
    Command, CompareArgs, ExtractArgs, GenerateArgs, NoiseArgs, QueryArgs, ReplayArgs, SeedArgs, SummarizeArgs,
    SweepBetaArgs, TrainVictimArgs, VictimArgs,
};
use crate::settings::Settings;

pub const VICTIM_FILE: &str = "victim.xlab";
pub const EXTRACTED_FILE: &str = "extracted.xlab";
pub const STIMULI_FILE: &str = "stimuli.xstm";
pub const RESPONSES_FILE: &str = "responses.xrsp";

/// Well-formed flags that make no sense together (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// What a manifest records so the run can be repeated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Invocation {
    pub settings: Settings,
    pub command: Command,
}

struct Printer {
    quiet: bool,
}

impl Progress for Printer {
    fn stage(&mut self, stage: Stage, detail: &str) {
        if !self.quiet {
            eprintln!("[{stage}] {detail}");
        }
    }

    fn epoch(&mut self, stage: Stage, r: &EpochRecord) {
        if !self.quiet {
            eprintln!("[{stage}] epoch {}: loss {:.4}, accuracy {:.4}", r.epoch, r.loss, r.accuracy);
        }
    }
}

struct Run {
    settings: Settings,
    printer: Printer,
    manifest: RunManifest,
    out: PathBuf,
    started: Instant,
}

impl Run {
    fn registry(&self) -> Result<Registry> {
        match &self.settings.registry {
            Some(p) => Registry::from_file(p).with_context(|| format!("loading registry {}", p.display())),
            None => Ok(Registry::standard(&self.settings.data_root)),
        }
    }

    fn dataset(&mut self, name: &str) -> Result<(LabeledImageSet, LabeledImageSet)> {
        self.printer.stage(Stage::LoadDataset, name);
        let (train, val) = load_dataset(&self.registry()?, name).context("[load-dataset]")?;
        self.manifest.datasets.push(DatasetInfo {
            name: name.into(),
            train_size: train.len(),
            validation_size: val.len(),
        });
        Ok((train, val))
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.manifest.artifacts.push(p.clone());
        p
    }

    /// Loads `--reuse-victim` or trains (and saves) a fresh victim.
    fn victim(
        &mut self,
        args: &VictimArgs,
        train: &LabeledImageSet,
        val: &LabeledImageSet,
        seed: u64,
    ) -> Result<Victim> {
        let t = Instant::now();
        let victim = match &args.reuse_victim {
            Some(path) => {
                let (config, params) = load_checkpoint(path)
                    .with_context(|| format!("[load-victim] cannot load victim checkpoint {}", path.display()))?;
                if config != ModelConfig::table1(true) {
                    anyhow::bail!("[load-victim] {} is not a victim checkpoint", path.display());
                }
                score_victim(config, params, Vec::new(), val, DEFAULT_EVAL_BATCH, &mut self.printer)?
            }
            None => {
                let cfg = TrainConfig { epochs: args.victim_epochs, ..TrainConfig::default() };
                let v = train_victim(train, val, &cfg, seed, DEFAULT_EVAL_BATCH, &mut self.printer)?;
                let p = self.path(VICTIM_FILE);
                save_checkpoint(&p, &v.config, &v.params)?;
                v
            }
        };
        self.time("victim", t);
        println!("victim validation accuracy: {:.4}", victim.accuracy);
        Ok(victim)
    }

    fn time(&mut self, stage: &str, since: Instant) {
        self.manifest.timings.push(StageTiming { stage: stage.into(), seconds: since.elapsed().as_secs_f64() });
    }

    fn finish(mut self, command: &Command) -> Result<()> {
        self.time("total", self.started);
        self.manifest.invocation =
            Some(serde_json::to_value(Invocation { settings: self.settings.clone(), command: command.clone() })?);
        let path = self.out.join(MANIFEST_FILE);
        write_json(&path, &self.manifest)?;
        println!("manifest: {}", path.display());
        Ok(())
    }
}

fn seeds_of(args: &SeedArgs) -> xlab_core::extraction::Seeds {
    xlab_core::extraction::Seeds {
        victim: args.victim_seed.expect("resolved"),
        noise: args.noise_seed.expect("resolved"),
        extract: args.extract_seed.expect("resolved"),
    }
}

fn apply_noise_args(spec: &mut NoiseSpec, args: &NoiseArgs) {
    spec.coupling = args.coupling;
    spec.sweeps = args.sweeps;
    spec.clip = args.clip;
    spec.p_grid = args.p_grid.clone().expect("resolved");
    spec.beta_grid = args.betas.clone().expect("resolved");
}

/// Fills every defaulted value so the stored invocation is self-contained.
pub fn resolve(command: &mut Command, settings: &Settings) {
    let seeds = settings.seeds;
    let fill_seeds = |s: &mut SeedArgs| {
        s.victim_seed.get_or_insert(seeds.victim);
        s.noise_seed.get_or_insert(seeds.noise);
        s.extract_seed.get_or_insert(seeds.extract);
    };
    let fill_noise = |n: &mut NoiseArgs| {
        n.p_grid.get_or_insert_with(default_p_grid);
        n.betas.get_or_insert_with(default_beta_grid);
    };
    let default_out = settings.output_root.join(command.name());
    let fill_out = |o: &mut Option<PathBuf>| {
        o.get_or_insert(default_out);
    };
    match command {
        Command::TrainVictim(a) => {
            a.seed.get_or_insert(seeds.victim);
            fill_out(&mut a.out);
        }
        Command::GenerateStimuli(a) => {
            a.seed.get_or_insert(seeds.noise);
            fill_noise(&mut a.noise_args);
            fill_out(&mut a.out);
        }
        Command::Query(a) => fill_out(&mut a.out),
        Command::Extract(a) => {
            a.count.get_or_insert(a.protocol.stimulus_count());
            a.epochs.get_or_insert(a.protocol.extract_epochs());
            fill_seeds(&mut a.seeds);
            fill_noise(&mut a.noise_args);
            fill_out(&mut a.out);
        }
        Command::SweepBeta(a) => {
            fill_seeds(&mut a.seeds);
            fill_noise(&mut a.noise_args);
            fill_out(&mut a.out);
        }
        Command::CompareDistributions(a) => {
            a.count.get_or_insert(a.protocol.stimulus_count());
            a.epochs.get_or_insert(a.protocol.extract_epochs());
            fill_seeds(&mut a.seeds);
            fill_noise(&mut a.noise_args);
            fill_out(&mut a.out);
        }
        Command::Summarize(a) => fill_out(&mut a.out),
        Command::Replay(_) => {}
    }
}

pub fn execute(settings: Settings, command: Command, args: Vec<String>, quiet: bool) -> Result<()> {
    if let Command::Replay(r) = &command {
        return replay(r, quiet);
    }
    let out = match &command {
        Command::TrainVictim(a) => a.out.clone(),
        Command::GenerateStimuli(a) => a.out.clone(),
        Command::Query(a) => a.out.clone(),
        Command::Extract(a) => a.out.clone(),
        Command::SweepBeta(a) => a.out.clone(),
        Command::CompareDistributions(a) => a.out.clone(),
        Command::Summarize(a) => a.out.clone(),
        Command::Replay(_) => unreachable!(),
    }
    .expect("resolved");
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let run = Run {
        manifest: RunManifest::new(command.name(), args),
        printer: Printer { quiet },
        settings: settings.clone(),
        out,
        started: Instant::now(),
    };
    let work = || -> Result<()> {
        match &command {
            Command::TrainVictim(a) => cmd_train_victim(run, a, &command),
            Command::GenerateStimuli(a) => cmd_generate(run, a, &command),
            Command::Query(a) => cmd_query(run, a, &command),
            Command::Extract(a) => cmd_extract(run, a, &command),
            Command::SweepBeta(a) => cmd_sweep_beta(run, a, &command),
            Command::CompareDistributions(a) => cmd_compare(run, a, &command),
            Command::Summarize(a) => cmd_summarize(run, a, &command),
            Command::Replay(_) => unreachable!(),
        }
    };
    match settings.threads {
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().context("building thread pool")?.install(work)
        }
        None => work(),
    }
}

fn replay(args: &ReplayArgs, quiet: bool) -> Result<()> {
    let manifest: RunManifest = read_json(&args.manifest).context("reading manifest")?;
    let invocation =
        manifest.invocation.ok_or_else(|| usage(format!("{} records no invocation", args.manifest.display())))?;
    let Invocation { settings, mut command } =
        serde_json::from_value(invocation).context("manifest invocation is not a known command")?;
    if let Some(out) = &args.out {
        match &mut command {
            Command::TrainVictim(a) => a.out = Some(out.clone()),
            Command::GenerateStimuli(a) => a.out = Some(out.clone()),
            Command::Query(a) => a.out = Some(out.clone()),
            Command::Extract(a) => a.out = Some(out.clone()),
            Command::SweepBeta(a) => a.out = Some(out.clone()),
            Command::CompareDistributions(a) => a.out = Some(out.clone()),
            Command::Summarize(a) => a.out = Some(out.clone()),
            Command::Replay(_) => return Err(usage("a manifest cannot record a replay")),
        }
    }
    let argv = vec!["replay".into(), "--manifest".into(), args.manifest.display().to_string()];
    execute(settings, command, argv, quiet)
}

fn cmd_train_victim(mut run: Run, a: &TrainVictimArgs, command: &Command) -> Result<()> {
    let seed = a.seed.expect("resolved");
    run.manifest.seed("victim", seed);
    let (train, val) = run.dataset(&a.dataset)?;
    let cfg = TrainConfig { epochs: a.epochs, batch_size: a.batch_size, ..TrainConfig::default() };
    let t = Instant::now();
    let victim = train_victim(&train, &val, &cfg, seed, DEFAULT_EVAL_BATCH, &mut run.printer)?;
    run.time("train-victim", t);
    let ckpt = run.path(VICTIM_FILE);
    save_checkpoint(&ckpt, &victim.config, &victim.params)?;
    let summary = run.path("victim.json");
    write_json(
        &summary,
        &json!({
            "dataset": a.dataset,
            "seed": seed,
            "trainConfig": cfg,
            "validationAccuracy": victim.accuracy,
            "history": victim.history,
        }),
    )?;
    let correct = (victim.accuracy * val.len() as f64).round() as usize;
    println!("validation accuracy: {:.4} ({correct}/{})", victim.accuracy, val.len());
    println!("checkpoint: {}", ckpt.display());
    run.finish(command)
}

fn cmd_generate(mut run: Run, a: &GenerateArgs, command: &Command) -> Result<()> {
    let mut spec = NoiseSpec::new(a.noise, a.count, a.seed.expect("resolved"));
    apply_noise_args(&mut spec, &a.noise_args);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    run.manifest.seed("noise", spec.seed);
    run.printer.stage(Stage::GenerateStimuli, &format!("{} x {}", spec.count, spec.kind));
    let t = Instant::now();
    let batch = generate(&spec).context("[generate-stimuli]")?;
    run.time("generate-stimuli", t);
    let path = run.path(STIMULI_FILE);
    batch.save(&path)?;
    run.manifest.noise = Some(spec);
    println!("stimuli: {} ({} images)", path.display(), batch.len());
    run.finish(command)
}

fn cmd_query(mut run: Run, a: &QueryArgs, command: &Command) -> Result<()> {
    let (config, params) = load_checkpoint(&a.victim)
        .with_context(|| format!("[load-victim] cannot load victim checkpoint {}", a.victim.display()))?;
    let stimuli = StimulusBatch::load(&a.stimuli).with_context(|| format!("loading {}", a.stimuli.display()))?;
    let spec = stimuli.spec.clone();
    let t = Instant::now();
    let pairs = query_model(&config, &params, stimuli, a.batch_size)?;
    run.time("query-victim", t);
    let path = run.path(RESPONSES_FILE);
    save_responses(&path, &spec, &pairs.responses)?;
    let dist = pairs.class_distribution();
    let dist_path = run.path(CLASSDIST_CSV);
    write_classdist_csv(&dist_path, &dist)?;
    run.manifest.noise = Some(spec);
    println!("argmax class distribution: {dist:?}");
    println!("responses: {}", path.display());
    run.finish(command)
}

fn cmd_extract(mut run: Run, a: &ExtractArgs, command: &Command) -> Result<()> {
    let seeds = seeds_of(&a.seeds);
    for (k, v) in [("victim", seeds.victim), ("noise", seeds.noise), ("extract", seeds.extract)] {
        run.manifest.seed(k, v);
    }
    let mut config = ExtractionConfig::new(&a.dataset, a.noise, a.protocol, seeds);
    config.noise.count = a.count.expect("resolved");
    config.extract.epochs = a.epochs.expect("resolved");
    config.victim.epochs = a.victim.victim_epochs;
    config.targets = a.targets;
    apply_noise_args(&mut config.noise, &a.noise_args);
    if a.stimuli_file.is_none() {
        config.validate().map_err(|e| usage(e.to_string()))?;
    }
    let mut inputs = PipelineInputs::default();
    if let Some(path) = &a.victim.reuse_victim {
        let loaded = load_checkpoint(path)
            .with_context(|| format!("[load-victim] cannot load victim checkpoint {}", path.display()))?;
        inputs.victim = Some(loaded);
    }
    if let Some(path) = &a.stimuli_file {
        let batch = StimulusBatch::load(path).with_context(|| format!("[load-stimuli] {}", path.display()))?;
        // The stored spec describes these stimuli; echo it instead of the flags.
        config.noise = batch.spec.clone();
        config.seeds.noise = batch.spec.seed;
        inputs.stimuli = Some(batch);
    }
    let t = Instant::now();
    let (train, val) = run.dataset(&a.dataset)?;
    run.time("load-dataset", t);
    let outcome = run_extraction_on(&config, &train, &val, inputs, &mut run.printer)?;
    drop(train);
    run.manifest.timings.extend(outcome.timings.iter().cloned());
    if a.victim.reuse_victim.is_none() {
        let p = run.path(VICTIM_FILE);
        save_checkpoint(&p, &outcome.victim.config, &outcome.victim.params)?;
    }
    if a.stimuli_file.is_none() {
        let p = run.path(STIMULI_FILE);
        outcome.pairs.stimuli.save(&p)?;
    }
    let p = run.path(RESPONSES_FILE);
    save_responses(&p, &outcome.pairs.stimuli.spec, &outcome.pairs.responses)?;
    let p = run.path(EXTRACTED_FILE);
    save_checkpoint(&p, &outcome.extracted.config, &outcome.extracted.params)?;
    for p in emit_report(&outcome.report, &run.out, &[Format::Json, Format::Csv])? {
        run.manifest.artifacts.push(p);
    }
    let r = &outcome.report;
    println!("pre-extraction accuracy:  {:.4}", r.pre_extraction_accuracy);
    println!("post-extraction accuracy: {:.4}", r.post_extraction_accuracy);
    println!("hardness ratio:           {:.4}", r.hardness_ratio);
    println!("argmax class distribution: {:?}", r.class_distribution);
    run.manifest.noise = Some(r.config.noise.clone());
    run.manifest.extraction = Some(r.config.clone());
    run.finish(command)
}

fn cmd_sweep_beta(mut run: Run, a: &SweepBetaArgs, command: &Command) -> Result<()> {
    let betas = a.noise_args.betas.clone().expect("resolved");
    let mut distinct = betas.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(usage(format!("a beta sweep needs at least 2 distinct beta values, got {betas:?}")));
    }
    if distinct.len() != betas.len() {
        return Err(usage(format!("duplicate beta values in {betas:?}")));
    }
    if a.count_per_beta == 0 || a.epochs == 0 {
        return Err(usage("--count-per-beta and --epochs must be positive"));
    }
    let seeds = seeds_of(&a.seeds);
    for (k, v) in [("victim", seeds.victim), ("noise", seeds.noise), ("extract", seeds.extract)] {
        run.manifest.seed(k, v);
    }
    let (train, val) = run.dataset(&a.dataset)?;
    let victim = run.victim(&a.victim, &train, &val, seeds.victim)?;
    drop(train);
    let mut spec = NoiseSpec::new(xlab_core::noise::NoiseKind::Ising, a.count_per_beta * betas.len(), seeds.noise);
    apply_noise_args(&mut spec, &a.noise_args);
    run.printer.stage(Stage::GenerateStimuli, &format!("{} Ising samples over {} betas", spec.count, betas.len()));
    let t = Instant::now();
    let ising = generate(&spec).context("[generate-stimuli]")?;
    run.time("generate-stimuli", t);
    let cfg = TrainConfig { epochs: a.epochs, ..TrainConfig::default() };
    let t = Instant::now();
    let points =
        beta_sweep(&victim, &ising, &val, &cfg, a.targets, seeds.extract, DEFAULT_EVAL_BATCH, &mut run.printer)?;
    run.time("beta-sweep", t);
    let csv = run.path(BETASWEEP_CSV);
    write_beta_sweep_csv(&csv, &points)?;
    let js = run.path("betasweep.json");
    write_json(&js, &json!({ "victimAccuracy": victim.accuracy, "points": points }))?;
    println!("beta  accuracy  loss");
    for p in &points {
        println!("{:.2}  {:.4}    {:.4}", p.beta, p.accuracy, p.loss);
    }
    run.manifest.noise = Some(spec);
    run.finish(command)
}

fn cmd_compare(mut run: Run, a: &CompareArgs, command: &Command) -> Result<()> {
    if a.kinds.is_empty() {
        return Err(usage("--kinds is empty"));
    }
    let seeds = seeds_of(&a.seeds);
    for (k, v) in [("victim", seeds.victim), ("noise", seeds.noise), ("extract", seeds.extract)] {
        run.manifest.seed(k, v);
    }
    let count = a.count.expect("resolved");
    let mut template = NoiseSpec::new(a.kinds[0], count, seeds.noise);
    apply_noise_args(&mut template, &a.noise_args);
    for &kind in &a.kinds {
        NoiseSpec { kind, ..template.clone() }.validate().map_err(|e| usage(format!("{kind}: {e}")))?;
    }
    let (train, val) = run.dataset(&a.dataset)?;
    let victim = run.victim(&a.victim, &train, &val, seeds.victim)?;
    drop(train);
    let cfg = TrainConfig { epochs: a.epochs.expect("resolved"), ..TrainConfig::default() };
    let t = Instant::now();
    let results = compare_distributions(
        &victim,
        &val,
        &a.kinds,
        &template,
        &cfg,
        a.targets,
        seeds.extract,
        DEFAULT_EVAL_BATCH,
        &mut run.printer,
    )?;
    run.time("compare-distributions", t);
    let csv = run.path(TABLE2_CSV);
    write_table2_csv(&csv, &results)?;
    let js = run.path("table2.json");
    write_json(&js, &json!({ "victimAccuracy": victim.accuracy, "results": results }))?;
    println!("kind             accuracy");
    for r in &results {
        println!("{:<16} {:.4}", r.kind.name(), r.accuracy);
    }
    if a.check_ordering {
        let pairs: Vec<_> = results.iter().map(|r| (r.kind, r.accuracy)).collect();
        match table2_ordering_holds(&pairs) {
            Ok(()) => println!("ordering uniform < normal,gumbel < bernoulli < ising: PASS"),
            Err(why) => println!("ordering uniform < normal,gumbel < bernoulli < ising: FAIL ({why})"),
        }
    }
    run.manifest.noise = Some(template);
    run.finish(command)
}

fn cmd_summarize(mut run: Run, a: &SummarizeArgs, command: &Command) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| read_report(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let rows = table3_rows(&reports);
    let csv = run.path(TABLE3_CSV);
    write_table3_csv(&csv, &rows)?;
    println!("dataset          pre      post     ratio");
    for r in &rows {
        println!(
            "{:<16} {:.4}   {:.4}   {:.4}",
            r.dataset, r.pre_extraction_accuracy, r.post_extraction_accuracy, r.hardness_ratio
        );
    }
    let mut by_ratio: Vec<_> = rows.iter().collect();
    by_ratio.sort_by(|x, y| y.hardness_ratio.total_cmp(&x.hardness_ratio));
    let order: Vec<&str> = by_ratio.iter().map(|r| r.dataset.as_str()).collect();
    println!("easiest to hardest: {}", order.join(" > "));
    run.finish(command)
}
