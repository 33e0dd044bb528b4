use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use argmine::augment::{
    augment_corpus, CommandProvider, EchoPredictor, IdentityTranslator, MaskedPredictor, Providers, SynonymTable,
    Translator,
};
use argmine::checkpoint::{Checkpoint, Manifest};
use argmine::corpus::{
    ingest_iac, ingest_ibm, ingest_propaganda, load_propaganda_dir, read_jsonl, split, stats, synthesize_with,
    write_jsonl, DatasetStats, Diagnostic, Record, Split,
};
use argmine::diagnostics::{emit_plot, extract, profile as run_profile, tsne, write_profile, Layer, ProfileConfig};
use argmine::eval::{
    compare, comparison_table, evaluate_probabilities, random_baseline, reference_rows, unigram_nb_baseline,
    MetricsReport,
};
use argmine::loss::{LossBatch, LossWeights};
use argmine::model::Model;
use argmine::thresholds::{tune_all, ThresholdSet};
use argmine::train::{build_model, grid_search as run_grid, train_scoped, Scope, TrainError};
use clap::{Args, ValueEnum};

use crate::config::RunConfig;
use crate::{CliError, Global};

/// Resolved configuration, output directory and manifest for one command.
struct Ctx {
    command: &'static str,
    config: RunConfig,
    out: PathBuf,
    manifest: Manifest,
}

impl Ctx {
    fn new(global: &Global, command: &'static str) -> Result<Self, CliError> {
        let mut config = match &global.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = global.seed {
            config.seed = seed;
        }
        if let Some(out) = &global.out {
            config.output_dir = out.clone();
        }
        let config = config.resolve()?;
        let out = config.output_dir.clone();
        std::fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        let manifest = Manifest::new(command, config.seed, &config.to_toml());
        Ok(Ctx { command, config, out, manifest })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.add_input(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn write_records(&mut self, name: &str, records: &[Record]) -> Result<(), CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        write_jsonl(records, BufWriter::new(file)).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    /// Writes the resolved config and the manifest next to the outputs.
    fn finish(self) -> Result<(), CliError> {
        let config_path = self.path(&format!("{}.config.toml", self.command));
        std::fs::write(&config_path, self.config.to_toml())
            .map_err(|e| CliError::Runtime(format!("{}: {e}", config_path.display())))?;
        let manifest_path = self.path(&format!("{}.manifest.json", self.command));
        self.manifest.save(&manifest_path).map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_records(ctx: &mut Ctx, path: &Path) -> Result<Vec<Record>, CliError> {
    ctx.input(path)?;
    let records = read_jsonl(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok(records)
}

fn split_records(records: &[Record], which: Split) -> Vec<Record> {
    records.iter().filter(|r| r.split == Some(which)).cloned().collect()
}

fn train_stats(records: &[Record]) -> Result<(DatasetStats, LossWeights), CliError> {
    let s = stats(records).map_err(data_err)?;
    let w = LossWeights::from_stats(&s).map_err(data_err)?;
    Ok((s, w))
}

fn load_checkpoint(ctx: &mut Ctx, path: &Path) -> Result<(Checkpoint, Model), CliError> {
    if !path.exists() {
        return Err(CliError::Data(format!("checkpoint {} does not exist", path.display())));
    }
    ctx.input(path)?;
    let ck = Checkpoint::load(path).map_err(data_err)?;
    let model = ck.to_model().map_err(data_err)?;
    Ok((ck, model))
}

fn predict(model: &Model, records: &[Record]) -> Result<ndarray::Array2<f64>, CliError> {
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    model.predict_chunked(&texts, 256).map_err(runtime_err)
}

fn diagnostics_tsv(diags: &[Diagnostic]) -> String {
    let mut s = String::from("location\tmessage\n");
    for d in diags {
        s.push_str(&format!("{}\t{}\n", d.location, d.message.replace(['\t', '\n'], " ")));
    }
    s
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Records per task type.
    #[arg(long)]
    n_per_type: Option<usize>,
    /// Probability that a label's cue token appears, in [0, 1].
    #[arg(long)]
    separability: Option<f64>,
    /// Use a shared cue pool of this size per class (labels follow one latent stance).
    #[arg(long)]
    shared_cues: Option<usize>,
}

pub fn synthesize(g: &Global, a: SynthesizeArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "synthesize")?;
    if let Some(n) = a.n_per_type {
        ctx.config.synthetic.n_per_type = n;
    }
    if let Some(s) = a.separability {
        if !(0.0..=1.0).contains(&s) {
            return Err(CliError::Usage(format!("separability {s} not in [0, 1]")));
        }
        ctx.config.synthetic.separability = s;
    }
    if a.shared_cues.is_some() {
        ctx.config.synthetic.shared_cue_pool = a.shared_cues;
    }
    let records = synthesize_with(&ctx.config.synthetic);
    ctx.write_records("records.jsonl", &records)?;
    println!("wrote {} records to {}", records.len(), ctx.path("records.jsonl").display());
    ctx.finish()
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Record files (JSON lines) to add to the configured sources.
    #[arg(long)]
    data: Vec<PathBuf>,
}

pub fn ingest(g: &Global, a: IngestArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "ingest")?;
    let corpus = ctx.config.corpus.clone();
    let mut records = Vec::new();
    let mut diags = Vec::new();
    let mut report = Vec::new();

    if let Some(src) = &corpus.iac {
        ctx.input(&src.path)?;
        let got = ingest_iac(open(&src.path)?, &src.format).map_err(|e| CliError::Data(format!("{}: {e}", src.path.display())))?;
        report.push(format!("iac: {} records, {} rejected rows", got.records.len(), got.diagnostics.len()));
        records.extend(got.records);
        diags.extend(got.diagnostics);
    }
    if let Some(src) = &corpus.ibm {
        ctx.input(&src.path)?;
        let got = ingest_ibm(open(&src.path)?, &src.format).map_err(|e| CliError::Data(format!("{}: {e}", src.path.display())))?;
        report.push(format!("ibm: {} records, {} rejected rows", got.records.len(), got.diagnostics.len()));
        records.extend(got.records);
        diags.extend(got.diagnostics);
    }
    if let Some(dir) = &corpus.propaganda_dir {
        let (articles, load_diags) = load_propaganda_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        let got = ingest_propaganda(&articles);
        report.push(format!(
            "propaganda: {} articles, {} records, {} rejected spans",
            articles.len(),
            got.records.len(),
            got.diagnostics.len() + load_diags.len()
        ));
        records.extend(got.records);
        diags.extend(load_diags);
        diags.extend(got.diagnostics);
    }
    for path in corpus.records.iter().chain(&a.data) {
        let got = load_records(&mut ctx, path)?;
        report.push(format!("{}: {} records", path.display(), got.len()));
        records.extend(got);
    }
    if records.is_empty() {
        return Err(CliError::Data("no input records; configure [corpus] sources or pass --data".into()));
    }
    let records = split(records, corpus.split, ctx.config.seed).map_err(data_err)?;
    let s = stats(&records).map_err(data_err)?;

    ctx.write_records("corpus.jsonl", &records)?;
    ctx.write("stats.txt", &s.to_string())?;
    ctx.write("stats.json", &(serde_json::to_string_pretty(&s).expect("serializes") + "\n"))?;
    ctx.write("ingest_diagnostics.tsv", &diagnostics_tsv(&diags))?;
    for line in report {
        println!("{line}");
    }
    print!("{s}");
    ctx.finish()
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Interchange file (JSON lines with splits).
    #[arg(long)]
    data: PathBuf,
}

/// Command-line provider from an environment variable, if set.
fn env_provider(var: &str) -> Option<CommandProvider> {
    std::env::var(var).ok().and_then(|line| CommandProvider::from_command_line(&line))
}

pub fn augment(g: &Global, a: DataArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "augment")?;
    let records = load_records(&mut ctx, &a.data)?;
    let train: Vec<Record> = records.iter().filter(|r| r.split == Some(Split::Train) && r.augmented_from.is_none()).cloned().collect();

    let translator_cmd = env_provider("ARGMINE_TRANSLATOR");
    let predictor_cmd = env_provider("ARGMINE_MASKED_LM");
    let translator: &dyn Translator = match &translator_cmd {
        Some(c) => c,
        None => &IdentityTranslator,
    };
    let predictor: &dyn MaskedPredictor = match &predictor_cmd {
        Some(c) => c,
        None => &EchoPredictor,
    };
    let synonyms = match &ctx.config.augment.synonyms {
        Some(path) => SynonymTable::from_tsv(open(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        None => SynonymTable::bundled(),
    };
    let providers = Providers { translator, predictor, synonyms: &synonyms };
    let out = augment_corpus(&train, providers, &ctx.config.augment.methods).map_err(data_err)?;

    let mut all = out.records;
    all.extend(records.iter().filter(|r| r.split != Some(Split::Train)).cloned());
    let added = all.len() - records.len();
    ctx.write_records("corpus.jsonl", &all)?;
    ctx.write("augment_diagnostics.tsv", &diagnostics_tsv(&out.diagnostics))?;
    println!("{} TRAIN records, {added} augmented copies, {} skipped", train.len(), out.diagnostics.len());
    ctx.finish()
}

pub fn train(g: &Global, a: DataArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "train")?;
    let records = load_records(&mut ctx, &a.data)?;
    let (_, weights) = train_stats(&records)?;
    let (tr, va) = (split_records(&records, Split::Train), split_records(&records, Split::Val));
    let cfg = &ctx.config;
    let mut model = build_model(&cfg.encoder, &cfg.head_config(), cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut on_epoch = |e: &argmine::train::EpochLog| {
        println!(
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  mean_val_f1 {:.2}  ({:.1}s)",
            e.epoch, e.train_loss, e.val_loss, e.mean_val_f1, e.seconds
        );
    };
    let result = train_scoped(&mut model, &tr, &va, &weights, &cfg.train, Scope::MultiTask, &mut on_epoch);
    let history = match result {
        Ok(h) => h,
        Err(TrainError::Diverged { epoch, step, last_finite, history }) => {
            model.restore(&last_finite);
            let ck = Checkpoint::from_model(&model, &cfg.encoder, &weights, &cfg.train, Some(&history));
            ck.save(&ctx.path("checkpoint.diverged.json")).map_err(runtime_err)?;
            return Err(CliError::Runtime(format!(
                "loss became non-finite at epoch {epoch}, step {step}; last finite parameters saved to {}",
                ctx.path("checkpoint.diverged.json").display()
            )));
        }
        Err(TrainError::NoData(s)) => return Err(CliError::Data(format!("no {s:?} records"))),
        Err(TrainError::Config(m)) => return Err(CliError::Usage(m)),
        Err(e) => return Err(runtime_err(e)),
    };
    let ck = Checkpoint::from_model(&model, &cfg.encoder, &weights, &cfg.train, Some(&history));
    ck.save(&ctx.path("checkpoint.json")).map_err(runtime_err)?;
    ctx.manifest.outputs.push("checkpoint.json".into());
    ctx.write("history.json", &(serde_json::to_string_pretty(&history).expect("serializes") + "\n"))?;
    println!(
        "best epoch {} of {}{}; {:.1}s, peak {} bytes",
        history.best_epoch,
        history.epochs.len(),
        if history.stopped_early { " (stopped early)" } else { "" },
        history.wall_seconds,
        history.peak_memory_bytes
    );
    ctx.finish()
}

pub fn grid_search(g: &Global, a: DataArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "grid-search")?;
    let records = load_records(&mut ctx, &a.data)?;
    let (_, weights) = train_stats(&records)?;
    let (tr, va) = (split_records(&records, Split::Train), split_records(&records, Split::Val));
    let cfg = ctx.config.clone();
    let total = cfg.grid.len();
    let mut on_run = |r: &argmine::train::GridRun| match (&r.mean_val_f1, &r.error) {
        (Some(f1), _) => println!("[{}/{total}] {:?}  mean_val_f1 {f1:.2}", r.index + 1, r.point),
        (None, Some(e)) => println!("[{}/{total}] {:?}  failed: {e}", r.index + 1, r.point),
        _ => {}
    };
    let report = run_grid(&cfg.grid, &cfg.train, &cfg.head_config(), &cfg.encoder, &tr, &va, &weights, &mut on_run)
        .map_err(runtime_err)?;

    let mut tsv = String::from("index\tlearning_rate\tdropout_rate\thidden_width\tbatch_size\twarmup_fraction\tmean_val_f1\tval_loss\tbest_epoch\terror\n");
    for r in &report.runs {
        let p = &r.point;
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.index,
            p.learning_rate,
            p.dropout_rate,
            p.hidden_width,
            p.batch_size,
            p.warmup_fraction,
            r.mean_val_f1.map(|v| format!("{v:.4}")).unwrap_or_default(),
            r.val_loss.map(|v| format!("{v:.6}")).unwrap_or_default(),
            r.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
            r.error.as_deref().unwrap_or("")
        ));
    }
    ctx.write("grid.tsv", &tsv)?;
    ctx.write("grid.json", &(serde_json::to_string_pretty(&report).expect("serializes") + "\n"))?;

    let best = report.best_run().point;
    let mut chosen = cfg.clone();
    chosen.train.learning_rate = best.learning_rate;
    chosen.train.dropout_rate = best.dropout_rate;
    chosen.train.batch_size = best.batch_size;
    chosen.train.warmup_fraction = best.warmup_fraction;
    chosen.head.hidden_width = Some(best.hidden_width);
    ctx.write("best_config.toml", &chosen.to_toml())?;
    println!("best: {best:?}");
    ctx.finish()
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Interchange file (JSON lines with splits).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
}

pub fn tune_thresholds(g: &Global, a: ModelArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "tune-thresholds")?;
    let records = load_records(&mut ctx, &a.data)?;
    let (_, model) = load_checkpoint(&mut ctx, &a.checkpoint)?;
    let val = split_records(&records, Split::Val);
    if val.is_empty() {
        return Err(CliError::Data("no VAL records".into()));
    }
    let refs: Vec<&Record> = val.iter().collect();
    let probs = predict(&model, &val)?;
    let (set, diags) = tune_all(probs.view(), &LossBatch::from_records(&refs)).map_err(runtime_err)?;
    for d in &diags {
        eprintln!("warning: {d}");
    }
    set.save(&ctx.path("thresholds.json")).map_err(runtime_err)?;
    ctx.manifest.outputs.push("thresholds.json".into());
    for (task, t) in &set.thresholds {
        println!("{:<24} {t:.6}", task.display_name());
    }
    ctx.finish()
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Interchange file (JSON lines with splits).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Tuned thresholds; 0.5 for every task when omitted.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

fn write_report(ctx: &mut Ctx, stem: &str, report: &MetricsReport) -> Result<(), CliError> {
    ctx.write(&format!("{stem}.json"), &(report.to_json() + "\n"))?;
    ctx.write(&format!("{stem}.txt"), &report.to_string())
}

pub fn evaluate(g: &Global, a: EvaluateArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "evaluate")?;
    let records = load_records(&mut ctx, &a.data)?;
    let (_, model) = load_checkpoint(&mut ctx, &a.checkpoint)?;
    let thresholds = match &a.thresholds {
        Some(p) => {
            ctx.input(p)?;
            ThresholdSet::load(p).map_err(data_err)?
        }
        None => ThresholdSet::default(),
    };
    let eval = split_records(&records, a.split.into());
    if eval.is_empty() {
        return Err(CliError::Data(format!("no {:?} records", Split::from(a.split))));
    }
    let refs: Vec<&Record> = eval.iter().collect();
    let probs = predict(&model, &eval)?;
    let report = evaluate_probabilities(probs.view(), &LossBatch::from_records(&refs), &thresholds).map_err(data_err)?;
    write_report(&mut ctx, "metrics", &report)?;
    print!("{report}");
    if ctx.config.evaluate.compare {
        let rows = compare(&report, &reference_rows()).map_err(data_err)?;
        let table = comparison_table(&rows);
        ctx.write("comparison.txt", &table)?;
        print!("{table}");
    }
    ctx.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    Random,
    NaiveBayes,
    All,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Interchange file (JSON lines with splits).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    kind: BaselineKind,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

pub fn baseline(g: &Global, a: BaselineArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "baseline")?;
    let records = load_records(&mut ctx, &a.data)?;
    let (s, _) = train_stats(&records)?;
    let eval = split_records(&records, a.split.into());
    if eval.is_empty() {
        return Err(CliError::Data(format!("no {:?} records", Split::from(a.split))));
    }
    if matches!(a.kind, BaselineKind::Random | BaselineKind::All) {
        let report = random_baseline(&s, &eval, ctx.config.evaluate.baseline_trials, ctx.config.seed).map_err(data_err)?;
        println!("random baseline\n{report}");
        write_report(&mut ctx, "baseline_random", &report)?;
    }
    if matches!(a.kind, BaselineKind::NaiveBayes | BaselineKind::All) {
        let report = unigram_nb_baseline(&split_records(&records, Split::Train), &eval).map_err(data_err)?;
        println!("unigram naive Bayes baseline\n{report}");
        write_report(&mut ctx, "baseline_naive_bayes", &report)?;
    }
    ctx.finish()
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Interchange file (JSON lines with splits).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// encoder_out, shared or task_specific; repeatable. Overrides the config.
    #[arg(long)]
    layer: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

pub fn diagnose(g: &Global, a: DiagnoseArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "diagnose")?;
    let records = load_records(&mut ctx, &a.data)?;
    let (_, model) = load_checkpoint(&mut ctx, &a.checkpoint)?;
    let names = if a.layer.is_empty() { ctx.config.diagnostics.layers.clone() } else { a.layer.clone() };
    let layers: Vec<Layer> =
        names.iter().map(|n| n.parse::<Layer>()).collect::<Result<_, _>>().map_err(|e| CliError::Usage(e.to_string()))?;
    let pool = split_records(&records, a.split.into());
    let diag = ctx.config.diagnostics.clone();
    for layer in layers {
        let dump = extract(&model, &pool, layer, diag.max_points, ctx.config.seed).map_err(data_err)?;
        let mut buf = Vec::new();
        dump.write_tsv(&mut buf).map_err(runtime_err)?;
        ctx.write(&format!("dump_{layer}.tsv"), &String::from_utf8(buf).expect("utf-8"))?;
        let points = tsne(dump.matrix.view(), &diag.tsne).map_err(data_err)?;
        let mut tsv = String::from("record_id\ttask\tx\ty\n");
        for ((row, tag), id) in points.rows().into_iter().zip(&dump.task_tags).zip(&dump.record_ids) {
            tsv.push_str(&format!("{id}\t{}\t{}\t{}\n", tag.slug(), row[0], row[1]));
        }
        ctx.write(&format!("tsne_{layer}.tsv"), &tsv)?;
        let labels: Vec<&str> = dump.task_tags.iter().map(|t| t.display_name()).collect();
        let svg = format!("tsne_{layer}.svg");
        emit_plot(points.view(), &labels, &ctx.path(&svg)).map_err(runtime_err)?;
        ctx.manifest.outputs.push(svg.clone());
        println!("{layer}: {} points -> {}", dump.matrix.nrows(), ctx.path(&svg).display());
    }
    ctx.finish()
}

pub fn profile(g: &Global, a: DataArgs) -> Result<(), CliError> {
    let mut ctx = Ctx::new(g, "profile")?;
    let records = load_records(&mut ctx, &a.data)?;
    let (_, weights) = train_stats(&records)?;
    let cfg = &ctx.config;
    let pc = ProfileConfig {
        fractions: cfg.profile.fractions.clone(),
        encoder: cfg.encoder.clone(),
        head: cfg.head_config(),
        train: cfg.train.clone(),
        warm_up: true,
    };
    let rows = run_profile(&cfg.profile.variants, &records, &weights, &pc).map_err(|e| match e {
        argmine::diagnostics::DiagnosticsError::Fraction(_) => CliError::Usage(e.to_string()),
        other => data_err(other),
    })?;
    let mut buf = Vec::new();
    write_profile(&rows, &mut buf).map_err(runtime_err)?;
    let text = String::from_utf8(buf).expect("utf-8");
    print!("{text}");
    ctx.write("profile.tsv", &text)?;
    let _ = std::io::stdout().flush();
    ctx.finish()
}
