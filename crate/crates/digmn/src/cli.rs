//! Command line: argument parsing and the five subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use digmn_core::digmn::{DigmnModel, Task};
use digmn_core::domain::UserRecord;
use digmn_core::lda::LdaModel;
use digmn_core::train::{
    ablation_cells, evaluate, expand_grid, intent_embeddings, metric_name, split_indices, train, AblationAxis,
    EpochLog, Evaluation,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{load_config_file, FlatMap, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::RunManifest;
use crate::pipeline::{self, AblationRow};

pub const SEED_ENV: &str = "DIGMN_SEED";

#[derive(Debug, Parser)]
#[command(name = "digmn", version, about = "Intent-guided engagement forecasting on session logs")]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with ground truth.
    Generate(GenerateArgs),
    /// Select the number of intents and fit the intent basis.
    Mine(MineArgs),
    /// Train one model and write its best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Evaluate(EvaluateArgs),
    /// Sweep one configuration axis with repeated seeded runs.
    Ablate(AblateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Mine(_) => "mine",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Ablate(_) => "ablate",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config with dotted keys, or a manifest from an earlier run.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.d=6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Seed for this subcommand (overrides the config and DIGMN_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(short, long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of users.
    #[arg(long)]
    pub users: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Corpus JSONL written by `generate`.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Candidate topic counts: values, comma lists or ranges like `2..10`.
    #[arg(long = "k", value_name = "K")]
    pub k: Vec<String>,
    /// Subsample sessions to at most this many documents.
    #[arg(long)]
    pub max_documents: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Corpus JSONL written by `generate`.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Intent basis written by `mine`.
    #[arg(long, value_name = "FILE")]
    pub basis: Option<PathBuf>,
    /// `day` or `session`.
    #[arg(long)]
    pub task: Option<String>,
    /// `dynamic`, `static` or `generated`.
    #[arg(long)]
    pub predictor: Option<String>,
    /// `cosine` or `learned`.
    #[arg(long)]
    pub intent_method: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Corpus JSONL written by `generate`.
    #[arg(long, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Must match the checkpoint's task when given.
    #[arg(long)]
    pub task: Option<String>,
    /// Basis to use when the checkpoint does not embed one.
    #[arg(long, value_name = "FILE")]
    pub basis: Option<PathBuf>,
    /// `test` (the held-out split of `train.seed`) or `all`.
    #[arg(long)]
    pub split: Option<String>,
    /// Also write a PCA projection of the dynamic intents (2 or 3 dims).
    #[arg(long, value_name = "DIMS")]
    pub export_embeddings: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// components, adjust_signal, d, beta, L, intent_method or predictor_kind.
    #[arg(long)]
    pub axis: Option<String>,
    /// Grid values (comma lists and integer ranges); defaults per axis.
    #[arg(long)]
    pub grid: Vec<String>,
}

/// Which config seed a subcommand consumes.
fn seed_key(subcommand: &str) -> &'static str {
    match subcommand {
        "generate" => "generator.seed",
        "mine" => "mine.seed",
        _ => "train.seed",
    }
}

/// Resolution order: defaults, config file, `--set`, dedicated flags,
/// DIGMN_SEED, `--seed`.
struct Resolved {
    config: RunConfig,
    /// Arguments recorded by a manifest of the same subcommand.
    replay: FlatMap,
    seed: u64,
}

fn resolve(subcommand: &str, common: &CommonArgs, flags: &[(&str, Value)]) -> CliResult<Resolved> {
    let mut config = RunConfig::default();
    let mut replay = FlatMap::new();
    if let Some(path) = &common.config {
        let file = load_config_file(path)?;
        config.apply(&file.config)?;
        if file.manifest_subcommand.as_deref() == Some(subcommand) {
            replay = file.args;
        }
    }
    config.apply_assignments(&common.set)?;
    for (k, v) in flags {
        config.set(k, v.clone())?;
    }
    let key = seed_key(subcommand);
    if let Ok(text) = std::env::var(SEED_ENV) {
        let seed: u64 = text
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("{SEED_ENV}={text:?} is not an unsigned integer")))?;
        config.set(key, json!(seed))?;
    }
    if let Some(seed) = common.seed {
        config.set(key, json!(seed))?;
    }
    config.validate()?;
    let seed = config.to_flat()[key].as_u64().expect("seeds are integers");
    Ok(Resolved { config, replay, seed })
}

/// A command-line value, else the one a replayed manifest recorded.
fn pick<T: Clone + Into<Value> + serde::de::DeserializeOwned>(
    given: &Option<T>,
    replay: &FlatMap,
    key: &str,
) -> CliResult<Option<T>> {
    match given {
        Some(v) => Ok(Some(v.clone())),
        None => replay
            .get(key)
            .filter(|v| !v.is_null())
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| CliError::config(format!("manifest argument `{key}`: {e}"))))
            .transpose(),
    }
}

fn pick_path(given: &Option<PathBuf>, replay: &FlatMap, key: &str) -> CliResult<PathBuf> {
    let as_string = given.as_ref().map(|p| p.to_string_lossy().into_owned());
    pick(&as_string, replay, key)?
        .map(PathBuf::from)
        .ok_or_else(|| CliError::config(format!("missing --{}", key.replace('_', "-"))))
}

fn parse_task(text: &str) -> CliResult<Task> {
    text.parse::<Task>().map_err(|e| CliError::config(format!("--task: {e}")))
}

fn parse_k_values(tokens: &[String]) -> CliResult<Vec<usize>> {
    expand_grid(tokens)?
        .iter()
        .map(|t| t.parse::<usize>().map_err(|_| CliError::config(format!("--k: {t:?} is not a topic count"))))
        .collect()
}

fn read_corpus(path: &Path) -> CliResult<Vec<UserRecord>> {
    let records: Vec<UserRecord> = io::read_jsonl(path)?;
    if records.is_empty() {
        return Err(CliError::parse(path, "corpus has no records"));
    }
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|e| CliError::parse(path, format!("record {}: {e}", i + 1)))?;
    }
    Ok(records)
}

fn read_basis(path: &Path) -> CliResult<LdaModel> {
    let basis: LdaModel = io::read_json(path)?;
    basis.validate().map_err(|e| CliError::parse(path, e))?;
    Ok(basis)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let pool = pipeline::thread_pool(cli.threads)?;
    let threads = pool.current_num_threads();
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&a, threads),
        Command::Mine(a) => cmd_mine(&a, threads),
        Command::Train(a) => cmd_train(&a, threads),
        Command::Evaluate(a) => cmd_evaluate(&a, threads),
        Command::Ablate(a) => cmd_ablate(&a, threads),
    })
}

fn finish(mut manifest: RunManifest, out: &Path, started: Instant) -> CliResult<()> {
    manifest.duration_secs = started.elapsed().as_secs_f64();
    let path = manifest.write(out)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_generate(a: &GenerateArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let mut flags = Vec::new();
    if let Some(n) = a.users {
        flags.push(("generator.n_users", json!(n)));
    }
    let r = resolve("generate", &a.common, &flags)?;
    let out = pick_path(&a.common.out, &r.replay, "out")?;
    let corpus = pipeline::generate(&r.config.generator)?;
    let (corpus_path, truth_path) = (out.join("corpus.jsonl"), out.join("truth.json"));
    io::write_jsonl(&corpus_path, &corpus.records)?;
    io::write_json(&truth_path, &corpus.truth)?;
    let (day, session) = digmn_core::syngen::label_balance(corpus.records.iter().map(|r| r.label));
    log::info!(
        "{} users; day-level shares {:.3}/{:.3}/{:.3}; session-level {:.3}/{:.3}",
        corpus.records.len(),
        day[0],
        day[1],
        day[2],
        session[0],
        session[1]
    );
    let args = FlatMap::from([("out".to_string(), json!(out))]);
    let mut manifest = RunManifest::new("generate", r.config.to_flat(), args, r.seed, threads);
    manifest.output("corpus", &corpus_path)?;
    manifest.output("truth", &truth_path)?;
    finish(manifest, &out, started)
}

pub fn cmd_mine(a: &MineArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let mut flags = Vec::new();
    if !a.k.is_empty() {
        let ks = parse_k_values(&a.k)?;
        flags.push(("mine.k_values", json!(ks)));
    }
    if let Some(m) = a.max_documents {
        flags.push(("mine.max_documents", json!(m)));
    }
    let r = resolve("mine", &a.common, &flags)?;
    let corpus_path = pick_path(&a.corpus, &r.replay, "corpus")?;
    let out = pick_path(&a.common.out, &r.replay, "out")?;
    let records = read_corpus(&corpus_path)?;
    let (report, basis) = pipeline::mine(&records, &r.config.mine)?;
    for e in &report.entries {
        log::info!("k = {:2}: held-out perplexity {:.4}", e.k, e.perplexity);
    }
    log::info!("selected k = {} from {} documents", report.best_k, report.n_documents_used);
    let (basis_path, px_path) = (out.join("basis.json"), out.join("perplexity.json"));
    io::write_json(&basis_path, &basis)?;
    io::write_json(&px_path, &report)?;
    let args = FlatMap::from([("corpus".to_string(), json!(corpus_path)), ("out".to_string(), json!(out))]);
    let mut manifest = RunManifest::new("mine", r.config.to_flat(), args, r.seed, threads);
    manifest.input("corpus", &corpus_path)?;
    manifest.output("basis", &basis_path)?;
    manifest.output("perplexity", &px_path)?;
    finish(manifest, &out, started)
}

fn model_flags(m: &ModelArgs) -> Vec<(&'static str, Value)> {
    let mut flags = Vec::new();
    if let Some(p) = &m.predictor {
        flags.push(("model.predictor_kind", json!(p)));
    }
    if let Some(i) = &m.intent_method {
        flags.push(("model.intent_method", json!(i)));
    }
    flags
}

/// Inputs shared by `train` and `ablate`.
struct ModelInputs {
    corpus_path: PathBuf,
    basis_path: PathBuf,
    task: Task,
    records: Vec<UserRecord>,
    basis: LdaModel,
}

fn model_inputs(m: &ModelArgs, replay: &FlatMap) -> CliResult<ModelInputs> {
    let corpus_path = pick_path(&m.corpus, replay, "corpus")?;
    let basis_path = pick_path(&m.basis, replay, "basis")?;
    let task = parse_task(&pick(&m.task, replay, "task")?.unwrap_or_else(|| "session".into()))?;
    let records = read_corpus(&corpus_path)?;
    let basis = read_basis(&basis_path)?;
    Ok(ModelInputs { corpus_path, basis_path, task, records, basis })
}

pub fn cmd_train(a: &TrainArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let r = resolve("train", &a.common, &model_flags(&a.model))?;
    let out = pick_path(&a.common.out, &r.replay, "out")?;
    let inputs = model_inputs(&a.model, &r.replay)?;
    let (cfg, task) = (&r.config, inputs.task);
    let samples = pipeline::build_samples(&inputs.records, &inputs.basis, task, cfg.model.max_sessions)?;
    let [tr, va, _] = split_indices(samples.len(), cfg.train.split, cfg.train.seed)?;
    let pick_rows = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train_set, val_set) = (pick_rows(&tr), pick_rows(&va));
    let model = DigmnModel::new(cfg.model.clone(), inputs.basis.k, task.n_class(), cfg.train.seed)?;
    let log_line = |l: &EpochLog| {
        log::info!(
            "epoch {:3} lr {:.2e} loss {:.5} val {} {:.4}{}",
            l.epoch,
            l.lr,
            l.train_loss,
            metric_name(task),
            l.val_metric,
            if l.improved { " *" } else { "" }
        )
    };
    let outcome = train(model, &train_set, &val_set, task, &cfg.train, log_line)?;
    log::info!("best epoch {} with validation {} {:.4}", outcome.best_epoch, metric_name(task), outcome.best_val_metric);

    let (ckpt_path, log_path) = (out.join("checkpoint.json"), out.join("train_log.jsonl"));
    io::write_json(&ckpt_path, &outcome.best.to_checkpoint(task, Some(inputs.basis.clone())))?;
    io::write_jsonl(&log_path, &outcome.log)?;
    let args = FlatMap::from([
        ("corpus".to_string(), json!(inputs.corpus_path)),
        ("basis".to_string(), json!(inputs.basis_path)),
        ("task".to_string(), json!(task.name())),
        ("out".to_string(), json!(out)),
    ]);
    let mut manifest = RunManifest::new("train", cfg.to_flat(), args, r.seed, threads);
    manifest.input("corpus", &inputs.corpus_path)?;
    manifest.input("basis", &inputs.basis_path)?;
    manifest.output("checkpoint", &ckpt_path)?;
    manifest.output("train_log", &log_path)?;
    finish(manifest, &out, started)
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub task: Task,
    pub metric: String,
    pub value: f64,
    pub split: String,
    pub n_users: usize,
    pub evaluation: Evaluation,
}

pub fn cmd_evaluate(a: &EvaluateArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let r = resolve("evaluate", &a.common, &[])?;
    let out = pick_path(&a.common.out, &r.replay, "out")?;
    let ckpt_path = pick_path(&a.checkpoint, &r.replay, "checkpoint")?;
    let corpus_path = pick_path(&a.corpus, &r.replay, "corpus")?;
    let split = pick(&a.split, &r.replay, "split")?.unwrap_or_else(|| "test".into());
    let export = pick(&a.export_embeddings, &r.replay, "export_embeddings")?;
    let basis_arg = match &a.basis {
        Some(p) => Some(p.clone()),
        None => pick(&None::<String>, &r.replay, "basis")?.map(PathBuf::from),
    };

    let ckpt: digmn_core::digmn::Checkpoint = io::read_json(&ckpt_path)?;
    let model = DigmnModel::from_checkpoint(&ckpt).map_err(|e| CliError::from(e).context(ckpt_path.display().to_string()))?;
    let task = match pick(&a.task, &r.replay, "task")? {
        Some(t) => {
            let t = parse_task(&t)?;
            if t != ckpt.task {
                return Err(digmn_core::Error::Incompatible(format!(
                    "checkpoint was trained for the {} task, not {}",
                    ckpt.task.name(),
                    t.name()
                ))
                .into());
            }
            t
        }
        None => ckpt.task,
    };
    let basis = match (&basis_arg, &ckpt.basis) {
        (Some(path), _) => read_basis(path)?,
        (None, Some(b)) => b.clone(),
        (None, None) => return Err(CliError::config("checkpoint has no intent basis; pass --basis")),
    };
    if basis.k != model.intent_dim {
        return Err(digmn_core::Error::Incompatible(format!(
            "basis has {} intents but the model expects {}",
            basis.k, model.intent_dim
        ))
        .into());
    }
    let records = read_corpus(&corpus_path)?;
    let samples = pipeline::build_samples(&records, &basis, task, model.config.max_sessions)?;
    let selected = match split.as_str() {
        "all" => samples,
        "test" => {
            let [_, _, te] = split_indices(samples.len(), r.config.train.split, r.config.train.seed)?;
            te.iter().map(|&i| samples[i].clone()).collect()
        }
        other => return Err(CliError::config(format!("--split must be `test` or `all`, got {other:?}"))),
    };
    let evaluation = evaluate(&model, &selected, task)?;
    log::info!("{} on {} users ({split}): {:.4}", metric_name(task), selected.len(), evaluation.metric());
    let report = EvaluateReport {
        task,
        metric: metric_name(task).to_string(),
        value: evaluation.metric(),
        split: split.clone(),
        n_users: selected.len(),
        evaluation,
    };
    let report_path = out.join("report.json");
    io::write_json(&report_path, &report)?;

    let mut args = FlatMap::from([
        ("checkpoint".to_string(), json!(ckpt_path)),
        ("corpus".to_string(), json!(corpus_path)),
        ("task".to_string(), json!(task.name())),
        ("split".to_string(), json!(split)),
        ("out".to_string(), json!(out)),
    ]);
    if let Some(b) = &basis_arg {
        args.insert("basis".into(), json!(b));
    }
    let mut manifest = RunManifest::new("evaluate", r.config.to_flat(), args, r.seed, threads);
    manifest.input("checkpoint", &ckpt_path)?;
    manifest.input("corpus", &corpus_path)?;
    manifest.output("report", &report_path)?;
    if let Some(dims) = export {
        let points = intent_embeddings(&model, &selected, dims)?;
        let path = out.join(format!("embeddings_{dims}d.csv"));
        let header: &[&str] = if dims == 2 { &["x", "y", "label"] } else { &["x", "y", "z", "label"] };
        let rows: Vec<Vec<String>> = points
            .iter()
            .map(|p| p.coords.iter().map(|c| c.to_string()).chain([p.label.to_string()]).collect())
            .collect();
        io::write_csv(&path, header, &rows)?;
        manifest.args.insert("export_embeddings".into(), json!(dims));
        manifest.output("embeddings", &path)?;
    }
    finish(manifest, &out, started)
}

/// Contents of `ablation.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub task: Task,
    pub metric: String,
    pub rows: Vec<AblationRow>,
}

pub fn cmd_ablate(a: &AblateArgs, threads: usize) -> CliResult<()> {
    let started = Instant::now();
    let r = resolve("ablate", &a.common, &model_flags(&a.model))?;
    let out = pick_path(&a.common.out, &r.replay, "out")?;
    let axis_name = pick(&a.axis, &r.replay, "axis")?.ok_or_else(|| CliError::config("missing --axis"))?;
    let axis: AblationAxis = axis_name.parse()?;
    let grid = if a.grid.is_empty() {
        match r.replay.get("grid").and_then(Value::as_array) {
            Some(items) => items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
            None => axis.default_grid(),
        }
    } else {
        a.grid.clone()
    };
    let grid = expand_grid(&grid)?;
    let inputs = model_inputs(&a.model, &r.replay)?;
    let task = inputs.task;
    let cells = ablation_cells(axis, &grid, &r.config.model, &r.config.train, inputs.basis.k, task.n_class())?;
    let max_sessions = r.config.model.max_sessions;
    let samples = pipeline::build_samples(&inputs.records, &inputs.basis, task, max_sessions)?;
    let outcomes = pipeline::ablate(&samples, inputs.basis.k, task, &cells);
    let rows: Vec<AblationRow> = cells.iter().zip(&outcomes).map(|(c, o)| AblationRow::new(c, o)).collect();

    let table = AblationTable { axis: axis.name().into(), task, metric: metric_name(task).into(), rows };
    let (json_path, csv_path) = (out.join("ablation.json"), out.join("ablation.csv"));
    io::write_json(&json_path, &table)?;
    let csv_rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|row| {
            let (mean, std, per_seed) = match &row.report {
                Some(rep) => (
                    rep.mean.to_string(),
                    rep.std.to_string(),
                    rep.per_seed.iter().map(|s| s.metric.to_string()).collect::<Vec<_>>().join(";"),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            vec![
                table.axis.clone(),
                row.label.clone(),
                table.metric.clone(),
                mean,
                std,
                per_seed,
                row.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    io::write_csv(&csv_path, &["axis", "value", "metric", "mean", "std", "per_seed", "error"], &csv_rows)?;
    for row in &table.rows {
        match &row.report {
            Some(rep) => log::info!("{} = {}: {} {:.4} +- {:.4}", table.axis, row.label, table.metric, rep.mean, rep.std),
            None => log::warn!("{} = {}: failed", table.axis, row.label),
        }
    }

    let args = FlatMap::from([
        ("corpus".to_string(), json!(inputs.corpus_path)),
        ("basis".to_string(), json!(inputs.basis_path)),
        ("task".to_string(), json!(task.name())),
        ("axis".to_string(), json!(axis.name())),
        ("grid".to_string(), json!(grid)),
        ("out".to_string(), json!(out)),
    ]);
    let mut manifest = RunManifest::new("ablate", r.config.to_flat(), args, r.seed, threads);
    manifest.input("corpus", &inputs.corpus_path)?;
    manifest.input("basis", &inputs.basis_path)?;
    manifest.output("ablation", &json_path)?;
    manifest.output("ablation_csv", &csv_path)?;
    finish(manifest, &out, started)?;

    if outcomes.iter().all(|o| o.is_err()) {
        let first = outcomes.into_iter().find_map(|o| o.err()).expect("at least one cell");
        return Err(CliError::from(first).context("every ablation cell failed"));
    }
    Ok(())
}
