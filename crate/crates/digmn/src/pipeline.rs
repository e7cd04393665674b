//! Parallel drivers over the core library. Work is split into independently
//! seeded units (users, topic counts, training seeds, ablation cells) and the
//! results are reduced in a fixed order, so outputs do not depend on the
//! number of worker threads.

use digmn_core::digmn::{Sample, Task};
use digmn_core::domain::{featurize, UserRecord};
use digmn_core::lda::{
    best_of, corpus_documents, evaluate_candidate, normalize_k_values, split_documents, subsample_documents,
    KPerplexity, LdaModel, SelectKReport,
};
use digmn_core::syngen::{assemble, generate_user, GeneratedCorpus, GeneratorConfig, Population};
use digmn_core::train::{repeat_seeds, run_seed, AblationCell, EvalReport, ModelSpec, SeedResult, TrainConfig};
use digmn_core::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::MineConfig;
use crate::error::{CliError, CliResult};

/// A rayon pool capped at `threads` workers (all cores when `None`).
pub fn thread_pool(threads: Option<usize>) -> CliResult<rayon::ThreadPool> {
    if threads == Some(0) {
        return Err(CliError::config("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config(format!("cannot start {threads:?} worker threads: {e}")))
}

/// Generates users in parallel; identical to the serial generator.
pub fn generate(config: &GeneratorConfig) -> Result<GeneratedCorpus> {
    config.validate()?;
    let pop = Population::new(config)?;
    let users = (0..config.n_users)
        .into_par_iter()
        .map(|i| generate_user(config, &pop, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(config, pop, users))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MineReport {
    pub best_k: usize,
    /// Held-out perplexity per distinct candidate k.
    pub entries: Vec<KPerplexity>,
    /// Training perplexity of the retained chain per candidate.
    pub training_perplexity: Vec<KPerplexity>,
    pub n_documents: usize,
    pub n_documents_used: usize,
    pub seed: u64,
}

impl MineReport {
    pub fn selection(&self) -> SelectKReport {
        SelectKReport { best_k: self.best_k, entries: self.entries.clone(), seed: self.seed }
    }
}

/// Topic-count selection with candidates fitted in parallel.
pub fn mine(records: &[UserRecord], config: &MineConfig) -> Result<(MineReport, LdaModel)> {
    let all = corpus_documents(records);
    let docs = match config.max_documents {
        Some(max) => subsample_documents(&all, max, config.seed),
        None => all.clone(),
    };
    let ks = normalize_k_values(&config.k_values)?;
    let params = config.select_k_params();
    let (train, held) = split_documents(&docs, params.holdout_fraction, params.seed)?;
    let fits = ks
        .par_iter()
        .map(|&k| evaluate_candidate(&train, &held, k, &params).map(|(m, r, px)| (k, m, r.final_perplexity, px)))
        .collect::<Result<Vec<_>>>()?;
    let entries: Vec<KPerplexity> = fits.iter().map(|f| KPerplexity { k: f.0, perplexity: f.3 }).collect();
    let training_perplexity = fits.iter().map(|f| KPerplexity { k: f.0, perplexity: f.2 }).collect();
    let best_k = best_of(&entries);
    let model = fits.into_iter().find(|f| f.0 == best_k).map(|f| f.1).expect("best k was fitted");
    let report = MineReport {
        best_k,
        entries,
        training_perplexity,
        n_documents: all.len(),
        n_documents_used: docs.len(),
        seed: config.seed,
    };
    Ok((report, model))
}

/// Featurises every record against the intent basis.
pub fn build_samples(records: &[UserRecord], basis: &LdaModel, task: Task, max_sessions: usize) -> Result<Vec<Sample>> {
    basis.validate()?;
    records
        .par_iter()
        .map(|r| Sample::new(&featurize(r)?, basis, task.class_of(r), max_sessions))
        .collect()
}

/// `cfg.repeats` seeded runs in parallel.
pub fn run_repeats(
    samples: &[Sample],
    intent_dim: usize,
    task: Task,
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    let results = repeat_seeds(cfg.seed, cfg.repeats)
        .into_par_iter()
        .map(|s| run_seed(samples, intent_dim, task, spec, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_results(task, results)
}

/// One row of an ablation table: a report, or the error that stopped the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

impl AblationRow {
    pub fn new(cell: &AblationCell, outcome: &Result<EvalReport>) -> Self {
        let (report, error) = match outcome {
            Ok(r) => (Some(r.clone()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        AblationRow { label: cell.label.clone(), spec: cell.spec.clone(), train: cell.train.clone(), report, error }
    }
}

/// Trains every (cell, seed) pair in parallel and returns one outcome per
/// cell. A failing seed fails its cell without affecting the others.
pub fn ablate(samples: &[Sample], intent_dim: usize, task: Task, cells: &[AblationCell]) -> Vec<Result<EvalReport>> {
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| repeat_seeds(cell.train.seed, cell.train.repeats).into_iter().map(move |s| (c, s)))
        .collect();
    let mut results: Vec<(usize, Result<SeedResult>)> = jobs
        .into_par_iter()
        .map(|(c, s)| {
            let cell = &cells[c];
            (c, run_seed(samples, intent_dim, task, &cell.spec, &cell.train, s))
        })
        .collect();
    let mut per_cell: Vec<Vec<Result<SeedResult>>> = cells.iter().map(|_| Vec::new()).collect();
    for (c, r) in results.drain(..) {
        per_cell[c].push(r);
    }
    per_cell
        .into_iter()
        .zip(cells)
        .map(|(runs, cell)| {
            let outcome = runs.into_iter().collect::<Result<Vec<_>>>().and_then(|runs| EvalReport::from_results(task, runs));
            if let Err(e) = &outcome {
                log::warn!("ablation cell {} failed: {e}", cell.label);
            }
            outcome
        })
        .collect()
}
