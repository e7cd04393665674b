//! Training loop, evaluation, baselines, repeated runs and ablation grids.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digmn::{
    BatchLoss, ComponentSet, DigmnConfig, DigmnModel, IntentMethod, PredictorKind, Sample, Task, COVARIATE_DIM,
};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics;
use crate::nn::{adam_step, cross_entropy, AdamConfig, AdamState, Dense, HasParams, Param};
use crate::pca::Pca;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_halving_every: usize,
    pub weight_decay: f64,
    /// Weight of the orthogonality regulariser.
    pub beta: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Train / validation / test fractions over users.
    pub split: [f64; 3],
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_halving_every: 20,
            weight_decay: 1e-5,
            beta: 1e-2,
            max_epochs: 100,
            early_stop_patience: 10,
            batch_size: 256,
            seed: 0,
            split: [0.8, 0.1, 0.1],
            repeats: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive and finite"));
        }
        if self.lr_halving_every == 0 {
            return Err(Error::config("lr_halving_every", "must be at least 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("beta", "must be >= 0"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config("early_stop_patience", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("split", "fractions must be non-negative and sum to 1"));
        }
        if self.split[0] == 0.0 || self.split[1] == 0.0 || self.split[2] == 0.0 {
            return Err(Error::config("split", "train, validation and test fractions must all be positive"));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * libm::pow(0.5, (epoch / self.lr_halving_every) as f64)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

/// Anything the training loop can fit.
pub trait Classifier: HasParams + Clone {
    fn n_class(&self) -> usize;
    /// Zeroes gradients and accumulates those of the batch loss.
    fn accumulate(&mut self, batch: &[&Sample], beta: f64) -> Result<BatchLoss>;
    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>>;
}

impl Classifier for DigmnModel {
    fn n_class(&self) -> usize {
        self.n_class
    }

    fn accumulate(&mut self, batch: &[&Sample], beta: f64) -> Result<BatchLoss> {
        self.accumulate_batch(batch.iter().copied(), beta)
    }

    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        DigmnModel::predict_proba(self, sample)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Softmax regression on the covariates.
    Lr,
    /// Two ReLU hidden layers (64, 32) on the covariates.
    Mlp,
}

/// Covariate-only baseline over the same macro and delivery encoding the
/// full model's linear map consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub layers: Vec<Dense>,
}

impl Baseline {
    pub fn new(kind: BaselineKind, n_class: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = match kind {
            BaselineKind::Lr => vec![COVARIATE_DIM, n_class],
            BaselineKind::Mlp => vec![COVARIATE_DIM, 64, 32, n_class],
        };
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(&format!("baseline.dense{i}"), w[0], w[1], &mut rng))
            .collect();
        Baseline { kind, layers }
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut acts = vec![x.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().map(Vec::as_slice).unwrap_or(x))?;
            if i + 1 < self.layers.len() {
                crate::nn::relu_in_place(&mut y);
            }
            acts.push(y);
        }
        Ok(acts)
    }
}

impl HasParams for Baseline {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.visit_params_mut(f)
    }
}

impl Classifier for Baseline {
    fn n_class(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    fn accumulate(&mut self, batch: &[&Sample], _beta: f64) -> Result<BatchLoss> {
        self.zero_grad();
        let mut all_acts = Vec::with_capacity(batch.len());
        let mut logits = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for s in batch {
            let acts = self.forward(&s.covariates)?;
            logits.push(acts.last().cloned().unwrap_or_default());
            labels.push(s.label);
            all_acts.push(acts);
        }
        let (loss, grads) = cross_entropy(&logits, &labels)?;
        let n = self.layers.len();
        for (acts, g) in all_acts.iter().zip(grads) {
            let mut dy = g;
            for l in (0..n).rev() {
                if l + 1 < n {
                    crate::nn::relu_backward(&acts[l + 1], &mut dy);
                }
                let mut dx = vec![0.0; self.layers[l].in_dim];
                self.layers[l].backward(&acts[l], &dy, (l > 0).then_some(&mut dx[..]))?;
                dy = dx;
            }
        }
        Ok(BatchLoss { classification: loss, regulariser: 0.0, total: loss })
    }

    fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        let acts = self.forward(&sample.covariates)?;
        Ok(math::softmax(acts.last().map(Vec::as_slice).unwrap_or(&[])))
    }
}

/// Test-set metrics of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub task: Task,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Present for the session task.
    pub auroc: Option<f64>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl Evaluation {
    /// The task's headline metric: macro F1 (day) or AUROC (session).
    pub fn metric(&self) -> f64 {
        match self.task {
            Task::Day => self.macro_f1,
            Task::Session => self.auroc.unwrap_or(f64::NAN),
        }
    }
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Day => "macro_f1",
        Task::Session => "auroc",
    }
}

/// Scores precomputed class probabilities against the samples' labels.
pub fn evaluate_probs(probs: &[Vec<f64>], labels: &[usize], task: Task) -> Result<Evaluation> {
    let n_class = task.n_class();
    let predictions: Vec<usize> = probs.iter().map(|p| math::argmax(p)).collect();
    let auroc = match task {
        Task::Session => {
            let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            Some(metrics::auroc(&scores, &positive)?)
        }
        Task::Day => None,
    };
    Ok(Evaluation {
        task,
        n: labels.len(),
        accuracy: metrics::accuracy(&predictions, labels)?,
        macro_f1: metrics::macro_f1(&predictions, labels, n_class)?,
        auroc,
        confusion: metrics::confusion(&predictions, labels, n_class)?,
    })
}

pub fn evaluate<C: Classifier>(model: &C, samples: &[Sample], task: Task) -> Result<Evaluation> {
    let probs = samples.iter().map(|s| model.predict_proba(s)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    evaluate_probs(&probs, &labels, task)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: u64,
    pub train_loss: f64,
    pub train_classification: f64,
    pub train_regulariser: f64,
    pub val_metric: f64,
    pub best_val_metric: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<C> {
    /// Parameters with the best validation metric.
    pub best: C,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    /// Validation metric after the last epoch run.
    pub final_val_metric: f64,
    pub log: Vec<EpochLog>,
}

fn non_finite_diagnostic<C: Classifier>(model: &C, what: &str) -> Error {
    match model.first_non_finite() {
        Some(name) => Error::NonFinite(format!("{what}; first non-finite parameter: {name}")),
        None => Error::NonFinite(format!("{what}; all parameters finite")),
    }
}

/// One optimisation step on `batch`, returning the loss before the update.
pub fn train_step<C: Classifier>(
    model: &mut C,
    state: &mut AdamState,
    batch: &[&Sample],
    cfg: &TrainConfig,
    lr: f64,
    step: u64,
) -> Result<BatchLoss> {
    let loss = model.accumulate(batch, cfg.beta)?;
    if !loss.total.is_finite() {
        return Err(non_finite_diagnostic(model, &format!("loss became {} at step {step}", loss.total)));
    }
    let mut bad_grad = None;
    model.visit_params(&mut |p| {
        if bad_grad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
            bad_grad = Some(p.name.clone());
        }
    });
    if let Some(name) = bad_grad {
        return Err(Error::NonFinite(format!("gradient of {name} at step {step}")));
    }
    adam_step(model, state, &cfg.adam(), lr, step)
        .map_err(|e| Error::NonFinite(format!("update at step {step}: {e}")))?;
    Ok(loss)
}

/// Mini-batch Adam with step-wise learning-rate halving and early stopping on
/// the validation metric. `on_epoch` sees every log line as it is produced.
pub fn train<C, F>(
    mut model: C,
    train_set: &[Sample],
    val_set: &[Sample],
    task: Task,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome<C>>
where
    C: Classifier,
    F: FnMut(&EpochLog),
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7a11);
    let mut state = AdamState::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0u64;
    let mut best = model.clone();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut final_metric = f64::NAN;
    let mut log = Vec::new();

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut total, mut classification, mut regulariser, mut weight) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = train_step(&mut model, &mut state, &batch, cfg, lr, step)?;
            let w = chunk.len() as f64;
            total += loss.total * w;
            classification += loss.classification * w;
            regulariser += loss.regulariser * w;
            weight += w;
        }
        let val = evaluate(&model, val_set, task)?;
        final_metric = val.metric();
        if !final_metric.is_finite() {
            return Err(non_finite_diagnostic(&model, "validation metric is not finite"));
        }
        let improved = final_metric > best_metric;
        if improved {
            best_metric = final_metric;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        let line = EpochLog {
            epoch,
            lr,
            steps: step,
            train_loss: total / weight,
            train_classification: classification / weight,
            train_regulariser: regulariser / weight,
            val_metric: final_metric,
            best_val_metric: best_metric,
            improved,
        };
        on_epoch(&line);
        log.push(line);
        if stale >= cfg.early_stop_patience {
            break;
        }
    }
    Ok(TrainOutcome { best, best_epoch, best_val_metric: best_metric, final_val_metric: final_metric, log })
}

/// Deterministic user-level split into train / validation / test indices.
pub fn split_indices(n: usize, fractions: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if n < 3 {
        return Err(Error::EmptyInput("need at least three users to split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5b1));
    let n_train = (libm::round(n as f64 * fractions[0]) as usize).clamp(1, n - 2);
    let n_val = (libm::round(n as f64 * fractions[1]) as usize).clamp(1, n - n_train - 1);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok([order, val, test])
}

/// What to train in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSpec {
    Digmn(DigmnConfig),
    Baseline(BaselineKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub metric: f64,
    pub evaluation: Evaluation,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_metric: f64,
}

/// Metrics aggregated over repeated seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<SeedResult>,
    /// Test confusion summed over seeds (day task only).
    pub confusion: Option<Vec<Vec<u64>>>,
}

impl EvalReport {
    pub fn from_results(task: Task, mut per_seed: Vec<SeedResult>) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::EmptyInput("no runs to aggregate"));
        }
        per_seed.sort_by_key(|r| r.seed);
        let values: Vec<f64> = per_seed.iter().map(|r| r.metric).collect();
        let confusion = (task == Task::Day).then(|| {
            let n = task.n_class();
            let mut total = vec![vec![0u64; n]; n];
            for r in &per_seed {
                for (row, src) in total.iter_mut().zip(&r.evaluation.confusion) {
                    for (t, s) in row.iter_mut().zip(src) {
                        *t += s;
                    }
                }
            }
            total
        });
        Ok(EvalReport {
            task,
            metric: metric_name(task).to_string(),
            mean: math::mean(&values),
            std: if values.len() > 1 { math::std_dev(&values) } else { 0.0 },
            per_seed,
            confusion,
        })
    }
}

/// Trains and tests one model under `seed` (which drives the split, the
/// initialisation and the batch order).
pub fn run_seed(
    samples: &[Sample],
    intent_dim: usize,
    task: Task,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SeedResult> {
    let [tr, va, te] = split_indices(samples.len(), cfg.split, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train_set, val_set, test_set) = (pick(&tr), pick(&va), pick(&te));
    let run_cfg = TrainConfig { seed, ..cfg.clone() };
    match spec {
        ModelSpec::Digmn(config) => {
            let model = DigmnModel::new(config.clone(), intent_dim, task.n_class(), seed)?;
            finish(train(model, &train_set, &val_set, task, &run_cfg, |_| {})?, &test_set, task, seed)
        }
        ModelSpec::Baseline(kind) => {
            let model = Baseline::new(*kind, task.n_class(), seed);
            finish(train(model, &train_set, &val_set, task, &run_cfg, |_| {})?, &test_set, task, seed)
        }
    }
}

fn finish<C: Classifier>(outcome: TrainOutcome<C>, test: &[Sample], task: Task, seed: u64) -> Result<SeedResult> {
    let evaluation = evaluate(&outcome.best, test, task)?;
    Ok(SeedResult {
        seed,
        metric: evaluation.metric(),
        evaluation,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.log.len(),
        val_metric: outcome.best_val_metric,
    })
}

/// Seeds used for `repeats` runs starting at `base`.
pub fn repeat_seeds(base: u64, repeats: usize) -> Vec<u64> {
    (0..repeats as u64).map(|r| base.wrapping_add(r)).collect()
}

/// Serial repeated runs; the std crate runs the seeds concurrently instead.
pub fn run_repeats(samples: &[Sample], intent_dim: usize, task: Task, spec: &ModelSpec, cfg: &TrainConfig) -> Result<EvalReport> {
    let results = repeat_seeds(cfg.seed, cfg.repeats)
        .into_iter()
        .map(|s| run_seed(samples, intent_dim, task, spec, cfg, s))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_results(task, results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Components,
    AdjustSignal,
    D,
    Beta,
    L,
    IntentMethod,
    PredictorKind,
}

impl core::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "components" => AblationAxis::Components,
            "adjust_signal" | "adjust-signal" => AblationAxis::AdjustSignal,
            "d" => AblationAxis::D,
            "beta" => AblationAxis::Beta,
            "L" | "l" | "layers" => AblationAxis::L,
            "intent_method" | "intent-method" => AblationAxis::IntentMethod,
            "predictor_kind" | "predictor-kind" | "predictor" => AblationAxis::PredictorKind,
            _ => return Err(Error::config("axis", format!("unknown ablation axis {s:?}"))),
        })
    }
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Components => "components",
            AblationAxis::AdjustSignal => "adjust_signal",
            AblationAxis::D => "d",
            AblationAxis::Beta => "beta",
            AblationAxis::L => "L",
            AblationAxis::IntentMethod => "intent_method",
            AblationAxis::PredictorKind => "predictor_kind",
        }
    }

    pub fn default_grid(self) -> Vec<String> {
        let items: &[&str] = match self {
            AblationAxis::Components => &["M", "MD", "MDS", "MDSI"],
            AblationAxis::AdjustSignal => &["M", "D", "S", "I", "MDSI"],
            AblationAxis::D => &["2..10"],
            AblationAxis::Beta => &["10", "1", "1e-1", "1e-2", "1e-3", "1e-4", "1e-5", "0"],
            AblationAxis::L => &["1..5"],
            AblationAxis::IntentMethod => &["cosine", "learned"],
            AblationAxis::PredictorKind => &["dynamic", "static-same-shape", "static-matched-params", "generated"],
        };
        items.iter().map(|s| s.to_string()).collect()
    }
}

/// Splits comma-separated grid tokens and expands integer ranges `a..b`
/// (inclusive).
pub fn expand_grid(tokens: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for token in tokens.iter().flat_map(|t| t.split(',')) {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some((a, b)) = token.split_once("..") {
            let parse = |v: &str| {
                v.trim_start_matches('=')
                    .parse::<i64>()
                    .map_err(|_| Error::config("grid", format!("bad range bound in {token:?}")))
            };
            let (lo, hi) = (parse(a)?, parse(b)?);
            if lo > hi {
                return Err(Error::config("grid", format!("empty range {token:?}")));
            }
            out.extend((lo..=hi).map(|v| v.to_string()));
        } else {
            out.push(token.to_string());
        }
    }
    if out.is_empty() {
        return Err(Error::config("grid", "grid is empty"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

/// Number of learnable parameters in a model's predictor (meta network
/// included).
pub fn predictor_param_count(config: &DigmnConfig, intent_dim: usize, n_class: usize) -> Result<usize> {
    let model = DigmnModel::new(config.clone(), intent_dim, n_class, 0)?;
    let mut n = 0;
    model.visit_params(&mut |p| {
        if p.name.starts_with("predictor") {
            n += p.len();
        }
    });
    Ok(n)
}

/// Hidden widths for a static predictor whose parameter count is closest to
/// the dynamic predictor of `config`, keeping the ratio between widths.
pub fn matched_static_hidden(config: &DigmnConfig, intent_dim: usize, n_class: usize) -> Result<Vec<usize>> {
    let target = predictor_param_count(config, intent_dim, n_class)?;
    let base = config.hidden_sizes();
    if base.is_empty() {
        return Ok(base);
    }
    let mut best = (usize::MAX, base.clone());
    for step in 100..=1600 {
        let scale = step as f64 / 100.0;
        let widths: Vec<usize> = base.iter().map(|&w| (math::floor(w as f64 * scale + 0.5) as usize).max(1)).collect();
        let candidate = DigmnConfig {
            predictor_kind: PredictorKind::Static,
            predictor_hidden: widths.clone(),
            ..config.clone()
        };
        let count = predictor_param_count(&candidate, intent_dim, n_class)?;
        let gap = count.abs_diff(target);
        if gap < best.0 {
            best = (gap, widths);
        }
    }
    Ok(best.1)
}

/// Expands an ablation axis into one cell per grid value, each derived from
/// the shared base configurations. The predictor axis also accepts the
/// covariate baselines `lr` and `mlp`.
pub fn ablation_cells(
    axis: AblationAxis,
    grid: &[String],
    base_model: &DigmnConfig,
    base_train: &TrainConfig,
    intent_dim: usize,
    n_class: usize,
) -> Result<Vec<AblationCell>> {
    let grid = expand_grid(grid)?;
    let mut cells = Vec::with_capacity(grid.len());
    for value in grid {
        let mut model = base_model.clone();
        let mut train = base_train.clone();
        match axis {
            AblationAxis::Components => {
                let set: ComponentSet = value.parse()?;
                model.components_enabled = set;
                if !set.intents && model.predictor_kind != PredictorKind::Static && !model.adjust_signal.is_subset_of(&set) {
                    model.adjust_signal = set;
                }
            }
            AblationAxis::AdjustSignal => {
                model.adjust_signal = value.parse()?;
                model.predictor_kind = PredictorKind::Dynamic;
            }
            AblationAxis::D => model.d = parse_num(&value, "d")?,
            AblationAxis::L => model.layers = parse_num(&value, "L")?,
            AblationAxis::Beta => {
                train.beta = value
                    .parse::<f64>()
                    .map_err(|_| Error::config("beta", format!("not a number: {value:?}")))?;
            }
            AblationAxis::IntentMethod => {
                model.intent_method = match value.as_str() {
                    "cosine" => IntentMethod::Cosine,
                    "learned" => IntentMethod::Learned,
                    _ => return Err(Error::config("intent_method", format!("unknown method {value:?}"))),
                }
            }
            AblationAxis::PredictorKind => match value.as_str() {
                "lr" | "mlp" => {
                    let kind = if value == "lr" { BaselineKind::Lr } else { BaselineKind::Mlp };
                    train.validate()?;
                    cells.push(AblationCell { label: value, spec: ModelSpec::Baseline(kind), train });
                    continue;
                }
                "dynamic" => model.predictor_kind = PredictorKind::Dynamic,
                "generated" => model.predictor_kind = PredictorKind::Generated,
                "static" | "static-same-shape" => model.predictor_kind = PredictorKind::Static,
                "static-matched-params" => {
                    let dynamic = DigmnConfig { predictor_kind: PredictorKind::Dynamic, ..model.clone() };
                    model.predictor_hidden = matched_static_hidden(&dynamic, intent_dim, n_class)?;
                    model.predictor_kind = PredictorKind::Static;
                }
                _ => return Err(Error::config("predictor_kind", format!("unknown predictor {value:?}"))),
            },
        }
        model.validate()?;
        train.validate()?;
        cells.push(AblationCell { label: value, spec: ModelSpec::Digmn(model), train });
    }
    Ok(cells)
}

fn parse_num(value: &str, field: &'static str) -> Result<usize> {
    value.parse::<usize>().map_err(|_| Error::config(field, format!("not a non-negative integer: {value:?}")))
}

/// One projected user for the intent-embedding plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub coords: Vec<f64>,
    /// The user's dominant intent: argmax of the mean session intent vector.
    pub label: usize,
}

/// Collects every user's dynamic intent, centres them and projects onto the
/// top `out_dims` principal components.
pub fn intent_embeddings(model: &DigmnModel, samples: &[Sample], out_dims: usize) -> Result<Vec<EmbeddingPoint>> {
    if !(2..=3).contains(&out_dims) {
        return Err(Error::InvalidArgument(format!("embedding dimension must be 2 or 3, got {out_dims}")));
    }
    if samples.len() < out_dims {
        return Err(Error::InvalidArgument(format!(
            "{} users cannot be projected onto {out_dims} components",
            samples.len()
        )));
    }
    let k = model.intent_dim;
    let mut intents = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let (_, cache) = model.forward(s)?;
        let ti = cache
            .dynamic_intent()
            .ok_or_else(|| Error::InvalidArgument("model has no intent path to embed".into()))?;
        intents.push(ti.to_vec());
        let mut mean = vec![0.0; k];
        for row in s.cosine_intents.chunks(k) {
            math::axpy(1.0, row, &mut mean);
        }
        labels.push(math::argmax(&mean));
    }
    let pca = Pca::fit(&intents)?;
    Ok(intents
        .iter()
        .zip(labels)
        .map(|(v, label)| EmbeddingPoint { coords: pca.project(v, out_dims), label })
        .collect())
}
