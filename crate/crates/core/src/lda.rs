//! Latent Dirichlet allocation over sessions, fitted by collapsed Gibbs
//! sampling. A document is one session's multiset of event types and the
//! vocabulary is the ten event types.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Session, UserRecord, N_EVENT_TYPES};
use crate::error::{Error, Result};
use crate::math;
use crate::syngen::TopicMatrix;

/// Event-type indices (0..10) of one session.
pub type Document = Vec<u8>;

const V: usize = N_EVENT_TYPES;
const PERPLEXITY_EVERY: usize = 10;
/// Document-topic prior used unless overridden. Sessions are short and
/// usually single-purpose, so the prior is kept sparse.
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub k: usize,
    /// The basic intents: `k` rows, each a distribution over event types.
    pub topic_event: TopicMatrix,
    pub alpha: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaFitReport {
    pub perplexity_history: Vec<f64>,
    pub final_perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub k: usize,
    /// Document-topic prior; `None` means 50 / k.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaParams {
    pub fn new(k: usize, iterations: usize, seed: u64) -> Self {
        LdaParams {
            k,
            alpha: None,
            eta: 0.01,
            iterations,
            seed,
        }
    }

    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }
}

impl LdaModel {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.topic_event.len() != self.k {
            return Err(Error::shape("lda topics", self.k, self.topic_event.len()));
        }
        for row in &self.topic_event {
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument("topic row has negative or non-finite entries".into()));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument("topic row does not sum to 1".into()));
            }
        }
        if !(self.alpha > 0.0 && self.eta > 0.0) {
            return Err(Error::InvalidArgument("lda priors must be positive".into()));
        }
        Ok(())
    }

    pub fn uniform(k: usize, alpha: f64, eta: f64) -> Self {
        LdaModel {
            k,
            topic_event: vec![[1.0 / V as f64; V]; k],
            alpha,
            eta,
        }
    }
}

pub fn document_of(session: &Session) -> Document {
    session.events.iter().map(|e| e.event_type.index() as u8).collect()
}

/// Flattened corpus with document offsets.
struct Tokens {
    words: Vec<u8>,
    offsets: Vec<usize>,
}

impl Tokens {
    fn new(corpus: &[Document]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput("lda corpus"));
        }
        let mut words = Vec::with_capacity(corpus.iter().map(Vec::len).sum());
        let mut offsets = Vec::with_capacity(corpus.len() + 1);
        offsets.push(0);
        for doc in corpus {
            if doc.is_empty() {
                return Err(Error::EmptyInput("lda document"));
            }
            if let Some(&w) = doc.iter().find(|&&w| w as usize >= V) {
                return Err(Error::InvalidArgument(alloc::format!("token {w} outside vocabulary")));
            }
            words.extend_from_slice(doc);
            offsets.push(words.len());
        }
        Ok(Tokens { words, offsets })
    }

    fn n_docs(&self) -> usize {
        self.offsets.len() - 1
    }

    fn doc(&self, d: usize) -> core::ops::Range<usize> {
        self.offsets[d]..self.offsets[d + 1]
    }
}

/// Count tables of the collapsed sampler.
pub(crate) struct GibbsState {
    k: usize,
    alpha: f64,
    eta: f64,
    tokens: Tokens,
    z: Vec<u8>,
    doc_topic: Vec<u32>,
    topic_word: Vec<u32>,
    topic_total: Vec<u32>,
}

impl GibbsState {
    fn new(corpus: &[Document], k: usize, alpha: f64, eta: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if k < 2 || k > u8::MAX as usize {
            return Err(Error::InvalidArgument(alloc::format!("topic count {k} must be in 2..=255")));
        }
        if !(alpha > 0.0 && eta > 0.0) {
            return Err(Error::InvalidArgument("lda priors must be positive".into()));
        }
        let tokens = Tokens::new(corpus)?;
        let n_docs = tokens.n_docs();
        let mut state = GibbsState {
            k,
            alpha,
            eta,
            z: vec![0; tokens.words.len()],
            doc_topic: vec![0; n_docs * k],
            topic_word: vec![0; k * V],
            topic_total: vec![0; k],
            tokens,
        };
        for d in 0..n_docs {
            for i in state.tokens.doc(d) {
                let t = rng.random_range(0..k);
                state.z[i] = t as u8;
                state.add(d, state.tokens.words[i] as usize, t);
            }
        }
        Ok(state)
    }

    #[inline]
    fn add(&mut self, d: usize, w: usize, t: usize) {
        self.doc_topic[d * self.k + t] += 1;
        self.topic_word[t * V + w] += 1;
        self.topic_total[t] += 1;
    }

    #[inline]
    fn remove(&mut self, d: usize, w: usize, t: usize) {
        self.doc_topic[d * self.k + t] -= 1;
        self.topic_word[t * V + w] -= 1;
        self.topic_total[t] -= 1;
    }

    fn sweep(&mut self, rng: &mut ChaCha8Rng) {
        let k = self.k;
        let v_eta = V as f64 * self.eta;
        let mut cumulative = vec![0.0f64; k];
        for d in 0..self.tokens.n_docs() {
            for i in self.tokens.doc(d) {
                let w = self.tokens.words[i] as usize;
                self.remove(d, w, self.z[i] as usize);
                let mut acc = 0.0;
                for t in 0..k {
                    let p = (self.doc_topic[d * k + t] as f64 + self.alpha) * (self.topic_word[t * V + w] as f64 + self.eta)
                        / (self.topic_total[t] as f64 + v_eta);
                    acc += p;
                    cumulative[t] = acc;
                }
                let t = draw(&cumulative, rng);
                self.z[i] = t as u8;
                self.add(d, w, t);
            }
        }
    }

    fn topic_event(&self) -> TopicMatrix {
        let v_eta = V as f64 * self.eta;
        (0..self.k)
            .map(|t| {
                let mut row = [0.0; V];
                let denom = self.topic_total[t] as f64 + v_eta;
                for (w, x) in row.iter_mut().enumerate() {
                    *x = (self.topic_word[t * V + w] as f64 + self.eta) / denom;
                }
                row
            })
            .collect()
    }

    /// Perplexity of the training tokens under the current point estimates.
    fn training_perplexity(&self) -> f64 {
        let phi = self.topic_event();
        let k = self.k;
        let mut log_lik = 0.0;
        let mut theta = vec![0.0; k];
        for d in 0..self.tokens.n_docs() {
            let range = self.tokens.doc(d);
            let n = range.len() as f64;
            for t in 0..k {
                theta[t] = (self.doc_topic[d * k + t] as f64 + self.alpha) / (n + k as f64 * self.alpha);
            }
            for i in range {
                let w = self.tokens.words[i] as usize;
                let p: f64 = (0..k).map(|t| theta[t] * phi[t][w]).sum();
                log_lik += math::ln(p);
            }
        }
        math::exp(-log_lik / self.tokens.words.len() as f64)
    }

    /// Verifies that every table accounts for every token exactly once.
    #[cfg(test)]
    pub(crate) fn counts_conserved(&self) -> bool {
        let n = self.tokens.words.len() as u64;
        let dt: u64 = self.doc_topic.iter().map(|&c| c as u64).sum();
        let tw: u64 = self.topic_word.iter().map(|&c| c as u64).sum();
        let tt: u64 = self.topic_total.iter().map(|&c| c as u64).sum();
        let mut recount = vec![0u32; self.k * V];
        for (i, &w) in self.tokens.words.iter().enumerate() {
            recount[self.z[i] as usize * V + w as usize] += 1;
        }
        dt == n && tw == n && tt == n && recount == self.topic_word
    }

    fn model(&self) -> LdaModel {
        LdaModel {
            k: self.k,
            topic_event: self.topic_event(),
            alpha: self.alpha,
            eta: self.eta,
        }
    }
}

#[inline]
fn draw(cumulative: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u = rng.random::<f64>() * cumulative[cumulative.len() - 1];
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1)
}

pub fn fit(corpus: &[Document], params: &LdaParams) -> Result<(LdaModel, LdaFitReport)> {
    if params.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut state = GibbsState::new(corpus, params.k, params.resolved_alpha(), params.eta, &mut rng)?;
    let mut history = Vec::new();
    for it in 1..=params.iterations {
        state.sweep(&mut rng);
        if it % PERPLEXITY_EVERY == 0 {
            history.push(state.training_perplexity());
        }
    }
    if params.iterations % PERPLEXITY_EVERY != 0 {
        history.push(state.training_perplexity());
    }
    let final_perplexity = history[history.len() - 1];
    Ok((
        state.model(),
        LdaFitReport {
            perplexity_history: history,
            final_perplexity,
            iterations: params.iterations,
            seed: params.seed,
        },
    ))
}

/// The model implied by a uniformly random topic assignment, before any sweep.
pub fn random_init_model(corpus: &[Document], k: usize, alpha: f64, eta: f64, seed: u64) -> Result<LdaModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(GibbsState::new(corpus, k, alpha, eta, &mut rng)?.model())
}

/// Held-out per-token perplexity of `corpus` under a fixed `model`
/// (document completion).
///
/// Each document's tokens are split by position: even positions estimate the
/// document's topic proportions through `inference_iterations` Gibbs sweeps
/// with the topic-event table held fixed (proportions averaged over the
/// second half of the sweeps), odd positions are scored under the resulting
/// mixture. Single-token documents are scored under the prior
/// proportions.
pub fn perplexity(model: &LdaModel, corpus: &[Document], inference_iterations: usize, seed: u64) -> Result<f64> {
    model.validate()?;
    let tokens = Tokens::new(corpus)?;
    let k = model.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_lik = 0.0;
    let mut scored = 0usize;
    let mut counts = vec![0u32; k];
    let mut cumulative = vec![0.0; k];
    let mut theta = vec![0.0; k];
    let mut z: Vec<usize> = Vec::new();
    let mut observed: Vec<u8> = Vec::new();
    let mut held: Vec<u8> = Vec::new();
    for d in 0..tokens.n_docs() {
        let words = &tokens.words[tokens.doc(d)];
        observed.clear();
        held.clear();
        if words.len() < 2 {
            held.extend_from_slice(words);
        } else {
            for (i, &w) in words.iter().enumerate() {
                if i % 2 == 0 { observed.push(w) } else { held.push(w) }
            }
        }
        counts.iter_mut().for_each(|c| *c = 0);
        z.clear();
        for _ in &observed {
            let t = rng.random_range(0..k);
            z.push(t);
            counts[t] += 1;
        }
        let denom = observed.len() as f64 + k as f64 * model.alpha;
        let burn_in = inference_iterations / 2;
        let mut averaged = 0usize;
        theta.iter_mut().for_each(|x| *x = 0.0);
        for sweep in 0..inference_iterations {
            for (i, &w) in observed.iter().enumerate() {
                counts[z[i]] -= 1;
                let mut acc = 0.0;
                for t in 0..k {
                    acc += (counts[t] as f64 + model.alpha) * model.topic_event[t][w as usize];
                    cumulative[t] = acc;
                }
                let t = if acc > 0.0 { draw(&cumulative, &mut rng) } else { z[i] };
                z[i] = t;
                counts[t] += 1;
            }
            if sweep >= burn_in {
                for t in 0..k {
                    theta[t] += (counts[t] as f64 + model.alpha) / denom;
                }
                averaged += 1;
            }
        }
        if averaged == 0 {
            for t in 0..k {
                theta[t] = (counts[t] as f64 + model.alpha) / denom;
            }
        } else {
            theta.iter_mut().for_each(|x| *x /= averaged as f64);
        }
        for &w in &held {
            let p: f64 = (0..k).map(|t| theta[t] * model.topic_event[t][w as usize]).sum();
            log_lik += math::ln(p);
        }
        scored += held.len();
    }
    Ok(math::exp(-log_lik / scored as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectKParams {
    pub iterations: usize,
    pub inference_iterations: usize,
    /// Document-topic prior; `None` means 50 / k for each candidate.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub holdout_fraction: f64,
    /// Independent chains per candidate; the one with the lowest training
    /// perplexity is kept.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SelectKParams {
    fn default() -> Self {
        SelectKParams {
            iterations: 100,
            inference_iterations: 20,
            alpha: Some(DEFAULT_ALPHA),
            eta: 0.01,
            holdout_fraction: 0.1,
            restarts: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KPerplexity {
    pub k: usize,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectKReport {
    pub best_k: usize,
    pub entries: Vec<KPerplexity>,
    pub seed: u64,
}

/// Seeded train / held-out document split.
pub fn split_documents(corpus: &[Document], holdout_fraction: f64, seed: u64) -> Result<(Vec<Document>, Vec<Document>)> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::InvalidArgument("holdout fraction must be in [0, 1)".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0053_504c_4954);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_hold = ((corpus.len() as f64 * holdout_fraction) as usize).max(usize::from(holdout_fraction > 0.0));
    let held = order[..n_hold].iter().map(|&i| corpus[i].clone()).collect();
    let train = order[n_hold..].iter().map(|&i| corpus[i].clone()).collect();
    Ok((train, held))
}

/// Every session of every record as one document, in record order.
pub fn corpus_documents(records: &[UserRecord]) -> Vec<Document> {
    records.iter().flat_map(|r| r.sessions.iter().map(document_of)).collect()
}

/// Seeded sample of at most `max` documents without replacement, kept in
/// corpus order.
pub fn subsample_documents(corpus: &[Document], max: usize, seed: u64) -> Vec<Document> {
    if corpus.len() <= max {
        return corpus.to_vec();
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5355_4253);
    for i in 0..max {
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
    }
    let mut chosen = order[..max].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| corpus[i].clone()).collect()
}

/// Sorted, deduplicated candidate list.
pub fn normalize_k_values(k_values: &[usize]) -> Result<Vec<usize>> {
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::EmptyInput("k range"));
    }
    Ok(ks)
}

/// Fits one candidate on the training split and scores it on the held-out split.
pub fn evaluate_candidate(
    train: &[Document],
    held_out: &[Document],
    k: usize,
    params: &SelectKParams,
) -> Result<(LdaModel, LdaFitReport, f64)> {
    let mut best: Option<(LdaModel, LdaFitReport)> = None;
    for restart in 0..params.restarts.max(1) {
        let fit_params = LdaParams {
            k,
            alpha: params.alpha,
            eta: params.eta,
            iterations: params.iterations,
            seed: params
                .seed
                .wrapping_add(k as u64)
                .wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9)),
        };
        let candidate = fit(train, &fit_params)?;
        if best
            .as_ref()
            .is_none_or(|(_, r)| candidate.1.final_perplexity < r.final_perplexity)
        {
            best = Some(candidate);
        }
    }
    let (model, report) = best.expect("at least one restart");
    let px = perplexity(&model, held_out, params.inference_iterations, params.seed ^ 0xfeed)?;
    Ok((model, report, px))
}

/// Picks the candidate with the lowest held-out perplexity (ties go to the
/// smaller k).
pub fn best_of(entries: &[KPerplexity]) -> usize {
    let mut best = &entries[0];
    for e in &entries[1..] {
        if e.perplexity < best.perplexity {
            best = e;
        }
    }
    best.k
}

/// Serial model selection over `k_values`; returns the report and the model
/// fitted for the winning k.
pub fn select_k(corpus: &[Document], k_values: &[usize], params: &SelectKParams) -> Result<(SelectKReport, LdaModel)> {
    let ks = normalize_k_values(k_values)?;
    let (train, held) = split_documents(corpus, params.holdout_fraction, params.seed)?;
    let mut entries = Vec::with_capacity(ks.len());
    let mut models = Vec::with_capacity(ks.len());
    for &k in &ks {
        let (model, _, px) = evaluate_candidate(&train, &held, k, params)?;
        entries.push(KPerplexity { k, perplexity: px });
        models.push(model);
    }
    let best_k = best_of(&entries);
    let model = models.swap_remove(ks.iter().position(|&k| k == best_k).expect("best k is a candidate"));
    Ok((
        SelectKReport {
            best_k,
            entries,
            seed: params.seed,
        },
        model,
    ))
}

/// Greedily pairs each true topic with its most similar unused recovered
/// topic (highest cosine first) and returns the pair similarities.
pub fn greedy_topic_match(recovered: &[[f64; V]], truth: &[[f64; V]]) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in recovered.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            pairs.push((math::cosine(r, t).unwrap_or(0.0), i, j));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal));
    let mut used_r = vec![false; recovered.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (c, i, j) in pairs {
        if !used_r[i] && !used_t[j] {
            used_r[i] = true;
            used_t[j] = true;
            out.push(c);
        }
    }
    out
}
