//! The assembled engagement model: a behaviour LSTM over session inputs, an
//! intent LSTM over per-session intent vectors, a linear map over macro and
//! delivery covariates, and a predictor whose layer weights are mixed from a
//! shared basis by attention computed from the dynamic intent.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Features, UserRecord, DELIVERY_DIM, MACRO_DIM, N_EVENT_TYPES, SESSION_INPUT_DIM};
use crate::error::{Error, Result};
use crate::intent::infer_cosine;
use crate::lda::LdaModel;
use crate::math;
use crate::nn::{
    cross_entropy, ortho_penalty, ortho_reg, Dense, FcdCache, FcdLayer, GeneratedCache, GeneratedLayer, HasParams,
    LstmCache, LstmCell, MetaCache, MetaNet, Param, FCD_RESHAPE,
};

/// Width of the concatenated macro and delivery covariates.
pub const COVARIATE_DIM: usize = MACRO_DIM + DELIVERY_DIM;
pub const MAX_FCD_LAYERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Three-way trend of the active-day rate.
    Day,
    /// Binary trend of the session rate.
    Session,
}

impl Task {
    pub fn n_class(self) -> usize {
        match self {
            Task::Day => 3,
            Task::Session => 2,
        }
    }

    /// Class index of a record: day-level `-1, 0, 1` maps to `0, 1, 2`.
    pub fn class_of(self, record: &UserRecord) -> usize {
        match self {
            Task::Day => (record.label.day_level + 1) as usize,
            Task::Session => record.label.session_level as usize,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Day => "day",
            Task::Session => "session",
        }
    }
}

impl core::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(Task::Day),
            "session" => Ok(Task::Session),
            _ => Err(Error::config("task", format!("expected day or session, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentMethod {
    Cosine,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Dynamic,
    Static,
    Generated,
}

/// A subset of the four input components, written as letters from `MDSI`:
/// macro features, delivery message, session behaviour, intents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ComponentSet {
    pub macro_features: bool,
    pub delivery: bool,
    pub sessions: bool,
    pub intents: bool,
}

impl ComponentSet {
    pub const ALL: ComponentSet = ComponentSet { macro_features: true, delivery: true, sessions: true, intents: true };
    pub const INTENT: ComponentSet = ComponentSet { macro_features: false, delivery: false, sessions: false, intents: true };

    pub fn is_empty(&self) -> bool {
        !(self.macro_features || self.delivery || self.sessions || self.intents)
    }

    pub fn is_subset_of(&self, other: &ComponentSet) -> bool {
        (!self.macro_features || other.macro_features)
            && (!self.delivery || other.delivery)
            && (!self.sessions || other.sessions)
            && (!self.intents || other.intents)
    }

    /// Whether the linear covariate map is part of the set.
    pub fn covariates(&self) -> bool {
        self.macro_features || self.delivery
    }
}

impl fmt::Display for ComponentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (on, c) in [(self.macro_features, 'M'), (self.delivery, 'D'), (self.sessions, 'S'), (self.intents, 'I')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl core::str::FromStr for ComponentSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = ComponentSet::default();
        for c in s.chars().filter(|c| !matches!(c, '+' | ',' | ' ')) {
            let slot = match c.to_ascii_uppercase() {
                'M' => &mut set.macro_features,
                'D' => &mut set.delivery,
                'S' => &mut set.sessions,
                'I' => &mut set.intents,
                _ => return Err(Error::config("components", format!("unknown component {c:?} in {s:?}"))),
            };
            *slot = true;
        }
        Ok(set)
    }
}

impl TryFrom<String> for ComponentSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ComponentSet> for String {
    fn from(c: ComponentSet) -> String {
        format!("{c}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DigmnConfig {
    pub session_lstm_hidden: usize,
    pub intent_lstm_hidden: usize,
    /// Number of basis matrices per FC-D layer (dimension of the attention vector).
    pub d: usize,
    /// Number of predictor layers, the last emitting logits.
    pub layers: usize,
    /// Hidden widths between predictor layers; padded with the last entry
    /// or truncated to `layers - 1`.
    pub predictor_hidden: Vec<usize>,
    pub meta_hidden: usize,
    pub intent_method: IntentMethod,
    pub predictor_kind: PredictorKind,
    pub adjust_signal: ComponentSet,
    pub components_enabled: ComponentSet,
    pub linear_map_ratio: f64,
    /// One attention vector per FC-D layer instead of one shared vector.
    pub per_layer_attention: bool,
    /// Only the most recent sessions are fed to the LSTMs.
    pub max_sessions: usize,
}

impl Default for DigmnConfig {
    fn default() -> Self {
        DigmnConfig {
            session_lstm_hidden: 32,
            intent_lstm_hidden: 32,
            d: 4,
            layers: 3,
            predictor_hidden: vec![64, 32],
            meta_hidden: 32,
            intent_method: IntentMethod::Cosine,
            predictor_kind: PredictorKind::Dynamic,
            adjust_signal: ComponentSet::INTENT,
            components_enabled: ComponentSet::ALL,
            linear_map_ratio: 0.5,
            per_layer_attention: false,
            max_sessions: 128,
        }
    }
}

impl DigmnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        if !(1..=MAX_FCD_LAYERS).contains(&self.layers) {
            return Err(Error::config("layers", format!("must lie in 1..={MAX_FCD_LAYERS}")));
        }
        if self.session_lstm_hidden == 0 || self.intent_lstm_hidden == 0 || self.meta_hidden == 0 {
            return Err(Error::config("hidden", "hidden sizes must be positive"));
        }
        if self.predictor_hidden.contains(&0) {
            return Err(Error::config("predictor_hidden", "widths must be positive"));
        }
        if self.components_enabled.is_empty() {
            return Err(Error::config("components_enabled", "at least one component is required"));
        }
        if !(self.linear_map_ratio > 0.0 && self.linear_map_ratio <= 1.0) {
            return Err(Error::config("linear_map_ratio", "must lie in (0, 1]"));
        }
        if self.max_sessions == 0 {
            return Err(Error::config("max_sessions", "must be positive"));
        }
        if self.predictor_kind != PredictorKind::Static {
            if self.adjust_signal.is_empty() {
                return Err(Error::config("adjust_signal", "a dynamic predictor needs a non-empty adjust signal"));
            }
            if !self.adjust_signal.is_subset_of(&self.components_enabled) {
                return Err(Error::config(
                    "adjust_signal",
                    format!("{} is not within the enabled components {}", self.adjust_signal, self.components_enabled),
                ));
            }
        }
        Ok(())
    }

    /// Width of the linear covariate map.
    pub fn linear_out(&self) -> usize {
        let w = math::floor(COVARIATE_DIM as f64 * self.linear_map_ratio + 0.5) as usize;
        w.max(1)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        let n = self.layers - 1;
        let fill = self.predictor_hidden.last().copied().unwrap_or(32);
        (0..n).map(|i| self.predictor_hidden.get(i).copied().unwrap_or(fill)).collect()
    }

    fn uses_intents(&self) -> bool {
        self.components_enabled.intents || (self.predictor_kind != PredictorKind::Static && self.adjust_signal.intents)
    }

    fn rep_width(&self, set: &ComponentSet) -> usize {
        let mut w = 0;
        if set.covariates() {
            w += self.linear_out();
        }
        if set.sessions {
            w += self.session_lstm_hidden;
        }
        if set.intents {
            w += self.intent_lstm_hidden;
        }
        w
    }
}

/// A featurised record ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Macro features followed by the delivery encoding.
    pub covariates: [f64; COVARIATE_DIM],
    /// Row-major `T x SESSION_INPUT_DIM`, most recent `max_sessions` only.
    pub session_inputs: Vec<f64>,
    /// Row-major `T x k` cosine intents against the mined basis.
    pub cosine_intents: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: &Features, basis: &LdaModel, label: usize, max_sessions: usize) -> Result<Self> {
        let total = features.n_sessions();
        if total == 0 {
            return Err(Error::EmptyInput("a record needs at least one session"));
        }
        let first = total.saturating_sub(max_sessions.max(1));
        let mut cosine_intents = Vec::with_capacity((total - first) * basis.k);
        for t in first..total {
            cosine_intents.extend(infer_cosine(features.frequency(t), basis)?.scores);
        }
        let mut covariates = [0.0; COVARIATE_DIM];
        covariates[..MACRO_DIM].copy_from_slice(&features.macro_vec);
        covariates[MACRO_DIM..].copy_from_slice(&features.delivery_vec);
        Ok(Sample {
            covariates,
            session_inputs: features.session_inputs[first * SESSION_INPUT_DIM..].to_vec(),
            cosine_intents,
            label,
        })
    }

    pub fn n_sessions(&self) -> usize {
        self.session_inputs.len() / SESSION_INPUT_DIM
    }

    pub fn frequency(&self, t: usize) -> &[f64] {
        &self.session_inputs[t * SESSION_INPUT_DIM..t * SESSION_INPUT_DIM + N_EVENT_TYPES]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Dynamic { meta: MetaNet, layers: Vec<FcdLayer> },
    Static { layers: Vec<Dense> },
    Generated { layers: Vec<GeneratedLayer> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigmnModel {
    pub config: DigmnConfig,
    pub intent_dim: usize,
    pub n_class: usize,
    pub linear: Option<Dense>,
    pub session_lstm: Option<LstmCell>,
    pub intent_lstm: Option<LstmCell>,
    /// `tanh(W f + b)` session intents, present with the learned method.
    pub learned_intent: Option<Dense>,
    pub predictor: Predictor,
}

#[derive(Debug, Clone)]
enum PredictorCache {
    Dynamic { meta: MetaCache, layers: Vec<FcdCache>, activations: Vec<Vec<f64>> },
    Static { inputs: Vec<Vec<f64>>, activations: Vec<Vec<f64>> },
    Generated { layers: Vec<GeneratedCache>, activations: Vec<Vec<f64>> },
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    linear_input: Vec<f64>,
    session: Option<LstmCache>,
    /// Event frequencies and `tanh` outputs of the learned intent layer.
    learned_intents: Option<(Vec<f64>, Vec<f64>)>,
    intent: Option<LstmCache>,
    pred_input: Vec<f64>,
    signal: Vec<f64>,
    predictor: PredictorCache,
}

impl ForwardCache {
    /// The dynamic intent (last hidden state of the intent LSTM), if computed.
    pub fn dynamic_intent(&self) -> Option<&[f64]> {
        self.intent.as_ref().map(|c| c.last_hidden())
    }

    /// Attention vector(s) used by a dynamic predictor.
    pub fn attention(&self) -> Option<&[f64]> {
        match &self.predictor {
            PredictorCache::Dynamic { meta, .. } => Some(meta.attention()),
            _ => None,
        }
    }
}

/// Loss terms of one accumulated batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub classification: f64,
    pub regulariser: f64,
    pub total: f64,
}

impl DigmnModel {
    pub fn new(config: DigmnConfig, intent_dim: usize, n_class: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if intent_dim == 0 {
            return Err(Error::config("intent_dim", "the intent basis is empty"));
        }
        if n_class < 2 {
            return Err(Error::config("n_class", "need at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enabled = config.components_enabled;
        let linear = enabled
            .covariates()
            .then(|| Dense::new("linear", COVARIATE_DIM, config.linear_out(), &mut rng));
        let session_lstm = enabled
            .sessions
            .then(|| LstmCell::new("session_lstm", SESSION_INPUT_DIM, config.session_lstm_hidden, &mut rng));
        let uses_intents = config.uses_intents();
        let intent_lstm =
            uses_intents.then(|| LstmCell::new("intent_lstm", intent_dim, config.intent_lstm_hidden, &mut rng));
        let learned_intent = (uses_intents && config.intent_method == IntentMethod::Learned)
            .then(|| Dense::new("learned_intent", N_EVENT_TYPES, intent_dim, &mut rng));

        let mut dims = vec![config.rep_width(&enabled)];
        dims.extend(config.hidden_sizes());
        dims.push(n_class);
        let signal_dim = config.rep_width(&config.adjust_signal);
        let predictor = match config.predictor_kind {
            PredictorKind::Dynamic => {
                let heads = if config.per_layer_attention { config.layers } else { 1 };
                let meta = MetaNet::new("predictor.meta", signal_dim, config.meta_hidden, config.d, heads, &mut rng)?;
                let layers = (0..config.layers)
                    .map(|l| FcdLayer::new(&format!("predictor.fcd{l}"), config.d, dims[l], dims[l + 1], &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                Predictor::Dynamic { meta, layers }
            }
            PredictorKind::Static => Predictor::Static {
                layers: (0..config.layers)
                    .map(|l| Dense::new(&format!("predictor.dense{l}"), dims[l], dims[l + 1], &mut rng))
                    .collect(),
            },
            PredictorKind::Generated => Predictor::Generated {
                layers: (0..config.layers)
                    .map(|l| {
                        GeneratedLayer::new(
                            &format!("predictor.gen{l}"),
                            signal_dim,
                            config.meta_hidden,
                            dims[l],
                            dims[l + 1],
                            &mut rng,
                        )
                    })
                    .collect(),
            },
        };
        Ok(DigmnModel { config, intent_dim, n_class, linear, session_lstm, intent_lstm, learned_intent, predictor })
    }

    /// A static-predictor copy of a dynamic model with `d = 1`: every shared
    /// parameter is cloned and each single basis is transposed into the
    /// corresponding dense layer.
    pub fn static_twin(&self) -> Result<DigmnModel> {
        let Predictor::Dynamic { layers, .. } = &self.predictor else {
            return Err(Error::config("predictor_kind", "static twin needs a dynamic predictor"));
        };
        if self.config.d != 1 {
            return Err(Error::config("d", "static twin needs d = 1"));
        }
        let dense = layers
            .iter()
            .enumerate()
            .map(|(l, fcd)| {
                let (m, n) = (fcd.in_dim, fcd.out_dim);
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let mut layer = Dense::new(&format!("predictor.dense{l}"), m, n, &mut rng);
                for i in 0..m {
                    for j in 0..n {
                        layer.weight.value[j * m + i] = fcd.weight.value[i * n + j];
                    }
                }
                layer.bias.value.copy_from_slice(&fcd.bias.value);
                layer
            })
            .collect();
        let mut config = self.config.clone();
        config.predictor_kind = PredictorKind::Static;
        Ok(DigmnModel { config, predictor: Predictor::Static { layers: dense }, ..self.clone() })
    }

    fn masked_covariates(&self, sample: &Sample) -> Vec<f64> {
        let enabled = &self.config.components_enabled;
        let mut x = sample.covariates.to_vec();
        if !enabled.macro_features {
            x[..MACRO_DIM].iter_mut().for_each(|v| *v = 0.0);
        }
        if !enabled.delivery {
            x[MACRO_DIM..].iter_mut().for_each(|v| *v = 0.0);
        }
        x
    }

    fn concat_reps(&self, set: &ComponentSet, lin: &[f64], h_s: &[f64], i_t: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.rep_width(set));
        if set.covariates() {
            out.extend_from_slice(lin);
        }
        if set.sessions {
            out.extend_from_slice(h_s);
        }
        if set.intents {
            out.extend_from_slice(i_t);
        }
        out
    }

    pub fn forward(&self, sample: &Sample) -> Result<(Vec<f64>, ForwardCache)> {
        let t = sample.n_sessions();
        if t == 0 || sample.session_inputs.len() != t * SESSION_INPUT_DIM {
            return Err(Error::EmptyInput("a record needs at least one session"));
        }
        let linear_input = self.masked_covariates(sample);
        let lin = match &self.linear {
            Some(l) => l.forward(&linear_input)?,
            None => Vec::new(),
        };
        let (h_s, session) = match &self.session_lstm {
            Some(cell) => {
                let (h, c) = cell.forward(&sample.session_inputs)?;
                (h, Some(c))
            }
            None => (Vec::new(), None),
        };
        let mut learned_intents = None;
        let (i_t, intent) = match &self.intent_lstm {
            Some(cell) => {
                let seq = match &self.learned_intent {
                    Some(layer) => {
                        let mut seq = Vec::with_capacity(t * self.intent_dim);
                        let mut freqs = Vec::with_capacity(t * N_EVENT_TYPES);
                        for s in 0..t {
                            freqs.extend_from_slice(sample.frequency(s));
                            seq.extend(layer.forward(sample.frequency(s))?.into_iter().map(math::tanh));
                        }
                        learned_intents = Some((freqs, seq.clone()));
                        seq
                    }
                    None => {
                        if sample.cosine_intents.len() != t * self.intent_dim {
                            return Err(Error::shape(
                                "cosine intents",
                                t * self.intent_dim,
                                sample.cosine_intents.len(),
                            ));
                        }
                        sample.cosine_intents.clone()
                    }
                };
                let (h, c) = cell.forward(&seq)?;
                (h, Some(c))
            }
            None => (Vec::new(), None),
        };
        let pred_input = self.concat_reps(&self.config.components_enabled, &lin, &h_s, &i_t);
        let signal = match self.predictor {
            Predictor::Static { .. } => Vec::new(),
            _ => self.concat_reps(&self.config.adjust_signal, &lin, &h_s, &i_t),
        };
        let (logits, predictor) = self.predictor_forward(&pred_input, &signal)?;
        let cache = ForwardCache {
            linear_input,
            session,
            learned_intents,
            intent,
            pred_input,
            signal,
            predictor,
        };
        Ok((logits, cache))
    }

    fn predictor_forward(&self, input: &[f64], signal: &[f64]) -> Result<(Vec<f64>, PredictorCache)> {
        let n_layers = self.config.layers;
        let mut x = input.to_vec();
        let mut activations = Vec::with_capacity(n_layers);
        match &self.predictor {
            Predictor::Dynamic { meta, layers } => {
                let (a, meta_cache) = meta.forward(signal)?;
                let d = self.config.d;
                let mut caches = Vec::with_capacity(n_layers);
                for (l, layer) in layers.iter().enumerate() {
                    let a_l = if meta.heads > 1 { &a[l * d..(l + 1) * d] } else { &a[..] };
                    let (mut y, c) = layer.forward(a_l, &x)?;
                    if l + 1 < n_layers {
                        crate::nn::relu_in_place(&mut y);
                    }
                    caches.push(c);
                    activations.push(y.clone());
                    x = y;
                }
                Ok((x, PredictorCache::Dynamic { meta: meta_cache, layers: caches, activations }))
            }
            Predictor::Static { layers } => {
                let mut inputs = Vec::with_capacity(n_layers);
                for (l, layer) in layers.iter().enumerate() {
                    let mut y = layer.forward(&x)?;
                    if l + 1 < n_layers {
                        crate::nn::relu_in_place(&mut y);
                    }
                    inputs.push(core::mem::replace(&mut x, y.clone()));
                    activations.push(y);
                }
                Ok((x, PredictorCache::Static { inputs, activations }))
            }
            Predictor::Generated { layers } => {
                let mut caches = Vec::with_capacity(n_layers);
                for (l, layer) in layers.iter().enumerate() {
                    let (mut y, c) = layer.forward(signal, &x)?;
                    if l + 1 < n_layers {
                        crate::nn::relu_in_place(&mut y);
                    }
                    caches.push(c);
                    activations.push(y.clone());
                    x = y;
                }
                Ok((x, PredictorCache::Generated { layers: caches, activations }))
            }
        }
    }

    /// Returns gradients w.r.t. the predictor input and the adjust signal.
    fn predictor_backward(&mut self, cache: &PredictorCache, grad_logits: &[f64], input_dim: usize, signal_dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let n_layers = self.config.layers;
        let mut d_signal = vec![0.0; signal_dim];
        let mut dy = grad_logits.to_vec();
        match (&mut self.predictor, cache) {
            (Predictor::Dynamic { meta, layers }, PredictorCache::Dynamic { meta: meta_cache, layers: caches, activations }) => {
                let d = self.config.d;
                let heads = meta.heads;
                let mut d_a = vec![0.0; d * heads];
                for l in (0..n_layers).rev() {
                    if l + 1 < n_layers {
                        crate::nn::relu_backward(&activations[l], &mut dy);
                    }
                    let in_dim = if l == 0 { input_dim } else { layers[l].in_dim };
                    let mut dx = vec![0.0; in_dim];
                    let slot = if heads > 1 { &mut d_a[l * d..(l + 1) * d] } else { &mut d_a[..] };
                    layers[l].backward(&caches[l], &dy, slot, Some(&mut dx))?;
                    dy = dx;
                }
                meta.backward(meta_cache, &d_a, Some(&mut d_signal))?;
            }
            (Predictor::Static { layers }, PredictorCache::Static { inputs, activations }) => {
                for l in (0..n_layers).rev() {
                    if l + 1 < n_layers {
                        crate::nn::relu_backward(&activations[l], &mut dy);
                    }
                    let mut dx = vec![0.0; layers[l].in_dim];
                    layers[l].backward(&inputs[l], &dy, Some(&mut dx))?;
                    dy = dx;
                }
            }
            (Predictor::Generated { layers }, PredictorCache::Generated { layers: caches, activations }) => {
                for l in (0..n_layers).rev() {
                    if l + 1 < n_layers {
                        crate::nn::relu_backward(&activations[l], &mut dy);
                    }
                    let mut dx = vec![0.0; layers[l].in_dim];
                    layers[l].backward(&caches[l], &dy, Some(&mut d_signal), Some(&mut dx))?;
                    dy = dx;
                }
            }
            _ => return Err(Error::StaleCache("forward cache belongs to a different predictor kind")),
        }
        Ok((dy, d_signal))
    }

    /// Accumulates the gradients of `grad_logits . logits` into every
    /// reachable parameter.
    pub fn backward(&mut self, cache: &ForwardCache, grad_logits: &[f64]) -> Result<()> {
        if grad_logits.len() != self.n_class {
            return Err(Error::shape("logit gradient", self.n_class, grad_logits.len()));
        }
        let enabled = self.config.components_enabled;
        if cache.pred_input.len() != self.config.rep_width(&enabled) {
            return Err(Error::StaleCache("forward cache was produced under a different configuration"));
        }
        let (d_input, d_signal) =
            self.predictor_backward(&cache.predictor, grad_logits, cache.pred_input.len(), cache.signal.len())?;

        let lin_w = if enabled.covariates() { self.config.linear_out() } else { 0 };
        let s_w = if enabled.sessions { self.config.session_lstm_hidden } else { 0 };
        let i_w = self.config.intent_lstm_hidden;
        let mut d_lin = vec![0.0; lin_w];
        let mut d_hs = vec![0.0; s_w];
        let mut d_it = vec![0.0; if self.intent_lstm.is_some() { i_w } else { 0 }];

        scatter_reps(&enabled, &d_input, &mut d_lin, &mut d_hs, &mut d_it);
        if !cache.signal.is_empty() {
            scatter_reps(&self.config.adjust_signal, &d_signal, &mut d_lin, &mut d_hs, &mut d_it);
        }

        if let Some(linear) = &mut self.linear {
            linear.backward(&cache.linear_input, &d_lin, None)?;
        }
        if let (Some(cell), Some(c)) = (&mut self.session_lstm, &cache.session) {
            cell.backward(c, &d_hs, None)?;
        }
        if let (Some(cell), Some(c)) = (&mut self.intent_lstm, &cache.intent) {
            match (&mut self.learned_intent, &cache.learned_intents) {
                (Some(layer), Some((freqs, outputs))) => {
                    let k = self.intent_dim;
                    let mut d_seq = vec![0.0; outputs.len()];
                    cell.backward(c, &d_it, Some(&mut d_seq))?;
                    for ((g, out), freq) in d_seq.chunks_mut(k).zip(outputs.chunks(k)).zip(freqs.chunks(N_EVENT_TYPES)) {
                        for (gi, oi) in g.iter_mut().zip(out) {
                            *gi *= 1.0 - oi * oi;
                        }
                        layer.backward(freq, g, None)?;
                    }
                }
                _ => cell.backward(c, &d_it, None)?,
            }
        }
        Ok(())
    }

    pub fn logits(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(self.forward(sample)?.0)
    }

    pub fn predict_proba(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(math::softmax(&self.logits(sample)?))
    }

    /// Zeroes gradients, then accumulates `L_C + beta * L_R` gradients over `batch`.
    pub fn accumulate_batch<'s, I>(&mut self, batch: I, beta: f64) -> Result<BatchLoss>
    where
        I: IntoIterator<Item = &'s Sample>,
    {
        self.zero_grad();
        let mut logits = Vec::new();
        let mut caches = Vec::new();
        let mut labels = Vec::new();
        for s in batch {
            let (l, c) = self.forward(s)?;
            logits.push(l);
            caches.push(c);
            labels.push(s.label);
        }
        let (classification, grads) = cross_entropy(&logits, &labels)?;
        for (c, g) in caches.iter().zip(&grads) {
            self.backward(c, g)?;
        }
        let regulariser = match &mut self.predictor {
            Predictor::Dynamic { layers, .. } => ortho_reg(layers, beta),
            _ => 0.0,
        };
        Ok(BatchLoss { classification, regulariser, total: classification + beta * regulariser })
    }

    /// `L_C + beta * L_R` over `batch` without touching gradients.
    pub fn batch_loss<'s, I>(&self, batch: I, beta: f64) -> Result<f64>
    where
        I: IntoIterator<Item = &'s Sample>,
    {
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for s in batch {
            logits.push(self.logits(s)?);
            labels.push(s.label);
        }
        let (lc, _) = cross_entropy(&logits, &labels)?;
        Ok(lc + beta * self.basis_gram_offdiag())
    }

    /// Total squared off-diagonal Gram entries over all FC-D bases (0 for
    /// other predictor kinds).
    pub fn basis_gram_offdiag(&self) -> f64 {
        match &self.predictor {
            Predictor::Dynamic { layers, .. } => layers
                .iter()
                .map(|l| ortho_penalty(&l.weight.value, l.d, l.in_dim * l.out_dim))
                .sum(),
            _ => 0.0,
        }
    }

    pub fn to_checkpoint(&self, task: Task, basis: Option<LdaModel>) -> Checkpoint {
        let mut params = Vec::new();
        self.visit_params(&mut |p| {
            params.push(NamedParam { name: p.name.clone(), shape: p.shape.clone(), values: p.value.clone() })
        });
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            reshape: String::from(FCD_RESHAPE),
            task,
            intent_dim: self.intent_dim,
            n_class: self.n_class,
            config: self.config.clone(),
            basis,
            params,
        }
    }

    /// Rebuilds a model from a checkpoint, rejecting any version, reshape,
    /// name or shape mismatch.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<DigmnModel> {
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint format {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        if ckpt.reshape != FCD_RESHAPE {
            return Err(Error::Incompatible(format!("reshape convention {:?}", ckpt.reshape)));
        }
        if ckpt.n_class != ckpt.task.n_class() {
            return Err(Error::Incompatible(format!("{} classes for the {} task", ckpt.n_class, ckpt.task.name())));
        }
        if let Some(b) = &ckpt.basis {
            if b.k != ckpt.intent_dim {
                return Err(Error::Incompatible(format!("basis has k = {} but intent_dim = {}", b.k, ckpt.intent_dim)));
            }
        }
        let mut model = DigmnModel::new(ckpt.config.clone(), ckpt.intent_dim, ckpt.n_class, 0)?;
        let mut index = 0;
        let mut problem = None;
        model.visit_params_mut(&mut |p: &mut Param| {
            if problem.is_some() {
                return;
            }
            match ckpt.params.get(index) {
                Some(np) if np.name == p.name && np.shape == p.shape && np.values.len() == p.len() => {
                    p.value.copy_from_slice(&np.values);
                }
                Some(np) => {
                    problem = Some(format!(
                        "parameter {} {:?} does not match expected {} {:?}",
                        np.name, np.shape, p.name, p.shape
                    ))
                }
                None => problem = Some(format!("missing parameter {}", p.name)),
            }
            index += 1;
        });
        if let Some(msg) = problem {
            return Err(Error::Incompatible(msg));
        }
        if index != ckpt.params.len() {
            return Err(Error::Incompatible(format!("{} unexpected extra parameters", ckpt.params.len() - index)));
        }
        if let Some(name) = model.first_non_finite() {
            return Err(Error::Incompatible(format!("non-finite value in {name}")));
        }
        Ok(model)
    }
}

/// Adds the slices of `g` that belong to each representation in `set`.
fn scatter_reps(set: &ComponentSet, g: &[f64], d_lin: &mut [f64], d_hs: &mut [f64], d_it: &mut [f64]) {
    let mut offset = 0;
    for (on, dst) in [(set.covariates(), d_lin), (set.sessions, d_hs), (set.intents, d_it)] {
        if on {
            math::axpy(1.0, &g[offset..offset + dst.len()], dst);
            offset += dst.len();
        }
    }
}

impl HasParams for DigmnModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        if let Some(l) = &self.linear {
            l.visit_params(f);
        }
        if let Some(c) = &self.session_lstm {
            c.visit_params(f);
        }
        if let Some(c) = &self.intent_lstm {
            c.visit_params(f);
        }
        if let Some(l) = &self.learned_intent {
            l.visit_params(f);
        }
        match &self.predictor {
            Predictor::Dynamic { meta, layers } => {
                meta.visit_params(f);
                layers.visit_params(f);
            }
            Predictor::Static { layers } => layers.visit_params(f),
            Predictor::Generated { layers } => layers.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let Some(l) = &mut self.linear {
            l.visit_params_mut(f);
        }
        if let Some(c) = &mut self.session_lstm {
            c.visit_params_mut(f);
        }
        if let Some(c) = &mut self.intent_lstm {
            c.visit_params_mut(f);
        }
        if let Some(l) = &mut self.learned_intent {
            l.visit_params_mut(f);
        }
        match &mut self.predictor {
            Predictor::Dynamic { meta, layers } => {
                meta.visit_params_mut(f);
                layers.visit_params_mut(f);
            }
            Predictor::Static { layers } => layers.visit_params_mut(f),
            Predictor::Generated { layers } => layers.visit_params_mut(f),
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub shape: Vec<usize>,
    /// Row-major flattened values.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub reshape: String,
    pub task: Task,
    pub intent_dim: usize,
    pub n_class: usize,
    pub config: DigmnConfig,
    pub basis: Option<LdaModel>,
    pub params: Vec<NamedParam>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::featurize;
    use crate::nn::grad_check_params;
    use rand::SeedableRng;
    use crate::syngen::{generate_corpus, GeneratorConfig};

    fn fixture(n_users: usize, task: Task, max_sessions: usize) -> (Vec<Sample>, LdaModel) {
        let corpus = generate_corpus(&GeneratorConfig { n_users, seed: 5, ..Default::default() }).unwrap();
        let basis = LdaModel {
            k: corpus.truth.topic_event.len(),
            topic_event: corpus.truth.topic_event.clone(),
            alpha: 0.2,
            eta: 0.01,
        };
        let samples = corpus
            .records
            .iter()
            .map(|r| Sample::new(&featurize(r).unwrap(), &basis, task.class_of(r), max_sessions).unwrap())
            .collect();
        (samples, basis)
    }

    fn small_config() -> DigmnConfig {
        DigmnConfig {
            session_lstm_hidden: 4,
            intent_lstm_hidden: 5,
            d: 3,
            layers: 3,
            predictor_hidden: vec![6, 4],
            meta_hidden: 4,
            max_sessions: 3,
            ..Default::default()
        }
    }

    /// Four records whose sessions mix every event type, so every input
    /// weight receives signal.
    fn dense_batch(basis: &LdaModel, n_class: usize, sessions: usize, seed: u64) -> Vec<Sample> {
        use crate::domain::{Client, SessionContext};
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..4)
            .map(|i| {
                let mut session_inputs = Vec::new();
                for s in 0..sessions {
                    let w: Vec<f64> = (0..N_EVENT_TYPES).map(|_| rng.random_range(0.5..1.5)).collect();
                    let total: f64 = w.iter().sum();
                    session_inputs.extend(w.iter().map(|v| v / total));
                    let ctx = SessionContext {
                        start_time: 1_704_067_200 + 3600 * (7 * i + 5 * s) as i64,
                        duration: 600 + 300 * s as i64,
                        client: Client::ALL[(i + s) % 3],
                    };
                    session_inputs.extend(ctx.encode());
                }
                let mut delivery_vec = [0.0; DELIVERY_DIM];
                delivery_vec[0] = 1.0;
                delivery_vec[1 + i % 3] = 1.0;
                delivery_vec[4 + i % 5] = 1.0;
                let features = Features {
                    macro_vec: [
                        rng.random_range(1.0..5.0),
                        rng.random_range(0.2..3.0),
                        rng.random_range(0.1..0.9),
                        rng.random_range(3.0..7.0),
                    ],
                    delivery_vec,
                    session_inputs,
                };
                Sample::new(&features, basis, i % n_class, sessions).unwrap()
            })
            .collect()
    }

    /// Whole-model finite-difference check. Predictor weights are scaled up
    /// and its biases shifted positive so that gradients reaching the LSTMs
    /// stay far above the resolution of central differences in f64.
    /// Non-strict checks bound the relative error on coordinates large
    /// enough to resolve and the absolute error on the rest.
    fn check_whole_model(config: DigmnConfig, task: Task, beta: f64, strict: bool) {
        let (_, basis) = fixture(1, task, 2);
        let samples = dense_batch(&basis, task.n_class(), 2, 0);
        let mut model = DigmnModel::new(config, basis.k, task.n_class(), 0).unwrap();
        model.visit_params_mut(&mut |p| {
            if p.name.starts_with("predictor") {
                if p.name.ends_with("bias") {
                    p.value.iter_mut().for_each(|v| *v += 0.5);
                } else {
                    p.value.iter_mut().for_each(|v| *v *= 3.0);
                }
            }
        });
        model.accumulate_batch(&samples, beta).unwrap();
        let report = grad_check_params(&mut model, 1e-5, |m| m.batch_loss(&samples, beta).unwrap()).unwrap();
        assert!(report.checked > 100);
        if strict {
            assert!(report.max_rel_err < 1e-4, "{report:?}");
        } else {
            assert!(report.resolved_max_rel_err < 1e-4, "{report:?}");
            assert!(report.unresolved_max_abs_err < 1e-10, "{report:?}");
        }
    }

    #[test]
    fn whole_model_gradients_dynamic() {
        check_whole_model(small_config(), Task::Day, 1e-2, true);
    }

    #[test]
    fn whole_model_gradients_learned_intents() {
        let config = DigmnConfig { intent_method: IntentMethod::Learned, ..small_config() };
        check_whole_model(config, Task::Session, 1e-2, false);
    }

    #[test]
    fn whole_model_gradients_generated_predictor() {
        let config = DigmnConfig { predictor_kind: PredictorKind::Generated, ..small_config() };
        check_whole_model(config, Task::Day, 0.0, false);
    }

    #[test]
    fn whole_model_gradients_full_signal_per_layer_attention() {
        let config = DigmnConfig {
            adjust_signal: "MDSI".parse().unwrap(),
            per_layer_attention: true,
            ..small_config()
        };
        check_whole_model(config, Task::Session, 1e-2, false);
    }

    #[test]
    fn whole_model_gradients_static_predictor() {
        let config = DigmnConfig { predictor_kind: PredictorKind::Static, layers: 2, ..small_config() };
        check_whole_model(config, Task::Day, 0.0, false);
    }

    #[test]
    fn single_basis_matches_static_twin() {
        let (samples, basis) = fixture(20, Task::Session, 128);
        let config = DigmnConfig { d: 1, ..Default::default() };
        let model = DigmnModel::new(config, basis.k, 2, 3).unwrap();
        let twin = model.static_twin().unwrap();
        assert_eq!(twin.config.predictor_kind, PredictorKind::Static);
        for s in &samples {
            let a = model.logits(s).unwrap();
            let b = twin.logits(s).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300), "{x} vs {y}");
            }
        }
        assert!(DigmnModel::new(DigmnConfig::default(), basis.k, 2, 3).unwrap().static_twin().is_err());
    }

    #[test]
    fn macro_only_model_ignores_sessions() {
        let (samples, basis) = fixture(3, Task::Day, 128);
        let config = DigmnConfig {
            components_enabled: "M".parse().unwrap(),
            adjust_signal: "M".parse().unwrap(),
            ..Default::default()
        };
        let model = DigmnModel::new(config, basis.k, 3, 9).unwrap();
        for s in &samples {
            let mut mutated = s.clone();
            mutated.session_inputs.iter_mut().for_each(|v| *v = 1.0 - *v);
            mutated.session_inputs.truncate(SESSION_INPUT_DIM);
            mutated.cosine_intents.truncate(basis.k);
            assert_eq!(model.logits(s).unwrap(), model.logits(&mutated).unwrap());
        }
    }

    #[test]
    fn disabled_macro_component_gets_no_gradient() {
        let (samples, basis) = fixture(4, Task::Day, 5);
        let config = DigmnConfig { components_enabled: "DSI".parse().unwrap(), ..small_config() };
        let mut model = DigmnModel::new(config, basis.k, 3, 2).unwrap();
        model.accumulate_batch(&samples, 0.01).unwrap();
        let lin = model.linear.as_ref().unwrap();
        for r in 0..lin.out_dim {
            for c in 0..MACRO_DIM {
                assert_eq!(lin.weight.grad[r * COVARIATE_DIM + c], 0.0);
            }
        }
        assert!(lin.weight.grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let (samples, basis) = fixture(2, Task::Day, 4);
        let mut model = DigmnModel::new(small_config(), basis.k, 3, 4).unwrap();
        let (_, cache) = model.forward(&samples[0]).unwrap();
        model.zero_grad();
        model.backward(&cache, &[0.0; 3]).unwrap();
        assert!(model.flat_grads().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn permuting_bases_with_meta_outputs_preserves_logits() {
        let (samples, basis) = fixture(5, Task::Day, 128);
        let model = DigmnModel::new(DigmnConfig::default(), basis.k, 3, 8).unwrap();
        let mut permuted = model.clone();
        let perm = [2usize, 0, 3, 1];
        if let Predictor::Dynamic { meta, layers } = &mut permuted.predictor {
            let (w2, b2) = (meta.l2.weight.value.clone(), meta.l2.bias.value.clone());
            let h = meta.l2.in_dim;
            for (new, &old) in perm.iter().enumerate() {
                meta.l2.weight.value[new * h..(new + 1) * h].copy_from_slice(&w2[old * h..(old + 1) * h]);
                meta.l2.bias.value[new] = b2[old];
            }
            for layer in layers.iter_mut() {
                let (w, b) = (layer.weight.value.clone(), layer.bias.value.clone());
                let (size, n) = (layer.in_dim * layer.out_dim, layer.out_dim);
                for (new, &old) in perm.iter().enumerate() {
                    layer.weight.value[new * size..(new + 1) * size].copy_from_slice(&w[old * size..(old + 1) * size]);
                    layer.bias.value[new * n..(new + 1) * n].copy_from_slice(&b[old * n..(old + 1) * n]);
                }
            }
        }
        for s in &samples {
            for (a, b) in model.logits(s).unwrap().iter().zip(permuted.logits(s).unwrap()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probabilities_and_shapes() {
        let (samples, basis) = fixture(6, Task::Day, 128);
        let model = DigmnModel::new(DigmnConfig::default(), basis.k, 3, 1).unwrap();
        for s in samples.iter().take(4) {
            let (logits, cache) = model.forward(s).unwrap();
            assert_eq!(logits.len(), 3);
            assert!(logits.iter().all(|v| v.is_finite()));
            let p = model.predict_proba(s).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(cache.dynamic_intent().unwrap().len(), 32);
            let a = cache.attention().unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            DigmnConfig { d: 0, ..Default::default() },
            DigmnConfig { layers: 0, ..Default::default() },
            DigmnConfig { layers: 6, ..Default::default() },
            DigmnConfig { components_enabled: "MDS".parse().unwrap(), ..Default::default() },
            DigmnConfig { adjust_signal: ComponentSet::default(), ..Default::default() },
            DigmnConfig { linear_map_ratio: 0.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::InvalidConfig { .. })), "{c:?}");
        }
        let ok = DigmnConfig {
            components_enabled: "MDS".parse().unwrap(),
            predictor_kind: PredictorKind::Static,
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert_eq!(DigmnConfig::default().linear_out(), 7);
        assert_eq!(DigmnConfig { layers: 5, ..Default::default() }.hidden_sizes(), vec![64, 32, 32, 32]);
        assert_eq!(DigmnConfig { layers: 1, ..Default::default() }.hidden_sizes(), Vec::<usize>::new());
    }

    #[test]
    fn component_sets_round_trip_through_text() {
        for text in ["I", "MD", "MDSI", "S"] {
            let set: ComponentSet = text.parse().unwrap();
            assert_eq!(format!("{set}"), text);
        }
        assert_eq!("m+d".parse::<ComponentSet>().unwrap(), "MD".parse().unwrap());
        assert!("MX".parse::<ComponentSet>().is_err());
    }

    #[test]
    fn checkpoint_round_trip_and_rejection() {
        let (samples, basis) = fixture(3, Task::Session, 128);
        let model = DigmnModel::new(DigmnConfig::default(), basis.k, 2, 12).unwrap();
        let ckpt = model.to_checkpoint(Task::Session, Some(basis.clone()));
        let restored = DigmnModel::from_checkpoint(&ckpt).unwrap();
        for s in &samples {
            assert_eq!(model.logits(s).unwrap(), restored.logits(s).unwrap());
        }

        let mut wrong_shape = ckpt.clone();
        wrong_shape.params[0].shape = vec![1, 1];
        assert!(matches!(DigmnModel::from_checkpoint(&wrong_shape), Err(Error::Incompatible(_))));
        let mut wrong_tag = ckpt.clone();
        wrong_tag.reshape = "column-major".into();
        assert!(matches!(DigmnModel::from_checkpoint(&wrong_tag), Err(Error::Incompatible(_))));
        let mut wrong_task = ckpt.clone();
        wrong_task.task = Task::Day;
        assert!(matches!(DigmnModel::from_checkpoint(&wrong_task), Err(Error::Incompatible(_))));
        let mut truncated = ckpt;
        truncated.params.pop();
        assert!(matches!(DigmnModel::from_checkpoint(&truncated), Err(Error::Incompatible(_))));
    }
}
