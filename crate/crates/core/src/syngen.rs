//! Seeded synthetic session corpora with known intent structure.
//!
//! Each user carries a latent intent mixture that is occasionally resampled.
//! Every session draws a single intent from the current mixture and then its
//! events from that intent's event distribution. The daily session rate
//! responds to how far the mixture has drifted from where the user started,
//! measured through a per-intent valence whose sign flips between new and
//! established accounts, so the engagement trend depends on intent dynamics
//! differently for different kinds of users.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    compute_label, Channel, Client, Content, DeliveryMessage, EngagementLabel, EventType, MacroFeatures, Session,
    SessionContext, UserEvent, UserRecord, N_EVENT_TYPES, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::math;

/// Rows are distributions over the ten event types.
pub type TopicMatrix = Vec<[f64; N_EVENT_TYPES]>;

/// 2024-01-01T00:00:00Z, a Monday.
pub const DEFAULT_START_TIME: i64 = 1_704_067_200;

const MAX_SESSIONS_PER_DAY: u64 = 20;
const MIN_EVENTS: usize = 5;
const MAX_EVENTS: usize = 50;
const MEAN_EVENT_GAP_SECS: f64 = 20.0;
const DELIVERY_PROB_PER_DAY: f64 = 0.2;
pub const ESTABLISHED_ACCOUNT_DAYS: f64 = 365.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub window_days: u32,
    pub k_true_intents: usize,
    pub dirichlet_alpha: f64,
    pub base_session_rate: f64,
    pub intent_drift_prob: f64,
    pub engagement_coupling: f64,
    /// Multiplier on every rate in the future window (population-wide drift).
    pub future_rate_factor: f64,
    /// Log-normal spread of the per-user base rate.
    pub rate_dispersion: f64,
    pub min_history_sessions: usize,
    pub max_attempts_per_user: usize,
    pub start_time: i64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 1000,
            window_days: 14,
            k_true_intents: 7,
            dirichlet_alpha: 0.3,
            base_session_rate: 1.6,
            intent_drift_prob: 0.08,
            engagement_coupling: 0.8,
            future_rate_factor: 0.92,
            rate_dispersion: 0.5,
            min_history_sessions: 7,
            max_attempts_per_user: 1000,
            start_time: DEFAULT_START_TIME,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 {
            return Err(Error::config("n_users", "must be at least 1"));
        }
        if self.window_days == 0 {
            return Err(Error::config("window_days", "must be at least 1"));
        }
        if !(2..=N_EVENT_TYPES).contains(&self.k_true_intents) {
            return Err(Error::config("k_true_intents", "must be in 2..=10"));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return Err(Error::config("dirichlet_alpha", "must be > 0"));
        }
        if !(self.base_session_rate > 0.0 && self.base_session_rate.is_finite()) {
            return Err(Error::config("base_session_rate", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.intent_drift_prob) {
            return Err(Error::config("intent_drift_prob", "must be in [0, 1]"));
        }
        if !self.engagement_coupling.is_finite() {
            return Err(Error::config("engagement_coupling", "must be finite"));
        }
        if !(self.future_rate_factor > 0.0 && self.future_rate_factor.is_finite()) {
            return Err(Error::config("future_rate_factor", "must be > 0"));
        }
        if !(self.rate_dispersion >= 0.0 && self.rate_dispersion.is_finite()) {
            return Err(Error::config("rate_dispersion", "must be >= 0"));
        }
        if self.max_attempts_per_user == 0 {
            return Err(Error::config("max_attempts_per_user", "must be at least 1"));
        }
        if self.start_time < 0 {
            return Err(Error::config("start_time", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: u64,
    /// +1 for established accounts, -1 for new ones.
    pub response_sign: f64,
    /// One mixture per simulated day, history window followed by future window.
    pub trajectory: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub topic_event: TopicMatrix,
    /// Engagement valence of each intent, in [-1, 1].
    pub intent_valence: Vec<f64>,
    pub window_days: u32,
    pub users: Vec<UserTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub records: Vec<UserRecord>,
    pub truth: GroundTruth,
    pub warnings: Vec<String>,
}

/// Event pairs that dominate the first intents (networking, job seeking,
/// news, communication, profile upkeep). Later intents take single events.
const DOMINANT_PAIRS: [(EventType, EventType); 5] = [
    (EventType::Pymk, EventType::ViewProfile),
    (EventType::Jobs, EventType::Search),
    (EventType::Feed, EventType::ShareContent),
    (EventType::Notification, EventType::Message),
    (EventType::EditProfile, EventType::Follow),
];

/// Dominant event sets of the `k` prototype intents. Sets are pairwise disjoint.
pub fn dominant_sets(k: usize) -> Result<Vec<Vec<EventType>>> {
    if !(2..=N_EVENT_TYPES).contains(&k) {
        return Err(Error::InvalidArgument(alloc::format!(
            "prototype intent count {k} outside 2..=10"
        )));
    }
    let pairs = k.min(N_EVENT_TYPES - k);
    let mut sets: Vec<Vec<EventType>> = DOMINANT_PAIRS[..pairs]
        .iter()
        .map(|&(a, b)| alloc::vec![a, b])
        .collect();
    for &(a, b) in &DOMINANT_PAIRS[pairs..] {
        for e in [a, b] {
            if sets.len() < k {
                sets.push(alloc::vec![e]);
            }
        }
    }
    Ok(sets)
}

/// Builds `k` intent distributions, each dominated by one or two events that
/// together carry at least 0.7 of the mass.
pub fn make_prototype_intents(k: usize, seed: u64) -> Result<TopicMatrix> {
    let sets = dominant_sets(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Gamma::new(1.0, 1.0).expect("valid gamma");
    let mut rows = Vec::with_capacity(k);
    for set in &sets {
        let dominant_mass: f64 = rng.random_range(0.7..0.85);
        let mut row = [0.0; N_EVENT_TYPES];
        if set.len() == 2 {
            let primary: f64 = rng.random_range(0.55..0.7);
            row[set[0].index()] = dominant_mass * primary;
            row[set[1].index()] = dominant_mass * (1.0 - primary);
        } else {
            row[set[0].index()] = dominant_mass;
        }
        let mut rest = [0.0; N_EVENT_TYPES];
        let mut total = 0.0;
        for (i, r) in rest.iter_mut().enumerate() {
            if !set.iter().any(|e| e.index() == i) {
                *r = unit.sample(&mut rng);
                total += *r;
            }
        }
        for (x, r) in row.iter_mut().zip(rest) {
            *x += (1.0 - dominant_mass) * r / total;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Per-intent engagement valence: evenly spaced in [-1, 1], shuffled by seed.
pub fn intent_valence(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0056_414c_454e_4345);
    let mut v: Vec<f64> = (0..k).map(|i| -1.0 + 2.0 * i as f64 / (k - 1) as f64).collect();
    for i in (1..k).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v
}

fn user_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 of the index, xored into the run seed
    let mut z = (index as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed ^ (z ^ (z >> 31))
}

fn sample_dirichlet<R: Rng>(rng: &mut R, alpha: f64, k: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        for d in &mut draws {
            *d /= total;
        }
    } else {
        draws.iter_mut().for_each(|d| *d = 0.0);
        draws[rng.random_range(0..k)] = 1.0;
    }
    draws
}

fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn poisson<R: Rng>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("positive rate");
    let x: f64 = d.sample(rng);
    x as u64
}

struct UserSim {
    history: Vec<Session>,
    future: Vec<Session>,
    latest_delivery: Option<DeliveryMessage>,
    trajectory: Vec<Vec<f64>>,
}

/// Everything shared by all users of one corpus.
pub struct Population {
    pub topic_event: TopicMatrix,
    pub valence: Vec<f64>,
}

impl Population {
    pub fn new(config: &GeneratorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Population {
            topic_event: make_prototype_intents(config.k_true_intents, config.seed)?,
            valence: intent_valence(config.k_true_intents, config.seed),
        })
    }
}

/// Generates one user. The stream depends only on the run seed and the
/// user index, so users can be produced in any order or in parallel.
pub fn generate_user(config: &GeneratorConfig, pop: &Population, index: usize) -> Result<(UserRecord, UserTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(config.seed, index));
    let user_id = index as u64;
    let w = config.window_days as i64;
    for _ in 0..config.max_attempts_per_user {
        let noise: f64 = rng.sample(StandardNormal);
        let sigma = config.rate_dispersion;
        let base_rate = config.base_session_rate * math::exp(sigma * noise - 0.5 * sigma * sigma);

        let age_days = math::exp(rng.random_range(libm::log(30.0)..libm::log(3650.0)));
        let response_sign = if age_days >= ESTABLISHED_ACCOUNT_DAYS { 1.0 } else { -1.0 };
        let conn_noise: f64 = rng.sample(StandardNormal);
        let connections = math::exp(2.0 + 0.5 * math::ln(age_days) + conn_noise);

        // A baseline period before the observation window, with no intent effect.
        let mut past_sessions = 0u64;
        let mut past_active = 0u32;
        for _ in 0..w {
            let n = poisson(&mut rng, base_rate).min(MAX_SESSIONS_PER_DAY);
            past_sessions += n;
            past_active += u32::from(n > 0);
        }
        let macro_features = MacroFeatures {
            connection_count: math::ln_1p(connections),
            avg_sessions_per_day_past: past_sessions as f64 / w as f64,
            avg_active_day_rate_past: past_active as f64 / w as f64,
            account_age_days: math::ln_1p(age_days),
        };

        let sim = simulate_windows(config, pop, &mut rng, user_id, base_rate, response_sign);
        if sim.history.len() < config.min_history_sessions {
            continue;
        }
        let label = compute_label(&sim.history, &sim.future, config.window_days)?;
        let record = UserRecord {
            macro_features,
            sessions: sim.history,
            latest_delivery: sim.latest_delivery,
            label,
        };
        let truth = UserTruth {
            user_id,
            response_sign,
            trajectory: sim.trajectory,
        };
        return Ok((record, truth));
    }
    Err(Error::InvalidArgument(alloc::format!(
        "user {index}: no draw reached {} history sessions in {} attempts",
        config.min_history_sessions,
        config.max_attempts_per_user
    )))
}

fn simulate_windows(
    config: &GeneratorConfig,
    pop: &Population,
    rng: &mut ChaCha8Rng,
    user_id: u64,
    base_rate: f64,
    response_sign: f64,
) -> UserSim {
    let k = config.k_true_intents;
    let w = config.window_days as i64;
    let gap = Exp::new(1.0 / MEAN_EVENT_GAP_SECS).expect("valid rate");
    let favourite_client = Client::ALL[rng.random_range(0..3)];
    let mut mixture = sample_dirichlet(rng, config.dirichlet_alpha, k);
    let initial_valence = math::dot(&pop.valence, &mixture);

    let mut sim = UserSim {
        history: Vec::new(),
        future: Vec::new(),
        latest_delivery: None,
        trajectory: Vec::with_capacity(2 * w as usize),
    };

    for day in 0..2 * w {
        if day > 0 && rng.random::<f64>() < config.intent_drift_prob {
            mixture = sample_dirichlet(rng, config.dirichlet_alpha, k);
        }
        sim.trajectory.push(mixture.clone());
        let in_history = day < w;
        let signal = response_sign * (math::dot(&pop.valence, &mixture) - initial_valence);
        let window_factor = if in_history { 1.0 } else { config.future_rate_factor };
        let rate = (base_rate * window_factor * (1.0 + config.engagement_coupling * signal)).max(0.05 * base_rate);
        let n = poisson(rng, rate).min(MAX_SESSIONS_PER_DAY) as i64;
        let day_start = config.start_time + day * SECONDS_PER_DAY;

        if n > 0 {
            let slot = SECONDS_PER_DAY / n;
            // sessions stay strictly more than 30 minutes apart
            let max_duration = (slot / 2 - 1801).max(0);
            for j in 0..n {
                let start = day_start + j * slot + rng.random_range(0..slot / 2);
                let intent = sample_categorical(rng, &mixture);
                let n_events = rng.random_range(MIN_EVENTS..=MAX_EVENTS);
                let mut events = Vec::with_capacity(n_events);
                let mut t = start;
                for e in 0..n_events {
                    if e > 0 {
                        let step: f64 = gap.sample(rng);
                        t = (t + step as i64).min(start + max_duration);
                    }
                    let ty = sample_categorical(rng, &pop.topic_event[intent]);
                    events.push(UserEvent {
                        user_id,
                        event_type: EventType::ALL[ty],
                        timestamp: t,
                    });
                }
                let client = if rng.random::<f64>() < 0.8 {
                    favourite_client
                } else {
                    Client::ALL[rng.random_range(0..3)]
                };
                let session = Session {
                    user_id,
                    context: SessionContext {
                        start_time: start,
                        duration: t - start,
                        client,
                    },
                    events,
                };
                if in_history {
                    sim.history.push(session);
                } else {
                    sim.future.push(session);
                }
            }
        }

        if in_history && rng.random::<f64>() < DELIVERY_PROB_PER_DAY {
            sim.latest_delivery = Some(DeliveryMessage {
                user_id,
                channel: Channel::ALL[rng.random_range(0..Channel::ALL.len())],
                content: Content::ALL[rng.random_range(0..Content::ALL.len())],
                timestamp: day_start + rng.random_range(0..SECONDS_PER_DAY),
            });
        }
    }
    sim
}

/// Label class fractions: day-level (-1, 0, 1) and session-level (0, 1).
pub fn label_balance(labels: impl IntoIterator<Item = EngagementLabel>) -> ([f64; 3], [f64; 2]) {
    let mut day = [0usize; 3];
    let mut session = [0usize; 2];
    let mut n = 0usize;
    for l in labels {
        day[(l.day_level + 1) as usize] += 1;
        session[l.session_level as usize] += 1;
        n += 1;
    }
    let n = n.max(1) as f64;
    (
        [day[0] as f64 / n, day[1] as f64 / n, day[2] as f64 / n],
        [session[0] as f64 / n, session[1] as f64 / n],
    )
}

/// Target shares: day-level 2:2:1, session-level 3:2.
pub const TARGET_DAY_BALANCE: [f64; 3] = [0.4, 0.4, 0.2];
pub const TARGET_SESSION_BALANCE: [f64; 2] = [0.6, 0.4];
const BALANCE_TOLERANCE: f64 = 0.15;

pub fn balance_warnings(records: &[UserRecord]) -> Vec<String> {
    let (day, session) = label_balance(records.iter().map(|r| r.label));
    let mut warnings = Vec::new();
    if day
        .iter()
        .zip(TARGET_DAY_BALANCE)
        .any(|(a, b)| (a - b).abs() > BALANCE_TOLERANCE)
    {
        warnings.push(alloc::format!(
            "day-level label shares {:.3}/{:.3}/{:.3} far from 0.4/0.4/0.2",
            day[0],
            day[1],
            day[2]
        ));
    }
    if session
        .iter()
        .zip(TARGET_SESSION_BALANCE)
        .any(|(a, b)| (a - b).abs() > BALANCE_TOLERANCE)
    {
        warnings.push(alloc::format!(
            "session-level label shares {:.3}/{:.3} far from 0.6/0.4",
            session[0],
            session[1]
        ));
    }
    warnings
}

pub fn assemble(config: &GeneratorConfig, pop: Population, users: Vec<(UserRecord, UserTruth)>) -> GeneratedCorpus {
    let (records, truths): (Vec<_>, Vec<_>) = users.into_iter().unzip();
    let warnings = balance_warnings(&records);
    for w in &warnings {
        log::warn!("{w}");
    }
    GeneratedCorpus {
        records,
        truth: GroundTruth {
            topic_event: pop.topic_event,
            intent_valence: pop.valence,
            window_days: config.window_days,
            users: truths,
        },
        warnings,
    }
}

pub fn generate_corpus(config: &GeneratorConfig) -> Result<GeneratedCorpus> {
    let pop = Population::new(config)?;
    let users = (0..config.n_users)
        .map(|i| generate_user(config, &pop, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(config, pop, users))
}
