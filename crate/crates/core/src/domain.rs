//! Users, events, sessions, delivery messages and engagement labels.
//!
//! Timestamps are UTC seconds since the epoch. Day boundaries are UTC
//! midnights, and a session is attributed to the day it starts on.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub const N_EVENT_TYPES: usize = 10;
pub const SECONDS_PER_DAY: i64 = 86_400;
/// Default inactivity gap that closes a session (30 minutes).
pub const DEFAULT_SESSION_GAP_SECS: i64 = 30 * 60;

pub const CONTEXT_DIM: usize = 6;
pub const SESSION_INPUT_DIM: usize = N_EVENT_TYPES + CONTEXT_DIM;
pub const MACRO_DIM: usize = 4;
pub const DELIVERY_DIM: usize = 9;

pub type UserId = u64;

/// The ten tracked event types. Serialized as their 1-based id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum EventType {
    Feed,
    Search,
    ViewProfile,
    Jobs,
    Pymk,
    Notification,
    Message,
    EditProfile,
    ShareContent,
    Follow,
}

impl EventType {
    pub const ALL: [EventType; N_EVENT_TYPES] = [
        EventType::Feed,
        EventType::Search,
        EventType::ViewProfile,
        EventType::Jobs,
        EventType::Pymk,
        EventType::Notification,
        EventType::Message,
        EventType::EditProfile,
        EventType::ShareContent,
        EventType::Follow,
    ];

    /// Zero-based position, used as the vocabulary index.
    pub fn index(self) -> usize {
        self as usize
    }

    /// One-based id as listed in the event table.
    pub fn id(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EventType::Feed => "Feed",
            EventType::Search => "Search",
            EventType::ViewProfile => "View Profile",
            EventType::Jobs => "Jobs",
            EventType::Pymk => "PYMK",
            EventType::Notification => "Notification",
            EventType::Message => "Message",
            EventType::EditProfile => "Edit Profile",
            EventType::ShareContent => "Share Content",
            EventType::Follow => "Follow",
        }
    }
}

impl TryFrom<u8> for EventType {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        match id {
            1..=10 => Ok(Self::ALL[id as usize - 1]),
            _ => Err(Error::InvalidArgument(alloc::format!(
                "event type id {id} outside 1..=10"
            ))),
        }
    }
}

impl From<EventType> for u8 {
    fn from(e: EventType) -> u8 {
        e.id()
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserEvent {
    pub user_id: UserId,
    pub event_type: EventType,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Client {
    DesktopWeb,
    MobileWeb,
    App,
}

impl Client {
    pub const ALL: [Client; 3] = [Client::DesktopWeb, Client::MobileWeb, Client::App];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionContext {
    pub start_time: i64,
    pub duration: i64,
    pub client: Client,
}

impl SessionContext {
    /// `[hour/24, weekday/7, ln(1+duration)/ln(1+86400), desktop, mobile, app]`,
    /// with weekday 0 = Monday.
    pub fn encode(&self) -> [f64; CONTEXT_DIM] {
        let day = self.start_time.div_euclid(SECONDS_PER_DAY);
        let hour = self.start_time.rem_euclid(SECONDS_PER_DAY) / 3600;
        // 1970-01-01 was a Thursday.
        let weekday = (day + 3).rem_euclid(7);
        let duration = math::ln_1p(self.duration.max(0) as f64) / math::ln_1p(SECONDS_PER_DAY as f64);
        let mut out = [0.0; CONTEXT_DIM];
        out[0] = hour as f64 / 24.0;
        out[1] = weekday as f64 / 7.0;
        out[2] = duration;
        out[3 + self.client as usize] = 1.0;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub user_id: UserId,
    pub context: SessionContext,
    pub events: Vec<UserEvent>,
}

impl Session {
    /// A valid session has at least one tracked event.
    pub fn is_valid(&self) -> bool {
        !self.events.is_empty()
    }

    /// UTC day index of the session start.
    pub fn start_day(&self) -> i64 {
        self.context.start_time.div_euclid(SECONDS_PER_DAY)
    }

    pub fn validate(&self) -> Result<()> {
        if self.context.start_time < 0 || self.context.duration < 0 {
            return Err(Error::InvalidArgument("negative session time".into()));
        }
        let mut prev = i64::MIN;
        for e in &self.events {
            if e.user_id != self.user_id {
                return Err(Error::InvalidArgument(alloc::format!(
                    "event of user {} inside session of user {}",
                    e.user_id,
                    self.user_id
                )));
            }
            if e.timestamp < 0 || e.timestamp < prev {
                return Err(Error::InvalidArgument("events out of order".into()));
            }
            prev = e.timestamp;
        }
        Ok(())
    }
}

/// Normalized event-type histogram of one session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventFrequency {
    pub freq: [f64; N_EVENT_TYPES],
}

impl EventFrequency {
    /// All-zero padding sentinel.
    pub const ZERO: EventFrequency = EventFrequency {
        freq: [0.0; N_EVENT_TYPES],
    };

    pub fn as_slice(&self) -> &[f64] {
        &self.freq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Email,
    Sms,
    InAppPush,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Email, Channel::Sms, Channel::InAppPush];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Content {
    Feed,
    Jobs,
    Pymk,
    Message,
    Other,
}

impl Content {
    pub const ALL: [Content; 5] = [
        Content::Feed,
        Content::Jobs,
        Content::Pymk,
        Content::Message,
        Content::Other,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryMessage {
    pub user_id: UserId,
    pub channel: Channel,
    pub content: Content,
    pub timestamp: i64,
}

/// User-level covariates. Counts are stored already log-scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroFeatures {
    /// ln(1 + connections)
    pub connection_count: f64,
    pub avg_sessions_per_day_past: f64,
    pub avg_active_day_rate_past: f64,
    /// ln(1 + account age in days)
    pub account_age_days: f64,
}

impl MacroFeatures {
    pub fn to_vec(&self) -> [f64; MACRO_DIM] {
        [
            self.connection_count,
            self.avg_sessions_per_day_past,
            self.avg_active_day_rate_past,
            self.account_age_days,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidArgument("macro features must be finite and >= 0".into()));
        }
        if self.avg_active_day_rate_past > 1.0 {
            return Err(Error::InvalidArgument("avg_active_day_rate_past above 1".into()));
        }
        Ok(())
    }
}

/// Trend labels comparing the history window (h) with the following window (f).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementLabel {
    /// -1 if active-day rate fell, 0 if unchanged, 1 if it rose.
    pub day_level: i8,
    /// 0 if the session rate fell, 1 otherwise.
    pub session_level: u8,
}

impl EngagementLabel {
    /// Comparison of the two engagement metrics across windows.
    pub fn from_rates(d_hist: f64, d_future: f64, s_hist: f64, s_future: f64) -> Self {
        let day_level = if d_hist > d_future {
            -1
        } else if d_hist < d_future {
            1
        } else {
            0
        };
        let session_level = if s_hist > s_future { 0 } else { 1 };
        EngagementLabel {
            day_level,
            session_level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    #[serde(rename = "macro")]
    pub macro_features: MacroFeatures,
    pub sessions: Vec<Session>,
    pub latest_delivery: Option<DeliveryMessage>,
    pub label: EngagementLabel,
}

impl UserRecord {
    pub fn validate(&self) -> Result<()> {
        self.macro_features.validate()?;
        if self.sessions.is_empty() {
            return Err(Error::EmptyInput("user record has no sessions"));
        }
        let mut prev = i64::MIN;
        for s in &self.sessions {
            s.validate()?;
            if s.context.start_time < prev {
                return Err(Error::InvalidArgument("sessions out of order".into()));
            }
            prev = s.context.start_time;
        }
        if !matches!(self.label.day_level, -1..=1) || self.label.session_level > 1 {
            return Err(Error::InvalidArgument("label out of range".into()));
        }
        Ok(())
    }
}

pub fn event_frequency(session: &Session) -> Result<EventFrequency> {
    if session.events.is_empty() {
        return Err(Error::EmptySession);
    }
    let mut counts = [0usize; N_EVENT_TYPES];
    for e in &session.events {
        counts[e.event_type.index()] += 1;
    }
    let total = session.events.len() as f64;
    let mut freq = [0.0; N_EVENT_TYPES];
    for (f, c) in freq.iter_mut().zip(counts) {
        *f = c as f64 / total;
    }
    Ok(EventFrequency { freq })
}

fn active_day_count(sessions: &[Session]) -> usize {
    let mut days: Vec<i64> = sessions
        .iter()
        .filter(|s| s.is_valid())
        .map(Session::start_day)
        .collect();
    days.sort_unstable();
    days.dedup();
    days.len()
}

fn valid_session_count(sessions: &[Session]) -> usize {
    sessions.iter().filter(|s| s.is_valid()).count()
}

/// Fraction of days in the window with at least one valid session.
pub fn average_active_days(sessions: &[Session], window_days: u32) -> Result<f64> {
    if window_days == 0 {
        return Err(Error::InvalidWindow);
    }
    Ok(active_day_count(sessions) as f64 / window_days as f64)
}

/// Valid sessions per day over the window.
pub fn average_session_numbers(sessions: &[Session], window_days: u32) -> Result<f64> {
    if window_days == 0 {
        return Err(Error::InvalidWindow);
    }
    Ok(valid_session_count(sessions) as f64 / window_days as f64)
}

/// Labels a user from two equal-length windows. Both metrics share the
/// denominator, so the comparison is done on exact integer counts.
pub fn compute_label(history: &[Session], future: &[Session], window_days: u32) -> Result<EngagementLabel> {
    if window_days == 0 {
        return Err(Error::InvalidWindow);
    }
    let (dh, df) = (active_day_count(history), active_day_count(future));
    let (sh, sf) = (valid_session_count(history), valid_session_count(future));
    Ok(EngagementLabel {
        day_level: match dh.cmp(&df) {
            core::cmp::Ordering::Greater => -1,
            core::cmp::Ordering::Equal => 0,
            core::cmp::Ordering::Less => 1,
        },
        session_level: u8::from(sh <= sf),
    })
}

/// Splits one user's time-ordered events into sessions, closing a session
/// when the gap to the next event exceeds `gap_secs`.
pub fn sessionize(events: &[UserEvent], client: Client, gap_secs: i64) -> Result<Vec<Session>> {
    let mut sorted: Vec<UserEvent> = events.to_vec();
    sorted.sort_by_key(|e| e.timestamp);
    let mut sessions: Vec<Session> = Vec::new();
    let mut current: Vec<UserEvent> = Vec::new();
    for e in sorted {
        if let Some(first) = current.first() {
            if e.user_id != first.user_id {
                return Err(Error::InvalidArgument("events of several users".into()));
            }
            let last = current[current.len() - 1].timestamp;
            if e.timestamp - last > gap_secs {
                sessions.push(close_session(core::mem::take(&mut current), client));
            }
        }
        current.push(e);
    }
    if !current.is_empty() {
        sessions.push(close_session(current, client));
    }
    Ok(sessions)
}

fn close_session(events: Vec<UserEvent>, client: Client) -> Session {
    let start = events[0].timestamp;
    let end = events[events.len() - 1].timestamp;
    Session {
        user_id: events[0].user_id,
        context: SessionContext {
            start_time: start,
            duration: end - start,
            client,
        },
        events,
    }
}

/// Dense model inputs for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub macro_vec: [f64; MACRO_DIM],
    /// `[present, email, sms, in-app-push, feed, jobs, pymk, message, other]`;
    /// all zeros when no message was delivered.
    pub delivery_vec: [f64; DELIVERY_DIM],
    /// Row-major `T x SESSION_INPUT_DIM`: event frequencies then encoded context.
    pub session_inputs: Vec<f64>,
}

impl Features {
    pub fn n_sessions(&self) -> usize {
        self.session_inputs.len() / SESSION_INPUT_DIM
    }

    pub fn session_input(&self, t: usize) -> &[f64] {
        &self.session_inputs[t * SESSION_INPUT_DIM..(t + 1) * SESSION_INPUT_DIM]
    }

    pub fn frequency(&self, t: usize) -> &[f64] {
        &self.session_input(t)[..N_EVENT_TYPES]
    }
}

pub fn encode_delivery(delivery: Option<&DeliveryMessage>) -> [f64; DELIVERY_DIM] {
    let mut out = [0.0; DELIVERY_DIM];
    if let Some(d) = delivery {
        out[0] = 1.0;
        out[1 + d.channel as usize] = 1.0;
        out[4 + d.content as usize] = 1.0;
    }
    out
}

pub fn featurize(record: &UserRecord) -> Result<Features> {
    let mut session_inputs = Vec::with_capacity(record.sessions.len() * SESSION_INPUT_DIM);
    for s in &record.sessions {
        let freq = event_frequency(s)?;
        session_inputs.extend_from_slice(&freq.freq);
        session_inputs.extend_from_slice(&s.context.encode());
    }
    Ok(Features {
        macro_vec: record.macro_features.to_vec(),
        delivery_vec: encode_delivery(record.latest_delivery.as_ref()),
        session_inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn session(user: UserId, start: i64, types: &[EventType]) -> Session {
        Session {
            user_id: user,
            context: SessionContext {
                start_time: start,
                duration: types.len() as i64,
                client: Client::App,
            },
            events: types
                .iter()
                .enumerate()
                .map(|(i, &t)| UserEvent {
                    user_id: user,
                    event_type: t,
                    timestamp: start + i as i64,
                })
                .collect(),
        }
    }

    fn on_day(day: i64) -> Session {
        session(1, day * SECONDS_PER_DAY + 3600, &[EventType::Feed])
    }

    #[test]
    fn frequency_of_hundred_events() {
        let mut types = vec![EventType::Feed; 10];
        types.extend(vec![EventType::Jobs; 90]);
        let f = event_frequency(&session(1, 0, &types)).unwrap();
        assert_eq!(f.freq[EventType::Feed.index()], 0.1);
        assert!((f.freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frequency_degenerate_and_mixed() {
        let f = event_frequency(&session(1, 0, &[EventType::Follow; 7])).unwrap();
        assert_eq!(f.freq[9], 1.0);
        assert_eq!(f.freq[..9].iter().sum::<f64>(), 0.0);

        let f = event_frequency(&session(
            1,
            0,
            &[EventType::Feed, EventType::Feed, EventType::Jobs, EventType::Search],
        ))
        .unwrap();
        assert_eq!(f.freq, [0.5, 0.25, 0.0, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn frequency_rejects_empty() {
        assert_eq!(event_frequency(&session(1, 0, &[])), Err(Error::EmptySession));
    }

    #[test]
    fn active_days_ratio() {
        let sessions: Vec<Session> = (0..7).map(|d| on_day(d * 2)).collect();
        assert_eq!(average_active_days(&sessions, 14).unwrap(), 0.5);
        assert_eq!(average_active_days(&[], 14).unwrap(), 0.0);
        let same_day = vec![on_day(2), on_day(2), on_day(2)];
        assert_eq!(average_active_days(&same_day, 14).unwrap(), 1.0 / 14.0);
        assert_eq!(average_active_days(&same_day, 0), Err(Error::InvalidWindow));
    }

    #[test]
    fn session_numbers_ratio() {
        let sessions: Vec<Session> = (0..28).map(|i| on_day(i % 14)).collect();
        assert_eq!(average_session_numbers(&sessions, 14).unwrap(), 2.0);
        let with_empty = vec![on_day(0), on_day(1), session(1, 5, &[])];
        assert_eq!(average_session_numbers(&with_empty, 14).unwrap(), 2.0 / 14.0);
        assert_eq!(average_session_numbers(&[], 14).unwrap(), 0.0);
        assert_eq!(average_session_numbers(&[], 0), Err(Error::InvalidWindow));
    }

    #[test]
    fn empty_sessions_do_not_make_active_days() {
        let sessions = vec![session(1, 0, &[]), on_day(3)];
        assert_eq!(average_active_days(&sessions, 14).unwrap(), 1.0 / 14.0);
    }

    #[test]
    fn labels_follow_the_comparison_table() {
        let l = EngagementLabel::from_rates(0.5, 0.3, 1.0, 1.0);
        assert_eq!(l.day_level, -1);
        let l = EngagementLabel::from_rates(0.5, 0.5, 2.0, 2.0);
        assert_eq!((l.day_level, l.session_level), (0, 1));
        let l = EngagementLabel::from_rates(0.2, 0.5, 2.5, 2.0);
        assert_eq!((l.day_level, l.session_level), (1, 0));

        let h: Vec<Session> = (0..5).map(on_day).collect();
        let l = compute_label(&h, &h, 14).unwrap();
        assert_eq!((l.day_level, l.session_level), (0, 1));
        let f: Vec<Session> = (0..3).map(on_day).collect();
        let l = compute_label(&h, &f, 14).unwrap();
        assert_eq!((l.day_level, l.session_level), (-1, 0));
    }

    #[test]
    fn context_encoding_is_documented_order() {
        // 2024-01-03 is a Wednesday; 12:00 UTC.
        let start = 1_704_240_000 + 12 * 3600;
        let ctx = SessionContext {
            start_time: start,
            duration: 300,
            client: Client::App,
        };
        let enc = ctx.encode();
        let expected = [
            0.5,
            2.0 / 7.0,
            libm::log1p(300.0) / libm::log1p(86_400.0),
            0.0,
            0.0,
            1.0,
        ];
        assert_eq!(enc, expected);
    }

    #[test]
    fn featurize_shapes_and_sentinels() {
        let record = UserRecord {
            macro_features: MacroFeatures {
                connection_count: 3.0,
                avg_sessions_per_day_past: 1.5,
                avg_active_day_rate_past: 0.6,
                account_age_days: 5.0,
            },
            sessions: (0..7).map(on_day).collect(),
            latest_delivery: None,
            label: EngagementLabel {
                day_level: 0,
                session_level: 1,
            },
        };
        let f = featurize(&record).unwrap();
        assert_eq!(f.n_sessions(), 7);
        assert_eq!(f.session_input(6).len(), N_EVENT_TYPES + CONTEXT_DIM);
        assert_eq!(f.delivery_vec, [0.0; DELIVERY_DIM]);
        assert_eq!(f, featurize(&record).unwrap());

        let d = DeliveryMessage {
            user_id: 1,
            channel: Channel::Sms,
            content: Content::Message,
            timestamp: 10,
        };
        assert_eq!(
            encode_delivery(Some(&d)),
            [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn sessionize_splits_on_gap() {
        let ev = |t| UserEvent {
            user_id: 4,
            event_type: EventType::Search,
            timestamp: t,
        };
        let events = vec![ev(0), ev(100), ev(100 + 1800), ev(100 + 1801 + 1800)];
        let sessions = sessionize(&events, Client::MobileWeb, DEFAULT_SESSION_GAP_SECS).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].events.len(), 3);
        assert_eq!(sessions[0].context.duration, 1900);
    }

    #[test]
    fn event_type_serializes_as_id() {
        let s = serde_json::to_string(&EventType::Pymk).unwrap();
        assert_eq!(s, "5");
        let back: EventType = serde_json::from_str("10").unwrap();
        assert_eq!(back, EventType::Follow);
        assert!(serde_json::from_str::<EventType>("0").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_types() -> impl Strategy<Value = Vec<EventType>> {
            proptest::collection::vec((0usize..10).prop_map(|i| EventType::ALL[i]), 1..200)
        }

        proptest! {
            #[test]
            fn frequencies_sum_to_one(types in arb_types()) {
                let f = event_frequency(&session(1, 0, &types)).unwrap();
                prop_assert!((f.freq.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(f.freq.iter().all(|&x| x >= 0.0));
            }

            #[test]
            fn metrics_invariant_to_whole_day_shift(
                days in proptest::collection::vec((0i64..14, 0i64..86_000), 0..40),
                shift in 0i64..1000,
            ) {
                let a: Vec<Session> = days.iter().map(|&(d, s)| session(1, d * SECONDS_PER_DAY + s, &[EventType::Feed])).collect();
                let b: Vec<Session> = days.iter().map(|&(d, s)| session(1, (d + shift) * SECONDS_PER_DAY + s, &[EventType::Feed])).collect();
                prop_assert_eq!(average_active_days(&a, 14).unwrap(), average_active_days(&b, 14).unwrap());
                prop_assert_eq!(average_session_numbers(&a, 14).unwrap(), average_session_numbers(&b, 14).unwrap());
            }

            #[test]
            fn label_trichotomy(h in 0usize..20, f in 0usize..20) {
                let hs: Vec<Session> = (0..h as i64).map(on_day).collect();
                let fs: Vec<Session> = (0..f as i64).map(on_day).collect();
                let l = compute_label(&hs, &fs, 28).unwrap();
                let expected_day = (f as i64 - h as i64).signum() as i8;
                prop_assert_eq!(l.day_level, expected_day);
                prop_assert_eq!(l.session_level, u8::from(h <= f));
            }
        }
    }
}
