//! Policy engine and prioritization.
//!
//! A [`PolicySet`] is a declarative per-band document: tolerable I/N per
//! weather kind, exclusion-zone stepping, and the weights and score tables
//! used to rank secondary users. The engine itself holds no band-specific
//! numbers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ContextSnapshot, WeatherKind};

pub const POLICY_SCHEMA_VERSION: u32 = 1;

const DEFAULT_POLICY_TOML: &str = include_str!("../policies/12ghz_default.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy gap: no threshold for weather kind {0}")]
    Gap(WeatherKind),
    #[error("missing score for aspect {aspect} (key {key:?})")]
    MissingScore { aspect: Aspect, key: String },
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("policy parse error: {0}")]
    Parse(String),
}

/// Context aspect that contributes to a priority score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Weather,
    Traffic,
    UserClass,
    FirstResponder,
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aspect::Weather => "weather",
            Aspect::Traffic => "traffic",
            Aspect::UserClass => "user_class",
            Aspect::FirstResponder => "first_responder",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionZonePolicy {
    pub min_m: f64,
    pub max_m: f64,
    pub step_m: f64,
}

impl Default for ExclusionZonePolicy {
    fn default() -> Self {
        Self {
            min_m: 500.0,
            max_m: 5000.0,
            step_m: 500.0,
        }
    }
}

impl ExclusionZonePolicy {
    /// `⌈(max − min)/step⌉ + 1`.
    pub fn max_iterations(&self) -> usize {
        ((self.max_m - self.min_m) / self.step_m).ceil() as usize + 1
    }

    /// Radii visited by a full sweep, `min, min+step, …` up to `max`.
    pub fn radii(&self) -> Vec<f64> {
        (0..self.max_iterations())
            .map(|i| self.min_m + i as f64 * self.step_m)
            .filter(|r| *r <= self.max_m + 1e-9)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RevocationPolicy {
    #[serde(default)]
    pub individual_offset_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySet {
    pub schema_version: u32,
    pub band: String,
    pub version: String,
    pub thresholds_db: BTreeMap<WeatherKind, f64>,
    #[serde(default)]
    pub revocation: RevocationPolicy,
    #[serde(default)]
    pub exclusion_zone: ExclusionZonePolicy,
    pub weights: BTreeMap<Aspect, f64>,
    pub scores: BTreeMap<Aspect, BTreeMap<String, f64>>,
}

impl PolicySet {
    /// The shipped 12 GHz policy.
    pub fn default_12ghz() -> Self {
        Self::from_toml(DEFAULT_POLICY_TOML).expect("shipped policy is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, PolicyError> {
        let p: PolicySet = toml::from_str(text).map_err(|e| PolicyError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("policy serializes")
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let invalid = |m: String| Err(PolicyError::Invalid(m));
        if self.schema_version != POLICY_SCHEMA_VERSION {
            return invalid(format!(
                "unsupported schema_version {} (expected {POLICY_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if let Some((k, v)) = self.thresholds_db.iter().find(|(_, v)| !v.is_finite()) {
            return invalid(format!("threshold for {k} is not finite ({v})"));
        }
        for wet in [WeatherKind::RainSnow, WeatherKind::Extreme] {
            for dry in [WeatherKind::Clear, WeatherKind::Cloudy] {
                if let (Some(w), Some(d)) = (self.thresholds_db.get(&wet), self.thresholds_db.get(&dry)) {
                    if w > d {
                        return invalid(format!(
                            "rainy threshold must not exceed sunny threshold: {wet} {w} dB > {dry} {d} dB"
                        ));
                    }
                }
            }
        }
        if !self.revocation.individual_offset_db.is_finite() {
            return invalid("individual_offset_db must be finite".into());
        }
        let ez = &self.exclusion_zone;
        if !(ez.min_m >= 0.0 && ez.step_m > 0.0 && ez.min_m <= ez.max_m && ez.max_m.is_finite()) {
            return invalid(format!(
                "exclusion zone needs 0 <= min ({}) <= max ({}) and step ({}) > 0",
                ez.min_m, ez.max_m, ez.step_m
            ));
        }
        let mut sum = 0.0;
        for (aspect, w) in &self.weights {
            if !(*w >= 0.0) || !w.is_finite() {
                return invalid(format!("weight for {aspect} must be a finite value >= 0"));
            }
            if *w > 0.0 && !self.scores.contains_key(aspect) {
                return invalid(format!("aspect {aspect} has a weight but no score table"));
            }
            sum += w;
        }
        if !(sum > 0.0) {
            return invalid("weights must not all be zero".into());
        }
        for (aspect, table) in &self.scores {
            if let Some((k, v)) = table.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return invalid(format!("score {aspect}.{k} = {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// Weights rescaled to sum to one.
    pub fn normalized_weights(&self) -> BTreeMap<Aspect, f64> {
        let sum: f64 = self.weights.values().sum();
        self.weights.iter().map(|(a, w)| (*a, w / sum)).collect()
    }

    pub fn individual_threshold(&self, aggregate_threshold_db: f64) -> f64 {
        aggregate_threshold_db + self.revocation.individual_offset_db
    }
}

/// Tolerable aggregate I/N for the context's weather.
pub fn threshold_for(context: &ContextSnapshot, policy: &PolicySet) -> Result<f64, PolicyError> {
    policy
        .thresholds_db
        .get(&context.weather_kind)
        .copied()
        .ok_or(PolicyError::Gap(context.weather_kind))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeneralSubclass {
    Educational,
    Scientific,
    Governmental,
    Commercial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum UserClass {
    /// Federal, incumbent-adjacent.
    Federal,
    Priority,
    General(GeneralSubclass),
}

impl UserClass {
    pub const ALL: [UserClass; 6] = [
        UserClass::Federal,
        UserClass::Priority,
        UserClass::General(GeneralSubclass::Educational),
        UserClass::General(GeneralSubclass::Scientific),
        UserClass::General(GeneralSubclass::Governmental),
        UserClass::General(GeneralSubclass::Commercial),
    ];

    pub fn key(&self) -> &'static str {
        match self {
            UserClass::Federal => "federal",
            UserClass::Priority => "priority",
            UserClass::General(GeneralSubclass::Educational) => "educational",
            UserClass::General(GeneralSubclass::Scientific) => "scientific",
            UserClass::General(GeneralSubclass::Governmental) => "governmental",
            UserClass::General(GeneralSubclass::Commercial) => "commercial",
        }
    }
}

impl From<UserClass> for String {
    fn from(c: UserClass) -> Self {
        c.key().to_string()
    }
}

impl TryFrom<String> for UserClass {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let key = s.strip_prefix("general:").unwrap_or(&s);
        UserClass::ALL
            .into_iter()
            .find(|c| c.key() == key)
            .ok_or_else(|| format!("unknown user class {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficType {
    RealtimeVoice,
    StreamingVideo,
    EmergencyVideo,
    Bulk,
}

impl TrafficType {
    pub const ALL: [TrafficType; 4] = [
        TrafficType::RealtimeVoice,
        TrafficType::StreamingVideo,
        TrafficType::EmergencyVideo,
        TrafficType::Bulk,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            TrafficType::RealtimeVoice => "realtime_voice",
            TrafficType::StreamingVideo => "streaming_video",
            TrafficType::EmergencyVideo => "emergency_video",
            TrafficType::Bulk => "bulk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecondaryUser {
    pub id: String,
    pub user_class: UserClass,
    pub traffic_type: TrafficType,
    #[serde(default)]
    pub first_responder: bool,
}

fn aspect_key(aspect: Aspect, user: &SecondaryUser, context: &ContextSnapshot) -> &'static str {
    match aspect {
        Aspect::Weather => context.weather_kind.as_str(),
        Aspect::Traffic => user.traffic_type.key(),
        Aspect::UserClass => user.user_class.key(),
        Aspect::FirstResponder => {
            if user.first_responder {
                "yes"
            } else {
                "no"
            }
        }
    }
}

/// Weighted sum of the user's aspect scores, in `[0, 1]`.
pub fn priority_score(user: &SecondaryUser, context: &ContextSnapshot, policy: &PolicySet) -> Result<f64, PolicyError> {
    let mut score = 0.0;
    for (aspect, w) in policy.normalized_weights() {
        if w == 0.0 {
            continue;
        }
        let key = aspect_key(aspect, user, context);
        let s = policy
            .scores
            .get(&aspect)
            .and_then(|t| t.get(key))
            .ok_or_else(|| PolicyError::MissingScore {
                aspect,
                key: key.to_string(),
            })?;
        score += w * s;
    }
    Ok(score.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityRecord {
    pub user_id: String,
    pub score: f64,
    pub context_snapshot_id: String,
    pub computed_at: i64,
    #[serde(default)]
    pub stale: bool,
}

/// Registered secondary users and their current priority records.
#[derive(Debug, Clone, Default)]
pub struct PriorityBook {
    users: BTreeMap<String, SecondaryUser>,
    records: BTreeMap<String, PriorityRecord>,
}

impl PriorityBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers (or replaces) a user and scores it under `context`.
    pub fn register(
        &mut self,
        user: SecondaryUser,
        context: &ContextSnapshot,
        policy: &PolicySet,
        now: i64,
    ) -> Result<&PriorityRecord, PolicyError> {
        let record = PriorityRecord {
            user_id: user.id.clone(),
            score: priority_score(&user, context, policy)?,
            context_snapshot_id: context.id.clone(),
            computed_at: now,
            stale: false,
        };
        let id = user.id.clone();
        self.users.insert(id.clone(), user);
        self.records.insert(id.clone(), record);
        Ok(&self.records[&id])
    }

    /// Rescores every user under a new context. Records keep their previous
    /// value, flagged stale, if rescoring fails.
    pub fn on_context(&mut self, context: &ContextSnapshot, policy: &PolicySet, now: i64) -> Result<(), PolicyError> {
        let mut first_err = None;
        for (id, user) in &self.users {
            match priority_score(user, context, policy) {
                Ok(score) => {
                    self.records.insert(
                        id.clone(),
                        PriorityRecord {
                            user_id: id.clone(),
                            score,
                            context_snapshot_id: context.id.clone(),
                            computed_at: now,
                            stale: false,
                        },
                    );
                }
                Err(e) => {
                    if let Some(r) = self.records.get_mut(id) {
                        r.stale = true;
                    }
                    first_err.get_or_insert(e);
                }
            }
        }
        first_err.map_or(Ok(()), Err)
    }

    /// Flags records computed under any context other than `current_id`.
    pub fn mark_stale_except(&mut self, current_id: &str) {
        for r in self.records.values_mut() {
            r.stale = r.context_snapshot_id != current_id;
        }
    }

    pub fn record(&self, user_id: &str) -> Option<&PriorityRecord> {
        self.records.get(user_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &PriorityRecord> {
        self.records.values()
    }

    /// Users by descending score, ties by id.
    pub fn ranking(&self) -> Vec<&PriorityRecord> {
        let mut v: Vec<_> = self.records.values().collect();
        v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.user_id.cmp(&b.user_id)));
        v
    }
}
