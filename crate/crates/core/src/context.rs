//! Context broker: pluggable providers, cached timestamped snapshots and
//! change subscriptions.
//!
//! Weather is the only context kind with shipped providers: a CSV trace
//! (`unix_time,kind,rain_rate`) for reproducible experiments, a fixed-value
//! override, and an adapter for OpenWeatherMap-shaped JSON.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex, Weak};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::GeoPoint;

/// Rain rate at and above which an alert upgrades rain to `extreme`, mm/h.
pub const EXTREME_RAIN_MM_PER_HR: f64 = 10.0;

/// Environment variable naming the OpenWeatherMap-style endpoint.
pub const WEATHER_ENDPOINT_ENV: &str = "COEXIST_WEATHER_ENDPOINT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContextError {
    #[error("context unavailable: {0}")]
    Unavailable(String),
    #[error("invalid context: {0}")]
    Invalid(String),
    #[error("weather trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("weather response: {0}")]
    Response(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Weather,
    UserTraffic,
}

impl fmt::Display for ContextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextKind::Weather => "weather",
            ContextKind::UserTraffic => "user_traffic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherKind {
    Clear,
    Cloudy,
    RainSnow,
    Extreme,
}

impl WeatherKind {
    pub const ALL: [WeatherKind; 4] = [
        WeatherKind::Clear,
        WeatherKind::Cloudy,
        WeatherKind::RainSnow,
        WeatherKind::Extreme,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WeatherKind::Clear => "clear",
            WeatherKind::Cloudy => "cloudy",
            WeatherKind::RainSnow => "rain_snow",
            WeatherKind::Extreme => "extreme",
        }
    }

    /// Classification when a provider reports only a rate.
    pub fn from_rain_rate(rain_rate_mm_per_hr: f64, alert: bool) -> Self {
        if rain_rate_mm_per_hr <= 0.0 {
            WeatherKind::Clear
        } else if alert && rain_rate_mm_per_hr >= EXTREME_RAIN_MM_PER_HR {
            WeatherKind::Extreme
        } else {
            WeatherKind::RainSnow
        }
    }
}

impl fmt::Display for WeatherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for WeatherKind {
    type Err = ContextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clear" | "sunny" => Ok(WeatherKind::Clear),
            "cloudy" | "clouds" => Ok(WeatherKind::Cloudy),
            "rain_snow" | "rain" | "snow" | "rainy" => Ok(WeatherKind::RainSnow),
            "extreme" => Ok(WeatherKind::Extreme),
            other => Err(ContextError::Invalid(format!("unknown weather kind {other:?}"))),
        }
    }
}

/// One weather reading as reported by a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: i64,
    pub weather_kind: WeatherKind,
    pub rain_rate_mm_per_hr: f64,
    /// Key under which the provider can return the raw record.
    pub record_key: String,
}

impl Observation {
    pub fn validate(&self) -> Result<(), ContextError> {
        let rate = self.rain_rate_mm_per_hr;
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(ContextError::Invalid(format!("rain rate {rate} must be >= 0")));
        }
        if rate > 0.0 && !matches!(self.weather_kind, WeatherKind::RainSnow | WeatherKind::Extreme) {
            return Err(ContextError::Invalid(format!(
                "rain rate {rate} mm/h is inconsistent with weather kind {}",
                self.weather_kind
            )));
        }
        Ok(())
    }

    fn same_value(&self, other: &Observation) -> bool {
        self.weather_kind == other.weather_kind && self.rain_rate_mm_per_hr == other.rain_rate_mm_per_hr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider_id: String,
    pub record_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub id: String,
    pub kind: ContextKind,
    pub timestamp: i64,
    pub weather_kind: WeatherKind,
    pub rain_rate_mm_per_hr: f64,
    pub location: GeoPoint,
    pub provenance: Provenance,
    #[serde(default)]
    pub stale: bool,
}

impl ContextSnapshot {
    fn from_observation(
        kind: ContextKind,
        provider_id: &str,
        obs: Observation,
        location: GeoPoint,
        stale: bool,
    ) -> Self {
        Self {
            id: format!("{provider_id}:{kind}:{}:{}", obs.timestamp, obs.record_key),
            kind,
            timestamp: obs.timestamp,
            weather_kind: obs.weather_kind,
            rain_rate_mm_per_hr: obs.rain_rate_mm_per_hr,
            location,
            provenance: Provenance {
                provider_id: provider_id.to_string(),
                record_key: obs.record_key,
            },
            stale,
        }
    }

    /// Snapshot for a fixed weather condition, outside any broker.
    pub fn fixed(
        weather_kind: WeatherKind,
        rain_rate_mm_per_hr: f64,
        location: GeoPoint,
    ) -> Result<Self, ContextError> {
        let obs = Observation {
            timestamp: 0,
            weather_kind,
            rain_rate_mm_per_hr,
            record_key: format!("{weather_kind}@{rain_rate_mm_per_hr}"),
        };
        obs.validate()?;
        Ok(Self::from_observation(
            ContextKind::Weather,
            "fixed",
            obs,
            location,
            false,
        ))
    }

    pub fn clear(location: GeoPoint) -> Self {
        Self::fixed(WeatherKind::Clear, 0.0, location).expect("clear sky is valid")
    }

    pub fn rain(rain_rate_mm_per_hr: f64, location: GeoPoint) -> Result<Self, ContextError> {
        Self::fixed(
            WeatherKind::from_rain_rate(rain_rate_mm_per_hr, false),
            rain_rate_mm_per_hr,
            location,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub kinds: Vec<ContextKind>,
    /// Cached snapshots younger than this are served without a fetch, s.
    pub refresh_period_s: i64,
    /// Observations older than this are flagged stale, s.
    pub max_age_s: i64,
}

/// Read-only source of context observations.
pub trait ContextProvider: Send + Sync {
    fn id(&self) -> &str;
    fn capability(&self) -> Capability;
    fn observe(&self, kind: ContextKind, location: GeoPoint, time: i64) -> Result<Observation, ContextError>;
    /// Raw record behind an observation, as the provider received it.
    fn raw_record(&self, record_key: &str) -> Option<String>;
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct TraceEntry {
    time: i64,
    kind: WeatherKind,
    rate: f64,
    raw: String,
}

/// Weather from a CSV trace `unix_time,kind,rain_rate`. An empty kind is
/// derived from the rate.
#[derive(Debug, Clone)]
pub struct FileTraceProvider {
    id: String,
    entries: Vec<TraceEntry>,
    refresh_period_s: i64,
    max_age_s: i64,
}

impl FileTraceProvider {
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, ContextError> {
        let mut entries: Vec<TraceEntry> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if line_no == 1 && fields.first() == Some(&"unix_time") {
                continue;
            }
            let err = |message: String| ContextError::Trace { line: line_no, message };
            if fields.len() < 3 {
                return Err(err("expected unix_time,kind,rain_rate".into()));
            }
            let time: i64 = fields[0]
                .parse()
                .map_err(|_| err(format!("bad unix_time {:?}", fields[0])))?;
            let rate: f64 = fields[2]
                .parse()
                .map_err(|_| err(format!("bad rain_rate {:?}", fields[2])))?;
            let kind = if fields[1].is_empty() {
                WeatherKind::from_rain_rate(rate, false)
            } else {
                fields[1].parse().map_err(|e: ContextError| err(e.to_string()))?
            };
            let obs = Observation {
                timestamp: time,
                weather_kind: kind,
                rain_rate_mm_per_hr: rate,
                record_key: String::new(),
            };
            obs.validate().map_err(|e| err(e.to_string()))?;
            if let Some(last) = entries.last() {
                if time < last.time {
                    return Err(err("trace timestamps must be non-decreasing".into()));
                }
            }
            entries.push(TraceEntry {
                time,
                kind,
                rate,
                raw: trimmed.to_string(),
            });
        }
        Ok(Self {
            id: id.into(),
            entries,
            refresh_period_s: 600,
            max_age_s: 86_400,
        })
    }

    pub fn from_file(id: impl Into<String>, path: &Path) -> Result<Self, ContextError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ContextError::Unavailable(format!("{}: {e}", path.display())))?;
        Self::parse(id, &text)
    }

    pub fn with_periods(mut self, refresh_period_s: i64, max_age_s: i64) -> Self {
        self.refresh_period_s = refresh_period_s;
        self.max_age_s = max_age_s;
        self
    }
}

impl ContextProvider for FileTraceProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn capability(&self) -> Capability {
        Capability {
            kinds: vec![ContextKind::Weather],
            refresh_period_s: self.refresh_period_s,
            max_age_s: self.max_age_s,
        }
    }

    fn observe(&self, kind: ContextKind, _location: GeoPoint, time: i64) -> Result<Observation, ContextError> {
        if kind != ContextKind::Weather {
            return Err(ContextError::Unavailable(format!("{} does not serve {kind}", self.id)));
        }
        let idx = self.entries.partition_point(|e| e.time <= time);
        if idx == 0 {
            return Err(ContextError::Unavailable(format!(
                "{}: no trace entry at or before t={time}",
                self.id
            )));
        }
        let e = &self.entries[idx - 1];
        Ok(Observation {
            timestamp: e.time,
            weather_kind: e.kind,
            rain_rate_mm_per_hr: e.rate,
            record_key: format!("row{}", idx - 1),
        })
    }

    fn raw_record(&self, record_key: &str) -> Option<String> {
        let idx: usize = record_key.strip_prefix("row")?.parse().ok()?;
        self.entries.get(idx).map(|e| e.raw.clone())
    }
}

/// Fixed weather, used for what-if overrides.
#[derive(Debug, Clone)]
pub struct StaticProvider {
    id: String,
    weather_kind: WeatherKind,
    rain_rate_mm_per_hr: f64,
}

impl StaticProvider {
    pub fn new(
        id: impl Into<String>,
        weather_kind: WeatherKind,
        rain_rate_mm_per_hr: f64,
    ) -> Result<Self, ContextError> {
        Observation {
            timestamp: 0,
            weather_kind,
            rain_rate_mm_per_hr,
            record_key: String::new(),
        }
        .validate()?;
        Ok(Self {
            id: id.into(),
            weather_kind,
            rain_rate_mm_per_hr,
        })
    }
}

impl ContextProvider for StaticProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn capability(&self) -> Capability {
        Capability {
            kinds: vec![ContextKind::Weather],
            refresh_period_s: 0,
            max_age_s: i64::MAX,
        }
    }

    fn observe(&self, kind: ContextKind, _location: GeoPoint, time: i64) -> Result<Observation, ContextError> {
        if kind != ContextKind::Weather {
            return Err(ContextError::Unavailable(format!("{} does not serve {kind}", self.id)));
        }
        Ok(Observation {
            timestamp: time,
            weather_kind: self.weather_kind,
            rain_rate_mm_per_hr: self.rain_rate_mm_per_hr,
            record_key: format!("{}@{}", self.weather_kind, self.rain_rate_mm_per_hr),
        })
    }

    fn raw_record(&self, record_key: &str) -> Option<String> {
        Some(record_key.to_string())
    }
}

/// Parses an OpenWeatherMap "current weather" response.
///
/// Uses `dt`, `weather[0].main`, `rain.1h` / `snow.1h` and the presence of
/// a non-empty `alerts` array.
pub fn parse_openweathermap(body: &str) -> Result<Observation, ContextError> {
    let doc: Value = serde_json::from_str(body).map_err(|e| ContextError::Response(e.to_string()))?;
    let timestamp = doc
        .get("dt")
        .and_then(Value::as_i64)
        .ok_or_else(|| ContextError::Response("missing dt".into()))?;
    let precip = |key: &str| {
        doc.get(key)
            .and_then(|v| v.get("1h"))
            .and_then(Value::as_f64)
            .unwrap_or(0.0)
    };
    let rate = precip("rain") + precip("snow");
    let alert = doc
        .get("alerts")
        .and_then(Value::as_array)
        .is_some_and(|a| !a.is_empty());
    let main = doc
        .get("weather")
        .and_then(Value::as_array)
        .and_then(|w| w.first())
        .and_then(|w| w.get("main"))
        .and_then(Value::as_str)
        .unwrap_or("");
    let kind = if rate > 0.0 {
        WeatherKind::from_rain_rate(rate, alert)
    } else if main.eq_ignore_ascii_case("clouds") {
        WeatherKind::Cloudy
    } else {
        WeatherKind::Clear
    };
    let obs = Observation {
        timestamp,
        weather_kind: kind,
        rain_rate_mm_per_hr: rate,
        record_key: format!("dt{timestamp}"),
    };
    obs.validate()?;
    Ok(obs)
}

/// Fetches a URL and returns the body.
pub type Fetcher = Box<dyn Fn(&str) -> Result<String, String> + Send + Sync>;

/// Live weather through an OpenWeatherMap-shaped HTTP endpoint. The
/// transport is injected; nothing is fetched unless a provider is built and
/// registered explicitly.
pub struct HttpWeatherProvider {
    id: String,
    endpoint: String,
    fetch: Fetcher,
    raw: Mutex<BTreeMap<String, String>>,
}

impl HttpWeatherProvider {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, fetch: Fetcher) -> Self {
        Self {
            id: id.into(),
            endpoint: endpoint.into(),
            fetch,
            raw: Mutex::new(BTreeMap::new()),
        }
    }

    /// Endpoint from [`WEATHER_ENDPOINT_ENV`], when set.
    pub fn from_env(id: impl Into<String>, fetch: Fetcher) -> Option<Self> {
        std::env::var(WEATHER_ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .map(|endpoint| Self::new(id, endpoint, fetch))
    }

    fn url_for(&self, location: GeoPoint) -> String {
        let sep = if self.endpoint.contains('?') { '&' } else { '?' };
        format!(
            "{}{sep}lat={}&lon={}",
            self.endpoint, location.latitude_deg, location.longitude_deg
        )
    }
}

impl ContextProvider for HttpWeatherProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn capability(&self) -> Capability {
        Capability {
            kinds: vec![ContextKind::Weather],
            refresh_period_s: 600,
            max_age_s: 3 * 3600,
        }
    }

    fn observe(&self, kind: ContextKind, location: GeoPoint, _time: i64) -> Result<Observation, ContextError> {
        if kind != ContextKind::Weather {
            return Err(ContextError::Unavailable(format!("{} does not serve {kind}", self.id)));
        }
        let body = (self.fetch)(&self.url_for(location)).map_err(ContextError::Unavailable)?;
        let obs = parse_openweathermap(&body)?;
        self.raw
            .lock()
            .expect("raw record lock")
            .insert(obs.record_key.clone(), body);
        Ok(obs)
    }

    fn raw_record(&self, record_key: &str) -> Option<String> {
        self.raw.lock().expect("raw record lock").get(record_key).cloned()
    }
}

// ---------------------------------------------------------------------------
// Broker
// ---------------------------------------------------------------------------

/// Receives every snapshot the broker produces (e.g. the DSA store).
pub trait SnapshotSink: Send + Sync {
    fn record(&self, snapshot: &ContextSnapshot);
}

pub type Callback = Arc<dyn Fn(&ContextSnapshot) + Send + Sync>;

struct Cached {
    fetched_at: i64,
    snapshot: ContextSnapshot,
}

#[derive(Default)]
struct BrokerState {
    providers: HashMap<ContextKind, Arc<dyn ContextProvider>>,
    overrides: HashMap<ContextKind, Arc<dyn ContextProvider>>,
    cache: HashMap<ContextKind, Cached>,
    history: HashMap<ContextKind, Vec<ContextSnapshot>>,
    subscribers: BTreeMap<u64, (ContextKind, Callback)>,
    last_delivered: HashMap<ContextKind, Observation>,
    next_subscription: u64,
}

/// Shared context broker; all methods take `&self`.
pub struct ContextBroker {
    location: GeoPoint,
    state: Mutex<BrokerState>,
    dispatch: Mutex<()>,
    sink: Option<Arc<dyn SnapshotSink>>,
}

impl fmt::Debug for ContextBroker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContextBroker")
            .field("location", &self.location)
            .finish_non_exhaustive()
    }
}

impl ContextBroker {
    pub fn new(location: GeoPoint) -> Self {
        Self {
            location,
            state: Mutex::new(BrokerState::default()),
            dispatch: Mutex::new(()),
            sink: None,
        }
    }

    pub fn with_sink(mut self, sink: Arc<dyn SnapshotSink>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn location(&self) -> GeoPoint {
        self.location
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BrokerState> {
        self.state.lock().expect("broker state lock")
    }

    /// Registers `provider` for each kind it declares, replacing any
    /// previous provider for those kinds.
    pub fn register(&self, provider: Arc<dyn ContextProvider>) {
        let mut st = self.lock();
        for kind in provider.capability().kinds {
            st.providers.insert(kind, provider.clone());
            st.cache.remove(&kind);
        }
    }

    /// Forces a fixed weather value until [`Self::clear_override`].
    pub fn set_override(&self, weather_kind: WeatherKind, rain_rate_mm_per_hr: f64) -> Result<(), ContextError> {
        let provider = StaticProvider::new("override", weather_kind, rain_rate_mm_per_hr)?;
        let mut st = self.lock();
        st.overrides.insert(ContextKind::Weather, Arc::new(provider));
        st.cache.remove(&ContextKind::Weather);
        Ok(())
    }

    pub fn clear_override(&self) {
        let mut st = self.lock();
        st.overrides.remove(&ContextKind::Weather);
        st.cache.remove(&ContextKind::Weather);
    }

    pub fn has_provider(&self, kind: ContextKind) -> bool {
        let st = self.lock();
        st.overrides.contains_key(&kind) || st.providers.contains_key(&kind)
    }

    /// Freshest snapshot for `kind` at `time`.
    pub fn get_context(
        &self,
        kind: ContextKind,
        location: GeoPoint,
        time: i64,
    ) -> Result<ContextSnapshot, ContextError> {
        let mut st = self.lock();
        let provider = st
            .overrides
            .get(&kind)
            .or_else(|| st.providers.get(&kind))
            .cloned()
            .ok_or_else(|| ContextError::Unavailable(format!("no provider registered for {kind}")))?;
        let cap = provider.capability();
        if let Some(c) = st.cache.get(&kind) {
            let age = time - c.fetched_at;
            if age >= 0 && age < cap.refresh_period_s && c.snapshot.location == location {
                return Ok(c.snapshot.clone());
            }
        }
        let obs = provider.observe(kind, location, time)?;
        obs.validate()?;
        let stale = time.saturating_sub(obs.timestamp) > cap.max_age_s;
        let snapshot = ContextSnapshot::from_observation(kind, provider.id(), obs, location, stale);
        st.cache.insert(
            kind,
            Cached {
                fetched_at: time,
                snapshot: snapshot.clone(),
            },
        );
        let history = st.history.entry(kind).or_default();
        let is_new = history.last().is_none_or(|last| last.id != snapshot.id);
        let in_order = history.last().is_none_or(|last| snapshot.timestamp >= last.timestamp);
        if is_new && in_order {
            history.push(snapshot.clone());
            drop(st);
            if let Some(sink) = &self.sink {
                sink.record(&snapshot);
            }
        }
        Ok(snapshot)
    }

    /// Current weather at the broker's default location.
    pub fn current_weather(&self, time: i64) -> Result<ContextSnapshot, ContextError> {
        self.get_context(ContextKind::Weather, self.location, time)
    }

    /// Every distinct snapshot recorded for `kind`, in timestamp order.
    pub fn history(&self, kind: ContextKind) -> Vec<ContextSnapshot> {
        self.lock().history.get(&kind).cloned().unwrap_or_default()
    }

    /// Raw provider record behind a snapshot.
    pub fn raw_record(&self, snapshot: &ContextSnapshot) -> Option<String> {
        let st = self.lock();
        let p = &snapshot.provenance;
        st.overrides
            .values()
            .chain(st.providers.values())
            .find(|prov| prov.id() == p.provider_id)
            .and_then(|prov| prov.raw_record(&p.record_key))
    }

    pub fn subscribe(self: &Arc<Self>, kind: ContextKind, callback: Callback) -> Result<Subscription, ContextError> {
        if !self.has_provider(kind) {
            return Err(ContextError::Unavailable(format!("no provider registered for {kind}")));
        }
        let mut st = self.lock();
        let id = st.next_subscription;
        st.next_subscription += 1;
        st.subscribers.insert(id, (kind, callback));
        Ok(Subscription {
            id,
            broker: Arc::downgrade(self),
        })
    }

    fn unsubscribe(&self, id: u64) {
        self.lock().subscribers.remove(&id);
    }

    pub fn subscriber_count(&self) -> usize {
        self.lock().subscribers.len()
    }

    /// Refreshes every subscribed kind at `time` and notifies subscribers
    /// whose kind changed value since the previous poll. Returns the number
    /// of change events. Callbacks run one at a time on the caller's thread.
    pub fn poll(&self, time: i64) -> Result<usize, ContextError> {
        let _dispatch = self.dispatch.lock().expect("dispatch lock");
        let kinds: Vec<ContextKind> = {
            let st = self.lock();
            let mut k: Vec<_> = st.subscribers.values().map(|(k, _)| *k).collect();
            k.sort();
            k.dedup();
            k
        };
        let mut events = 0;
        for kind in kinds {
            let snapshot = self.get_context(kind, self.location, time)?;
            let obs = Observation {
                timestamp: snapshot.timestamp,
                weather_kind: snapshot.weather_kind,
                rain_rate_mm_per_hr: snapshot.rain_rate_mm_per_hr,
                record_key: snapshot.provenance.record_key.clone(),
            };
            let callbacks: Vec<Callback> = {
                let mut st = self.lock();
                let changed = st.last_delivered.get(&kind).is_some_and(|prev| !prev.same_value(&obs));
                st.last_delivered.insert(kind, obs);
                if !changed {
                    continue;
                }
                st.subscribers
                    .values()
                    .filter(|(k, _)| *k == kind)
                    .map(|(_, cb)| cb.clone())
                    .collect()
            };
            events += 1;
            for cb in callbacks {
                cb(&snapshot);
            }
        }
        Ok(events)
    }
}

/// Handle returned by [`ContextBroker::subscribe`].
#[derive(Debug)]
pub struct Subscription {
    id: u64,
    broker: Weak<ContextBroker>,
}

impl Subscription {
    /// Idempotent.
    pub fn unsubscribe(&self) {
        if let Some(b) = self.broker.upgrade() {
            b.unsubscribe(self.id);
        }
    }
}
