//! Experiment engine shared by the CLI and the HTTP API.
//!
//! An experiment is prepared (scenario, policy and context resolved) and then
//! executed into an [`ExperimentOutput`], the body of an experiment record.
//! Wall-clock time is split into the three reported stages: setup,
//! interference analysis (time inside the IET) and DSA decisions (the rest
//! of the decision loop).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use coexist_core::context::{
    ContextBroker, ContextError, ContextKind, ContextSnapshot, FileTraceProvider, WeatherKind,
};
use coexist_core::dsaf::{
    de_exclusion_check, run_feedback_loop, single_step, sweep_csv, sweep_ez, DsaDecision, DsaError, StepControls,
    StepOutcome, SweepRow,
};
use coexist_core::geo::GeoPoint;
use coexist_core::iet::{evaluate, IetError, InterferenceReport, World};
use coexist_core::policy::{PolicyError, PolicySet};
use coexist_core::scenario::{load_scenario, Scenario, ScenarioError, Seeds};
use coexist_core::store::{EntityKind, ExperimentRecord, PolicyRecord, Record, Registration, Store, StoreError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Rain rate used for the named "rainy" weather, mm/h.
pub const RAINY_RATE_MM_PER_HR: f64 = 10.0;
/// Rain rate used for the named "extreme" weather, mm/h.
pub const EXTREME_RATE_MM_PER_HR: f64 = 30.0;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario {0:?} not found")]
    ScenarioNotFound(String),
    #[error("policy {0:?} not found")]
    PolicyNotFound(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Dsa(#[from] DsaError),
    #[error(transparent)]
    Iet(#[from] IetError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// Weather named on the command line or in a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeatherArg {
    Rate(f64),
    Name(String),
}

impl WeatherArg {
    pub fn resolve(&self, location: GeoPoint) -> Result<ContextSnapshot, EngineError> {
        let (kind, rate) = match self {
            WeatherArg::Rate(r) => (WeatherKind::from_rain_rate(*r, false), *r),
            WeatherArg::Name(name) => match name.trim().to_ascii_lowercase().as_str() {
                "clear" | "sunny" => (WeatherKind::Clear, 0.0),
                "cloudy" => (WeatherKind::Cloudy, 0.0),
                "rainy" | "rain" | "rain_snow" | "snow" => (WeatherKind::RainSnow, RAINY_RATE_MM_PER_HR),
                "extreme" => (WeatherKind::Extreme, EXTREME_RATE_MM_PER_HR),
                other => match other.parse::<f64>() {
                    Ok(r) => (WeatherKind::from_rain_rate(r, false), r),
                    Err(_) => {
                        return Err(EngineError::Invalid(format!(
                            "unknown weather {name:?} (expected clear, cloudy, rainy, extreme or a rain rate)"
                        )))
                    }
                },
            },
        };
        if !rate.is_finite() || rate < 0.0 {
            return Err(EngineError::Invalid(format!("rain rate {rate} must be >= 0")));
        }
        Ok(ContextSnapshot::fixed(kind, rate, location)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    FeedbackLoop,
    SingleStep,
    EzSweep,
}

/// Exclusion-zone range overriding the policy's.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EzRange {
    #[serde(default)]
    pub min_m: Option<f64>,
    #[serde(default)]
    pub max_m: Option<f64>,
    #[serde(default)]
    pub step_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentRequest {
    /// Registered scenario id, fixture name, manifest path or directory.
    pub scenario: String,
    /// Fixed weather; when absent the context broker or the scenario's
    /// weather trace decides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<WeatherArg>,
    /// Context time (unix seconds) for trace or broker lookups.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<i64>,
    /// `"default"` or a policy file path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    /// Master seed; replaces the manifest's UE-drop and shadow seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<StepControls>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ez: Option<EzRange>,
    /// Run one de-exclusion check with this margin after convergence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub de_exclusion_margin_db: Option<f64>,
}

/// Wall time per stage, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub setup_ms: f64,
    pub interference_analysis_ms: f64,
    pub dsa_decision_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    pub const STAGES: [&'static str; 3] = [
        "Experiment setup",
        "Interference analysis (IET)",
        "DSA decisions (DSAF)",
    ];

    pub fn stage_values(&self) -> [f64; 3] {
        [self.setup_ms, self.interference_analysis_ms, self.dsa_decision_ms]
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

/// Static per-MBS facts kept with the record so exports need no scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub id: String,
    pub location: GeoPoint,
    pub distance_m: f64,
    pub los: bool,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub schema_version: u32,
    pub id: String,
    pub created_at: i64,
    pub request: ExperimentRequest,
    pub scenario_name: String,
    pub seeds: Seeds,
    pub policy_version: String,
    pub context: ContextSnapshot,
    pub threshold_db: f64,
    pub fss: GeoPoint,
    pub sites: Vec<SiteSummary>,
    /// Every enabled MBS transmitting; gives each MBS's individual I/N.
    pub baseline: InterferenceReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DsaDecision>,
    /// Final active-set evaluation of the feedback loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<InterferenceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<SweepRow>>,
    pub timings: StageTimings,
}

impl ExperimentOutput {
    /// Loop: converged. Single step: verdict pass. Sweep: always.
    pub fn succeeded(&self) -> bool {
        match self.request.mode {
            Mode::FeedbackLoop => self.decision.as_ref().is_some_and(|d| d.converged),
            Mode::SingleStep => self
                .step
                .as_ref()
                .is_some_and(|s| s.verdict == coexist_core::dsaf::Verdict::Pass),
            Mode::EzSweep => true,
        }
    }

    /// Iteration trace (loop) or sweep table (sweep), as CSV.
    pub fn trace_csv(&self, include_elapsed: bool) -> Option<String> {
        match (&self.decision, &self.sweep) {
            (Some(d), _) => Some(d.trace_csv(include_elapsed)),
            (None, Some(rows)) => Some(sweep_csv(rows)),
            _ => None,
        }
    }

    /// Individual I/N of every enabled MBS.
    pub fn report_csv(&self) -> String {
        self.baseline.to_csv()
    }

    /// The same record with identifiers, creation time and every wall-time
    /// field cleared, for comparing runs.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        out.id.clear();
        out.created_at = 0;
        out.timings = StageTimings::default();
        out.baseline.elapsed_us = 0;
        out.decision = out.decision.map(|d| d.without_timing());
        out.report = out.report.map(|r| r.without_timing());
        if let Some(step) = out.step.as_mut() {
            step.report.elapsed_us = 0;
        }
        out
    }
}

/// Inputs resolved before execution.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub request: ExperimentRequest,
    pub scenario: Arc<Scenario>,
    pub scenario_dir: Option<PathBuf>,
    pub policy: PolicySet,
    pub setup: Duration,
}

/// A finished experiment together with what `single_step` calls need.
#[derive(Debug, Clone)]
pub struct Completed {
    pub output: ExperimentOutput,
    pub world: Arc<World>,
    pub policy: PolicySet,
}

#[derive(Debug, Clone)]
pub struct Engine {
    fixtures_dir: PathBuf,
    store: Option<Arc<Store>>,
}

impl Engine {
    pub fn new(fixtures_dir: impl Into<PathBuf>) -> Self {
        Self {
            fixtures_dir: fixtures_dir.into(),
            store: None,
        }
    }

    pub fn with_store(mut self, store: Arc<Store>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn store(&self) -> Option<&Arc<Store>> {
        self.store.as_ref()
    }

    pub fn fixtures_dir(&self) -> &Path {
        &self.fixtures_dir
    }

    /// Manifest path for a fixture name, manifest path or scenario directory.
    pub fn manifest_path(&self, reference: &str) -> Option<PathBuf> {
        let direct = PathBuf::from(reference);
        if direct.is_file() {
            return Some(direct);
        }
        if direct.join("scenario.toml").is_file() {
            return Some(direct.join("scenario.toml"));
        }
        let fixture = self.fixtures_dir.join(reference).join("scenario.toml");
        fixture.is_file().then_some(fixture)
    }

    pub fn load_scenario(&self, reference: &str) -> Result<(Scenario, PathBuf, Vec<String>), EngineError> {
        let path = self
            .manifest_path(reference)
            .ok_or_else(|| EngineError::ScenarioNotFound(reference.to_string()))?;
        let loaded = load_scenario(&path)?;
        for w in &loaded.warnings {
            tracing::warn!(scenario = %loaded.scenario.name, "{w}");
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((loaded.scenario, dir, loaded.warnings))
    }

    pub fn load_policy(reference: Option<&str>) -> Result<PolicySet, EngineError> {
        match reference {
            None | Some("default") | Some("") => Ok(PolicySet::default_12ghz()),
            Some(path) => {
                if !Path::new(path).is_file() {
                    return Err(EngineError::PolicyNotFound(path.to_string()));
                }
                Ok(PolicySet::load(Path::new(path))?)
            }
        }
    }

    /// Resolves the request's references. `registered` supplies scenarios
    /// uploaded to the service; anything else goes through the filesystem.
    pub fn prepare(
        &self,
        request: ExperimentRequest,
        registered: Option<(Arc<Scenario>, Option<PathBuf>)>,
    ) -> Result<Prepared, EngineError> {
        let started = Instant::now();
        let (scenario, scenario_dir) = match registered {
            Some(found) => found,
            None => {
                let (s, dir, _) = self.load_scenario(&request.scenario)?;
                (Arc::new(s), Some(dir))
            }
        };
        let scenario = match request.seed {
            Some(seed) => Arc::new((*scenario).clone().with_seed(seed)),
            None => scenario,
        };
        let mut policy = Self::load_policy(request.policy.as_deref())?;
        if let Some(ez) = request.ez {
            let z = &mut policy.exclusion_zone;
            z.min_m = ez.min_m.unwrap_or(z.min_m);
            z.max_m = ez.max_m.unwrap_or(z.max_m);
            z.step_m = ez.step_m.unwrap_or(z.step_m);
            policy.validate()?;
        }
        if request.mode == Mode::SingleStep && request.controls.is_none() {
            return Err(EngineError::Invalid("single_step requires controls".into()));
        }
        if let Some(w) = &request.weather {
            w.resolve(scenario.fss.location)?;
        }
        Ok(Prepared {
            request,
            scenario,
            scenario_dir,
            policy,
            setup: started.elapsed(),
        })
    }

    fn resolve_context(
        &self,
        prepared: &Prepared,
        broker: Option<&ContextBroker>,
    ) -> Result<ContextSnapshot, EngineError> {
        let location = prepared.scenario.fss.location;
        if let Some(w) = &prepared.request.weather {
            return w.resolve(location);
        }
        let time = prepared.request.time;
        if let Some(b) = broker.filter(|b| b.has_provider(ContextKind::Weather)) {
            let snap = b.current_weather(time.unwrap_or_else(now))?;
            return Ok(ContextSnapshot { location, ..snap });
        }
        if let (Some(trace), Some(dir)) = (&prepared.scenario.weather_trace, &prepared.scenario_dir) {
            let provider = FileTraceProvider::from_file("trace", &dir.join(trace))?;
            let broker = ContextBroker::new(location);
            broker.register(Arc::new(provider));
            return Ok(broker.current_weather(time.unwrap_or(0))?);
        }
        Ok(ContextSnapshot::clear(location))
    }

    /// Runs a prepared experiment to completion and stores its record.
    pub fn execute(
        &self,
        prepared: Prepared,
        id: String,
        broker: Option<&ContextBroker>,
    ) -> Result<Completed, EngineError> {
        let started = Instant::now();
        let context = self.resolve_context(&prepared, broker)?;
        let world = Arc::new(World::prepare(&prepared.scenario)?);
        let policy = prepared.policy;
        let threshold = coexist_core::policy::threshold_for(&context, &policy)?;
        let setup = prepared.setup + started.elapsed();

        let decide_started = Instant::now();
        let mut iet_us = 0u64;
        let (baseline, decision, report, step, sweep) = match prepared.request.mode {
            Mode::FeedbackLoop => {
                let out = run_feedback_loop(&world, &context, &policy)?;
                // The shutdown evaluation of an unconverged loop is not in the trace.
                iet_us += out.baseline.elapsed_us + u64::from(!out.decision.converged) * out.report.elapsed_us;
                let mut decision = out.decision;
                if let Some(margin) = prepared.request.de_exclusion_margin_db {
                    decision = de_exclusion_check(&world, &decision, &context, &policy, margin)?;
                }
                iet_us += decision.evaluation_time_us();
                let report = if decision.adjustments.is_empty() {
                    out.report
                } else {
                    let active = world
                        .sites()
                        .iter()
                        .filter(|s| !decision.revoked.contains_key(&s.id))
                        .map(|s| s.id.clone())
                        .collect();
                    let r = evaluate(&world, &active, context.rain_rate_mm_per_hr)?;
                    iet_us += r.elapsed_us;
                    r
                };
                (out.baseline, Some(decision), Some(report), None, None)
            }
            Mode::SingleStep => {
                let controls = prepared.request.controls.clone().unwrap_or_default();
                let baseline = evaluate(&world, &world.enabled_ids(), context.rain_rate_mm_per_hr)?;
                let outcome = single_step(&world, &controls, &context, &policy)?;
                iet_us += baseline.elapsed_us + outcome.report.elapsed_us;
                (baseline, None, None, Some(outcome), None)
            }
            Mode::EzSweep => {
                let baseline = evaluate(&world, &world.enabled_ids(), context.rain_rate_mm_per_hr)?;
                let t = Instant::now();
                let rows = sweep_ez(&world, &context, &policy.exclusion_zone.radii())?;
                iet_us += baseline.elapsed_us + t.elapsed().as_micros() as u64;
                (baseline, None, None, None, Some(rows))
            }
        };
        let decide = decide_started.elapsed();
        let interference_ms = us_to_ms(iet_us).min(ms(decide));
        let timings = StageTimings {
            setup_ms: ms(setup),
            interference_analysis_ms: interference_ms,
            dsa_decision_ms: (ms(decide) - interference_ms).max(0.0),
            total_ms: ms(setup + decide),
        };

        let sites = world
            .sites()
            .iter()
            .map(|s| SiteSummary {
                id: s.id.clone(),
                location: prepared
                    .scenario
                    .mbs_by_id(&s.id)
                    .map(|m| m.location)
                    .expect("site comes from the scenario"),
                distance_m: s.link.distance_2d_m,
                los: s.link.los,
                enabled: s.enabled,
            })
            .collect();

        let output = ExperimentOutput {
            schema_version: RECORD_SCHEMA_VERSION,
            id,
            created_at: now(),
            request: prepared.request,
            scenario_name: prepared.scenario.name.clone(),
            seeds: prepared.scenario.seeds,
            policy_version: policy.version.clone(),
            threshold_db: threshold,
            fss: prepared.scenario.fss.location,
            sites,
            context,
            baseline,
            decision,
            report,
            step,
            sweep,
            timings,
        };
        if let Some(store) = &self.store {
            persist(store, &prepared.scenario, &policy, &output)?;
        }
        Ok(Completed { output, world, policy })
    }

    /// Prepare and execute in one go (the CLI path).
    pub fn run(&self, request: ExperimentRequest, id: String) -> Result<Completed, EngineError> {
        let prepared = self.prepare(request, None)?;
        self.execute(prepared, id, None)
    }
}

pub fn now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

pub fn new_experiment_id() -> String {
    format!("exp-{}", uuid::Uuid::new_v4().simple())
}

fn ignore_duplicate(r: Result<(), StoreError>) -> Result<(), StoreError> {
    match r {
        Err(StoreError::Constraint(_)) => Ok(()),
        other => other,
    }
}

fn persist(store: &Store, scenario: &Scenario, policy: &PolicySet, out: &ExperimentOutput) -> Result<(), StoreError> {
    let at = out.created_at;
    let scenario_ref = Some(scenario.name.clone());
    ignore_duplicate(store.put(Record::Registration(Registration {
        id: scenario.fss.id.clone(),
        kind: EntityKind::Fss,
        scenario: scenario_ref.clone(),
        location: Some(scenario.fss.location),
        parameters: serde_json::to_value(&scenario.fss.antenna).unwrap_or_default(),
        registered_at: at,
    })))?;
    for m in &scenario.mbs {
        ignore_duplicate(store.put(Record::Registration(Registration {
            id: m.id.clone(),
            kind: EntityKind::Mbs,
            scenario: scenario_ref.clone(),
            location: Some(m.location),
            parameters: serde_json::json!({
                "sector_azimuths_deg": m.sector_azimuths_deg,
                "ue_per_sector": m.ue_per_sector,
            }),
            registered_at: at,
        })))?;
    }
    store
        .put(Record::Policy(PolicyRecord {
            version: policy.version.clone(),
            stored_at: at,
            policy: policy.clone(),
        }))
        .or_else(|e| match e {
            // A modified policy under a shipped version label is stored under a
            // content-qualified label.
            StoreError::Constraint(_) => Ok(()),
            e => Err(e),
        })?;
    store.put(Record::Context(out.context.clone()))?;
    store.put(Record::Experiment(ExperimentRecord {
        id: out.id.clone(),
        created_at: at,
        scenario_name: out.scenario_name.clone(),
        policy_version: out.policy_version.clone(),
        context_snapshot_id: out.context.id.clone(),
        converged: out.succeeded(),
        body: serde_json::to_value(out).map_err(|e| StoreError::Serialize(e.to_string()))?,
    }))
}

/// Individual I/N per MBS id from the baseline report.
pub fn individual_in_db(output: &ExperimentOutput) -> BTreeMap<String, f64> {
    output
        .baseline
        .per_mbs
        .iter()
        .map(|(id, m)| (id.clone(), m.i_over_n_db))
        .collect()
}
