//! Command-line front end.
//!
//! Exit codes: 0 success, 1 error, 2 completed but not converged (`run`)
//! or invalid input (`validate`).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use coexist_core::context::ContextBroker;
use coexist_core::dsaf::sweep_csv;
use coexist_core::geo::GeoPoint;
use coexist_core::policy::PolicySet;
use coexist_core::store::{RecordKind, Retention, Store};
use serde::Deserialize;

use crate::engine::{
    new_experiment_id, now, Engine, EngineError, ExperimentOutput, ExperimentRequest, EzRange, Mode, WeatherArg,
};
use crate::export::{map_geojson, summary_text, timings_table, TierCuts};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "coexist",
    version,
    about = "Terrestrial/satellite 12 GHz coexistence experiments"
)]
pub struct Cli {
    /// Directory searched for scenarios referenced by name.
    #[arg(long, global = true, env = "COEXIST_FIXTURES", default_value = "fixtures")]
    pub fixtures: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the exclusion-zone feedback loop and write record, CSVs, summary and map.
    Run(RunArgs),
    /// Aggregate I/N and active MBS count per exclusion-zone radius.
    SweepEz(SweepArgs),
    /// Lint a scenario and/or a policy file.
    Validate(ValidateArgs),
    /// Start the HTTP API.
    Serve(ServeArgs),
    /// Dump store records as JSON lines.
    Export(ExportArgs),
    /// Per-stage latency table over repeated runs.
    Timings(TimingsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Fixture name, manifest path or scenario directory.
    #[arg(long)]
    pub scenario: String,
    /// `default` or a policy TOML file.
    #[arg(long, default_value = "default")]
    pub policy: String,
    /// clear, cloudy, rainy, extreme or a rain rate in mm/h. Without it the
    /// scenario's weather trace at `--time` is used.
    #[arg(long)]
    pub weather: Option<String>,
    /// Context time for the weather trace, unix seconds.
    #[arg(long)]
    pub time: Option<i64>,
    /// Master seed replacing the manifest's seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ez_min: Option<f64>,
    #[arg(long)]
    pub ez_max: Option<f64>,
    #[arg(long)]
    pub ez_step: Option<f64>,
    /// Also persist the experiment to this store file.
    #[arg(long, env = "COEXIST_STORE")]
    pub store: Option<PathBuf>,
}

impl ExperimentArgs {
    fn request(&self, mode: Mode) -> ExperimentRequest {
        let ez = (self.ez_min.is_some() || self.ez_max.is_some() || self.ez_step.is_some()).then_some(EzRange {
            min_m: self.ez_min,
            max_m: self.ez_max,
            step_m: self.ez_step,
        });
        ExperimentRequest {
            scenario: self.scenario.clone(),
            weather: self.weather.as_ref().map(|w| match w.parse::<f64>() {
                Ok(r) => WeatherArg::Rate(r),
                Err(_) => WeatherArg::Name(w.clone()),
            }),
            time: self.time,
            policy: Some(self.policy.clone()),
            seed: self.seed,
            mode,
            controls: None,
            ez,
            de_exclusion_margin_db: None,
        }
    }

    fn engine(&self, fixtures: &Path) -> anyhow::Result<Engine> {
        let engine = Engine::new(fixtures);
        Ok(match &self.store {
            Some(path) => engine.with_store(Arc::new(Store::open(path)?)),
            None => engine,
        })
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fill the elapsed_ms column of trace.csv (makes it run-dependent).
    #[arg(long)]
    pub wall_clock: bool,
    /// After convergence, try one de-exclusion step with this margin (dB).
    #[arg(long)]
    pub de_exclusion_margin: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// CSV output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML file with `port`, `bind`, `store`, `workers`, `fixtures`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "COEXIST_PORT")]
    pub port: Option<u16>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long, env = "COEXIST_STORE")]
    pub store: Option<PathBuf>,
    #[arg(long, env = "COEXIST_WORKERS")]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, env = "COEXIST_STORE")]
    pub store: PathBuf,
    /// registration, context, priority, policy or experiment.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub from: Option<i64>,
    #[arg(long)]
    pub to: Option<i64>,
    /// Apply the default retention before dumping.
    #[arg(long)]
    pub purge: bool,
}

#[derive(Debug, Args)]
pub struct TimingsArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
}

/// Service settings from the optional config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: Option<u16>,
    pub bind: Option<String>,
    pub store: Option<PathBuf>,
    pub workers: Option<usize>,
    pub fixtures: Option<PathBuf>,
}

pub const DEFAULT_PORT: u16 = 8080;

/// Runs the CLI and returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => run(&cli.fixtures, a),
        Command::SweepEz(a) => sweep(&cli.fixtures, a),
        Command::Validate(a) => validate(&cli.fixtures, a),
        Command::Serve(a) => serve(&cli.fixtures, a),
        Command::Export(a) => export(a),
        Command::Timings(a) => timings(&cli.fixtures, a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

/// Files written by `run`, in write order.
pub const RUN_OUTPUTS: [&str; 5] = ["record.json", "trace.csv", "report.csv", "summary.txt", "map.geojson"];

/// Writes every output file, recording each path once it exists.
fn write_outputs(
    dir: &Path,
    out: &ExperimentOutput,
    wall_clock: bool,
    written: &mut Vec<PathBuf>,
) -> anyhow::Result<()> {
    let record = serde_json::to_string_pretty(out)? + "\n";
    let trace = out.trace_csv(wall_clock).unwrap_or_default();
    let map = serde_json::to_string_pretty(&map_geojson(out, &TierCuts::default()))? + "\n";
    let contents = [record, trace, out.report_csv(), summary_text(out), map];
    for (name, body) in RUN_OUTPUTS.iter().zip(contents) {
        let path = dir.join(name);
        written.push(path.clone());
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Removes this run's files, and the directory if this run created it.
fn remove_partial(dir: &Path, written: &[PathBuf], created_dir: bool) {
    for path in written {
        let _ = fs::remove_file(path);
    }
    if created_dir {
        let _ = fs::remove_dir(dir);
    }
}

fn run(fixtures: &Path, a: RunArgs) -> anyhow::Result<i32> {
    let engine = a.experiment.engine(fixtures)?;
    let mut request = a.experiment.request(Mode::FeedbackLoop);
    request.de_exclusion_margin_db = a.de_exclusion_margin;
    let out = engine.run(request, new_experiment_id())?.output;
    let created_dir = !a.out.exists();
    let mut written = Vec::new();
    let result = fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .and_then(|()| write_outputs(&a.out, &out, a.wall_clock, &mut written));
    if let Err(e) = result {
        remove_partial(&a.out, &written, created_dir);
        return Err(e);
    }
    print!("{}", summary_text(&out));
    Ok(if out.succeeded() {
        EXIT_OK
    } else {
        eprintln!("not converged: every MBS was shut down");
        EXIT_NOT_CONVERGED
    })
}

fn sweep(fixtures: &Path, a: SweepArgs) -> anyhow::Result<i32> {
    let engine = a.experiment.engine(fixtures)?;
    let done = engine.run(a.experiment.request(Mode::EzSweep), new_experiment_id())?;
    let csv = sweep_csv(done.output.sweep.as_deref().unwrap_or_default());
    match &a.out {
        Some(path) => {
            if let Err(e) = fs::write(path, &csv) {
                let _ = fs::remove_file(path);
                bail!("writing {}: {e}", path.display());
            }
        }
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

fn validate(fixtures: &Path, a: ValidateArgs) -> anyhow::Result<i32> {
    if a.scenario.is_none() && a.policy.is_none() {
        bail!("nothing to validate: pass --scenario and/or --policy");
    }
    let mut ok = true;
    if let Some(path) = &a.policy {
        match PolicySet::load(path) {
            Ok(p) => {
                println!("policy {} valid", path.display());
                print!("{}", p.to_toml());
            }
            Err(e) => {
                eprintln!("policy {}: {e}", path.display());
                ok = false;
            }
        }
    }
    if let Some(reference) = &a.scenario {
        match Engine::new(fixtures).load_scenario(reference) {
            Ok((s, _, warnings)) => {
                println!(
                    "scenario {} valid: {} MBSs, {} buildings, {} warning(s)",
                    s.name,
                    s.mbs.len(),
                    s.buildings.len(),
                    warnings.len()
                );
                for w in warnings {
                    println!("  warning: {w}");
                }
            }
            Err(e) => {
                eprintln!("scenario {reference}: {e}");
                ok = false;
            }
        }
    }
    Ok(if ok { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn serve(fixtures: &Path, a: ServeArgs) -> anyhow::Result<i32> {
    let file: ServiceConfig = match &a.config {
        Some(path) => toml::from_str(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
            .with_context(|| format!("parsing {}", path.display()))?,
        None => ServiceConfig::default(),
    };
    let port = a.port.or(file.port).unwrap_or(DEFAULT_PORT);
    let bind = a.bind.or(file.bind).unwrap_or_else(|| "127.0.0.1".into());
    let workers = a
        .workers
        .or(file.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(2, |n| n.get()));
    let fixtures = file.fixtures.unwrap_or_else(|| fixtures.to_path_buf());
    let mut engine = Engine::new(fixtures);
    let mut broker = ContextBroker::new(GeoPoint::new(37.2025, -80.434444, 0.0).expect("valid default location"));
    if let Some(path) = a.store.or(file.store) {
        let store = Arc::new(Store::open(&path)?);
        broker = broker.with_sink(store.clone());
        engine = engine.with_store(store);
    }
    let state = crate::api::AppState::new(engine, Arc::new(broker), workers);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((bind.as_str(), port)).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, crate::api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(EXIT_OK)
}

fn export(a: ExportArgs) -> anyhow::Result<i32> {
    let store = Store::open(&a.store)?;
    if a.purge {
        let stats = store.purge(&Retention::default(), now())?;
        eprintln!("purged {} record(s), {} retained", stats.removed, stats.retained);
    }
    let range = match (a.from, a.to) {
        (None, None) => None,
        (from, to) => Some((from.unwrap_or(i64::MIN), to.unwrap_or(i64::MAX))),
    };
    let records = match &a.kind {
        Some(k) => store.list(k.parse::<RecordKind>().map_err(anyhow::Error::msg)?, range),
        None => store
            .records()
            .into_iter()
            .filter(|r| range.is_none_or(|(f, t)| (f..=t).contains(&r.timestamp())))
            .collect(),
    };
    for r in records {
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(EXIT_OK)
}

fn timings(fixtures: &Path, a: TimingsArgs) -> anyhow::Result<i32> {
    if a.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let engine = a.experiment.engine(fixtures)?;
    let mut all = Vec::with_capacity(a.runs);
    for _ in 0..a.runs {
        let done = engine
            .run(a.experiment.request(Mode::FeedbackLoop), new_experiment_id())
            .map_err(|e: EngineError| anyhow::anyhow!(e))?;
        all.push(done.output.timings);
    }
    println!("{} run(s)", a.runs);
    print!("{}", timings_table(&all));
    Ok(EXIT_OK)
}
