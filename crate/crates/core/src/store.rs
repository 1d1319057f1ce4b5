//! Append-only record store backed by a JSON-lines file.
//!
//! Every record is one line. Opening a store replays the file; a torn final
//! line (crash mid-write) is skipped with a warning. Purging rewrites the file
//! through a temporary sibling and an atomic rename.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{ContextSnapshot, SnapshotSink};
use crate::geo::GeoPoint;
use crate::policy::{PolicySet, PriorityRecord};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store record at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("store serialization error: {0}")]
    Serialize(String),
    #[error("{kind} {id:?} not found")]
    NotFound { kind: RecordKind, id: String },
    #[error("rejected: {0}")]
    Constraint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Fss,
    Mbs,
    Su,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub id: String,
    pub kind: EntityKind,
    /// Scenario the entity belongs to; the FSS is unique per scenario.
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub location: Option<GeoPoint>,
    #[serde(default)]
    pub parameters: serde_json::Value,
    pub registered_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub version: String,
    pub stored_at: i64,
    pub policy: PolicySet,
}

/// Header of a finished experiment plus its full serialized body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub created_at: i64,
    pub scenario_name: String,
    pub policy_version: String,
    pub context_snapshot_id: String,
    pub converged: bool,
    pub body: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Registration,
    Context,
    Priority,
    Policy,
    Experiment,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Registration => "registration",
            RecordKind::Context => "context",
            RecordKind::Priority => "priority",
            RecordKind::Policy => "policy",
            RecordKind::Experiment => "experiment",
        })
    }
}

impl std::str::FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "registration" | "registrations" => RecordKind::Registration,
            "context" | "contexts" => RecordKind::Context,
            "priority" | "priorities" => RecordKind::Priority,
            "policy" | "policies" => RecordKind::Policy,
            "experiment" | "experiments" => RecordKind::Experiment,
            other => return Err(format!("unknown record kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Record {
    Registration(Registration),
    Context(ContextSnapshot),
    Priority(PriorityRecord),
    Policy(PolicyRecord),
    Experiment(ExperimentRecord),
}

impl Record {
    pub fn kind(&self) -> RecordKind {
        match self {
            Record::Registration(_) => RecordKind::Registration,
            Record::Context(_) => RecordKind::Context,
            Record::Priority(_) => RecordKind::Priority,
            Record::Policy(_) => RecordKind::Policy,
            Record::Experiment(_) => RecordKind::Experiment,
        }
    }

    pub fn timestamp(&self) -> i64 {
        match self {
            Record::Registration(r) => r.registered_at,
            Record::Context(c) => c.timestamp,
            Record::Priority(p) => p.computed_at,
            Record::Policy(p) => p.stored_at,
            Record::Experiment(e) => e.created_at,
        }
    }

    pub fn id(&self) -> String {
        match self {
            Record::Registration(r) => r.id.clone(),
            Record::Context(c) => c.id.clone(),
            Record::Priority(p) => format!("{}@{}", p.user_id, p.context_snapshot_id),
            Record::Policy(p) => p.version.clone(),
            Record::Experiment(e) => e.id.clone(),
        }
    }
}

/// Maximum age per record kind in seconds; `None` keeps records forever.
/// Registrations and policies are never purged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub context_max_age_s: Option<i64>,
    pub priority_max_age_s: Option<i64>,
    pub experiment_max_age_s: Option<i64>,
}

impl Retention {
    pub const KEEP_ALL: Retention = Retention {
        context_max_age_s: None,
        priority_max_age_s: None,
        experiment_max_age_s: None,
    };
}

impl Default for Retention {
    fn default() -> Self {
        const NINETY_DAYS: i64 = 90 * 86_400;
        Self {
            context_max_age_s: Some(NINETY_DAYS),
            priority_max_age_s: Some(NINETY_DAYS),
            experiment_max_age_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PurgeStats {
    pub removed: usize,
    pub retained: usize,
}

struct Inner {
    records: Vec<Record>,
    file: Option<File>,
}

pub struct Store {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("path", &self.path)
            .field("len", &self.len())
            .finish()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn encode(record: &Record) -> Result<String, StoreError> {
    serde_json::to_string(record).map_err(|e| StoreError::Serialize(e.to_string()))
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                records: Vec::new(),
                file: None,
            }),
        }
    }

    /// Opens (creating if absent) and replays a store file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut records = Vec::new();
        let mut torn = false;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>().map_err(io_err(&path))?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Record>(line) {
                    Ok(r) => records.push(r),
                    Err(e) if i + 1 == last => {
                        tracing::warn!(line = i + 1, error = %e, "skipping torn final store record");
                        torn = true;
                    }
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let store = Self {
            path: Some(path.clone()),
            inner: Mutex::new(Inner { records, file: None }),
        };
        {
            let mut inner = store.inner.lock().expect("store lock");
            if torn {
                // Drop the partial line so later appends start on a fresh one.
                let retained = inner.records.clone();
                store.rewrite(&path, &retained)?;
            }
            inner.file = Some(Self::append_handle(&path)?);
        }
        Ok(store)
    }

    fn append_handle(path: &Path) -> Result<File, StoreError> {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))
    }

    fn rewrite(&self, path: &Path, records: &[Record]) -> Result<(), StoreError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            for r in records {
                writeln!(f, "{}", encode(r)?).map_err(io_err(&tmp))?;
            }
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(records: &[Record], record: &Record) -> Result<bool, StoreError> {
        match record {
            Record::Registration(r) => {
                for existing in records {
                    let Record::Registration(e) = existing else { continue };
                    if e.kind == r.kind && e.id == r.id {
                        return Err(StoreError::Constraint(format!(
                            "duplicate {:?} registration {:?}",
                            r.kind, r.id
                        )));
                    }
                    if r.kind == EntityKind::Fss && e.kind == EntityKind::Fss && e.scenario == r.scenario {
                        return Err(StoreError::Constraint(format!(
                            "scenario {:?} already has FSS {:?}",
                            r.scenario.as_deref().unwrap_or(""),
                            e.id
                        )));
                    }
                }
                Ok(true)
            }
            Record::Experiment(x) => {
                if records
                    .iter()
                    .any(|e| matches!(e, Record::Experiment(e) if e.id == x.id))
                {
                    return Err(StoreError::Constraint(format!("experiment {:?} already stored", x.id)));
                }
                Ok(true)
            }
            // Re-recording an identical snapshot or policy version is a no-op.
            Record::Context(c) => Ok(!records.iter().any(|e| matches!(e, Record::Context(e) if e.id == c.id))),
            Record::Policy(p) => {
                match records.iter().find_map(|e| match e {
                    Record::Policy(e) if e.version == p.version => Some(e),
                    _ => None,
                }) {
                    Some(e) if e.policy == p.policy => Ok(false),
                    Some(_) => Err(StoreError::Constraint(format!(
                        "policy version {:?} already stored with different content",
                        p.version
                    ))),
                    None => Ok(true),
                }
            }
            Record::Priority(_) => Ok(true),
        }
    }

    /// Validates and appends one record, flushed to disk before returning.
    pub fn put(&self, record: Record) -> Result<(), StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        if !Self::check(&inner.records, &record)? {
            return Ok(());
        }
        let line = encode(&record)?;
        if let (Some(file), Some(path)) = (inner.file.as_mut(), self.path.as_deref()) {
            file.write_all(format!("{line}\n").as_bytes()).map_err(io_err(path))?;
            file.sync_data().map_err(io_err(path))?;
        }
        inner.records.push(record);
        Ok(())
    }

    /// Records of one kind, optionally restricted to `from <= timestamp <= to`.
    pub fn list(&self, kind: RecordKind, range: Option<(i64, i64)>) -> Vec<Record> {
        self.inner
            .lock()
            .expect("store lock")
            .records
            .iter()
            .filter(|r| r.kind() == kind)
            .filter(|r| range.is_none_or(|(from, to)| (from..=to).contains(&r.timestamp())))
            .cloned()
            .collect()
    }

    pub fn records(&self) -> Vec<Record> {
        self.inner.lock().expect("store lock").records.clone()
    }

    fn find<T>(&self, kind: RecordKind, id: &str, f: impl Fn(&Record) -> Option<T>) -> Result<T, StoreError> {
        self.inner
            .lock()
            .expect("store lock")
            .records
            .iter()
            .rev()
            .find_map(f)
            .ok_or_else(|| StoreError::NotFound {
                kind,
                id: id.to_string(),
            })
    }

    pub fn registration(&self, kind: EntityKind, id: &str) -> Result<Registration, StoreError> {
        self.find(RecordKind::Registration, id, |r| match r {
            Record::Registration(x) if x.kind == kind && x.id == id => Some(x.clone()),
            _ => None,
        })
    }

    pub fn context(&self, id: &str) -> Result<ContextSnapshot, StoreError> {
        self.find(RecordKind::Context, id, |r| match r {
            Record::Context(x) if x.id == id => Some(x.clone()),
            _ => None,
        })
    }

    pub fn policy(&self, version: &str) -> Result<PolicyRecord, StoreError> {
        self.find(RecordKind::Policy, version, |r| match r {
            Record::Policy(x) if x.version == version => Some(x.clone()),
            _ => None,
        })
    }

    pub fn experiment(&self, id: &str) -> Result<ExperimentRecord, StoreError> {
        self.find(RecordKind::Experiment, id, |r| match r {
            Record::Experiment(x) if x.id == id => Some(x.clone()),
            _ => None,
        })
    }

    pub fn experiments(&self) -> Vec<ExperimentRecord> {
        self.list(RecordKind::Experiment, None)
            .into_iter()
            .filter_map(|r| match r {
                Record::Experiment(e) => Some(e),
                _ => None,
            })
            .collect()
    }

    /// Drops records older than the retention allows at time `now`.
    /// Context snapshots referenced by a retained experiment or priority
    /// record are kept regardless of age.
    pub fn purge(&self, retention: &Retention, now: i64) -> Result<PurgeStats, StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        let expired = |max: Option<i64>, ts: i64| max.is_some_and(|m| now - ts > m);
        let keep_direct = |r: &Record| match r {
            Record::Priority(p) => !expired(retention.priority_max_age_s, p.computed_at),
            Record::Experiment(e) => !expired(retention.experiment_max_age_s, e.created_at),
            _ => true,
        };
        let referenced: BTreeSet<&str> = inner
            .records
            .iter()
            .filter(|r| keep_direct(r))
            .filter_map(|r| match r {
                Record::Priority(p) => Some(p.context_snapshot_id.as_str()),
                Record::Experiment(e) => Some(e.context_snapshot_id.as_str()),
                _ => None,
            })
            .collect();
        let retained: Vec<Record> = inner
            .records
            .iter()
            .filter(|r| match r {
                Record::Context(c) => {
                    referenced.contains(c.id.as_str()) || !expired(retention.context_max_age_s, c.timestamp)
                }
                other => keep_direct(other),
            })
            .cloned()
            .collect();
        let stats = PurgeStats {
            removed: inner.records.len() - retained.len(),
            retained: retained.len(),
        };
        if stats.removed == 0 {
            return Ok(stats);
        }
        if let Some(path) = self.path.as_deref() {
            inner.file = None;
            self.rewrite(path, &retained)?;
            inner.file = Some(Self::append_handle(path)?);
        }
        inner.records = retained;
        Ok(stats)
    }
}

impl SnapshotSink for Store {
    fn record(&self, snapshot: &ContextSnapshot) {
        if let Err(e) = self.put(Record::Context(snapshot.clone())) {
            tracing::error!(error = %e, snapshot = %snapshot.id, "failed to persist context snapshot");
        }
    }
}
