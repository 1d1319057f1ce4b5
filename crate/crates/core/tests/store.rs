mod common;

use std::fs::OpenOptions;
use std::io::Write;
use std::sync::Arc;

use coexist_core::context::{ContextBroker, ContextKind, ContextSnapshot, StaticProvider, WeatherKind};
use coexist_core::policy::{PolicySet, PriorityRecord};
use coexist_core::store::{
    EntityKind, ExperimentRecord, PolicyRecord, Record, RecordKind, Registration, Retention, Store, StoreError,
};
use common::fss_point;

fn snapshot_at(ts: i64) -> ContextSnapshot {
    let mut c = ContextSnapshot::clear(fss_point());
    c.timestamp = ts;
    c.id = format!("trace:weather:{ts}:row");
    c
}

fn experiment(id: &str, created_at: i64, context: &str) -> ExperimentRecord {
    ExperimentRecord {
        id: id.into(),
        created_at,
        scenario_name: "s".into(),
        policy_version: "p1".into(),
        context_snapshot_id: context.into(),
        converged: true,
        body: serde_json::json!({"ez_radius_m": 500.0}),
    }
}

fn registration(id: &str, kind: EntityKind) -> Registration {
    Registration {
        id: id.into(),
        kind,
        scenario: Some("s".into()),
        location: Some(fss_point()),
        parameters: serde_json::json!({"height_m": 4.5}),
        registered_at: 10,
    }
}

#[test]
fn registration_round_trip_and_constraints() {
    let store = Store::in_memory();
    let r = registration("fss", EntityKind::Fss);
    store.put(Record::Registration(r.clone())).unwrap();
    assert_eq!(store.registration(EntityKind::Fss, "fss").unwrap(), r);

    let dup = store.put(Record::Registration(r.clone())).unwrap_err();
    assert!(matches!(dup, StoreError::Constraint(_)), "{dup}");
    let second_fss = store
        .put(Record::Registration(registration("fss2", EntityKind::Fss)))
        .unwrap_err();
    assert!(second_fss.to_string().contains("already has FSS"));
    // Same id under a different kind is fine.
    store
        .put(Record::Registration(registration("fss", EntityKind::Mbs)))
        .unwrap();

    let missing = store.registration(EntityKind::Su, "ghost").unwrap_err();
    assert!(matches!(
        missing,
        StoreError::NotFound {
            kind: RecordKind::Registration,
            ..
        }
    ));
}

#[test]
fn list_filters_by_kind_and_time() {
    let store = Store::in_memory();
    for ts in [100, 200, 300] {
        store.put(Record::Context(snapshot_at(ts))).unwrap();
    }
    store
        .put(Record::Experiment(experiment("e", 250, "trace:weather:200:row")))
        .unwrap();
    assert_eq!(store.list(RecordKind::Context, None).len(), 3);
    assert_eq!(store.list(RecordKind::Context, Some((150, 300))).len(), 2);
    assert_eq!(store.list(RecordKind::Experiment, Some((0, 249))).len(), 0);
    // Identical snapshots are stored once.
    store.put(Record::Context(snapshot_at(100))).unwrap();
    assert_eq!(store.list(RecordKind::Context, None).len(), 3);
}

#[test]
fn experiments_are_append_only() {
    let store = Store::in_memory();
    store.put(Record::Experiment(experiment("e1", 1, "c"))).unwrap();
    let err = store.put(Record::Experiment(experiment("e1", 2, "c"))).unwrap_err();
    assert!(err.to_string().contains("already stored"));
    assert_eq!(store.experiment("e1").unwrap().created_at, 1);
}

#[test]
fn policy_versions_are_immutable() {
    let store = Store::in_memory();
    let p = PolicySet::default_12ghz();
    let rec = PolicyRecord {
        version: p.version.clone(),
        stored_at: 0,
        policy: p.clone(),
    };
    store.put(Record::Policy(rec.clone())).unwrap();
    store.put(Record::Policy(rec.clone())).unwrap();
    assert_eq!(store.list(RecordKind::Policy, None).len(), 1);
    let mut changed = rec;
    changed.policy.exclusion_zone.step_m = 250.0;
    assert!(store.put(Record::Policy(changed)).is_err());
    assert_eq!(store.policy(&p.version).unwrap().policy, p);
}

#[test]
fn purge_with_infinite_retention_keeps_everything() {
    let store = Store::in_memory();
    for ts in [0, 1, 2] {
        store.put(Record::Context(snapshot_at(ts))).unwrap();
    }
    let stats = store.purge(&Retention::KEEP_ALL, 1_000_000_000).unwrap();
    assert_eq!(stats.removed, 0);
    assert_eq!(store.len(), 3);
}

#[test]
fn purge_keeps_contexts_of_retained_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.jsonl");
    let store = Store::open(&path).unwrap();
    let day = 86_400;
    for (i, ts) in [0, 10 * day, 20 * day].iter().enumerate() {
        let c = snapshot_at(*ts);
        store.put(Record::Context(c.clone())).unwrap();
        store
            .put(Record::Experiment(experiment(&format!("e{i}"), *ts, &c.id)))
            .unwrap();
    }
    // An unreferenced old snapshot.
    store.put(Record::Context(snapshot_at(5 * day))).unwrap();

    let retention = Retention {
        context_max_age_s: Some(day),
        priority_max_age_s: Some(day),
        experiment_max_age_s: Some(15 * day),
    };
    let stats = store.purge(&retention, 25 * day).unwrap();
    let ids: Vec<String> = store.experiments().into_iter().map(|e| e.id).collect();
    assert_eq!(ids, ["e1", "e2"]);
    for e in store.experiments() {
        store
            .context(&e.context_snapshot_id)
            .expect("referenced context retained");
    }
    assert_eq!(store.list(RecordKind::Context, None).len(), 2);
    assert_eq!(stats.removed, 3);

    // The rewrite is durable and appends continue after it.
    store.put(Record::Context(snapshot_at(30 * day))).unwrap();
    drop(store);
    let reopened = Store::open(&path).unwrap();
    assert_eq!(reopened.len(), 5);
}

#[test]
fn priority_records_pin_their_context() {
    let store = Store::in_memory();
    let c = snapshot_at(0);
    store.put(Record::Context(c.clone())).unwrap();
    store
        .put(Record::Priority(PriorityRecord {
            user_id: "u".into(),
            score: 0.5,
            context_snapshot_id: c.id.clone(),
            computed_at: 100,
            stale: false,
        }))
        .unwrap();
    let retention = Retention {
        context_max_age_s: Some(10),
        priority_max_age_s: None,
        experiment_max_age_s: None,
    };
    store.purge(&retention, 1000).unwrap();
    assert!(store.context(&c.id).is_ok());
}

#[test]
fn reopen_recovers_acknowledged_writes_after_torn_tail() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("db.jsonl");
    {
        let store = Store::open(&path).unwrap();
        for ts in 0..5 {
            store.put(Record::Context(snapshot_at(ts))).unwrap();
        }
    }
    // Simulate a crash halfway through the next write.
    let mut f = OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(br#"{"kind":"context","data":{"id":"tor"#).unwrap();
    drop(f);

    let store = Store::open(&path).unwrap();
    assert_eq!(store.len(), 5);
    store.put(Record::Context(snapshot_at(99))).unwrap();
    drop(store);
    let store = Store::open(&path).unwrap();
    assert_eq!(store.len(), 6);
    assert!(store.context("trace:weather:99:row").is_ok());
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.jsonl");
    std::fs::write(&path, "not json\n{}\n").unwrap();
    let err = Store::open(&path).unwrap_err();
    assert!(matches!(err, StoreError::Corrupt { line: 1, .. }), "{err}");
}

#[test]
fn broker_history_flows_into_the_store() {
    let store = Arc::new(Store::in_memory());
    let broker = ContextBroker::new(fss_point()).with_sink(store.clone());
    broker.register(Arc::new(
        StaticProvider::new("static", WeatherKind::RainSnow, 10.0).unwrap(),
    ));
    let snap = broker.get_context(ContextKind::Weather, fss_point(), 0).unwrap();
    assert_eq!(store.context(&snap.id).unwrap().rain_rate_mm_per_hr, 10.0);
}
