//! Dynamic spectrum access: the exclusion-zone feedback loop, de-exclusion
//! and interactive single-step evaluation.
//!
//! Each loop iteration switches off every MBS inside the current
//! exclusion-zone radius, revokes any remaining MBS whose own I/N exceeds
//! the individual threshold, evaluates the aggregate I/N and grows the
//! radius by one step until the aggregate meets the context threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextSnapshot;
use crate::iet::{evaluate, IetError, InterferenceReport, World};
use crate::policy::{priority_score, threshold_for, PolicyError, PolicySet, PriorityRecord, SecondaryUser};

const RADIUS_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DsaError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Iet(#[from] IetError),
    #[error("unknown MBS id(s): {}", .0.join(", "))]
    UnknownMbs(Vec<String>),
    #[error("invalid controls: {0}")]
    InvalidControls(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevocationReason {
    InsideEz,
    IndividualExcess,
    Policy,
}

impl fmt::Display for RevocationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RevocationReason::InsideEz => "inside_ez",
            RevocationReason::IndividualExcess => "individual_excess",
            RevocationReason::Policy => "policy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub ez_radius_m: f64,
    pub aggregate_i_over_n_db: Option<f64>,
    pub active_count: usize,
    /// Wall time of the interference evaluation, microseconds.
    pub elapsed_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsaDecision {
    pub ez_radius_m: f64,
    pub revoked: BTreeMap<String, RevocationReason>,
    pub trace: Vec<TraceRow>,
    /// Accepted de-exclusion steps, kept apart from the growth trace.
    #[serde(default)]
    pub adjustments: Vec<TraceRow>,
    pub converged: bool,
    pub threshold_db: f64,
    pub individual_threshold_db: f64,
    pub context_snapshot_id: String,
}

/// Header of [`DsaDecision::trace_csv`].
pub const TRACE_CSV_HEADER: &str = "iteration,ez_m,aggregate_in_db,active_count,elapsed_ms";

pub(crate) fn format_db(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:.6}"))
}

impl DsaDecision {
    pub fn final_aggregate_db(&self) -> Option<f64> {
        self.adjustments
            .last()
            .or(self.trace.last())
            .and_then(|r| r.aggregate_i_over_n_db)
    }

    /// Trace as CSV. Wall-clock timings vary run to run; with
    /// `include_elapsed = false` the `elapsed_ms` column is left empty so
    /// the file is reproducible.
    pub fn trace_csv(&self, include_elapsed: bool) -> String {
        let mut out = format!("{TRACE_CSV_HEADER}\n");
        for row in &self.trace {
            let elapsed = if include_elapsed {
                format!("{:.3}", row.elapsed_us as f64 / 1000.0)
            } else {
                String::new()
            };
            out.push_str(&format!(
                "{},{},{},{},{elapsed}\n",
                row.iteration,
                row.ez_radius_m,
                format_db(row.aggregate_i_over_n_db),
                row.active_count
            ));
        }
        out
    }

    /// Controls that reproduce this decision in [`single_step`].
    pub fn controls(&self) -> StepControls {
        StepControls {
            ez_radius_m: Some(self.ez_radius_m),
            mbs: self
                .revoked
                .iter()
                .filter(|(_, r)| **r != RevocationReason::InsideEz)
                .map(|(id, _)| (id.clone(), false))
                .collect(),
            users: Vec::new(),
        }
    }

    /// Total IET wall time across the growth trace and adjustments, µs.
    pub fn evaluation_time_us(&self) -> u64 {
        self.trace.iter().chain(&self.adjustments).map(|r| r.elapsed_us).sum()
    }

    /// Same decision with all wall-time fields zeroed.
    pub fn without_timing(&self) -> Self {
        let zero = |rows: &[TraceRow]| {
            rows.iter()
                .map(|r| TraceRow {
                    elapsed_us: 0,
                    ..r.clone()
                })
                .collect()
        };
        Self {
            trace: zero(&self.trace),
            adjustments: zero(&self.adjustments),
            ..self.clone()
        }
    }
}

/// Everything the loop produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    pub decision: DsaDecision,
    /// Evaluation of the final active set.
    pub report: InterferenceReport,
    /// Every enabled MBS transmitting: the per-MBS individual I/N.
    pub baseline: InterferenceReport,
}

fn active_set(world: &World, revoked: &BTreeMap<String, RevocationReason>) -> BTreeSet<String> {
    world
        .sites()
        .iter()
        .filter(|s| !revoked.contains_key(&s.id))
        .map(|s| s.id.clone())
        .collect()
}

fn disabled(world: &World) -> BTreeMap<String, RevocationReason> {
    world
        .sites()
        .iter()
        .filter(|s| !s.enabled)
        .map(|s| (s.id.clone(), RevocationReason::Policy))
        .collect()
}

/// Runs the exclusion-zone feedback loop to convergence.
///
/// Never exceeds `⌈(max − min)/step⌉ + 1` iterations. When the largest
/// radius still fails, every MBS is shut down and the decision is flagged
/// unconverged.
pub fn run_feedback_loop(
    world: &World,
    context: &ContextSnapshot,
    policy: &PolicySet,
) -> Result<FeedbackOutcome, DsaError> {
    let threshold = threshold_for(context, policy)?;
    let individual_threshold = policy.individual_threshold(threshold);
    let rain = context.rain_rate_mm_per_hr;

    let mut revoked = disabled(world);
    let baseline = evaluate(world, &active_set(world, &revoked), rain)?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut final_report = None;
    let mut radius = policy.exclusion_zone.min_m;
    for (i, r) in policy.exclusion_zone.radii().into_iter().enumerate() {
        radius = r;
        for site in world.sites() {
            if !revoked.contains_key(&site.id) && site.link.distance_2d_m < r {
                revoked.insert(site.id.clone(), RevocationReason::InsideEz);
            }
        }
        for (id, m) in &baseline.per_mbs {
            if !revoked.contains_key(id) && m.i_over_n_db > individual_threshold {
                revoked.insert(id.clone(), RevocationReason::IndividualExcess);
            }
        }
        let report = evaluate(world, &active_set(world, &revoked), rain)?;
        trace.push(TraceRow {
            iteration: i + 1,
            ez_radius_m: r,
            aggregate_i_over_n_db: report.aggregate_i_over_n_db,
            active_count: report.active_mbs_count,
            elapsed_us: report.elapsed_us,
        });
        let ok = report.within(threshold);
        final_report = Some(report);
        if ok {
            converged = true;
            break;
        }
    }

    if !converged {
        for site in world.sites() {
            revoked.entry(site.id.clone()).or_insert(RevocationReason::Policy);
        }
        final_report = Some(evaluate(world, &BTreeSet::new(), rain)?);
    }

    Ok(FeedbackOutcome {
        decision: DsaDecision {
            ez_radius_m: radius,
            revoked,
            trace,
            adjustments: Vec::new(),
            converged,
            threshold_db: threshold,
            individual_threshold_db: individual_threshold,
            context_snapshot_id: context.id.clone(),
        },
        report: final_report.expect("at least one radius is evaluated"),
        baseline,
    })
}

/// Tries to shrink a converged exclusion zone by one step.
///
/// Applies only when the current aggregate sits at least `margin_db` below
/// the threshold. MBSs that were excluded solely by the zone and lie
/// outside the smaller radius are reactivated; the reduction is kept only
/// if the aggregate still meets the threshold.
pub fn de_exclusion_check(
    world: &World,
    decision: &DsaDecision,
    context: &ContextSnapshot,
    policy: &PolicySet,
    margin_db: f64,
) -> Result<DsaDecision, DsaError> {
    if !decision.converged {
        return Ok(decision.clone());
    }
    let threshold = threshold_for(context, policy)?;
    let headroom = decision
        .final_aggregate_db()
        .is_none_or(|agg| agg <= threshold - margin_db);
    let smaller = decision.ez_radius_m - policy.exclusion_zone.step_m;
    if !headroom || smaller < policy.exclusion_zone.min_m - RADIUS_EPS {
        return Ok(decision.clone());
    }

    let mut revoked = decision.revoked.clone();
    let mut reactivated = false;
    for site in world.sites() {
        if revoked.get(&site.id) == Some(&RevocationReason::InsideEz) && site.link.distance_2d_m >= smaller {
            revoked.remove(&site.id);
            reactivated = true;
        }
    }
    let report = evaluate(world, &active_set(world, &revoked), context.rain_rate_mm_per_hr)?;
    if !report.within(threshold) {
        return Ok(decision.clone());
    }
    let mut next = decision.clone();
    next.ez_radius_m = smaller;
    next.revoked = revoked;
    next.adjustments.push(TraceRow {
        iteration: decision.trace.len() + decision.adjustments.len() + 1,
        ez_radius_m: smaller,
        aggregate_i_over_n_db: report.aggregate_i_over_n_db,
        active_count: report.active_mbs_count,
        elapsed_us: report.elapsed_us,
    });
    tracing::debug!(radius = smaller, reactivated, "de-exclusion accepted");
    Ok(next)
}

/// Explicit control set for a what-if evaluation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepControls {
    /// MBSs closer than this to the FSS are off.
    #[serde(default)]
    pub ez_radius_m: Option<f64>,
    /// Per-MBS forced state, applied after the exclusion zone.
    #[serde(default)]
    pub mbs: BTreeMap<String, bool>,
    /// Secondary users to rank under the evaluated context.
    #[serde(default)]
    pub users: Vec<SecondaryUser>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub report: InterferenceReport,
    pub threshold_db: f64,
    pub verdict: Verdict,
    /// `threshold − aggregate`; `None` when nothing transmits.
    pub margin_db: Option<f64>,
    pub active: BTreeSet<String>,
    /// Users ordered by descending priority score.
    pub priorities: Vec<PriorityRecord>,
}

/// Applies `controls` once and judges the result against the threshold.
pub fn single_step(
    world: &World,
    controls: &StepControls,
    context: &ContextSnapshot,
    policy: &PolicySet,
) -> Result<StepOutcome, DsaError> {
    let unknown: Vec<String> = controls
        .mbs
        .keys()
        .filter(|id| world.site(id).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(DsaError::UnknownMbs(unknown));
    }
    if let Some(r) = controls.ez_radius_m {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(DsaError::InvalidControls(format!("ez_radius_m {r} must be >= 0")));
        }
    }
    let threshold = threshold_for(context, policy)?;
    let mut active = world.enabled_ids();
    if let Some(r) = controls.ez_radius_m {
        for site in world.sites() {
            if site.link.distance_2d_m < r {
                active.remove(&site.id);
            }
        }
    }
    for (id, on) in &controls.mbs {
        if *on {
            active.insert(id.clone());
        } else {
            active.remove(id);
        }
    }
    let report = evaluate(world, &active, context.rain_rate_mm_per_hr)?;
    let verdict = if report.within(threshold) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let mut priorities = controls
        .users
        .iter()
        .map(|u| {
            Ok(PriorityRecord {
                user_id: u.id.clone(),
                score: priority_score(u, context, policy)?,
                context_snapshot_id: context.id.clone(),
                computed_at: context.timestamp,
                stale: false,
            })
        })
        .collect::<Result<Vec<_>, PolicyError>>()?;
    priorities.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.user_id.cmp(&b.user_id)));
    Ok(StepOutcome {
        margin_db: report.aggregate_i_over_n_db.map(|a| threshold - a),
        threshold_db: threshold,
        verdict,
        active,
        priorities,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ez_radius_m: f64,
    pub aggregate_i_over_n_db: Option<f64>,
    pub active_count: usize,
}

pub const SWEEP_CSV_HEADER: &str = "ez_m,aggregate_in_db,active_count";

/// Aggregate I/N and active count for each radius, exclusion zone only.
pub fn sweep_ez(world: &World, context: &ContextSnapshot, radii: &[f64]) -> Result<Vec<SweepRow>, DsaError> {
    let enabled = world.enabled_ids();
    radii
        .iter()
        .map(|&r| {
            let active: BTreeSet<String> = world
                .sites()
                .iter()
                .filter(|s| enabled.contains(&s.id) && s.link.distance_2d_m >= r)
                .map(|s| s.id.clone())
                .collect();
            let report = evaluate(world, &active, context.rain_rate_mm_per_hr)?;
            Ok(SweepRow {
                ez_radius_m: r,
                aggregate_i_over_n_db: report.aggregate_i_over_n_db,
                active_count: report.active_mbs_count,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.ez_radius_m,
            format_db(r.aggregate_i_over_n_db),
            r.active_count
        ));
    }
    out
}
