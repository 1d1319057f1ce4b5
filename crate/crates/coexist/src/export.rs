//! Experiment exports: CSV tables, a plain-text summary and the map GeoJSON
//! consumed by the web UI.

use std::fmt::Write as _;

use coexist_core::dsaf::RevocationReason;
use coexist_core::geo::{EnuFrame, EnuPoint};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{ExperimentOutput, Mode, StageTimings};

/// Vertices of the exclusion-zone polygon, closing vertex excluded.
pub const EZ_POLYGON_VERTICES: usize = 72;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceTier {
    High,
    Medium,
    Low,
}

/// Tier cut points relative to the aggregate threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierCuts {
    /// Individual I/N at most this far below the threshold is `medium`.
    pub medium_band_db: f64,
}

impl Default for TierCuts {
    fn default() -> Self {
        Self { medium_band_db: 10.0 }
    }
}

impl TierCuts {
    pub fn tier(&self, individual_in_db: f64, threshold_db: f64) -> InterferenceTier {
        if individual_in_db >= threshold_db {
            InterferenceTier::High
        } else if individual_in_db >= threshold_db - self.medium_band_db {
            InterferenceTier::Medium
        } else {
            InterferenceTier::Low
        }
    }
}

/// Exclusion-zone radius in force for the experiment, if any.
pub fn ez_radius(out: &ExperimentOutput) -> Option<f64> {
    match out.request.mode {
        Mode::FeedbackLoop => out.decision.as_ref().map(|d| d.ez_radius_m),
        Mode::SingleStep => out.request.controls.as_ref().and_then(|c| c.ez_radius_m),
        Mode::EzSweep => None,
    }
}

/// Per-MBS state as `(active, revoked_reason)`.
fn mbs_state(out: &ExperimentOutput, id: &str, enabled: bool) -> (bool, Option<String>) {
    match out.request.mode {
        Mode::FeedbackLoop => match out.decision.as_ref().and_then(|d| d.revoked.get(id)) {
            Some(r) => (false, Some(r.to_string())),
            None => (true, None),
        },
        Mode::SingleStep => {
            let active = out.step.as_ref().is_some_and(|s| s.active.contains(id));
            (active, (!active).then(|| "controls".to_string()))
        }
        Mode::EzSweep => (enabled, (!enabled).then(|| RevocationReason::Policy.to_string())),
    }
}

fn circle_ring(out: &ExperimentOutput, radius_m: f64) -> Vec<[f64; 2]> {
    let frame = EnuFrame::new(out.fss);
    let mut ring: Vec<[f64; 2]> = (0..EZ_POLYGON_VERTICES)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / EZ_POLYGON_VERTICES as f64;
            let g = frame.to_geo(EnuPoint::new(radius_m * a.sin(), radius_m * a.cos(), 0.0));
            [g.longitude_deg, g.latitude_deg]
        })
        .collect();
    ring.push(ring[0]);
    ring
}

/// FeatureCollection with the FSS point, one point per MBS and the
/// exclusion-zone circle.
pub fn map_geojson(out: &ExperimentOutput, cuts: &TierCuts) -> Value {
    let threshold = out.threshold_db;
    let mut features = vec![json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": [out.fss.longitude_deg, out.fss.latitude_deg]},
        "properties": {
            "role": "fss",
            "threshold_db": threshold,
            "weather": out.context.weather_kind.as_str(),
            "rain_rate_mm_per_hr": out.context.rain_rate_mm_per_hr,
        },
    })];
    for site in &out.sites {
        let (active, reason) = mbs_state(out, &site.id, site.enabled);
        let individual = out.baseline.per_mbs.get(&site.id).map(|m| m.i_over_n_db);
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [site.location.longitude_deg, site.location.latitude_deg]},
            "properties": {
                "role": "mbs",
                "id": site.id,
                "active": active,
                "revoked_reason": reason,
                "individual_in_db": individual,
                "interference_tier": individual.map(|v| cuts.tier(v, threshold)),
                "distance_m": site.distance_m,
                "los": site.los,
            },
        }));
    }
    if let Some(r) = ez_radius(out) {
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [circle_ring(out, r)]},
            "properties": {"role": "exclusion_zone", "radius_m": r},
        }));
    }
    json!({
        "type": "FeatureCollection",
        "schema_version": crate::engine::RECORD_SCHEMA_VERSION,
        "experiment_id": out.id,
        "features": features,
    })
}

fn db(v: Option<f64>) -> String {
    v.map_or_else(|| "none (no active MBS)".into(), |x| format!("{x:.3} dB"))
}

/// Human-readable run summary.
pub fn summary_text(out: &ExperimentOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment      {}", out.id);
    let _ = writeln!(s, "scenario        {}", out.scenario_name);
    let _ = writeln!(s, "policy          {}", out.policy_version);
    let _ = writeln!(
        s,
        "context         {} ({} mm/h) [{}]",
        out.context.weather_kind.as_str(),
        out.context.rain_rate_mm_per_hr,
        out.context.id
    );
    let _ = writeln!(
        s,
        "seeds           ue_drop={} shadow={}",
        out.seeds.ue_drop, out.seeds.shadow
    );
    let _ = writeln!(s, "threshold       {:.3} dB", out.threshold_db);
    let _ = writeln!(s, "MBSs            {}", out.sites.len());
    let _ = writeln!(s, "baseline I/N    {}", db(out.baseline.aggregate_i_over_n_db));
    match out.request.mode {
        Mode::FeedbackLoop => {
            if let Some(d) = &out.decision {
                let _ = writeln!(s, "converged       {}", d.converged);
                let _ = writeln!(s, "EZ radius       {} m", d.ez_radius_m);
                let _ = writeln!(s, "iterations      {}", d.trace.len());
                let _ = writeln!(s, "final I/N       {}", db(d.final_aggregate_db()));
                let _ = writeln!(s, "revoked         {}", d.revoked.len());
                for (id, r) in &d.revoked {
                    let _ = writeln!(s, "  {id:<12} {r}");
                }
            }
        }
        Mode::SingleStep => {
            if let Some(st) = &out.step {
                let _ = writeln!(s, "verdict         {:?}", st.verdict);
                let _ = writeln!(s, "aggregate I/N   {}", db(st.report.aggregate_i_over_n_db));
                let _ = writeln!(s, "active          {}", st.active.len());
            }
        }
        Mode::EzSweep => {
            if let Some(rows) = &out.sweep {
                let _ = writeln!(s, "sweep rows      {}", rows.len());
            }
        }
    }
    s.push_str(&timings_block(&out.timings));
    s
}

fn timings_block(t: &StageTimings) -> String {
    let mut s = String::from("timings\n");
    for (name, v) in StageTimings::STAGES.iter().zip(t.stage_values()) {
        let _ = writeln!(s, "  {name:<30} {v:>10.3} ms");
    }
    let _ = writeln!(s, "  {:<30} {:>10.3} ms", "Total", t.total_ms);
    s
}

/// Mean and maximum per stage over repeated runs, as a table.
pub fn timings_table(runs: &[StageTimings]) -> String {
    let mut s = format!("{:<30} {:>12} {:>12} {:>8}\n", "stage", "mean_ms", "max_ms", "share");
    if runs.is_empty() {
        return s;
    }
    let n = runs.len() as f64;
    let total_mean = runs.iter().map(|t| t.total_ms).sum::<f64>() / n;
    let rows = StageTimings::STAGES
        .iter()
        .enumerate()
        .map(|(i, name)| (*name, runs.iter().map(|t| t.stage_values()[i]).collect::<Vec<_>>()))
        .chain(std::iter::once(("Total", runs.iter().map(|t| t.total_ms).collect())));
    for (name, vals) in rows {
        let mean = vals.iter().sum::<f64>() / n;
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let share = if total_mean > 0.0 {
            100.0 * mean / total_mean
        } else {
            0.0
        };
        let _ = writeln!(s, "{name:<30} {mean:>12.3} {max:>12.3} {share:>7.1}%");
    }
    s
}
