//! Interference evaluation: per-beam, per-MBS and aggregate I/N at the FSS.
//!
//! Every beam of an active MBS contributes
//! `P_beam + G_mbs(beam → FSS) + G_fss(FSS ← MBS) − PL(MBS, FSS)` dBW.
//! Contributions are summed in watts per MBS and over all MBSs, and the
//! aggregate is referenced to the thermal noise floor `kTB`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::antenna::{fss_gain, mbs_beam_gain, Beam};
use crate::geo::{self, Building, Direction, EnuPoint, GeoError, SpatialIndex, DEFAULT_CELL_SIZE_M};
use crate::propagation::{link_id, path_loss, PropagationError, PropagationSample};
use crate::scenario::{drop_ues_for, Scenario};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IetError {
    #[error("no active beams")]
    NoActiveBeams,
    #[error("MBS {mbs_id}: {source}")]
    Propagation { mbs_id: String, source: PropagationError },
    #[error("MBS {mbs_id}: {source}")]
    Geometry { mbs_id: String, source: GeoError },
    #[error("invalid scenario geometry: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioParams {
    /// Conducted power per MBS, watts.
    pub total_power_w: f64,
    pub channel_bandwidth_hz: f64,
    pub noise_temperature_k: f64,
    /// `|U|` of the power split; the MBS's own beam count when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_split_ue_count: Option<u32>,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            total_power_w: 10.0,
            channel_bandwidth_hz: 1.0e8,
            noise_temperature_k: 290.0,
            power_split_ue_count: None,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.total_power_w > 0.0) {
            return Err("total_power_w must be > 0".into());
        }
        if !(self.channel_bandwidth_hz > 0.0) {
            return Err("channel_bandwidth_hz must be > 0".into());
        }
        if !(self.noise_temperature_k > 0.0) {
            return Err("noise_temperature_k must be > 0".into());
        }
        if self.power_split_ue_count == Some(0) {
            return Err("power_split_ue_count must be >= 1".into());
        }
        Ok(())
    }
}

/// Per-beam transmit power after an equal split over `ue_count` beams, dBW.
pub fn per_beam_power(total_power_w: f64, ue_count: u32) -> Result<f64, IetError> {
    if ue_count == 0 {
        return Err(IetError::NoActiveBeams);
    }
    Ok(10.0 * total_power_w.log10() - 10.0 * f64::from(ue_count).log10())
}

/// Thermal noise power `10·log10(kTB)`, dBW.
pub fn noise_floor(params: &RadioParams) -> f64 {
    10.0 * (BOLTZMANN * params.noise_temperature_k * params.channel_bandwidth_hz).log10()
}

/// The four dB terms of one beam's interference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamTerms {
    pub power_dbw: f64,
    pub mbs_gain_dbi: f64,
    pub fss_gain_dbi: f64,
    pub path_loss_db: f64,
}

impl BeamTerms {
    pub fn interference_dbw(&self) -> f64 {
        self.power_dbw + self.mbs_gain_dbi + self.fss_gain_dbi - self.path_loss_db
    }
}

/// Static geometry of one MBS → FSS link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub link_id: u64,
    pub distance_2d_m: f64,
    pub distance_3d_m: f64,
    pub los: bool,
    /// Direction of the FSS as seen from the MBS.
    pub toward_fss: Direction,
    /// Direction of the MBS as seen from the FSS.
    pub from_fss: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbsSite {
    pub id: String,
    pub position: EnuPoint,
    pub beams: Vec<Beam>,
    pub link: LinkGeometry,
    /// Administrative state from the scenario.
    pub enabled: bool,
}

/// Scenario with all geometry resolved: ENU positions, spatial index,
/// UE drops, LOS flags. Immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct World {
    scenario: Scenario,
    fss_position: EnuPoint,
    buildings: Vec<Building>,
    index: SpatialIndex,
    sites: Vec<MbsSite>,
}

impl World {
    pub fn prepare(scenario: &Scenario) -> Result<Self, IetError> {
        Self::prepare_with_cell_size(scenario, DEFAULT_CELL_SIZE_M)
    }

    pub fn prepare_with_cell_size(scenario: &Scenario, cell_m: f64) -> Result<Self, IetError> {
        let frame = scenario.frame();
        let fss_position = frame.to_enu(scenario.fss.location);
        let buildings = scenario
            .buildings_enu()
            .map_err(|e| IetError::Scenario(e.to_string()))?;
        let index = SpatialIndex::build(&buildings, cell_m);
        let sites = scenario
            .mbs
            .par_iter()
            .map(|m| {
                let position = frame.to_enu(m.location);
                let geometry_err = |source| IetError::Geometry {
                    mbs_id: m.id.clone(),
                    source,
                };
                let link = LinkGeometry {
                    link_id: link_id(&m.id),
                    distance_2d_m: geo::distance_2d(position, fss_position),
                    distance_3d_m: geo::distance_3d(position, fss_position),
                    los: geo::is_los(position, fss_position, &index, &buildings),
                    toward_fss: geo::angles_between(position, fss_position).map_err(geometry_err)?,
                    from_fss: geo::angles_between(fss_position, position).map_err(geometry_err)?,
                };
                Ok(MbsSite {
                    id: m.id.clone(),
                    position,
                    beams: drop_ues_for(m, position, &scenario.ue_drop, scenario.seeds.ue_drop),
                    link,
                    enabled: m.active,
                })
            })
            .collect::<Result<Vec<_>, IetError>>()?;
        Ok(Self {
            scenario: scenario.clone(),
            fss_position,
            buildings,
            index,
            sites,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn fss_position(&self) -> EnuPoint {
        self.fss_position
    }

    pub fn buildings(&self) -> &[Building] {
        &self.buildings
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    pub fn sites(&self) -> &[MbsSite] {
        &self.sites
    }

    pub fn site(&self, id: &str) -> Option<&MbsSite> {
        self.sites.iter().find(|s| s.id == id)
    }

    /// Ids of every administratively enabled MBS.
    pub fn enabled_ids(&self) -> BTreeSet<String> {
        self.sites.iter().filter(|s| s.enabled).map(|s| s.id.clone()).collect()
    }

    fn power_split_count(&self, site: &MbsSite) -> u32 {
        self.scenario
            .radio
            .power_split_ue_count
            .unwrap_or(site.beams.len() as u32)
    }
}

/// Link loss for a site under the given rain rate.
pub fn site_path_loss(world: &World, site: &MbsSite, rain_rate_mm_per_hr: f64) -> Result<PropagationSample, IetError> {
    path_loss(
        site.link.distance_3d_m,
        site.link.link_id,
        site.link.los,
        rain_rate_mm_per_hr,
        &world.scenario.path_loss_params(),
    )
    .map_err(|source| IetError::Propagation {
        mbs_id: site.id.clone(),
        source,
    })
}

/// Terms of one beam's interference at the FSS.
pub fn beam_terms(
    world: &World,
    site: &MbsSite,
    beam: &Beam,
    path_loss: &PropagationSample,
) -> Result<BeamTerms, IetError> {
    let s = &world.scenario;
    Ok(BeamTerms {
        power_dbw: per_beam_power(s.radio.total_power_w, world.power_split_count(site))?,
        mbs_gain_dbi: mbs_beam_gain(beam, site.link.toward_fss, &s.mbs_antenna),
        fss_gain_dbi: fss_gain(site.link.from_fss, &s.fss.antenna),
        path_loss_db: path_loss.total_db,
    })
}

/// Interference of one beam at the FSS, dBW.
pub fn beam_interference(
    world: &World,
    site: &MbsSite,
    beam: &Beam,
    rain_rate_mm_per_hr: f64,
) -> Result<f64, IetError> {
    let pl = site_path_loss(world, site, rain_rate_mm_per_hr)?;
    Ok(beam_terms(world, site, beam, &pl)?.interference_dbw())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamInterference {
    pub sector_index: u8,
    pub ue_index: u32,
    pub interference_dbw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbsInterference {
    pub interference_w: f64,
    pub i_over_n_db: f64,
    pub distance_2d_m: f64,
    pub distance_3d_m: f64,
    pub los: bool,
    pub path_loss: PropagationSample,
    pub beams: Vec<BeamInterference>,
}

/// Result of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceReport {
    pub radio: RadioParams,
    pub rain_rate_mm_per_hr: f64,
    pub noise_floor_dbw: f64,
    /// `None` when nothing transmits ("no interference").
    pub aggregate_i_over_n_db: Option<f64>,
    pub aggregate_interference_w: f64,
    pub active_mbs_count: usize,
    pub per_mbs: BTreeMap<String, MbsInterference>,
    pub elapsed_us: u64,
}

impl InterferenceReport {
    /// Whether the aggregate satisfies `threshold_db`. An empty active set
    /// always does.
    pub fn within(&self, threshold_db: f64) -> bool {
        self.aggregate_i_over_n_db.is_none_or(|v| v <= threshold_db)
    }

    /// Aggregate I/N for ordering comparisons; the sentinel sorts lowest.
    pub fn aggregate_for_ordering(&self) -> f64 {
        self.aggregate_i_over_n_db.unwrap_or(f64::NEG_INFINITY)
    }

    /// CSV with one row per MBS: `id,distance_m,los,individual_in_db`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,distance_m,los,individual_in_db\n");
        for (id, m) in &self.per_mbs {
            out.push_str(&format!("{id},{:.3},{},{:.6}\n", m.distance_2d_m, m.los, m.i_over_n_db));
        }
        out
    }

    /// Same report with the wall-time zeroed, for equality checks.
    pub fn without_timing(&self) -> Self {
        Self {
            elapsed_us: 0,
            ..self.clone()
        }
    }
}

/// Whether MBS evaluation is spread over the rayon pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

fn evaluate_site(world: &World, site: &MbsSite, rain: f64, noise_dbw: f64) -> Result<MbsInterference, IetError> {
    let pl = site_path_loss(world, site, rain)?;
    let mut beams = Vec::with_capacity(site.beams.len());
    let mut watts = 0.0;
    for beam in &site.beams {
        let dbw = beam_terms(world, site, beam, &pl)?.interference_dbw();
        watts += 10f64.powf(dbw / 10.0);
        beams.push(BeamInterference {
            sector_index: beam.sector_index,
            ue_index: beam.ue_index,
            interference_dbw: dbw,
        });
    }
    if beams.is_empty() {
        return Err(IetError::NoActiveBeams);
    }
    Ok(MbsInterference {
        interference_w: watts,
        i_over_n_db: 10.0 * watts.log10() - noise_dbw,
        distance_2d_m: site.link.distance_2d_m,
        distance_3d_m: site.link.distance_3d_m,
        los: site.link.los,
        path_loss: pl,
        beams,
    })
}

/// Aggregate I/N in dB from per-MBS interference powers in watts; `None`
/// when there are no contributors.
pub fn aggregate_i_over_n(per_mbs_w: &[f64], noise_floor_dbw: f64) -> Option<f64> {
    (!per_mbs_w.is_empty()).then(|| 10.0 * per_mbs_w.iter().sum::<f64>().log10() - noise_floor_dbw)
}

/// Evaluates the interference from every MBS in `active` (ids unknown to
/// the world are ignored).
pub fn evaluate(
    world: &World,
    active: &BTreeSet<String>,
    rain_rate_mm_per_hr: f64,
) -> Result<InterferenceReport, IetError> {
    evaluate_with(world, active, rain_rate_mm_per_hr, Execution::Parallel)
}

pub fn evaluate_with(
    world: &World,
    active: &BTreeSet<String>,
    rain_rate_mm_per_hr: f64,
    execution: Execution,
) -> Result<InterferenceReport, IetError> {
    let started = Instant::now();
    let radio = &world.scenario.radio;
    let noise_dbw = noise_floor(radio);
    let selected: Vec<&MbsSite> = world.sites.iter().filter(|s| active.contains(&s.id)).collect();
    let eval =
        |site: &&MbsSite| evaluate_site(world, site, rain_rate_mm_per_hr, noise_dbw).map(|r| (site.id.clone(), r));
    let results: Vec<(String, MbsInterference)> = match execution {
        Execution::Parallel => selected.par_iter().map(eval).collect::<Result<_, _>>()?,
        Execution::Sequential => selected.iter().map(eval).collect::<Result<_, _>>()?,
    };
    let per_mbs: BTreeMap<String, MbsInterference> = results.into_iter().collect();
    // Summed in id order so the result is independent of scenario order.
    let watts: Vec<f64> = per_mbs.values().map(|m| m.interference_w).collect();
    let total_w: f64 = watts.iter().sum();
    let aggregate = aggregate_i_over_n(&watts, noise_dbw);
    Ok(InterferenceReport {
        radio: radio.clone(),
        rain_rate_mm_per_hr,
        noise_floor_dbw: noise_dbw,
        aggregate_i_over_n_db: aggregate,
        aggregate_interference_w: total_w,
        active_mbs_count: per_mbs.len(),
        per_mbs,
        elapsed_us: started.elapsed().as_micros() as u64,
    })
}
