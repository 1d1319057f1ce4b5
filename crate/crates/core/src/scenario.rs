//! World model and fixture ingestion.
//!
//! A scenario is described by a TOML manifest that embeds every parameter
//! and seed and points at two data files: an OpenCellID-style MBS CSV
//! (`id,lat,lon,height_m`, extra columns ignored) and a GeoJSON
//! FeatureCollection of building footprints. Local ENU geometry is never
//! stored; it is recomputed from lat/lon with the FSS as origin.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::antenna::{AntennaError, Beam, FssAntennaParams, MbsAntennaParams, SECTOR_WIDTH_DEG};
use crate::geo::{self, Building, EnuFrame, EnuPoint, GeoError, GeoPoint};
use crate::iet::RadioParams;
use crate::propagation::{keyed_seed, link_id, PathLossParams, PropagationError};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_RADIUS_M: f64 = 5000.0;
pub const DEFAULT_BUILDING_HEIGHT_M: f64 = 15.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("MBS CSV {path}, line {line}: {message}")]
    Csv { path: PathBuf, line: u64, message: String },
    #[error("GeoJSON {path}, feature {feature}: {message}")]
    GeoJson {
        path: PathBuf,
        feature: String,
        message: String,
    },
    #[error("scenario has no FSS receiver")]
    MissingFss,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Antenna(#[from] AntennaError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FssReceiver {
    pub id: String,
    pub location: GeoPoint,
    pub antenna: FssAntennaParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroBaseStation {
    pub id: String,
    pub location: GeoPoint,
    pub sector_azimuths_deg: [f64; 3],
    pub ue_per_sector: u32,
    /// Administrative state; an inactive MBS never transmits.
    pub active: bool,
}

/// Building as ingested: WGS84 footprint ring `[lon, lat]` plus height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingFootprint {
    pub id: String,
    pub ring_lonlat: Vec<[f64; 2]>,
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UeDropParams {
    pub min_radius_m: f64,
    pub coverage_radius_m: f64,
    pub ue_height_m: f64,
}

impl Default for UeDropParams {
    fn default() -> Self {
        Self {
            min_radius_m: 35.0,
            coverage_radius_m: 500.0,
            ue_height_m: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandPlan {
    pub low_ghz: f64,
    pub high_ghz: f64,
    pub channels: u32,
}

impl Default for BandPlan {
    fn default() -> Self {
        Self {
            low_ghz: 12.2,
            high_ghz: 12.7,
            channels: 5,
        }
    }
}

impl BandPlan {
    pub fn channel_bandwidth_hz(&self) -> f64 {
        (self.high_ghz - self.low_ghz) * 1e9 / f64::from(self.channels)
    }

    pub fn center_ghz(&self) -> f64 {
        0.5 * (self.low_ghz + self.high_ghz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub ue_drop: u64,
    pub shadow: u64,
}

impl Seeds {
    /// Two independent seeds derived from one master seed.
    pub fn from_master(seed: u64) -> Self {
        Self {
            ue_drop: keyed_seed(seed, 1),
            shadow: keyed_seed(seed, 2),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(42)
    }
}

/// Immutable world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub fss: FssReceiver,
    pub mbs: Vec<MacroBaseStation>,
    pub buildings: Vec<BuildingFootprint>,
    pub radio: RadioParams,
    pub path_loss: PathLossParams,
    pub mbs_antenna: MbsAntennaParams,
    pub ue_drop: UeDropParams,
    pub seeds: Seeds,
    pub band: BandPlan,
    pub max_radius_m: f64,
    /// Weather trace CSV, relative to the manifest directory.
    pub weather_trace: Option<PathBuf>,
}

impl Scenario {
    /// Empty world around an FSS, default parameters.
    pub fn new(name: impl Into<String>, fss: FssReceiver) -> Self {
        Self {
            name: name.into(),
            fss,
            mbs: Vec::new(),
            buildings: Vec::new(),
            radio: RadioParams::default(),
            path_loss: PathLossParams::default(),
            mbs_antenna: MbsAntennaParams::default(),
            ue_drop: UeDropParams::default(),
            seeds: Seeds::default(),
            band: BandPlan::default(),
            max_radius_m: DEFAULT_MAX_RADIUS_M,
            weather_trace: None,
        }
    }

    pub fn frame(&self) -> EnuFrame {
        EnuFrame::new(self.fss.location)
    }

    /// Path loss parameters with the scenario's shadow seed applied.
    pub fn path_loss_params(&self) -> PathLossParams {
        PathLossParams {
            shadow_seed: self.seeds.shadow,
            ..self.path_loss.clone()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds::from_master(seed);
        self
    }

    pub fn mbs_by_id(&self, id: &str) -> Option<&MacroBaseStation> {
        self.mbs.iter().find(|m| m.id == id)
    }

    /// Footprints converted into the scenario frame.
    pub fn buildings_enu(&self) -> Result<Vec<Building>, GeoError> {
        let frame = self.frame();
        self.buildings
            .iter()
            .map(|b| {
                let ring = b
                    .ring_lonlat
                    .iter()
                    .map(|&[lon, lat]| {
                        let p = frame.to_enu(GeoPoint {
                            latitude_deg: lat,
                            longitude_deg: lon,
                            height_m: 0.0,
                        });
                        [p.east_m, p.north_m]
                    })
                    .collect();
                Building::new(b.id.clone(), ring, b.height_m)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.fss.location.validate()?;
        if !(self.fss.location.height_m > 0.0) {
            return Err(ScenarioError::Invalid("FSS height must be > 0".into()));
        }
        self.fss.antenna.validate()?;
        self.mbs_antenna.validate()?;
        self.path_loss.validate()?;
        self.radio.validate().map_err(ScenarioError::Invalid)?;
        let u = &self.ue_drop;
        if !(u.min_radius_m > 0.0 && u.min_radius_m < u.coverage_radius_m && u.ue_height_m >= 0.0) {
            return Err(ScenarioError::Invalid(
                "UE drop needs 0 < min_radius < coverage_radius".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        ids.insert(self.fss.id.as_str());
        for m in &self.mbs {
            m.location.validate()?;
            if !ids.insert(m.id.as_str()) {
                return Err(ScenarioError::DuplicateId(m.id.clone()));
            }
        }
        let mut bids = BTreeSet::new();
        for b in &self.buildings {
            if !bids.insert(b.id.as_str()) {
                return Err(ScenarioError::DuplicateId(b.id.clone()));
            }
        }
        self.buildings_enu()?;
        Ok(())
    }
}

/// Result of [`load_scenario`]: the world plus any non-fatal warnings.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub warnings: Vec<String>,
    pub dropped_mbs: usize,
    pub defaulted_heights: usize,
    pub dropped_buildings: usize,
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    name: String,
    #[serde(default = "default_max_radius")]
    max_radius_m: f64,
    files: ManifestFiles,
    fss: ManifestFss,
    #[serde(default)]
    mbs_defaults: MbsDefaults,
    #[serde(default)]
    radio: RadioParams,
    #[serde(default)]
    propagation: PropagationSection,
    #[serde(default)]
    mbs_antenna: MbsAntennaParams,
    #[serde(default)]
    ue_drop: UeDropParams,
    #[serde(default)]
    seeds: Seeds,
    #[serde(default)]
    band: BandPlan,
}

fn default_max_radius() -> f64 {
    DEFAULT_MAX_RADIUS_M
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFiles {
    mbs_csv: PathBuf,
    buildings_geojson: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weather_trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFss {
    id: String,
    latitude_deg: f64,
    longitude_deg: f64,
    height_m: f64,
    #[serde(default)]
    antenna: FssAntennaParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct MbsDefaults {
    height_m: f64,
    ue_per_sector: u32,
    sector_azimuths_deg: [f64; 3],
}

impl Default for MbsDefaults {
    fn default() -> Self {
        Self {
            height_m: 25.0,
            ue_per_sector: 10,
            sector_azimuths_deg: [0.0, 120.0, 240.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct PropagationSection {
    frequency_ghz: f64,
    tx_height_m: f64,
    rx_height_m: f64,
    sigma_los_db: f64,
    sigma_nlos_db: f64,
}

impl Default for PropagationSection {
    fn default() -> Self {
        let p = PathLossParams::default();
        Self::from(&p)
    }
}

impl From<&PathLossParams> for PropagationSection {
    fn from(p: &PathLossParams) -> Self {
        Self {
            frequency_ghz: p.frequency_ghz,
            tx_height_m: p.tx_height_m,
            rx_height_m: p.rx_height_m,
            sigma_los_db: p.sigma_los_db,
            sigma_nlos_db: p.sigma_nlos_db,
        }
    }
}

/// Loads a scenario from its manifest.
///
/// MBSs beyond `max_radius_m` of the FSS are dropped and buildings without
/// a height get [`DEFAULT_BUILDING_HEIGHT_M`]; both are reported as
/// warnings.
pub fn load_scenario(manifest_path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mbs_loader = |rel: &Path, defaults: &MbsDefaults| {
        let path = base.join(rel);
        let csv = fs::read_to_string(&path).map_err(io_err(&path))?;
        parse_mbs_csv(&csv, &path, defaults)
    };
    let building_loader = |rel: &Path| {
        let path = base.join(rel);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        parse_buildings_geojson(&text, &path)
    };
    load_from_parts(&text, manifest_path, mbs_loader, building_loader)
}

/// Loads a scenario whose data files are provided inline (API uploads).
pub fn load_scenario_inline(
    manifest_toml: &str,
    mbs_csv: &str,
    buildings_geojson: &str,
) -> Result<LoadedScenario, ScenarioError> {
    let label = Path::new("<upload>");
    load_from_parts(
        manifest_toml,
        label,
        |_, d| parse_mbs_csv(mbs_csv, Path::new("<upload mbs.csv>"), d),
        |_| parse_buildings_geojson(buildings_geojson, Path::new("<upload buildings.geojson>")),
    )
}

fn load_from_parts(
    manifest_text: &str,
    manifest_path: &Path,
    load_mbs: impl FnOnce(&Path, &MbsDefaults) -> Result<Vec<MacroBaseStation>, ScenarioError>,
    load_buildings: impl FnOnce(&Path) -> Result<(Vec<BuildingFootprint>, usize), ScenarioError>,
) -> Result<LoadedScenario, ScenarioError> {
    let value: toml::Table = toml::from_str(manifest_text).map_err(|e| ScenarioError::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if !value.contains_key("fss") {
        return Err(ScenarioError::MissingFss);
    }
    let manifest: Manifest = value.try_into().map_err(|e: toml::de::Error| ScenarioError::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(ScenarioError::Manifest {
            path: manifest_path.to_path_buf(),
            message: format!(
                "unsupported schema_version {} (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            ),
        });
    }

    let fss_location = GeoPoint::new(
        manifest.fss.latitude_deg,
        manifest.fss.longitude_deg,
        manifest.fss.height_m,
    )?;
    let mut scenario = Scenario::new(
        manifest.name.clone(),
        FssReceiver {
            id: manifest.fss.id.clone(),
            location: fss_location,
            antenna: manifest.fss.antenna.clone(),
        },
    );
    scenario.radio = manifest.radio.clone();
    let prop = &manifest.propagation;
    scenario.path_loss = PathLossParams {
        frequency_ghz: prop.frequency_ghz,
        tx_height_m: prop.tx_height_m,
        rx_height_m: prop.rx_height_m,
        sigma_los_db: prop.sigma_los_db,
        sigma_nlos_db: prop.sigma_nlos_db,
        shadow_seed: manifest.seeds.shadow,
    };
    scenario.mbs_antenna = manifest.mbs_antenna.clone();
    scenario.ue_drop = manifest.ue_drop.clone();
    scenario.seeds = manifest.seeds;
    scenario.band = manifest.band.clone();
    scenario.max_radius_m = manifest.max_radius_m;
    scenario.weather_trace = manifest.files.weather_trace.clone();

    let mut warnings = Vec::new();
    let frame = scenario.frame();
    let fss_enu = frame.to_enu(fss_location);

    let all_mbs = load_mbs(&manifest.files.mbs_csv, &manifest.mbs_defaults)?;
    let before = all_mbs.len();
    scenario.mbs = all_mbs
        .into_iter()
        .filter(|m| geo::distance_2d(fss_enu, frame.to_enu(m.location)) <= scenario.max_radius_m)
        .collect();
    let dropped_mbs = before - scenario.mbs.len();
    if dropped_mbs > 0 {
        warnings.push(format!(
            "{dropped_mbs} MBS(s) beyond {} m of the FSS dropped",
            scenario.max_radius_m
        ));
    }

    let (buildings, defaulted_heights) = load_buildings(&manifest.files.buildings_geojson)?;
    if defaulted_heights > 0 {
        warnings.push(format!(
            "{defaulted_heights} building(s) without height set to {DEFAULT_BUILDING_HEIGHT_M} m"
        ));
    }
    let half_extent = scenario.max_radius_m + scenario.ue_drop.coverage_radius_m;
    let before = buildings.len();
    scenario.buildings = buildings
        .into_iter()
        .filter(|b| {
            b.ring_lonlat.iter().all(|&[lon, lat]| {
                let p = frame.to_enu(GeoPoint {
                    latitude_deg: lat,
                    longitude_deg: lon,
                    height_m: 0.0,
                });
                p.east_m.abs() <= half_extent && p.north_m.abs() <= half_extent
            })
        })
        .collect();
    let dropped_buildings = before - scenario.buildings.len();
    if dropped_buildings > 0 {
        warnings.push(format!(
            "{dropped_buildings} building(s) outside the scenario bounding box dropped"
        ));
    }

    scenario.validate()?;
    for w in &warnings {
        tracing::warn!(scenario = %scenario.name, "{w}");
    }
    Ok(LoadedScenario {
        scenario,
        warnings,
        dropped_mbs,
        defaulted_heights,
        dropped_buildings,
    })
}

fn parse_mbs_csv(text: &str, path: &Path, defaults: &MbsDefaults) -> Result<Vec<MacroBaseStation>, ScenarioError> {
    let csv_err = |line: u64, message: String| ScenarioError::Csv {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(csv_err(1, e.to_string())),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (id_col, lat_col, lon_col) = match (col("id"), col("lat"), col("lon")) {
        (Some(i), Some(a), Some(o)) => (i, a, o),
        _ => return Err(csv_err(1, "header must contain id, lat, lon".into())),
    };
    let height_col = col("height_m");

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| {
            record
                .get(i)
                .ok_or_else(|| csv_err(line, format!("missing column {name}")))
        };
        let number = |i: usize, name: &str| -> Result<f64, ScenarioError> {
            let raw = field(i, name)?;
            raw.parse::<f64>()
                .map_err(|_| csv_err(line, format!("{name}: {raw:?} is not a number")))
        };
        let id = field(id_col, "id")?.to_string();
        if id.is_empty() {
            return Err(csv_err(line, "empty id".into()));
        }
        let lat = number(lat_col, "lat")?;
        let lon = number(lon_col, "lon")?;
        let height = match height_col.and_then(|i| record.get(i)) {
            Some(h) if !h.is_empty() => number(height_col.unwrap(), "height_m")?,
            _ => defaults.height_m,
        };
        let location = GeoPoint::new(lat, lon, height).map_err(|e| csv_err(line, e.to_string()))?;
        out.push(MacroBaseStation {
            id,
            location,
            sector_azimuths_deg: defaults.sector_azimuths_deg,
            ue_per_sector: defaults.ue_per_sector,
            active: true,
        });
    }
    Ok(out)
}

fn height_property(props: &Value) -> Option<Result<f64, String>> {
    for key in ["height_m", "height"] {
        match props.get(key) {
            None | Some(Value::Null) => continue,
            Some(Value::Number(n)) => return Some(n.as_f64().ok_or_else(|| format!("{key} not finite"))),
            Some(Value::String(s)) => {
                let trimmed = s.trim().trim_end_matches('m').trim();
                return Some(
                    trimmed
                        .parse::<f64>()
                        .map_err(|_| format!("{key}: {s:?} is not a number")),
                );
            }
            Some(other) => return Some(Err(format!("{key}: unexpected value {other}"))),
        }
    }
    None
}

/// Parses building polygons; returns the footprints and how many got the
/// default height.
fn parse_buildings_geojson(text: &str, path: &Path) -> Result<(Vec<BuildingFootprint>, usize), ScenarioError> {
    let gj_err = |feature: String, message: String| ScenarioError::GeoJson {
        path: path.to_path_buf(),
        feature,
        message,
    };
    let doc: Value = serde_json::from_str(text).map_err(|e| gj_err("-".into(), e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(gj_err(
            "-".into(),
            "top-level object must be a FeatureCollection".into(),
        ));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| gj_err("-".into(), "missing features array".into()))?;

    let mut out = Vec::with_capacity(features.len());
    let mut defaulted = 0;
    for (i, feature) in features.iter().enumerate() {
        let props = feature.get("properties").cloned().unwrap_or(Value::Null);
        let id = feature
            .get("id")
            .or_else(|| props.get("id"))
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| format!("b{i}"));
        let label = format!("#{i} ({id})");
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| gj_err(label.clone(), "missing geometry".into()))?;
        if geometry.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(gj_err(label, "geometry must be a Polygon".into()));
        }
        let outer = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .and_then(|rings| rings.first())
            .and_then(Value::as_array)
            .ok_or_else(|| gj_err(label.clone(), "missing outer ring".into()))?;
        let mut ring = Vec::with_capacity(outer.len());
        for pos in outer {
            let pair = pos
                .as_array()
                .filter(|a| a.len() >= 2)
                .and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]))
                .ok_or_else(|| gj_err(label.clone(), "position must be [lon, lat]".into()))?;
            ring.push(pair);
        }
        if ring.len() >= 2 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(gj_err(label, "outer ring needs at least 3 distinct positions".into()));
        }
        let height_m = match height_property(&props) {
            Some(Ok(h)) => h,
            Some(Err(msg)) => return Err(gj_err(label, msg)),
            None => {
                defaulted += 1;
                DEFAULT_BUILDING_HEIGHT_M
            }
        };
        out.push(BuildingFootprint {
            id,
            ring_lonlat: ring,
            height_m,
        });
    }
    Ok((out, defaulted))
}

// ---------------------------------------------------------------------------
// Saving
// ---------------------------------------------------------------------------

pub const MBS_CSV_FILE: &str = "mbs.csv";
pub const BUILDINGS_FILE: &str = "buildings.geojson";
pub const MANIFEST_FILE: &str = "scenario.toml";

/// Writes `scenario.toml`, `mbs.csv` and `buildings.geojson` into `dir`.
///
/// Per-MBS sector layout and UE counts are not part of the CSV format; the
/// first MBS's values become the manifest defaults.
pub fn save_scenario(scenario: &Scenario, dir: &Path) -> Result<PathBuf, ScenarioError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let defaults = scenario
        .mbs
        .first()
        .map(|m| MbsDefaults {
            height_m: m.location.height_m,
            ue_per_sector: m.ue_per_sector,
            sector_azimuths_deg: m.sector_azimuths_deg,
        })
        .unwrap_or_default();
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        name: scenario.name.clone(),
        max_radius_m: scenario.max_radius_m,
        files: ManifestFiles {
            mbs_csv: MBS_CSV_FILE.into(),
            buildings_geojson: BUILDINGS_FILE.into(),
            weather_trace: scenario.weather_trace.clone(),
        },
        fss: ManifestFss {
            id: scenario.fss.id.clone(),
            latitude_deg: scenario.fss.location.latitude_deg,
            longitude_deg: scenario.fss.location.longitude_deg,
            height_m: scenario.fss.location.height_m,
            antenna: scenario.fss.antenna.clone(),
        },
        mbs_defaults: defaults,
        radio: scenario.radio.clone(),
        propagation: PropagationSection::from(&scenario.path_loss),
        mbs_antenna: scenario.mbs_antenna.clone(),
        ue_drop: scenario.ue_drop.clone(),
        seeds: scenario.seeds,
        band: scenario.band.clone(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = toml::to_string_pretty(&manifest).map_err(|e| ScenarioError::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

    let csv_path = dir.join(MBS_CSV_FILE);
    let mut csv_text = String::from("id,lat,lon,height_m\n");
    for m in &scenario.mbs {
        csv_text.push_str(&format!(
            "{},{},{},{}\n",
            m.id, m.location.latitude_deg, m.location.longitude_deg, m.location.height_m
        ));
    }
    fs::write(&csv_path, csv_text).map_err(io_err(&csv_path))?;

    let gj_path = dir.join(BUILDINGS_FILE);
    let doc = buildings_to_geojson(&scenario.buildings);
    fs::write(&gj_path, serde_json::to_string(&doc).expect("json")).map_err(io_err(&gj_path))?;
    Ok(manifest_path)
}

pub fn buildings_to_geojson(buildings: &[BuildingFootprint]) -> Value {
    let features: Vec<Value> = buildings
        .iter()
        .map(|b| {
            let mut ring: Vec<Value> = b.ring_lonlat.iter().map(|p| json!([p[0], p[1]])).collect();
            if let Some(first) = ring.first().cloned() {
                ring.push(first);
            }
            json!({
                "type": "Feature",
                "id": b.id,
                "properties": { "height_m": b.height_m },
                "geometry": { "type": "Polygon", "coordinates": [ring] },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

// ---------------------------------------------------------------------------
// UE drop
// ---------------------------------------------------------------------------

/// Drops `ue_per_sector` UEs uniformly (by area) in each sector's annulus
/// and steers one beam at each. Each MBS draws from its own keyed stream,
/// so the result does not depend on MBS order.
pub fn drop_ues(scenario: &Scenario) -> BTreeMap<String, Vec<Beam>> {
    let frame = scenario.frame();
    scenario
        .mbs
        .iter()
        .map(|m| {
            let pos = frame.to_enu(m.location);
            (
                m.id.clone(),
                drop_ues_for(m, pos, &scenario.ue_drop, scenario.seeds.ue_drop),
            )
        })
        .collect()
}

pub(crate) fn drop_ues_for(m: &MacroBaseStation, pos: EnuPoint, params: &UeDropParams, seed: u64) -> Vec<Beam> {
    let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(seed, link_id(&m.id)));
    let r0 = params.min_radius_m;
    let r1 = params.coverage_radius_m;
    let mut beams = Vec::with_capacity(3 * m.ue_per_sector as usize);
    for (s, &sector_az) in m.sector_azimuths_deg.iter().enumerate() {
        for u in 0..m.ue_per_sector {
            let az = sector_az + (rng.random::<f64>() - 0.5) * SECTOR_WIDTH_DEG;
            let r = (rng.random::<f64>() * (r1 * r1 - r0 * r0) + r0 * r0).sqrt();
            let (sin, cos) = az.to_radians().sin_cos();
            let ue = EnuPoint::new(pos.east_m + r * sin, pos.north_m + r * cos, params.ue_height_m);
            let steering = geo::angles_between(pos, ue).expect("UE is at least min_radius away");
            beams.push(Beam {
                mbs_id: m.id.clone(),
                sector_index: s as u8,
                ue_index: (s as u32) * m.ue_per_sector + u,
                sector_azimuth_deg: sector_az,
                steering,
                ue_position: ue,
            });
        }
    }
    beams
}
