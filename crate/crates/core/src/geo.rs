//! Geodesy and 2.5D site geometry.
//!
//! Positions are converted into a local east/north/up frame with an
//! equirectangular projection anchored at the FSS receiver. Over the
//! ≤ 5 km scenario extent the projection error is negligible and the
//! conversion is bit-reproducible. Buildings are flat-roofed prisms
//! (footprint polygon + height), and line of sight is an exact test of
//! the straight link segment against those prisms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used by the projection, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default edge length of a [`SpatialIndex`] cell, in meters.
pub const DEFAULT_CELL_SIZE_M: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("degenerate direction: endpoints coincide")]
    DegenerateDirection,
    #[error("invalid building {id}: {reason}")]
    InvalidBuilding { id: String, reason: String },
}

/// WGS84 position with a height above local ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub height_m: f64,
}

impl GeoPoint {
    pub fn new(latitude_deg: f64, longitude_deg: f64, height_m: f64) -> Result<Self, GeoError> {
        let p = Self {
            latitude_deg,
            longitude_deg,
            height_m,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(-90.0..=90.0).contains(&self.latitude_deg) {
            return Err(GeoError::InvalidCoordinate(format!(
                "latitude {} outside [-90, 90]",
                self.latitude_deg
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude_deg) {
            return Err(GeoError::InvalidCoordinate(format!(
                "longitude {} outside [-180, 180]",
                self.longitude_deg
            )));
        }
        if !(self.height_m >= 0.0) || !self.height_m.is_finite() {
            return Err(GeoError::InvalidCoordinate(format!(
                "height {} must be a finite value >= 0",
                self.height_m
            )));
        }
        Ok(())
    }

    /// Same horizontal position at a different height.
    pub fn with_height(self, height_m: f64) -> Self {
        Self { height_m, ..self }
    }
}

/// Point in a local tangent frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuPoint {
    pub east_m: f64,
    pub north_m: f64,
    pub up_m: f64,
}

impl EnuPoint {
    pub const fn new(east_m: f64, north_m: f64, up_m: f64) -> Self {
        Self { east_m, north_m, up_m }
    }
}

/// Local frame anchored at a declared origin.
///
/// The origin is taken at ground level (its height is ignored), so `up_m` of
/// a converted point equals its height above ground. Building heights and
/// antenna heights then share one vertical reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnuFrame {
    origin: GeoPoint,
}

impl EnuFrame {
    pub fn new(origin: GeoPoint) -> Self {
        Self {
            origin: origin.with_height(0.0),
        }
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn to_enu(&self, p: GeoPoint) -> EnuPoint {
        to_enu(self.origin, p)
    }

    pub fn to_geo(&self, p: EnuPoint) -> GeoPoint {
        from_enu(self.origin, p)
    }
}

/// Equirectangular small-area projection of `p` relative to `origin`.
pub fn to_enu(origin: GeoPoint, p: GeoPoint) -> EnuPoint {
    let dlat = (p.latitude_deg - origin.latitude_deg).to_radians();
    let dlon = (p.longitude_deg - origin.longitude_deg).to_radians();
    EnuPoint {
        east_m: EARTH_RADIUS_M * dlon * origin.latitude_deg.to_radians().cos(),
        north_m: EARTH_RADIUS_M * dlat,
        up_m: p.height_m - origin.height_m,
    }
}

/// Inverse of [`to_enu`].
pub fn from_enu(origin: GeoPoint, p: EnuPoint) -> GeoPoint {
    let lat = origin.latitude_deg + (p.north_m / EARTH_RADIUS_M).to_degrees();
    let lon =
        origin.longitude_deg + (p.east_m / (EARTH_RADIUS_M * origin.latitude_deg.to_radians().cos())).to_degrees();
    GeoPoint {
        latitude_deg: lat,
        longitude_deg: lon,
        height_m: origin.height_m + p.up_m,
    }
}

pub fn distance_2d(a: EnuPoint, b: EnuPoint) -> f64 {
    (b.east_m - a.east_m).hypot(b.north_m - a.north_m)
}

pub fn distance_3d(a: EnuPoint, b: EnuPoint) -> f64 {
    distance_2d(a, b).hypot(b.up_m - a.up_m)
}

/// Pointing direction in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    /// Clockwise from north, in `[0, 360)`.
    pub azimuth_deg: f64,
    /// Positive above the horizon, in `[-90, 90]`.
    pub elevation_deg: f64,
}

impl Direction {
    pub const fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self {
            azimuth_deg,
            elevation_deg,
        }
    }

    /// Unit vector in (east, north, up).
    pub fn unit_vector(&self) -> [f64; 3] {
        let (sa, ca) = self.azimuth_deg.to_radians().sin_cos();
        let (se, ce) = self.elevation_deg.to_radians().sin_cos();
        [ce * sa, ce * ca, se]
    }

    /// Great-circle angular separation to `other`, degrees in `[0, 180]`.
    pub fn separation_deg(&self, other: &Direction) -> f64 {
        let a = self.unit_vector();
        let b = other.unit_vector();
        // atan2(|a×b|, a·b) stays accurate near 0° and 180°.
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        sin.atan2(cos).to_degrees()
    }
}

/// Wraps an angle into `[0, 360)`.
pub fn normalize_azimuth(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Signed smallest difference `to − from`, in `(-180, 180]`.
pub fn azimuth_difference(from_deg: f64, to_deg: f64) -> f64 {
    let d = normalize_azimuth(to_deg - from_deg);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Azimuth and elevation of `to` as seen from `from`.
pub fn angles_between(from: EnuPoint, to: EnuPoint) -> Result<Direction, GeoError> {
    let de = to.east_m - from.east_m;
    let dn = to.north_m - from.north_m;
    let du = to.up_m - from.up_m;
    if de == 0.0 && dn == 0.0 && du == 0.0 {
        return Err(GeoError::DegenerateDirection);
    }
    let horizontal = de.hypot(dn);
    let azimuth = if horizontal == 0.0 {
        0.0
    } else {
        normalize_azimuth(de.atan2(dn).to_degrees())
    };
    Ok(Direction {
        azimuth_deg: azimuth,
        elevation_deg: du.atan2(horizontal).to_degrees(),
    })
}

/// Flat-roofed building prism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: String,
    /// Footprint vertices (east, north) in the scenario frame, open ring.
    pub footprint: Vec<[f64; 2]>,
    pub height_m: f64,
}

impl Building {
    pub fn new(id: impl Into<String>, mut footprint: Vec<[f64; 2]>, height_m: f64) -> Result<Self, GeoError> {
        let id = id.into();
        if footprint.len() >= 2 && footprint.first() == footprint.last() {
            footprint.pop();
        }
        let b = Self {
            id,
            footprint,
            height_m,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let bad = |reason: &str| GeoError::InvalidBuilding {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.footprint.len() < 3 {
            return Err(bad("footprint needs at least 3 vertices"));
        }
        if !(self.height_m > 0.0) || !self.height_m.is_finite() {
            return Err(bad("height must be > 0"));
        }
        if self.footprint.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(bad("non-finite vertex"));
        }
        if !is_simple_polygon(&self.footprint) {
            return Err(bad("footprint is self-intersecting"));
        }
        Ok(())
    }

    pub fn bounding_box(&self) -> Bbox {
        Bbox::from_points(self.footprint.iter().copied())
    }

    pub fn contains(&self, east: f64, north: f64) -> bool {
        point_in_polygon(&self.footprint, east, north)
    }

    /// Whether the building blocks the straight segment `a → b`.
    ///
    /// A building never blocks a link whose endpoint stands inside its own
    /// footprint (antenna on or above that roof).
    pub fn blocks(&self, a: EnuPoint, b: EnuPoint) -> bool {
        if self.contains(a.east_m, a.north_m) || self.contains(b.east_m, b.north_m) {
            return false;
        }
        let d = [b.east_m - a.east_m, b.north_m - a.north_m];
        if d[0] == 0.0 && d[1] == 0.0 {
            return false;
        }
        let mut ts = vec![0.0, 1.0];
        let n = self.footprint.len();
        for i in 0..n {
            let p = self.footprint[i];
            let q = self.footprint[(i + 1) % n];
            if let Some(t) = segment_param([a.east_m, a.north_m], d, p, q) {
                ts.push(t);
            }
        }
        ts.sort_by(|x, y| x.total_cmp(y));
        let height_at = |t: f64| a.up_m + t * (b.up_m - a.up_m);
        ts.windows(2).any(|w| {
            let (t0, t1) = (w[0], w[1]);
            if t1 - t0 <= 0.0 {
                return false;
            }
            let tm = 0.5 * (t0 + t1);
            let inside = self.contains(a.east_m + tm * d[0], a.north_m + tm * d[1]);
            inside && height_at(t0).min(height_at(t1)) < self.height_m
        })
    }
}

/// Parameter `t ∈ [0, 1]` along `origin + t·dir` where it meets segment `p–q`.
fn segment_param(origin: [f64; 2], dir: [f64; 2], p: [f64; 2], q: [f64; 2]) -> Option<f64> {
    let e = [q[0] - p[0], q[1] - p[1]];
    let denom = dir[0] * e[1] - dir[1] * e[0];
    if denom == 0.0 {
        return None;
    }
    let w = [p[0] - origin[0], p[1] - origin[1]];
    let t = (w[0] * e[1] - w[1] * e[0]) / denom;
    let u = (w[0] * dir[1] - w[1] * dir[0]) / denom;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    (o1 * o2 < 0.0) && (o3 * o4 < 0.0)
}

/// True when no two non-adjacent edges properly cross.
pub fn is_simple_polygon(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let c = poly[j];
            let d = poly[(j + 1) % n];
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Axis-aligned box in the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bbox {
    pub fn from_points(points: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            min[0] = min[0].min(p[0]);
            min[1] = min[1].min(p[1]);
            max[0] = max[0].max(p[0]);
            max[1] = max[1].max(p[1]);
        }
        Self { min, max }
    }

    pub fn union(&self, other: &Bbox) -> Bbox {
        Bbox {
            min: [self.min[0].min(other.min[0]), self.min[1].min(other.min[1])],
            max: [self.max[0].max(other.max[0]), self.max[1].max(other.max[1])],
        }
    }
}

/// Uniform grid over the buildings' bounding box.
///
/// Each cell lists every building whose footprint bounding box overlaps it,
/// so a segment query returns a superset of the true intersectors.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    origin: [f64; 2],
    cell_m: f64,
    cols: usize,
    rows: usize,
    cells: Vec<Vec<usize>>,
}

impl SpatialIndex {
    pub fn build(buildings: &[Building], cell_m: f64) -> Self {
        assert!(cell_m > 0.0, "cell size must be positive");
        if buildings.is_empty() {
            return Self {
                origin: [0.0, 0.0],
                cell_m,
                cols: 0,
                rows: 0,
                cells: Vec::new(),
            };
        }
        let bbox = buildings
            .iter()
            .map(Building::bounding_box)
            .reduce(|a, b| a.union(&b))
            .expect("non-empty");
        let cols = (((bbox.max[0] - bbox.min[0]) / cell_m).floor() as usize) + 1;
        let rows = (((bbox.max[1] - bbox.min[1]) / cell_m).floor() as usize) + 1;
        let mut index = Self {
            origin: bbox.min,
            cell_m,
            cols,
            rows,
            cells: vec![Vec::new(); cols * rows],
        };
        for (i, b) in buildings.iter().enumerate() {
            let bb = b.bounding_box();
            let (c0, r0) = index.cell_of(bb.min[0], bb.min[1]);
            let (c1, r1) = index.cell_of(bb.max[0], bb.max[1]);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    index.cells[r * cols + c].push(i);
                }
            }
        }
        index
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_m
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let c = ((x - self.origin[0]) / self.cell_m).floor();
        let r = ((y - self.origin[1]) / self.cell_m).floor();
        (
            c.clamp(0.0, (self.cols - 1) as f64) as usize,
            r.clamp(0.0, (self.rows - 1) as f64) as usize,
        )
    }

    /// Candidate building indices for the horizontal segment `a → b`,
    /// sorted and deduplicated.
    pub fn query_segment(&self, a: EnuPoint, b: EnuPoint) -> Vec<usize> {
        if self.cells.is_empty() {
            return Vec::new();
        }
        let x_lo = self.origin[0];
        let x_hi = self.origin[0] + self.cols as f64 * self.cell_m;
        let y_lo = self.origin[1];
        let y_hi = self.origin[1] + self.rows as f64 * self.cell_m;

        // Clip the segment to the grid extent (Liang–Barsky).
        let (ax, ay) = (a.east_m, a.north_m);
        let (dx, dy) = (b.east_m - ax, b.north_m - ay);
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for (p, q) in [(-dx, ax - x_lo), (dx, x_hi - ax), (-dy, ay - y_lo), (dy, y_hi - ay)] {
            if p == 0.0 {
                if q < 0.0 {
                    return Vec::new();
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
        if t0 > t1 {
            return Vec::new();
        }

        let (sx, sy) = (ax + t0 * dx, ay + t0 * dy);
        let (ex, ey) = (ax + t1 * dx, ay + t1 * dy);
        let (c_start, _) = self.cell_of(sx.min(ex), 0.0);
        let (c_end, _) = self.cell_of(sx.max(ex), 0.0);

        let mut out = Vec::new();
        for c in c_start..=c_end {
            // y-range of the segment within this column slab
            let slab_lo = self.origin[0] + c as f64 * self.cell_m;
            let slab_hi = slab_lo + self.cell_m;
            let (ylo, yhi) = if dx == 0.0 {
                (sy.min(ey), sy.max(ey))
            } else {
                let y_at = |x: f64| ay + (x - ax) / dx * dy;
                let xa = slab_lo.max(sx.min(ex));
                let xb = slab_hi.min(sx.max(ex));
                let (y1, y2) = (y_at(xa), y_at(xb));
                (y1.min(y2), y1.max(y2))
            };
            let (_, r0) = self.cell_of(0.0, ylo);
            let (_, r1) = self.cell_of(0.0, yhi);
            // one-cell margin absorbs rounding at slab boundaries
            let r0 = r0.saturating_sub(1);
            let r1 = (r1 + 1).min(self.rows - 1);
            let c_lo = c.saturating_sub(1);
            let c_hi = (c + 1).min(self.cols - 1);
            for cc in c_lo..=c_hi {
                for r in r0..=r1 {
                    out.extend_from_slice(&self.cells[r * self.cols + cc]);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Exact 2.5D line-of-sight test between `tx` and `rx`.
///
/// The link is blocked when its horizontal projection crosses a footprint
/// at a point where the segment is below that building's roof.
pub fn is_los(tx: EnuPoint, rx: EnuPoint, index: &SpatialIndex, buildings: &[Building]) -> bool {
    !index
        .query_segment(tx, rx)
        .into_iter()
        .any(|i| buildings[i].blocks(tx, rx))
}
