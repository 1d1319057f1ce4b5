//! Shared builders and independent reference implementations for the
//! integration tests. The references deliberately avoid the library's
//! geometry and aggregation code paths.

#![allow(dead_code)]

use coexist_core::antenna::FssAntennaParams;
use coexist_core::geo::{EnuPoint, GeoPoint};
use coexist_core::iet::World;
use coexist_core::propagation::shadow_fading;
use coexist_core::scenario::{BuildingFootprint, FssReceiver, MacroBaseStation, Scenario};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FSS_LAT: f64 = 37.2025;
pub const FSS_LON: f64 = -80.434444;
const R: f64 = 6_371_000.0;

pub fn fss_point() -> GeoPoint {
    GeoPoint::new(FSS_LAT, FSS_LON, 4.5).unwrap()
}

/// Reference inverse projection, written out independently.
pub fn enu_to_lonlat(east: f64, north: f64) -> [f64; 2] {
    let lat = FSS_LAT + (north / R).to_degrees();
    let lon = FSS_LON + (east / (R * FSS_LAT.to_radians().cos())).to_degrees();
    [lon, lat]
}

pub fn lonlat_to_enu(lon: f64, lat: f64) -> [f64; 2] {
    let east = (lon - FSS_LON).to_radians() * R * FSS_LAT.to_radians().cos();
    let north = (lat - FSS_LAT).to_radians() * R;
    [east, north]
}

pub fn empty_scenario(name: &str) -> Scenario {
    Scenario::new(
        name,
        FssReceiver {
            id: "fss".into(),
            location: fss_point(),
            antenna: FssAntennaParams::default(),
        },
    )
}

pub fn mbs_at(id: &str, east: f64, north: f64, height: f64) -> MacroBaseStation {
    let [lon, lat] = enu_to_lonlat(east, north);
    MacroBaseStation {
        id: id.into(),
        location: GeoPoint::new(lat, lon, height).unwrap(),
        sector_azimuths_deg: [0.0, 120.0, 240.0],
        ue_per_sector: 10,
        active: true,
    }
}

pub fn building_rect(id: &str, ring_enu: &[[f64; 2]], height: f64) -> BuildingFootprint {
    BuildingFootprint {
        id: id.into(),
        ring_lonlat: ring_enu.iter().map(|p| enu_to_lonlat(p[0], p[1])).collect(),
        height_m: height,
    }
}

/// Rotated rectangle centred at `(cx, cy)`.
pub fn rotated_rect(cx: f64, cy: f64, w: f64, h: f64, angle_rad: f64) -> Vec<[f64; 2]> {
    let (s, c) = angle_rad.sin_cos();
    [(-w, -h), (w, -h), (w, h), (-w, h)]
        .iter()
        .map(|&(x, y)| [cx + 0.5 * (x * c - y * s), cy + 0.5 * (x * s + y * c)])
        .collect()
}

pub fn random_scenario(rng: &mut ChaCha8Rng, name: &str) -> Scenario {
    let mut s = empty_scenario(name).with_seed(rng.random());
    s.fss.antenna.boresight_azimuth_deg = rng.random_range(0.0..360.0);
    s.fss.antenna.boresight_elevation_deg = rng.random_range(0.0..60.0);
    for i in 0..rng.random_range(0..=5) {
        let r = rng.random_range(60.0..3000.0);
        let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut m = mbs_at(
            &format!("m{i}"),
            r * az.sin(),
            r * az.cos(),
            rng.random_range(10.0..40.0),
        );
        m.sector_azimuths_deg = [rng.random_range(0.0..120.0), 0.0, 0.0];
        m.sector_azimuths_deg[1] = m.sector_azimuths_deg[0] + 120.0;
        m.sector_azimuths_deg[2] = m.sector_azimuths_deg[0] + 240.0;
        m.ue_per_sector = rng.random_range(1..=10);
        m.active = rng.random_bool(0.85);
        s.mbs.push(m);
    }
    for i in 0..rng.random_range(0..=20) {
        let ring = rotated_rect(
            rng.random_range(-2500.0..2500.0),
            rng.random_range(-2500.0..2500.0),
            rng.random_range(10.0..200.0),
            rng.random_range(10.0..200.0),
            rng.random_range(0.0..3.0),
        );
        s.buildings
            .push(building_rect(&format!("b{i}"), &ring, rng.random_range(5.0..45.0)));
    }
    s
}

// ---------------------------------------------------------------------------
// Reference line of sight
// ---------------------------------------------------------------------------

fn ref_inside(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    // Winding number.
    let mut wn = 0i32;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let side = (b[0] - a[0]) * (y - a[1]) - (x - a[0]) * (b[1] - a[1]);
        if a[1] <= y {
            if b[1] > y && side > 0.0 {
                wn += 1;
            }
        } else if b[1] <= y && side < 0.0 {
            wn -= 1;
        }
    }
    wn != 0
}

fn ref_segments_cross(p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let orient = |u: [f64; 2], v: [f64; 2], w: [f64; 2]| (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0]);
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let d3 = orient(p, q, a);
    let d4 = orient(p, q, b);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Whether a flat-roofed prism blocks the segment `a → b`.
///
/// Restricts the segment to the part strictly below the roof, then asks
/// whether that 2D piece meets the footprint.
pub fn ref_blocks(footprint: &[[f64; 2]], height: f64, a: [f64; 3], b: [f64; 3]) -> bool {
    if ref_inside(footprint, a[0], a[1]) || ref_inside(footprint, b[0], b[1]) {
        return false;
    }
    let (t0, t1) = if (b[2] - a[2]).abs() < 1e-12 {
        if a[2] < height {
            (0.0, 1.0)
        } else {
            return false;
        }
    } else {
        let th = (height - a[2]) / (b[2] - a[2]);
        if b[2] > a[2] {
            (0.0, th.min(1.0))
        } else {
            (th.max(0.0), 1.0)
        }
    };
    if t1 <= t0 {
        return false;
    }
    let at = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let (p, q) = (at(t0), at(t1));
    if ref_inside(footprint, p[0], p[1]) || ref_inside(footprint, q[0], q[1]) {
        return true;
    }
    let n = footprint.len();
    (0..n).any(|i| ref_segments_cross(p, q, footprint[i], footprint[(i + 1) % n]))
}

pub fn ref_los(buildings: &[(Vec<[f64; 2]>, f64)], a: [f64; 3], b: [f64; 3]) -> bool {
    !buildings.iter().any(|(fp, h)| ref_blocks(fp, *h, a, b))
}

// ---------------------------------------------------------------------------
// Reference interference
// ---------------------------------------------------------------------------

fn ref_angles(from: [f64; 3], to: [f64; 3]) -> (f64, f64) {
    let (de, dn, du) = (to[0] - from[0], to[1] - from[1], to[2] - from[2]);
    let az = de.atan2(dn).to_degrees().rem_euclid(360.0);
    let el = du.atan2(de.hypot(dn)).to_degrees();
    (az, el)
}

fn wrap180(d: f64) -> f64 {
    let r = (d + 180.0).rem_euclid(360.0) - 180.0;
    if r == -180.0 {
        180.0
    } else {
        r
    }
}

fn ref_rain_db_per_km(x: f64, f: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let a = -5.520e-12 * x.powi(3) + 3.26e-9 * x.powi(2) - 1.21e-7 * x - 6e-6;
    let b = 8e-10 * x.powi(3) - 4.522e-7 * x.powi(2) - 3.03e-5 * x + 0.001;
    let c = -5.71e-9 * x.powi(3) + 6e-7 * x.powi(2) + 8.707e-3 * x - 0.018;
    let d = -1.073e-7 * x.powi(3) + 1.068e-4 * x.powi(2) - 0.0598e-3 * x + 0.0442;
    (a * f.powi(3) + b * f.powi(2) + c * f + d).max(0.0)
}

/// Total interference power at the FSS in watts from the `active` MBSs,
/// by a plain double loop over every MBS and beam.
pub fn ref_total_interference_w(world: &World, active: &[String], rain: f64) -> f64 {
    let s = world.scenario();
    let fss = [0.0, 0.0, s.fss.location.height_m];
    let buildings: Vec<(Vec<[f64; 2]>, f64)> = s
        .buildings
        .iter()
        .map(|b| {
            let mut ring: Vec<[f64; 2]> = b.ring_lonlat.iter().map(|p| lonlat_to_enu(p[0], p[1])).collect();
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            (ring, b.height_m)
        })
        .collect();
    let pl = s.path_loss_params();
    let f = pl.frequency_ghz;
    let ant = &s.mbs_antenna;
    let dish = &s.fss.antenna;
    let mut total = 0.0;
    for m in &s.mbs {
        if !active.contains(&m.id) {
            continue;
        }
        let [e, n] = lonlat_to_enu(m.location.longitude_deg, m.location.latitude_deg);
        let pos = [e, n, m.location.height_m];
        let d3 = ((pos[0] - fss[0]).powi(2) + (pos[1] - fss[1]).powi(2) + (pos[2] - fss[2]).powi(2)).sqrt();
        let los = ref_los(&buildings, pos, fss);
        let pl_los = 28.0 + 22.0 * d3.log10() + 20.0 * f.log10();
        let pl_nlos = 13.54 + 39.08 * d3.log10() + 20.0 * f.log10() - 0.6 * (pl.rx_height_m - 1.5);
        let base = if los { pl_los } else { pl_los.max(pl_nlos) };
        let site = world.site(&m.id).expect("site");
        let shadow = shadow_fading(site.link.link_id, los, &pl);
        let loss = base + shadow + ref_rain_db_per_km(rain, f) * d3 / 1000.0;

        let beams = &site.beams;
        let p_beam = 10.0 * s.radio.total_power_w.log10()
            - 10.0 * f64::from(s.radio.power_split_ue_count.unwrap_or(beams.len() as u32)).log10();

        let (az_to_fss, el_to_fss) = ref_angles(pos, fss);
        let (az_from_fss, el_from_fss) = ref_angles(fss, pos);
        let cosang = el_from_fss.to_radians().cos()
            * dish.boresight_elevation_deg.to_radians().cos()
            * (az_from_fss - dish.boresight_azimuth_deg).to_radians().cos()
            + el_from_fss.to_radians().sin() * dish.boresight_elevation_deg.to_radians().sin();
        let phi = cosang.clamp(-1.0, 1.0).acos().to_degrees();
        let g_fss = if phi < dish.near_in_deg {
            dish.boresight_gain_dbi
        } else if phi <= dish.far_out_deg {
            (29.0 - 25.0 * phi.log10()).max(dish.backlobe_dbi)
        } else {
            dish.backlobe_dbi
        };

        for beam in beams {
            let ue = beam.ue_position;
            let (steer_az, steer_el) = ref_angles(pos, [ue.east_m, ue.north_m, ue.up_m]);
            let d_az = wrap180(az_to_fss - steer_az);
            let d_el = el_to_fss - steer_el;
            let att = (12.0 * (d_az / ant.theta_3db_deg).powi(2) + 12.0 * (d_el / ant.phi_3db_deg).powi(2))
                .min(ant.sidelobe_floor_db);
            let off_sector = wrap180(az_to_fss - beam.sector_azimuth_deg).abs() > 60.0;
            let g_mbs = ant.peak_gain_dbi - att - if off_sector { ant.sidelobe_floor_db } else { 0.0 };
            let i_dbw = p_beam + g_mbs + g_fss - loss;
            total += 10f64.powf(i_dbw / 10.0);
        }
    }
    total
}

pub fn enu(p: EnuPoint) -> [f64; 3] {
    [p.east_m, p.north_m, p.up_m]
}
