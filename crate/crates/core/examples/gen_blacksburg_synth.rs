//! Regenerates the `blacksburg_synth` fixture: one FSS, 33 MBSs within
//! 5 km, a few hundred buildings and a weather trace. Output is a pure
//! function of the layout seed.
//!
//! ```text
//! cargo run -p coexist-core --example gen_blacksburg_synth -- fixtures/blacksburg_synth [seed]
//! ```

use std::f64::consts::TAU;
use std::path::PathBuf;

use coexist_core::antenna::FssAntennaParams;
use coexist_core::context::ContextSnapshot;
use coexist_core::dsaf::run_feedback_loop;
use coexist_core::geo::{EnuPoint, GeoPoint};
use coexist_core::iet::World;
use coexist_core::policy::PolicySet;
use coexist_core::scenario::{save_scenario, BuildingFootprint, FssReceiver, MacroBaseStation, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MBS_COUNT: usize = 33;
const DEFAULT_LAYOUT_SEED: u64 = 1;

struct Cluster {
    center: (f64, f64),
    radius: f64,
    count: usize,
    height: (f64, f64),
}

const CLUSTERS: [Cluster; 4] = [
    // Campus around the earth station.
    Cluster {
        center: (0.0, 0.0),
        radius: 700.0,
        count: 40,
        height: (10.0, 40.0),
    },
    // Downtown.
    Cluster {
        center: (-1600.0, 900.0),
        radius: 650.0,
        count: 120,
        height: (12.0, 40.0),
    },
    // Commercial strip.
    Cluster {
        center: (1800.0, -1400.0),
        radius: 500.0,
        count: 60,
        height: (10.0, 25.0),
    },
    // Scattered residential.
    Cluster {
        center: (0.0, 0.0),
        radius: 4800.0,
        count: 100,
        height: (10.0, 16.0),
    },
];

fn footprint(frame: &coexist_core::geo::EnuFrame, cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Vec<[f64; 2]> {
    let (s, c) = angle.sin_cos();
    [(-w, -h), (w, -h), (w, h), (-w, h)]
        .iter()
        .map(|&(x, y)| {
            let e = cx + 0.5 * (x * c - y * s);
            let n = cy + 0.5 * (x * s + y * c);
            let g = frame.to_geo(EnuPoint::new(e, n, 0.0));
            [round7(g.longitude_deg), round7(g.latitude_deg)]
        })
        .collect()
}

fn round7(x: f64) -> f64 {
    (x * 1e7).round() / 1e7
}

fn build(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fss = FssReceiver {
        id: "fss-forecast-dr".into(),
        location: GeoPoint::new(37.2025, -80.434444, 4.5).expect("valid"),
        antenna: FssAntennaParams::default(),
    };
    let mut s = Scenario::new("blacksburg_synth", fss).with_seed(42);
    let frame = s.frame();

    for cl in &CLUSTERS {
        for _ in 0..cl.count {
            let r = cl.radius * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..TAU);
            let (cx, cy) = (cl.center.0 + r * a.sin(), cl.center.1 + r * a.cos());
            // Keep the dish itself clear of footprints.
            if cx.hypot(cy) < 40.0 {
                continue;
            }
            let ring = footprint(
                &frame,
                cx,
                cy,
                rng.random_range(15.0..45.0),
                rng.random_range(15.0..45.0),
                rng.random_range(0.0..TAU / 4.0),
            );
            let height = (rng.random_range(cl.height.0..cl.height.1) * 2.0).round() / 2.0;
            s.buildings.push(BuildingFootprint {
                id: format!("bldg-{:04}", s.buildings.len() + 1),
                ring_lonlat: ring,
                height_m: height,
            });
        }
    }

    for i in 0..MBS_COUNT {
        let r = (rng.random_range(400f64.powi(2)..4900f64.powi(2))).sqrt();
        let a = rng.random_range(0.0..TAU);
        let g = frame.to_geo(EnuPoint::new(r * a.sin(), r * a.cos(), 0.0));
        s.mbs.push(MacroBaseStation {
            id: format!("mbs-{:02}", i + 1),
            location: GeoPoint::new(round7(g.latitude_deg), round7(g.longitude_deg), 25.0).expect("valid"),
            sector_azimuths_deg: [0.0, 120.0, 240.0],
            ue_per_sector: 10,
            active: true,
        });
    }
    s.weather_trace = Some("weather.csv".into());
    s
}

const WEATHER: &str = "unix_time,kind,rain_rate
0,clear,0
3600,rain_snow,10
7200,cloudy,0
10800,clear,0
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixtures/blacksburg_synth".into()));
    let seed = args
        .next()
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(DEFAULT_LAYOUT_SEED);

    let scenario = build(seed);
    save_scenario(&scenario, &dir)?;
    std::fs::write(dir.join("weather.csv"), WEATHER)?;

    let world = World::prepare(&scenario)?;
    let policy = PolicySet::default_12ghz();
    let los = world.sites().iter().filter(|s| s.link.los).count();
    println!(
        "{} MBSs ({} LOS), {} buildings",
        world.sites().len(),
        los,
        scenario.buildings.len()
    );
    for ctx in [
        ContextSnapshot::clear(scenario.fss.location),
        ContextSnapshot::rain(10.0, scenario.fss.location)?,
    ] {
        let out = run_feedback_loop(&world, &ctx, &policy)?;
        let d = &out.decision;
        println!(
            "{}: converged={} radius={} revoked={} iterations={}",
            ctx.weather_kind.as_str(),
            d.converged,
            d.ez_radius_m,
            d.revoked.len(),
            d.trace.len()
        );
        for row in &d.trace {
            println!(
                "    {} {:?} {}",
                row.ez_radius_m, row.aggregate_i_over_n_db, row.active_count
            );
        }
    }
    Ok(())
}
