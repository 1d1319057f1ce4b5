mod common;

use std::collections::BTreeSet;

use coexist_core::geo::{is_los, Building, EnuPoint, SpatialIndex};
use coexist_core::iet::{evaluate, evaluate_with, noise_floor, Execution, World};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_polygon(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let cx = rng.random_range(-500.0..500.0);
    let cy = rng.random_range(-500.0..500.0);
    if rng.random_bool(0.5) {
        rotated_rect(
            cx,
            cy,
            rng.random_range(5.0..120.0),
            rng.random_range(5.0..120.0),
            rng.random_range(0.0..3.2),
        )
    } else {
        // Star-shaped: vertices at increasing angles, random radii. Simple.
        let n = rng.random_range(3..9);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        angles.dedup_by(|a, b| (*a - *b).abs() < 0.05);
        if angles.len() < 3 {
            return rotated_rect(cx, cy, 40.0, 30.0, 0.3);
        }
        angles
            .iter()
            .map(|a| {
                let r = rng.random_range(10.0..70.0);
                [cx + r * a.sin(), cy + r * a.cos()]
            })
            .collect()
    }
}

#[test]
fn indexed_los_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x105);
    let mut disagreements = 0;
    let mut blocked = 0;
    let mut checks = 0;
    for scene in 0..1000 {
        let mut buildings = Vec::new();
        for i in 0..rng.random_range(1..40) {
            let fp = random_polygon(&mut rng);
            if let Ok(b) = Building::new(format!("b{i}"), fp, rng.random_range(3.0..60.0)) {
                buildings.push(b);
            }
        }
        let cell = [25.0, 60.0, 100.0, 250.0][scene % 4];
        let index = SpatialIndex::build(&buildings, cell);
        let reference: Vec<(Vec<[f64; 2]>, f64)> =
            buildings.iter().map(|b| (b.footprint.clone(), b.height_m)).collect();
        for _ in 0..5 {
            let a = EnuPoint::new(
                rng.random_range(-700.0..700.0),
                rng.random_range(-700.0..700.0),
                rng.random_range(0.0..70.0),
            );
            let b = EnuPoint::new(
                rng.random_range(-700.0..700.0),
                rng.random_range(-700.0..700.0),
                rng.random_range(0.0..70.0),
            );
            let fast = is_los(a, b, &index, &buildings);
            let slow = ref_los(&reference, enu(a), enu(b));
            let scan = !buildings.iter().any(|x| x.blocks(a, b));
            checks += 1;
            if !slow {
                blocked += 1;
            }
            if fast != slow || scan != slow {
                disagreements += 1;
            }
        }
    }
    assert_eq!(disagreements, 0, "of {checks} links");
    // Both outcomes must be well represented for the comparison to mean anything.
    assert!(
        blocked > checks / 10 && blocked < checks * 9 / 10,
        "blocked {blocked} of {checks}"
    );
}

#[test]
fn evaluate_matches_brute_force_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e7);
    let mut nonempty = 0;
    for w in 0..100 {
        let scenario = random_scenario(&mut rng, &format!("w{w}"));
        let world = World::prepare(&scenario).unwrap();
        let rain = [0.0, 2.5, 10.0, 40.0][w % 4];
        let active = world.enabled_ids();
        let report = evaluate(&world, &active, rain).unwrap();
        let ids: Vec<String> = active.iter().cloned().collect();
        let expected = ref_total_interference_w(&world, &ids, rain);
        if ids.is_empty() {
            assert_eq!(report.aggregate_i_over_n_db, None);
            assert_eq!(expected, 0.0);
            continue;
        }
        nonempty += 1;
        let got = report.aggregate_interference_w;
        assert!(
            ((got - expected) / expected).abs() <= 1e-9,
            "world {w}: evaluate {got:e} W vs reference {expected:e} W"
        );
        let agg = 10.0 * expected.log10() - noise_floor(&scenario.radio);
        assert!((report.aggregate_i_over_n_db.unwrap() - agg).abs() < 1e-8);
    }
    assert!(nonempty > 50);
}

#[test]
fn parallel_and_sequential_reports_are_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for w in 0..20 {
        let scenario = random_scenario(&mut rng, &format!("p{w}"));
        let world = World::prepare(&scenario).unwrap();
        let ids = world.enabled_ids();
        let a = evaluate_with(&world, &ids, 10.0, Execution::Parallel).unwrap();
        let b = evaluate_with(&world, &ids, 10.0, Execution::Sequential).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
    }
}

#[test]
fn mbs_order_does_not_change_report() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for w in 0..20 {
        let scenario = random_scenario(&mut rng, &format!("o{w}"));
        let mut reversed = scenario.clone();
        reversed.mbs.reverse();
        let a = World::prepare(&scenario).unwrap();
        let b = World::prepare(&reversed).unwrap();
        let ra = evaluate(&a, &a.enabled_ids(), 0.0).unwrap();
        let rb = evaluate(&b, &b.enabled_ids(), 0.0).unwrap();
        assert_eq!(ra.without_timing(), rb.without_timing());
    }
}

#[test]
fn watt_additivity_and_dominance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for w in 0..30 {
        let scenario = random_scenario(&mut rng, &format!("a{w}"));
        let world = World::prepare(&scenario).unwrap();
        let all: BTreeSet<String> = world.sites().iter().map(|s| s.id.clone()).collect();
        let full = evaluate(&world, &all, 5.0).unwrap();
        for (id, m) in &full.per_mbs {
            assert!(full.aggregate_i_over_n_db.unwrap() >= m.i_over_n_db - 1e-12);
            let mut fewer = all.clone();
            fewer.remove(id);
            let less = evaluate(&world, &fewer, 5.0).unwrap();
            let diff = full.aggregate_interference_w - less.aggregate_interference_w;
            assert!((diff - m.interference_w).abs() <= 1e-9 * full.aggregate_interference_w);
            assert!(less.aggregate_for_ordering() <= full.aggregate_for_ordering());
        }
    }
}
