use std::collections::HashSet;
use std::sync::Arc;

use ceamcl::config::Config;
use ceamcl::driver::{FilterState, Variant};
use ceamcl::harness::{benchmark, run_experiment, run_single, summarize_runs};
use ceamcl::models::{default_bearings, OdometryControl, ScanObservation};
use ceamcl::rng::seeded;
use ceamcl::world::Pose;

fn mean_error(runs: &[ceamcl::harness::RunMetrics]) -> f64 {
    runs.iter()
        .map(|r| r.errors.iter().sum::<f64>() / r.errors.len() as f64)
        .sum::<f64>()
        / runs.len() as f64
}

#[test]
fn ceamcl_step_bookkeeping() {
    let sc = benchmark::symmetric().unwrap();
    let config = Config::default();
    let log = &benchmark::symmetric_logs(&sc, &config, 3).unwrap()[0];
    let config = Arc::new(config);
    let mut s = FilterState::init(Variant::Ceamcl, sc.map.clone(), &log[0].scan, config.clone(), seeded(5)).unwrap();
    let mut seen_ids: HashSet<u32> = s.species.iter().map(|sp| sp.id).collect();
    for (k, rec) in log.iter().enumerate().skip(1).take(12) {
        let before: HashSet<u32> = s.species.iter().map(|sp| sp.id).collect();
        s = s.step(&rec.control, &rec.scan).unwrap();
        assert_eq!(s.t, k);
        let ids: HashSet<u32> = s.species.iter().map(|sp| sp.id).collect();
        assert_eq!(ids.len(), s.species.len());
        // ids never come back once gone: survivors keep theirs, new ones are new
        for id in &ids {
            assert!(before.contains(id) || !seen_ids.contains(id));
        }
        seen_ids.extend(&ids);
        let expected: usize = s.species.iter().map(|sp| sp.samples.len()).sum();
        assert_eq!(s.total_samples(), expected);
        for sp in &s.species {
            assert!(sp.samples.len() >= config.min_species_size);
            assert!((sp.samples.total_weight() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn stationary_mcl_settles_on_a_consistent_pose() {
    let sc = benchmark::unimodal().unwrap();
    let mut config = Config::default();
    config.noise = config.noise.noiseless_motion();
    config.fixed_n = 4000;
    let truth = Pose::new(2.0, 4.0, 0.7);
    let y = ScanObservation::simulate(&sc.map, &truth, &default_bearings(config.beams), config.max_range);
    let mut s = FilterState::init(Variant::Mcl, sc.map.clone(), &y, Arc::new(config), seeded(2)).unwrap();
    // with no motion noise the particles can only concentrate on the
    // best-scoring pose among the initial draws
    let best = s.species[0]
        .samples
        .iter()
        .max_by(|a, b| a.weight.total_cmp(&b.weight))
        .unwrap()
        .pose;
    assert!(best.distance_xy(&truth) < 1.0);
    let spread = |s: &FilterState| s.species[0].samples.summarize().1.trace();
    let spread0 = spread(&s);
    let mut fitness = s.species[0].fitness;
    for _ in 0..40 {
        s = s.step(&OdometryControl::zero(), &y).unwrap();
        assert_eq!(s.total_samples(), 4000);
        assert!((s.species[0].samples.total_weight() - 1.0).abs() < 1e-9);
        assert!(s.species[0].fitness >= 0.99 * fitness);
        fitness = s.species[0].fitness;
    }
    assert!(spread(&s) < 0.05 * spread0);
    assert!(
        s.estimate().distance_xy(&best) < 0.15,
        "{}",
        s.estimate().distance_xy(&best)
    );
}

#[test]
fn repeated_runs_are_identical() {
    let sc = benchmark::symmetric().unwrap();
    let config = Config::default();
    let log = benchmark::symmetric_logs(&sc, &config, 2).unwrap()[1][..10].to_vec();
    let config = Arc::new(config);
    for v in Variant::ALL {
        let a = run_single(&sc, &log, v, &config, 7, 1).unwrap().without_timing();
        let b = run_single(&sc, &log, v, &config, 7, 1).unwrap().without_timing();
        assert_eq!(a, b);
    }
}

#[test]
fn unimodal_baseline() {
    let sc = benchmark::unimodal().unwrap();
    let config = Config {
        fixed_n: 10_000,
        ..Config::default()
    };
    let logs = benchmark::unimodal_logs(&sc, &config, 1).unwrap();
    let config = Arc::new(config);
    let seeds: Vec<u64> = (0..10).collect();
    let mut errors = Vec::new();
    for v in Variant::ALL {
        let runs = run_experiment(&sc, &logs, v, &config, &seeds).unwrap();
        assert_eq!(runs.len(), 20);
        let summary = summarize_runs(v, &runs);
        assert!(summary.success_rate >= 0.95, "{v}: {}", summary.success_rate);
        errors.push(mean_error(&runs));
    }
    // GMCL tracks at least as well as MCL with the same sample count
    assert!(errors[1] <= errors[0], "gmcl {} mcl {}", errors[1], errors[0]);
}

#[test]
fn mode_coverage_is_consistent_with_truth_tracking() {
    let sc = benchmark::symmetric().unwrap();
    let config = Config::default();
    let log = benchmark::symmetric_logs(&sc, &config, 1).unwrap()[0][..12].to_vec();
    let config = Arc::new(config);
    let m = run_single(&sc, &log, Variant::Ceamcl, &config, 4, 0).unwrap();
    for (&k, &alive) in m.modes.iter().zip(&m.alive) {
        assert!(k <= sc.symmetry);
        assert!(k >= usize::from(alive));
    }
    let single = ceamcl::harness::Scenario {
        map: sc.map.clone(),
        symmetry: 1,
    };
    let m = run_single(&single, &log, Variant::Ceamcl, &config, 4, 0).unwrap();
    let as_count: Vec<usize> = m.alive.iter().map(|&a| usize::from(a)).collect();
    assert_eq!(m.modes, as_count);
    // with one mode, losing it is the same event as expiry
    assert_eq!(m.modes_lost_step.is_none(), m.expired_step.is_none());
}
