use edgesplit_core::arch::{sample_policy, DeviceFleet, DeviceSpec, TransformerConfig};
use edgesplit_core::evaluator::{end_to_end_latency, FixedLatency};
use edgesplit_core::simulator::{
    compare_modes, energy, simulate, AggregateProfile, Phase, ScheduleMode, SimParams, SimReport, Workload,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_fleet(rng: &mut ChaCha8Rng, n: usize) -> DeviceFleet {
    let devices = (0..n)
        .map(|i| DeviceSpec {
            name: format!("dev{i}"),
            compute: rng.random_range(1e8..2e9),
            memory: f64::INFINITY,
            flops_cap: f64::INFINITY,
            bandwidth: rng.random_range(1e3..1e6),
            busy_power: rng.random_range(1e3..2e4),
            idle_power: rng.random_range(1e2..1e3),
        })
        .collect();
    DeviceFleet::new(devices, rng.random_range(0..n)).unwrap()
}

fn random_aggregate(rng: &mut ChaCha8Rng, n: usize) -> AggregateProfile {
    AggregateProfile {
        backbone_ms: (0..n).map(|_| rng.random_range(0.0..200.0)).collect(),
        feature_bits: (0..n).map(|_| rng.random_range(0.0..5e6)).collect(),
        aggregation_ms: rng.random_range(0.0..20.0),
    }
}

/// Slowest backbone-plus-upload path, then fusion.
fn closed_form(p: &AggregateProfile, fleet: &DeviceFleet) -> f64 {
    let ready = (0..fleet.len())
        .map(|i| {
            let upload = if i == fleet.central { 0.0 } else { p.feature_bits[i] / fleet.devices[i].bandwidth };
            p.backbone_ms[i] + upload
        })
        .fold(0.0, f64::max);
    ready + p.aggregation_ms
}

fn assert_tiles(report: &SimReport) {
    for d in &report.devices {
        let events: Vec<_> = report.timeline.iter().filter(|e| e.device == d.device).collect();
        assert!(!events.is_empty());
        assert_eq!(events[0].start_ms, 0.0);
        for w in events.windows(2) {
            assert!(w[1].start_ms == w[0].end_ms, "gap or overlap on device {}", d.device);
        }
        assert!((events.last().unwrap().end_ms - report.end_to_end_ms).abs() < 1e-9);
        let busy: f64 = events
            .iter()
            .filter(|e| matches!(e.phase, Phase::Compute | Phase::Aggregate))
            .map(|e| e.duration())
            .sum();
        assert!((busy - d.busy_ms).abs() < 1e-9);
        assert!((d.busy_ms + d.idle_ms - report.end_to_end_ms).abs() < 1e-9);
    }
}

#[test]
fn aggregate_edge_matches_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let fleet = random_fleet(&mut rng, n);
        let workload = Workload {
            aggregate: Some(random_aggregate(&mut rng, n)),
            ..Workload::default()
        };
        let report = simulate(&workload, &fleet, ScheduleMode::AggregateEdge, &SimParams::default()).unwrap();
        let expected = closed_form(workload.aggregate.as_ref().unwrap(), &fleet);
        assert!((report.end_to_end_ms - expected).abs() < 1e-9, "{} vs {expected}", report.end_to_end_ms);
        assert_tiles(&report);
    }
}

#[test]
fn simulated_policies_match_the_evaluator() {
    let base = TransformerConfig::deit_base();
    let fleet = DeviceFleet::example();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let policy = sample_policy(&base, &fleet, &mut rng).unwrap();
        let source = FixedLatency((0..3).map(|_| rng.random_range(1.0..300.0)).collect());
        let workload = Workload::from_policy(&policy, &base, &fleet, &source, 32.0).unwrap();
        let expected = end_to_end_latency(&policy, &base, &fleet, &source).unwrap();
        for report in compare_modes(&workload, &fleet, &SimParams::default()).unwrap() {
            if report.mode == ScheduleMode::AggregateEdge {
                assert!((report.end_to_end_ms - expected).abs() < 1e-9);
            }
            assert_tiles(&report);
        }
    }
}

#[test]
fn relabeling_devices_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let n = rng.random_range(2..=5);
        let fleet = random_fleet(&mut rng, n);
        let p = random_aggregate(&mut rng, n);
        let perm: Vec<usize> = (0..n).rev().collect();
        let moved = DeviceFleet::new(
            perm.iter().map(|&i| fleet.devices[i].clone()).collect(),
            perm.iter().position(|&i| i == fleet.central).unwrap(),
        )
        .unwrap();
        let q = AggregateProfile {
            backbone_ms: perm.iter().map(|&i| p.backbone_ms[i]).collect(),
            feature_bits: perm.iter().map(|&i| p.feature_bits[i]).collect(),
            aggregation_ms: p.aggregation_ms,
        };
        let run = |p: &AggregateProfile, f: &DeviceFleet| {
            let w = Workload {
                aggregate: Some(p.clone()),
                ..Workload::default()
            };
            simulate(&w, f, ScheduleMode::AggregateEdge, &SimParams::default()).unwrap()
        };
        let (a, b) = (run(&p, &fleet), run(&q, &moved));
        assert_eq!(a.end_to_end_ms, b.end_to_end_ms);
        assert!((energy(&a, &fleet) - energy(&b, &moved)).abs() < 1e-9 * energy(&a, &fleet).max(1.0));
    }
}

#[test]
fn on_one_device_every_mode_is_plain_execution() {
    let fleet = DeviceFleet::single(DeviceFleet::example().devices[0].clone());
    let w = Workload::balanced(&fleet, 3e9, 12, 197, 768, 32.0).unwrap();
    let reports = compare_modes(&w, &fleet, &SimParams::default()).unwrap();
    let expected = 3e9 / fleet.devices[0].compute;
    for r in &reports {
        assert!((r.end_to_end_ms - expected).abs() < 1e-9, "{}: {}", r.mode, r.end_to_end_ms);
        assert_eq!(r.transmission_fraction, 0.0);
        assert!(r.idle_share() < 1e-12);
    }
}

#[test]
fn modes_order_as_expected_on_the_example_fleet() {
    let fleet = DeviceFleet::example();
    let w = Workload::balanced(&fleet, 3.5e10, 12, 197, 768, 32.0).unwrap();
    let reports = compare_modes(&w, &fleet, &SimParams::default()).unwrap();
    let by = |m: ScheduleMode| reports.iter().find(|r| r.mode == m).unwrap();
    let agg = by(ScheduleMode::AggregateEdge);
    let pipe = by(ScheduleMode::PipeEdge);
    let distri = by(ScheduleMode::DistriEdge);
    let single = by(ScheduleMode::SingleEdge);
    assert!(agg.end_to_end_ms < pipe.end_to_end_ms);
    assert!(agg.end_to_end_ms < single.end_to_end_ms);
    assert!(distri.transmission_fraction > agg.transmission_fraction);
    assert!(pipe.idle_share() > agg.idle_share());
    assert!(agg.total_energy_mj < single.total_energy_mj);
    for r in &reports {
        assert!((r.total_energy_mj - energy(r, &fleet)).abs() < 1e-9 * r.total_energy_mj);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn energy_is_linear_in_power(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=4);
        let fleet = random_fleet(&mut rng, n);
        let w = Workload { aggregate: Some(random_aggregate(&mut rng, n)), ..Workload::default() };
        let report = simulate(&w, &fleet, ScheduleMode::AggregateEdge, &SimParams::default()).unwrap();
        let mut scaled = fleet.clone();
        for d in &mut scaled.devices {
            d.busy_power *= scale;
            d.idle_power *= scale;
        }
        let e = energy(&report, &fleet);
        prop_assert!((energy(&report, &scaled) - scale * e).abs() <= 1e-9 * e.max(1.0) * scale);
    }

    #[test]
    fn serialized_uploads_never_finish_sooner(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=5);
        let fleet = random_fleet(&mut rng, n);
        let w = Workload { aggregate: Some(random_aggregate(&mut rng, n)), ..Workload::default() };
        let free = simulate(&w, &fleet, ScheduleMode::AggregateEdge, &SimParams::default()).unwrap();
        let queued = simulate(&w, &fleet, ScheduleMode::AggregateEdge, &SimParams { serialized_ingress: true }).unwrap();
        prop_assert!(queued.end_to_end_ms >= free.end_to_end_ms - 1e-12);
        assert_tiles(&queued);
    }
}
