mod support;

use evgrid::assign::{assign_stations, haversine, inject_loads, GeoPoint};
use evgrid::evfleet::{
    build_cohorts, cohort_profile, find_peak, ChargerLevel, ChargingStrategy, Cohort, Location, ScenarioConfig, Schedule,
    VehicleType,
};
use evgrid::impact::{build_histogram, categorize, pct_change, Category, ImpactRecord, Metric};
use evgrid::netmodel::{parse_network, serialize_network, BusCatalog, CatalogEntry};
use evgrid::powerflow::{solve_snapshot, SolverConfig};
use evgrid::stations::{allocate_peak, classify, ClassWeights, EvStation, StationCensus};
use proptest::prelude::*;
use support::{random_feeder, LARGE, SMALL};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn strategy() -> impl Strategy<Value = ChargingStrategy> {
    prop_oneof![
        Just(ChargingStrategy::ImmediateFast),
        Just(ChargingStrategy::ImmediateSlow),
        Just(ChargingStrategy::DelayedFinishByDeparture),
        Just(ChargingStrategy::DelayedStartMidnight),
    ]
}

/// Feasible home cohort with arrival and departure on the `dt` grid.
fn grid_cohort(dt: f64) -> impl Strategy<Value = Cohort<f64>> {
    let n = (24.0 / dt) as u32;
    (0..n, 1..n, 1u64..5000, prop_oneof![Just(1.4), Just(7.2), 0.5f64..20.0], 0.0f64..1.0).prop_map(
        move |(a, dwell, count, rate, frac)| {
            let arrive = a as f64 * dt;
            let depart = ((a + dwell) % n) as f64 * dt;
            let dwell_h = dwell as f64 * dt;
            Cohort {
                vehicle: VehicleType::Bev,
                level: ChargerLevel::Level2,
                location: Location::Home,
                count,
                energy_need_kwh: frac * rate * dwell_h,
                arrive_h: arrive,
                depart_h: depart,
                max_rate_kw: rate,
                strategy: ChargingStrategy::ImmediateFast,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn network_round_trip(seed in any::<u64>()) {
        let mut net = random_feeder(seed, &SMALL);
        for b in &mut net.buses {
            b.lat = (b.lat * 1e6).round() / 1e6;
            b.lon = (b.lon * 1e6).round() / 1e6;
        }
        let text = serialize_network(&net);
        prop_assert_eq!(parse_network::<f64>(&text).unwrap(), net);
    }

    #[test]
    fn haversine_metric(
        a in (-80.0f64..80.0, -179.0f64..179.0),
        b in (-80.0f64..80.0, -179.0f64..179.0),
        c in (-80.0f64..80.0, -179.0f64..179.0),
    ) {
        let p = |x: (f64, f64)| GeoPoint::new(x.0, x.1);
        let ab = haversine(p(a), p(b));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - haversine(p(b), p(a))).abs() <= 1e-6);
        prop_assert_eq!(haversine(p(a), p(a)), 0.0);
        prop_assert!(haversine(p(a), p(c)) <= ab + haversine(p(b), p(c)) + 1e-6);
    }

    #[test]
    fn allocation_invariants(peak in 0.0f64..1e6, counts in prop::array::uniform4(0u64..2000)) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let census = StationCensus::new(counts);
        let w = ClassWeights::default();
        let a = allocate_peak(peak, &census, &w).unwrap();
        prop_assert!(rel(a.reconstruct(&census), peak) < 1e-12 || peak == 0.0);
        let s = a.as_array();
        for k in 1..4 {
            prop_assert!(rel(s[k], s[0] * w.0[k]) < 1e-12 || peak == 0.0);
        }
        let more = allocate_peak(peak * 2.0, &census, &w).unwrap();
        prop_assert!(more.l1 >= a.l1);
    }

    #[test]
    fn classes_partition_ratings(kw in 0.001f64..5000.0) {
        let class = classify(kw).unwrap();
        let (lo, hi) = class.bounds_kw();
        prop_assert!(lo <= kw && kw < hi);
    }

    #[test]
    fn cohort_energy_conserved(
        c in grid_cohort(0.25),
        s in strategy(),
        off in 0.0f64..0.25,
        dt in prop_oneof![Just(0.25), Just(0.5), Just(1.0)],
    ) {
        // off-grid arrival times are fine here
        let mut c = c;
        c.strategy = s;
        c.arrive_h = (c.arrive_h + off) % 24.0;
        c.depart_h = (c.depart_h + off) % 24.0;
        prop_assume!(c.is_feasible());
        let p = cohort_profile(&c, dt).unwrap();
        let target = c.energy_need_kwh * c.count as f64;
        prop_assert!(!p.truncated);
        prop_assert!(rel(p.integrated_kwh(), target) < 1e-9 || target < 1e-9);
        prop_assert!(p.values_kw.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn infeasible_cohort_truncates(c in grid_cohort(1.0), extra in 1.01f64..3.0) {
        let mut c = c;
        c.energy_need_kwh = c.max_rate_kw * c.dwell_h() * extra;
        let p = cohort_profile(&c, 1.0).unwrap();
        prop_assert!(p.truncated);
        let deliverable = c.max_rate_kw * c.dwell_h() * c.count as f64;
        prop_assert!(rel(p.integrated_kwh(), deliverable) < 1e-9);
    }

    #[test]
    fn slow_charging_has_lowest_peak(c in grid_cohort(1.0)) {
        let peak = |s| {
            let mut c = c.clone();
            c.strategy = s;
            find_peak(&cohort_profile(&c, 1.0).unwrap()).unwrap().1
        };
        let slow = peak(ChargingStrategy::ImmediateSlow);
        for s in [ChargingStrategy::ImmediateFast, ChargingStrategy::DelayedFinishByDeparture, ChargingStrategy::DelayedStartMidnight] {
            prop_assert!(slow <= peak(s) * (1.0 + 1e-12) + 1e-9);
        }
    }

    #[test]
    fn fleet_counts_sum(
        fleet in 0u64..2_000_000,
        bev in 0.0f64..=1.0,
        access in 0.0f64..=1.0,
        pref in 0.0f64..=1.0,
        mix in 0.0f64..=1.0,
    ) {
        let cfg = ScenarioConfig {
            fleet_size: fleet,
            bev_share: bev,
            home_access: access,
            home_preference: pref,
            home_mix_l1: mix,
            work_mix_l1: 1.0 - mix,
            ..ScenarioConfig::scenario_one()
        };
        let cohorts = build_cohorts(&cfg, &Schedule::default());
        prop_assert_eq!(cohorts.iter().map(|c| c.count).sum::<u64>(), fleet);
    }

    #[test]
    fn categories_partition(p in 0.0f64..1e6) {
        let c = categorize(p);
        let (lo, hi) = c.bounds_pct();
        prop_assert!(lo <= p && p < hi);
        prop_assert_eq!(Category::ALL.iter().filter(|k| { let (l, h) = k.bounds_pct(); l <= p && p < h }).count(), 1);
    }

    #[test]
    fn pct_scale_invariant(b in 1e-3f64..1e6, a in 0.0f64..1e6, k in 1e-3f64..1e3) {
        let p = pct_change(b, a);
        prop_assert!(rel(pct_change(b * k, a * k), p) < 1e-9 || p < 1e-9);
    }

    #[test]
    fn histogram_counts_every_record(pcts in prop::collection::vec(prop_oneof![0.0f64..200.0, Just(f64::INFINITY)], 0..300)) {
        let records: Vec<ImpactRecord<f64>> = pcts
            .iter()
            .map(|&p| ImpactRecord { line_id: "x".into(), metric: Metric::Flow, before: 1.0, after: 1.0, pct_change: p, category: categorize(p) })
            .collect();
        let h = build_histogram(&records, &Category::default_edges::<f64>()).unwrap();
        prop_assert_eq!(h.total(), records.len() as u64);
        for (i, c) in Category::ALL.iter().enumerate() {
            prop_assert_eq!(h.counts[i], records.iter().filter(|r| r.category == *c).count() as u64);
        }
    }

    #[test]
    fn catalog_order_is_input_independent(mut ids in prop::collection::hash_set("[a-z0-9]{1,6}", 1..40)) {
        let entries: Vec<_> = ids.drain().map(|id| CatalogEntry { id, lat: 37.0, lon: -122.0 }).collect();
        let mut reversed = entries.clone();
        reversed.reverse();
        let a = BusCatalog::new(entries);
        let b = BusCatalog::new(reversed);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.entries().windows(2).all(|w| w[0].id.as_bytes() < w[1].id.as_bytes()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(32) })]

    #[test]
    fn sweep_balances_power(seed in any::<u64>(), large in any::<bool>()) {
        let net = random_feeder(seed, if large { &LARGE } else { &SMALL });
        let sol = solve_snapshot(&net, &SolverConfig::default()).unwrap();
        prop_assert!(sol.converged);
        let balance = sol.load_kw + sol.total_loss_kw;
        prop_assert!(rel(sol.source_kw, balance) < 1e-6, "{} vs {}", sol.source_kw, balance);
        prop_assert!(sol.line_loss_kw.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn more_load_more_loss(seed in any::<u64>(), k in 1.01f64..1.5) {
        let net = random_feeder(seed, &SMALL);
        prop_assume!(net.total_load_kw() > 1.0);
        let mut heavier = net.clone();
        for l in &mut heavier.loads {
            l.kw *= k;
            l.kvar *= k;
        }
        let cfg = SolverConfig { tol_pu: 1e-10, max_iter: 100 };
        let a = solve_snapshot(&net, &cfg).unwrap();
        let b = solve_snapshot(&heavier, &cfg).unwrap();
        prop_assert!(b.total_loss_kw > a.total_loss_kw);
        prop_assert!(b.min_voltage_pu() < a.min_voltage_pu());
    }

    #[test]
    fn injection_adds_assigned_kw(seed in any::<u64>(), peak in 0.0f64..50_000.0, n in 1usize..60) {
        let net = random_feeder(seed, &LARGE);
        let stations: Vec<EvStation<f64>> = (0..n)
            .map(|i| EvStation {
                id: format!("s{i}"),
                name: String::new(),
                lat: 37.0 + (i as f64 * 0.37).fract() * 0.05,
                lon: -122.0 + (i as f64 * 0.61).fract() * 0.05,
                rated_kw: [7.2, 60.0, 200.0, 400.0][i % 4],
            })
            .collect();
        let census = StationCensus::from_stations(&stations).unwrap();
        let alloc = allocate_peak(peak, &census, &ClassWeights::default()).unwrap();
        let out = assign_stations(&stations, &alloc, &BusCatalog::all_buses(&net)).unwrap();
        let after = inject_loads(&net, &out).unwrap();
        let assigned: f64 = out.iter().map(|a| a.assigned_kw).sum();
        let delta = after.total_load_kw() - net.total_load_kw();
        prop_assert!(rel(delta, assigned) < 1e-9 || assigned == 0.0);
        prop_assert!(rel(assigned, peak) < 1e-9 || peak == 0.0);
    }
}
