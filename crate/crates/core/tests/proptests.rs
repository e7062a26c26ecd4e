mod common;

use ltstab::hybrid::{select_rollback_point, CheckpointStore};
use ltstab::model::StatePartition;
use ltstab::network::{build_admittance_from, Branch};
use ltstab::scenario::{
    parse_case, parse_schedule, read_trace, serialize_case, serialize_schedule, suite, EventAction, EventSchedule, ScheduledEvent, TraceRow, TraceTable,
};
use ltstab::stability::assess_damping;
use proptest::prelude::*;

fn branch_strategy(n_bus: u32) -> impl Strategy<Value = Branch> {
    (1..=n_bus, 1..=n_bus, 0.0..0.1f64, 0.01..0.5f64, 0.0..0.1f64, 0.9..1.1f64)
        .prop_filter("distinct ends", |(f, t, ..)| f != t)
        .prop_map(|(f, t, r, x, b, tap)| {
            let mut br = Branch::new(format!("{f}-{t}"), f, t, r, x);
            br.b = b;
            br.tap = tap;
            br
        })
}

fn max_diff(a: &[Vec<num_complex::Complex64>], b: &[Vec<num_complex::Complex64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).norm()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stamping_is_additive(a in prop::collection::vec(branch_strategy(14), 0..8), b in prop::collection::vec(branch_strategy(14), 0..8)) {
        let buses = suite::CASE1.case().buses;
        let ya = build_admittance_from(&buses, &a).unwrap().to_dense();
        let yb = build_admittance_from(&buses, &b).unwrap().to_dense();
        let y0 = build_admittance_from(&buses, &[]).unwrap().to_dense();
        let all: Vec<Branch> = a.iter().chain(&b).cloned().collect();
        let yab = build_admittance_from(&buses, &all).unwrap().to_dense();
        let sum: Vec<Vec<_>> = (0..y0.len()).map(|i| (0..y0.len()).map(|j| ya[i][j] + yb[i][j] - y0[i][j]).collect()).collect();
        prop_assert!(max_diff(&yab, &sum) <= 1e-10);
    }

    #[test]
    fn stamp_then_unstamp_restores(br in branch_strategy(14)) {
        let case = suite::CASE1.case();
        let y0 = build_admittance_from(&case.buses, &case.branches).unwrap();
        let mut y = y0.clone();
        y.stamp_branch(&br, br.tap, 1.0).unwrap();
        y.stamp_branch(&br, br.tap, -1.0).unwrap();
        prop_assert!(max_diff(&y.to_dense(), &y0.to_dense()) <= 1e-10);
    }

    #[test]
    fn partition_scatter_gather(seed in any::<u64>()) {
        use rand::Rng;
        let l = common::load(suite::CASE2);
        let mut r = common::rng(seed);
        let w: Vec<f64> = (0..l.model.layout.n()).map(|_| r.gen_range(-1e3..1e3)).collect();
        let p = StatePartition::scatter(&l.model.layout, &w, l.start.part.z_d.clone());
        prop_assert_eq!(p.gather(), w);
    }

    #[test]
    fn case_round_trips(p in 0.1..1.2f64, v in 0.95..1.05f64, h in 1.0..10.0f64, x in 0.05..0.5f64) {
        let mut case = suite::SMIB.case();
        case.generators[0].p_set = p;
        case.generators[0].v_set = v;
        case.generators[0].h = h;
        case.branches[0].x = x;
        let text = serialize_case(&case);
        let back = parse_case(&text).unwrap();
        prop_assert_eq!(&back, &case);
        prop_assert_eq!(serialize_case(&back), text);
    }

    #[test]
    fn schedule_round_trips(mut evs in prop::collection::vec((0.0..500.0f64, prop::bool::ANY, 1u32..15, -1.0..1.0f64, -1.0..1.0f64), 0..10)) {
        evs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let s = EventSchedule::new(evs.into_iter().map(|(time, trip, bus, dp, dq)| ScheduledEvent {
            time,
            action: if trip { EventAction::BranchTrip { branch: format!("{bus}-x") } } else { EventAction::LoadStep { bus, dp, dq } },
        }).collect());
        let text = serialize_schedule(&s);
        let back = parse_schedule(&text).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(serialize_schedule(&back), text);
    }

    #[test]
    fn trace_csv_round_trips(
        cols in prop::collection::vec("[a-z][a-z0-9_.]{0,8}", 1..6),
        rows in prop::collection::vec((any::<f64>(), "[a-z =;:]{0,12}", prop::collection::vec(any::<f64>(), 6)), 1..8),
    ) {
        let n = cols.len();
        let table = TraceTable {
            columns: cols,
            rows: rows.into_iter().map(|(t, event, vals)| TraceRow {
                t: if t.is_finite() { t } else { 0.0 },
                event,
                values: vals.into_iter().take(n).map(|v| if v.is_finite() { v } else { 1.0 }).collect(),
            }).collect(),
        };
        let text = table.to_csv();
        let back = read_trace(&text).unwrap();
        prop_assert_eq!(&back, &table);
        prop_assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn damping_verdict_ignores_positive_scale(rate in -0.5..0.5f64, omega in 3.0..20.0f64, scale in 1e-3..1e3f64) {
        let sig: Vec<f64> = (0..600).map(|i| {
            let t = i as f64 * 0.01;
            (rate * t).exp() * (omega * t).sin()
        }).collect();
        let scaled: Vec<f64> = sig.iter().map(|v| v * scale).collect();
        let a = assess_damping(&[("s".to_string(), sig)]);
        let b = assess_damping(&[("s".to_string(), scaled)]);
        prop_assert_eq!(a.status, b.status);
    }

    #[test]
    fn rollback_rule(k in 1u32..60) {
        let l = common::load(suite::SMIB);
        let mut store = CheckpointStore::new(l.start.clone());
        for label in 0..k {
            let mut st = l.start.clone();
            st.t = 100.0 + label as f64;
            st.k = label;
            store.record(label, st);
        }
        let p = select_rollback_point(&store, k).unwrap();
        if k <= 2 {
            prop_assert_eq!(p.t, l.start.t);
        } else {
            prop_assert_eq!(p.k, k - 3);
            prop_assert_eq!(p.t, 100.0 + (k - 3) as f64);
        }
    }
}

/// The fuzz corpus seeds go through the same round trips the fuzz targets check.
#[test]
fn fuzz_seeds_round_trip() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let seeds = |dir: &str| {
        let mut v: Vec<_> = std::fs::read_dir(root.join(dir)).unwrap().map(|e| std::fs::read_to_string(e.unwrap().path()).unwrap()).collect();
        v.sort();
        assert!(!v.is_empty(), "{dir}");
        v
    };
    for text in seeds("parse_case") {
        let case = parse_case(&text).unwrap();
        assert_eq!(parse_case(&serialize_case(&case)).unwrap(), case);
    }
    for text in seeds("parse_schedule") {
        let s = parse_schedule(&text).unwrap();
        assert_eq!(parse_schedule(&serialize_schedule(&s)).unwrap(), s);
    }
    for text in seeds("read_trace") {
        assert_eq!(read_trace(&text).unwrap().to_csv(), text);
    }
}
