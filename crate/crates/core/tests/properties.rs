mod common;

use bangs_core::descriptive::{
    chi_square_independence, clopper_pearson, odds_ratio_2x2, tabulate, ContingencyTable, Field,
};
use bangs_core::glmm::{inverse_logit, logit};
use bangs_core::inference::percentile_interval;
use bangs_core::ingest::{clean, load_csv_reader, subset, write_events_csv, SchemaConfig, Subset};
use bangs_core::synth::{write_csv, SynthConfig};
use bangs_core::trajectory::{carry_distance, FlightParams};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn raw(seed: u64, pitches: usize, dirty: usize) -> Vec<bangs_core::ingest::RawRecord> {
    let mut buf = Vec::new();
    write_csv(&SynthConfig { seed, pitches, dirty_rows: dirty, ..Default::default() }, &mut buf).unwrap();
    load_csv_reader(buf.as_slice(), &SchemaConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logit_round_trip(p in 1e-8f64..=(1.0 - 1e-8)) {
        prop_assert!((inverse_logit(logit(p)) - p).abs() < 1e-12);
    }

    #[test]
    fn chi_square_is_nonnegative(counts in prop::collection::vec(prop::collection::vec(1u64..500, 3), 2..5)) {
        let t = ContingencyTable::from_rows(counts).unwrap();
        let r = chi_square_independence(&t).unwrap();
        prop_assert!(r.statistic >= 0.0);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn chi_square_is_zero_for_proportional_rows(base in prop::collection::vec(1u64..50, 2..5), scale in 1u64..6) {
        let t = ContingencyTable::from_rows(vec![base.clone(), base.iter().map(|v| v * scale).collect()]).unwrap();
        prop_assert!(chi_square_independence(&t).unwrap().statistic.abs() < 1e-9);
    }

    #[test]
    fn odds_ratio_symmetries(a in 1u64..300, b in 1u64..300, c in 1u64..300, d in 1u64..300) {
        let or = odds_ratio_2x2(&ContingencyTable::from_rows(vec![vec![a, b], vec![c, d]]).unwrap(), 0.95).unwrap();
        let swapped = odds_ratio_2x2(&ContingencyTable::from_rows(vec![vec![d, c], vec![b, a]]).unwrap(), 0.95).unwrap();
        let t = ContingencyTable::from_rows(vec![vec![a, b], vec![c, d]]).unwrap().transpose();
        let transposed = odds_ratio_2x2(&t, 0.95).unwrap();
        for other in [swapped, transposed] {
            prop_assert!((or.estimate - other.estimate).abs() <= 1e-12 * or.estimate);
            prop_assert!((or.lower - other.lower).abs() <= 1e-10 * or.lower);
            prop_assert!((or.upper - other.upper).abs() <= 1e-10 * or.upper);
        }
    }

    #[test]
    fn clopper_pearson_contains_proportion_and_narrows(k in 0u64..60, extra in 0u64..60) {
        let n = k + extra.max(1);
        let ci = clopper_pearson(k, n, 0.95).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!(ci.lower <= p && p <= ci.upper);
        prop_assert!(ci.lower >= 0.0 && ci.upper <= 1.0);
        let wider_n = clopper_pearson(2 * k, 2 * n, 0.95).unwrap();
        prop_assert!(wider_n.width() < ci.width());
    }

    #[test]
    fn percentile_interval_properties(
        values in prop::collection::vec(-1e3f64..1e3, 1..200),
        lo_level in 0.05f64..0.9,
        gap in 0.0f64..0.09,
        seed in any::<u64>(),
    ) {
        let hi_level = lo_level + gap;
        let (l, u) = percentile_interval(&values, lo_level).unwrap();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= l && l <= u && u <= max);
        prop_assert!(values.contains(&l) && values.contains(&u));
        let (l2, u2) = percentile_interval(&values, hi_level).unwrap();
        prop_assert!(l2 <= l && u2 >= u);
        let mut shuffled = values.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(percentile_interval(&shuffled, lo_level).unwrap(), (l, u));
    }

    #[test]
    fn distance_strictly_increases_with_velocity(v in 20.0f64..110.0, dv in 0.5f64..10.0, angle in 10.0f64..60.0) {
        let p = FlightParams::default();
        prop_assert!(carry_distance(v + dv, angle, &p).unwrap() > carry_distance(v, angle, &p).unwrap());
    }

    #[test]
    fn flight_params_json_round_trip(cd in 0.0f64..1.0, cl in 0.0f64..0.5, rho in 0.5f64..1.5) {
        let p = FlightParams { drag_coefficient: cd, lift_coefficient: cl, air_density: rho, ..Default::default() };
        prop_assert_eq!(FlightParams::from_json_str(&serde_json::to_string(&p).unwrap()).unwrap(), p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cleaning_counts_add_up(seed in any::<u64>(), pitches in 50usize..600, dirty in 0usize..4) {
        let records = raw(seed, pitches, dirty);
        let (events, report) = clean(&records, &SchemaConfig::default()).unwrap();
        prop_assert_eq!(records.len() - report.total_removed(), events.len());
        prop_assert_eq!(report.output_rows, events.len());
    }

    #[test]
    fn clean_is_idempotent(seed in any::<u64>(), pitches in 50usize..400) {
        let (events, _) = clean(&raw(seed, pitches, 2), &SchemaConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &events).unwrap();
        let canonical = SchemaConfig::canonical();
        let (again, report) = clean(&load_csv_reader(buf.as_slice(), &canonical).unwrap(), &canonical).unwrap();
        prop_assert_eq!(report.total_removed(), 0);
        prop_assert_eq!(again, events);
    }

    #[test]
    fn subsets_nest(seed in any::<u64>(), pitches in 50usize..600) {
        let schema = SchemaConfig::default();
        let (events, _) = clean(&raw(seed, pitches, 1), &schema).unwrap();
        let ids = |w: Subset| subset(&events, w, &schema).into_iter().map(|e| e.pitch_id).collect::<std::collections::BTreeSet<_>>();
        let (s, c, e) = (ids(Subset::Swing), ids(Subset::Contact), ids(Subset::Ev));
        prop_assert!(e.is_subset(&c));
        prop_assert!(c.is_subset(&s));
    }

    #[test]
    fn tabulate_ignores_event_order(seed in any::<u64>()) {
        let mut events = common::synthetic_events(400, seed % 1000);
        let before = tabulate(&events, Field::PitchGroup, Field::Bang).unwrap();
        events.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(tabulate(&events, Field::PitchGroup, Field::Bang).unwrap(), before.clone());
        prop_assert_eq!(before.total(), events.len() as u64);
    }
}
