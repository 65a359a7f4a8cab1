mod common;

use bangs_core::glmm::{FitOptions, FittedModel, VcovMethod};
use bangs_core::inference::{
    bootstrap_distributions_export, linear_combo, odds_ratio, parametric_bootstrap, percentile_interval,
    player_effect_bootstrap, player_odds_ratios, simulate_response, term_weights, wald_interval,
    write_distributions_csv, BootstrapOptions, BootstrapResult,
};
use bangs_core::ingest::Subset;
use bangs_core::models::{spec_contact, spec_ev};
use bangs_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::synthetic_fit;

fn contact() -> (FittedModel, bangs_core::glmm::DesignBundle) {
    let (m, b, _) = synthetic_fit(&spec_contact(), Subset::Contact, 2500, 5);
    (m, b)
}

fn quick(replicates: usize, seed: u64) -> BootstrapOptions {
    BootstrapOptions { replicates, seed, level: 0.95, fit: FitOptions { vcov: VcovMethod::Conditional, ..Default::default() } }
}

#[test]
fn wald_interval_is_estimate_plus_minus_z_se() {
    let (m, _) = contact();
    let w = wald_interval(&m, "Bang", 0.95).unwrap();
    let j = m.term_index("Bang").unwrap();
    assert_eq!(w.estimate, m.beta[j]);
    assert_eq!(w.std_error, m.se_beta[j]);
    let z = 1.959963984540054;
    assert!((w.lower - (w.estimate - z * w.std_error)).abs() < 1e-12);
    assert!((w.upper - (w.estimate + z * w.std_error)).abs() < 1e-12);
    let w90 = wald_interval(&m, "Bang", 0.90).unwrap();
    assert!(w90.lower > w.lower && w90.upper < w.upper);
    assert!(matches!(wald_interval(&m, "Bang", 1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(wald_interval(&m, "Nope", 0.95), Err(Error::UnknownTerm(_))));
}

#[test]
fn odds_ratio_is_exp_of_the_wald_interval() {
    let (m, _) = contact();
    let w = wald_interval(&m, "Bang", 0.95).unwrap();
    let or = odds_ratio(&m, "Bang", 0.95).unwrap();
    assert!((or.odds_ratio - w.estimate.exp()).abs() < 1e-12);
    assert!((or.lower - w.lower.exp()).abs() < 1e-12);
    assert!((or.upper - w.upper.exp()).abs() < 1e-12);
    assert!(or.lower < or.odds_ratio && or.odds_ratio < or.upper);
}

#[test]
fn odds_ratio_on_gaussian_model_is_a_family_error() {
    let (m, _, _) = synthetic_fit(&spec_ev(), Subset::Ev, 2500, 5);
    assert!(matches!(odds_ratio(&m, "Bang", 0.95), Err(Error::Family(_))));
    assert!(matches!(player_odds_ratios(&m, "Bang"), Err(Error::Family(_))));
}

#[test]
fn one_hot_linear_combination_equals_wald() {
    let (m, _) = contact();
    for (j, term) in m.terms.iter().enumerate() {
        let mut w = vec![0.0; m.beta.len()];
        w[j] = 1.0;
        let lc = linear_combo(&m, &w).unwrap();
        assert_eq!(lc.estimate, m.beta[j]);
        assert!((lc.std_error - m.se_beta[j]).abs() < 1e-12 * m.se_beta[j].max(1.0), "{term}");
        let a = lc.wald(term, 0.95).unwrap();
        let b = wald_interval(&m, term, 0.95).unwrap();
        assert!((a.lower - b.lower).abs() < 1e-12 && (a.upper - b.upper).abs() < 1e-12);
    }
}

#[test]
fn linear_combination_uses_the_covariance() {
    let (m, _) = contact();
    let w = term_weights(&m, &[("Bang", 1.0), ("Fastball:Bang", 1.0)]).unwrap();
    let lc = linear_combo(&m, &w).unwrap();
    let (i, j) = (m.term_index("Bang").unwrap(), m.term_index("Fastball:Bang").unwrap());
    assert!((lc.estimate - (m.beta[i] + m.beta[j])).abs() < 1e-12);
    let var = m.vcov[i][i] + m.vcov[j][j] + 2.0 * m.vcov[i][j];
    assert!((lc.std_error - var.sqrt()).abs() < 1e-12);
    assert!(matches!(linear_combo(&m, &[1.0]), Err(Error::Dimension(_))));
}

#[test]
fn zero_standard_error_gives_a_degenerate_interval() {
    let (mut m, _) = contact();
    let j = m.term_index("CSP").unwrap();
    m.se_beta[j] = 0.0;
    let w = wald_interval(&m, "CSP", 0.95).unwrap();
    assert_eq!(w.lower, w.estimate);
    assert_eq!(w.upper, w.estimate);
}

#[test]
fn player_odds_ratios_are_fixed_plus_random_slope_sorted() {
    let (m, _) = contact();
    let ors = player_odds_ratios(&m, "Bang").unwrap();
    let table = bangs_core::glmm::blups(&m, bangs_core::glmm::Grouping::Batter).unwrap();
    assert_eq!(ors.len(), table.levels.len());
    let beta = m.beta[m.term_index("Bang").unwrap()];
    for p in &ors {
        assert!((p.log_odds - (beta + p.blup)).abs() < 1e-12);
        assert!((p.odds_ratio - p.log_odds.exp()).abs() < 1e-12);
    }
    assert!(ors.windows(2).all(|w| w[0].odds_ratio >= w[1].odds_ratio));
}

#[test]
fn percentile_interval_uses_order_statistics() {
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    // ceil(100 * 0.025) = 3, ceil(100 * 0.975) = 98.
    assert_eq!(percentile_interval(&v, 0.95).unwrap(), (3.0, 98.0));
    assert_eq!(percentile_interval(&[4.0, 4.0, 4.0], 0.95).unwrap(), (4.0, 4.0));
    assert!(percentile_interval(&[], 0.95).is_err());
}

#[test]
fn bootstrap_is_deterministic_for_a_seed() {
    let (m, b) = contact();
    let stat = |f: &FittedModel| Ok(f.beta[f.term_index("Bang")?]);
    let a = parametric_bootstrap(&m, &b, "bang", stat, &quick(6, 99)).unwrap();
    let c = parametric_bootstrap(&m, &b, "bang", stat, &quick(6, 99)).unwrap();
    assert_eq!(a.to_json(true).unwrap(), c.to_json(true).unwrap());
    let d = parametric_bootstrap(&m, &b, "bang", stat, &quick(6, 100)).unwrap();
    assert_ne!(a.replicates, d.replicates);
    assert_eq!(a.b, 6);
    assert_eq!(a.replicates.len(), 6);
    let usable = a.usable();
    let lo = usable.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = usable.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(a.lower >= lo && a.upper <= hi && a.lower <= a.upper);
    let (l50, u50) = a.interval_at(0.5).unwrap();
    assert!(l50 >= a.lower && u50 <= a.upper);
}

#[test]
fn constant_statistic_has_zero_width_interval() {
    let (m, b) = contact();
    let r = parametric_bootstrap(&m, &b, "one", |_| Ok(1.0), &quick(3, 1)).unwrap();
    assert_eq!((r.lower, r.upper), (1.0, 1.0));
    assert_eq!(r.failures, 0);
}

#[test]
fn bootstrap_json_omits_replicates_unless_asked() {
    let (m, b) = contact();
    let r = parametric_bootstrap(&m, &b, "one", |_| Ok(1.0), &quick(2, 1)).unwrap();
    let short: serde_json::Value = serde_json::from_str(&r.to_json(false).unwrap()).unwrap();
    assert!(short.get("replicates").is_none());
    let long: BootstrapResult = serde_json::from_str(&r.to_json(true).unwrap()).unwrap();
    assert_eq!(long, r);
}

#[test]
fn too_many_failed_replicates_abort() {
    let (m, b) = contact();
    let original = m.beta.clone();
    let stat = move |f: &FittedModel| {
        if f.beta == original {
            Ok(0.0)
        } else {
            Err(Error::Numerical("refit rejected".into()))
        }
    };
    let err = parametric_bootstrap(&m, &b, "x", stat, &quick(3, 1)).unwrap_err();
    assert!(matches!(err, Error::BootstrapFailures { failures: 3, total: 3 }));
}

#[test]
fn bootstrap_needs_two_replicates() {
    let (m, b) = contact();
    assert!(matches!(parametric_bootstrap(&m, &b, "x", |_| Ok(0.0), &quick(1, 1)), Err(Error::InvalidArgument(_))));
}

#[test]
fn distribution_export_has_one_row_per_player_and_replicate() {
    let (m, b) = contact();
    let players = bangs_core::glmm::blups(&m, bangs_core::glmm::Grouping::Batter).unwrap().levels[..9].to_vec();
    let res = player_effect_bootstrap(&m, &b, &players, "Bang", &quick(3, 4)).unwrap();
    assert_eq!(res.len(), 9);
    let rows = bootstrap_distributions_export(&res);
    assert_eq!(rows.len(), 9 * 3);
    let mut buf = Vec::new();
    write_distributions_csv(&rows, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 27);
    for r in &res {
        let slope = bangs_core::inference::player_effect(&m, &r.player.id, "Bang", "Bang").unwrap();
        assert_eq!(r.slope.estimate, slope);
    }
}

#[test]
fn simulated_responses_match_the_family() {
    let (m, b) = contact();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = simulate_response(&m, &b, &mut rng).unwrap();
    assert_eq!(y.len(), b.n_obs());
    assert!(y.iter().all(|v| *v == 0.0 || *v == 1.0));
    let (ev, evb, _) = synthetic_fit(&spec_ev(), Subset::Ev, 2500, 5);
    let y = simulate_response(&ev, &evb, &mut rng).unwrap();
    let mean = y.mean();
    let fitted: f64 = ev.eta.iter().sum::<f64>() / ev.eta.len() as f64;
    assert!((mean - fitted).abs() < 3.0, "{mean} vs {fitted}");
    assert!(matches!(simulate_response(&m, &evb, &mut rng), Err(Error::Dimension(_))));
}
