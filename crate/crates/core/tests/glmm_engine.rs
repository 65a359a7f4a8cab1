mod common;

use approx::assert_relative_eq;
use bangs_core::glmm::{
    fit, loglik, loglik_agq, loglik_gradient, loglik_theta, DesignBundle, Family, FitOptions, Grouping, RandomBlock,
    VarianceParams,
};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_cov(sigma: f64) -> VarianceParams {
    VarianceParams { covariances: vec![DMatrix::from_element(1, 1, sigma * sigma)], residual_sd: None }
}

#[test]
fn laplace_close_to_adaptive_quadrature_at_truth() {
    let bundle = simulate_scalar(20, 50, [-1.0, 0.5], 0.7, 11);
    let lap = loglik(&bundle, Family::BernoulliLogit, &[-1.0, 0.5], &scalar_cov(0.7)).unwrap();
    let quad = aghq_loglik(&bundle, &[-1.0, 0.5], 0.7, 15);
    assert!(((lap - quad) / quad).abs() < 1e-3, "laplace {lap} quadrature {quad}");
}

#[test]
fn gauss_hermite_rule_integrates_polynomials() {
    let (x, w) = gauss_hermite(15);
    let pi_sqrt = std::f64::consts::PI.sqrt();
    let m0: f64 = w.iter().sum();
    let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
    let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
    assert_relative_eq!(m0, pi_sqrt, epsilon = 1e-12);
    assert_relative_eq!(m2, pi_sqrt / 2.0, epsilon = 1e-12);
    assert_relative_eq!(m4, 0.75 * pi_sqrt, epsilon = 1e-12);
}

#[test]
fn laplace_fit_objective_and_effects_match_quadrature_fit() {
    let bundle = simulate_scalar(20, 50, [-1.0, 0.5], 0.7, 5);
    let spec = spec_for(Family::BernoulliLogit, &[(Grouping::Batter, 1)]);
    let m = fit(&bundle, &spec, &FitOptions::default()).unwrap();
    assert!(m.convergence.converged);
    let sd = m.variance_components[0].sd[0];
    let (best, neg) = nelder_mead(
        |v| -aghq_loglik(&bundle, &v[..2], v[2].exp(), 15),
        &[m.beta[0], m.beta[1], sd.ln()],
        0.1,
        2000,
    );
    let quad_max = -neg;
    assert!(((m.log_likelihood - quad_max) / quad_max).abs() < 0.01);
    assert!((m.beta[0] - best[0]).abs() < 0.05 && (m.beta[1] - best[1]).abs() < 0.05);
}

/// 1-group toy: y = (1, 1, 0), intercept 0.3.
fn toy() -> DesignBundle {
    DesignBundle::from_parts(
        DMatrix::from_element(3, 1, 1.0),
        vec!["(Intercept)".into()],
        DVector::from_vec(vec![1.0, 1.0, 0.0]),
        vec![RandomBlock::intercept(Grouping::Batter, vec![0, 0, 0])],
    )
    .unwrap()
}

/// log ∫ Π p(y|β+b) N(b; 0, σ²) db by composite Simpson on ±12σ.
fn direct_integral(y: &[f64], beta: f64, sigma: f64) -> f64 {
    let n = 20_000;
    let (lo, hi) = (-12.0 * sigma, 12.0 * sigma);
    let h = (hi - lo) / n as f64;
    let f = |b: f64| -> f64 {
        let lp: f64 = y.iter().map(|&yi| bern_logp(yi, beta + b)).sum();
        (lp - 0.5 * (b / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    (s * h / 3.0).ln()
}

#[test]
fn quadrature_oracle_matches_direct_integration_on_toy() {
    let b = toy();
    for sigma in [0.3, 1.0, 2.0] {
        let q = aghq_loglik(&b, &[0.3], sigma, 25);
        assert!((q - direct_integral(&[1.0, 1.0, 0.0], 0.3, sigma)).abs() < 1e-9);
    }
}

#[test]
fn toy_laplace_matches_direct_integration() {
    let b = toy();
    let sigma = 1.0;
    let lap = loglik(&b, Family::BernoulliLogit, &[0.3], &scalar_cov(sigma)).unwrap();
    let exact = direct_integral(&[1.0, 1.0, 0.0], 0.3, sigma);
    assert!((lap - exact).abs() < 1e-6, "laplace {lap} vs integral {exact}");
}

#[test]
fn toy_adaptive_quadrature_matches_direct_integration() {
    let b = toy();
    for sigma in [0.3, 1.0, 2.0] {
        let q = loglik_agq(&b, &[0.3], sigma, 25).unwrap();
        let exact = direct_integral(&[1.0, 1.0, 0.0], 0.3, sigma);
        assert!((q - exact).abs() < 1e-6, "sigma {sigma}: {q} vs {exact}");
    }
    let one = loglik_agq(&b, &[0.3], 1.0, 1).unwrap();
    let lap = loglik(&b, Family::BernoulliLogit, &[0.3], &scalar_cov(1.0)).unwrap();
    assert_relative_eq!(one, lap, epsilon = 1e-12);
}

#[test]
fn toy_objective_decreases_for_large_variance() {
    let b = toy();
    let grid = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let vals: Vec<f64> = grid
        .iter()
        .map(|&s| loglik(&b, Family::BernoulliLogit, &[0.3], &scalar_cov(s)).unwrap())
        .collect();
    for w in vals.windows(2) {
        assert!(w[1] < w[0], "{vals:?}");
    }
}

#[test]
fn gaussian_without_random_effects_is_normal_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 10.0 });
    let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 5.0);
    let b = DesignBundle::from_parts(x.clone(), vec!["a".into(), "b".into()], y.clone(), vec![]).unwrap();
    let beta = [0.4, 1.1];
    let sd = 1.7;
    let params = VarianceParams { covariances: vec![], residual_sd: Some(sd) };
    let got = loglik(&b, Family::GaussianIdentity, &beta, &params).unwrap();
    let expected: f64 = (0..n)
        .map(|i| {
            let r = y[i] - beta[0] - beta[1] * x[(i, 1)];
            -0.5 * (2.0 * std::f64::consts::PI * sd * sd).ln() - r * r / (2.0 * sd * sd)
        })
        .sum();
    assert_relative_eq!(got, expected, epsilon = 1e-9);
}

#[test]
fn gaussian_loglik_matches_dense_multivariate_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 30;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sin() });
    let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 3.0);
    let lv1: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let lv2: Vec<usize> = (0..n).map(|i| (i * 7) % 5).collect();
    let b = DesignBundle::from_parts(
        x.clone(),
        vec!["a".into(), "b".into()],
        y.clone(),
        vec![RandomBlock::intercept(Grouping::Batter, lv1), RandomBlock::intercept(Grouping::Pitcher, lv2)],
    )
    .unwrap();
    let (s1, s2, sd) = (0.8, 0.5, 1.3);
    let beta = [1.0, -0.5];
    let params = VarianceParams {
        covariances: vec![DMatrix::from_element(1, 1, s1 * s1), DMatrix::from_element(1, 1, s2 * s2)],
        residual_sd: Some(sd),
    };
    let got = loglik(&b, Family::GaussianIdentity, &beta, &params).unwrap();
    let z = b.z_dense();
    let g = DMatrix::from_diagonal(&DVector::from_fn(9, |i, _| if i < 4 { s1 * s1 } else { s2 * s2 }));
    let v = &z * g * z.transpose() + DMatrix::identity(n, n) * (sd * sd);
    let r = &y - &x * DVector::from_column_slice(&beta);
    let ch = v.cholesky().unwrap();
    let logdet = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = r.dot(&ch.solve(&r));
    let expected = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    assert_relative_eq!(got, expected, epsilon = 1e-9);
}

#[test]
fn zero_variance_fit_equals_glm() {
    let bundle = simulate_scalar(10, 30, [-0.3, 0.8], 0.5, 21);
    let spec = spec_for(Family::BernoulliLogit, &[(Grouping::Batter, 1)]);
    let m = fit(&bundle, &spec, &FitOptions::zero_variance(&bundle)).unwrap();
    let glm = glm_logistic(&bundle.x, &bundle.y);
    for j in 0..2 {
        assert!((m.beta[j] - glm[j]).abs() < 1e-6, "{} vs {}", m.beta[j], glm[j]);
    }
    assert!(m.blups[0].values.iter().all(|v| v[0] == 0.0));
    assert!(m.singular);
}

#[test]
fn zero_variance_gaussian_fit_equals_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 50;
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => (i % 2) as f64,
        _ => i as f64 * 0.1,
    });
    let y = DVector::from_fn(n, |i, _| 2.0 + 0.3 * i as f64 * 0.1 + rng.random::<f64>());
    let levels: Vec<usize> = (0..n).map(|i| i % 5).collect();
    let bundle = DesignBundle::from_parts(
        x.clone(),
        vec!["a".into(), "b".into(), "c".into()],
        y.clone(),
        vec![RandomBlock::intercept(Grouping::Pitcher, levels)],
    )
    .unwrap();
    let spec = spec_for(Family::GaussianIdentity, &[(Grouping::Pitcher, 1)]);
    let m = fit(&bundle, &spec, &FitOptions::zero_variance(&bundle)).unwrap();
    let xtx = x.transpose() * &x;
    let ols = xtx.clone().cholesky().unwrap().solve(&(x.transpose() * &y));
    let resid = &y - &x * &ols;
    let s2 = resid.dot(&resid) / (n - 3) as f64;
    let se = xtx.try_inverse().unwrap().diagonal().map(|d| (d * s2).sqrt());
    for j in 0..3 {
        assert!((m.beta[j] - ols[j]).abs() < 1e-6);
        assert!((m.se_beta[j] - se[j]).abs() < 1e-6);
    }
    assert!((m.residual_sd.unwrap() - s2.sqrt()).abs() < 1e-6);
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in 0..5u64 {
        let bundle = crossed_fixture(seed, 120);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let theta: Vec<f64> = vec![
            0.5 + rng.random::<f64>(),
            rng.random::<f64>() - 0.5,
            0.3 + rng.random::<f64>(),
            0.2 + rng.random::<f64>(),
        ];
        let beta = vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
        let (_, g) = loglik_gradient(&bundle, &beta, &theta).unwrap();
        let f = |t: &[f64], b: &[f64]| loglik_theta(&bundle, Family::BernoulliLogit, b, t, None).unwrap();
        let h = 1e-5;
        for i in 0..theta.len() + beta.len() {
            let (mut tp, mut tm, mut bp, mut bm) = (theta.clone(), theta.clone(), beta.clone(), beta.clone());
            if i < theta.len() {
                tp[i] += h;
                tm[i] -= h;
            } else {
                bp[i - theta.len()] += h;
                bm[i - theta.len()] -= h;
            }
            let fd = (f(&tp, &bp) - f(&tm, &bm)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-4, "seed {seed} coordinate {i}: analytic {} fd {fd}", g[i]);
        }
    }
}

#[test]
fn covariate_shift_is_absorbed_by_intercept() {
    let bundle = simulate_scalar(15, 40, [-0.5, 0.7], 0.6, 33);
    let c = 3.0;
    let mut shifted = bundle.clone();
    for i in 0..shifted.n_obs() {
        shifted.x[(i, 1)] += c;
    }
    let spec = spec_for(Family::BernoulliLogit, &[(Grouping::Batter, 1)]);
    let opts = FitOptions { grad_tol: 1e-9, rel_tol: 1e-14, param_tol: 1e-10, ..Default::default() };
    let a = fit(&bundle, &spec, &opts).unwrap();
    let b = fit(&shifted, &spec, &opts).unwrap();
    assert!((b.beta[0] - (a.beta[0] - c * a.beta[1])).abs() < 1e-6);
    assert!((b.beta[1] - a.beta[1]).abs() < 1e-6);
    assert!((b.variance_components[0].sd[0] - a.variance_components[0].sd[0]).abs() < 1e-6);
    for (ea, eb) in a.eta.iter().zip(&b.eta) {
        assert!((ea - eb).abs() < 1e-6);
    }
}

#[test]
fn parameter_recovery_on_simulated_datasets() {
    let truth = [-1.0, 0.5, 0.7];
    let spec = spec_for(Family::BernoulliLogit, &[(Grouping::Batter, 1)]);
    let est: Vec<[f64; 3]> = (0..20u64)
        .map(|s| {
            let m = fit(&simulate_scalar(20, 50, [truth[0], truth[1]], truth[2], 1000 + s), &spec, &FitOptions::default())
                .unwrap();
            [m.beta[0], m.beta[1], m.variance_components[0].sd[0]]
        })
        .collect();
    for k in 0..3 {
        let vals: Vec<f64> = est.iter().map(|e| e[k]).collect();
        let mean = vals.iter().sum::<f64>() / 20.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 19.0).sqrt();
        let mcse = sd / 20f64.sqrt();
        assert!((mean - truth[k]).abs() < 3.0 * mcse, "param {k}: mean {mean}, truth {}, mcse {mcse}", truth[k]);
    }
}

#[test]
fn extreme_group_blup_is_largest_and_shrunk() {
    let mut bundle = simulate_scalar(12, 40, [-0.2, 0.0], 0.5, 77);
    // Group 3 gets a strong positive shift in outcomes.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..bundle.n_obs() {
        if bundle.blocks[0].level_of_row[i] == 3 {
            bundle.y[i] = f64::from(u8::from(rng.random::<f64>() < 0.85));
        }
    }
    let x1 = bundle.x.columns(0, 1).into_owned();
    let b1 = DesignBundle::from_parts(x1, vec!["(Intercept)".into()], bundle.y.clone(), bundle.blocks.clone()).unwrap();
    let spec = spec_for(Family::BernoulliLogit, &[(Grouping::Batter, 1)]);
    let m = fit(&b1, &spec, &FitOptions::default()).unwrap();
    let blup: Vec<f64> = m.blups[0].values.iter().map(|v| v[0]).collect();
    let largest = (0..blup.len()).max_by(|&a, &b| blup[a].abs().partial_cmp(&blup[b].abs()).unwrap()).unwrap();
    assert_eq!(largest, 3);
    let rows: Vec<usize> = (0..b1.n_obs()).filter(|&i| b1.blocks[0].level_of_row[i] == 3).collect();
    let ybar = rows.iter().map(|&i| b1.y[i]).sum::<f64>() / rows.len() as f64;
    let unpooled = (ybar / (1.0 - ybar)).ln() - m.beta[0];
    assert!(blup[3] > 0.0 && blup[3] < unpooled);
}

#[test]
fn fits_are_bitwise_reproducible() {
    let bundle = crossed_fixture(4, 200);
    let spec = spec_for(Family::BernoulliLogit, &[(Grouping::Batter, 2), (Grouping::Pitcher, 1)]);
    let a = serde_json::to_string(&fit(&bundle, &spec, &FitOptions::default()).unwrap()).unwrap();
    let b = serde_json::to_string(&fit(&bundle, &spec, &FitOptions::default()).unwrap()).unwrap();
    assert_eq!(a, b);
}

/// REML deviance by dense algebra, σ² profiled.
fn dense_reml(bundle: &DesignBundle, rel_sd: &[f64]) -> f64 {
    let n = bundle.n_obs();
    let p = bundle.n_fixed();
    let z = bundle.z_dense();
    let mut d = Vec::new();
    for (b, s) in bundle.blocks.iter().zip(rel_sd) {
        d.extend(std::iter::repeat_n(s * s, b.width()));
    }
    let v = &z * DMatrix::from_diagonal(&DVector::from_vec(d)) * z.transpose() + DMatrix::identity(n, n);
    let vi = v.clone().try_inverse().unwrap();
    let xtvx = bundle.x.transpose() * &vi * &bundle.x;
    let beta = xtvx.clone().try_inverse().unwrap() * bundle.x.transpose() * &vi * &bundle.y;
    let r = &bundle.y - &bundle.x * beta;
    let q = r.dot(&(&vi * &r));
    let dof = (n - p) as f64;
    v.determinant().ln() + xtvx.determinant().ln() + dof * (1.0 + (2.0 * std::f64::consts::PI * q / dof).ln())
}

#[test]
fn reml_fit_is_stationary_for_dense_criterion() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 80;
    let lv_b: Vec<usize> = (0..n).map(|i| i % 7).collect();
    let lv_p: Vec<usize> = (0..n).map(|i| (i * 3 + i / 7) % 10).collect();
    let eff_b: Vec<f64> = normal_draws(&mut rng, 7);
    let eff_p: Vec<f64> = normal_draws(&mut rng, 10);
    let noise = normal_draws(&mut rng, n);
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i % 3) as f64 });
    let y = DVector::from_fn(n, |i, _| 10.0 + 2.0 * x[(i, 1)] + 1.5 * eff_b[lv_b[i]] + 0.8 * eff_p[lv_p[i]] + 2.0 * noise[i]);
    let bundle = DesignBundle::from_parts(
        x,
        vec!["(Intercept)".into(), "x".into()],
        y,
        vec![RandomBlock::intercept(Grouping::Batter, lv_b), RandomBlock::intercept(Grouping::Pitcher, lv_p)],
    )
    .unwrap();
    let spec = spec_for(Family::GaussianIdentity, &[(Grouping::Batter, 1), (Grouping::Pitcher, 1)]);
    let m = fit(&bundle, &spec, &FitOptions::default()).unwrap();
    assert!(m.convergence.converged);
    let rel = [m.theta[0], m.theta[1]];
    let d0 = dense_reml(&bundle, &rel);
    assert_relative_eq!(d0, m.reml_criterion.unwrap(), epsilon = 1e-8);
    for k in 0..2 {
        if rel[k] == 0.0 {
            continue;
        }
        let h = 1e-4;
        let mut up = rel;
        let mut dn = rel;
        up[k] += h;
        dn[k] -= h;
        let g = (dense_reml(&bundle, &up) - dense_reml(&bundle, &dn)) / (2.0 * h);
        assert!(g.abs() < 1e-3, "component {k} gradient {g}");
    }
    // Residuals of the fitted values average to zero (intercept in X).
    let mean_resid = (0..n).map(|i| bundle.y[i] - m.eta[i]).sum::<f64>() / n as f64;
    assert!(mean_resid.abs() < 1e-6);
}
