#![allow(dead_code)]

use bangs_core::glmm::{DesignBundle, Family, Grouping, ModelSpec, RandomBlock, RandomEffect, RandomTerm, Response};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn log1pexp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of y at linear predictor eta.
pub fn bern_logp(y: f64, eta: f64) -> f64 {
    y * eta - log1pexp(eta)
}

/// Intercept + one N(0,1) covariate, scalar random intercept.
pub fn simulate_scalar(
    groups: usize,
    per_group: usize,
    beta: [f64; 2],
    sigma: f64,
    seed: u64,
) -> DesignBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = groups * per_group;
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    let mut level = Vec::with_capacity(n);
    for g in 0..groups {
        let b: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
        for j in 0..per_group {
            let i = g * per_group + j;
            let xi: f64 = rng.sample(StandardNormal);
            x[(i, 0)] = 1.0;
            x[(i, 1)] = xi;
            let p = logistic(beta[0] + beta[1] * xi + b);
            y[i] = f64::from(u8::from(rng.random::<f64>() < p));
            level.push(g);
        }
    }
    DesignBundle::from_parts(
        x,
        vec!["(Intercept)".into(), "x".into()],
        y,
        vec![RandomBlock::intercept(Grouping::Batter, level)],
    )
    .unwrap()
}

/// Gauss–Hermite nodes and weights (weight function e^{-x²}) from the
/// eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v * v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

/// Marginal log-likelihood of a scalar random-intercept logistic model by
/// adaptive Gauss–Hermite quadrature, one 1-D integral per group.
pub fn aghq_loglik(bundle: &DesignBundle, beta: &[f64], sigma: f64, nodes: usize) -> f64 {
    let (xs, ws) = gauss_hermite(nodes);
    let block = &bundle.blocks[0];
    let n = bundle.n_obs();
    let xb: Vec<f64> = (0..n).map(|i| (0..beta.len()).map(|j| bundle.x[(i, j)] * beta[j]).sum()).collect();
    let mut total = 0.0;
    for g in 0..block.n_levels() {
        let rows: Vec<usize> = (0..n).filter(|&i| block.level_of_row[i] == g).collect();
        let log_g = |b: f64| -> f64 {
            let lp: f64 = rows.iter().map(|&i| bern_logp(bundle.y[i], xb[i] + b)).sum();
            lp - 0.5 * (b / sigma).powi(2) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
        };
        // Mode and curvature by Newton's method.
        let mut b = 0.0;
        let mut curv = 1.0;
        for _ in 0..100 {
            let mut d1 = -b / (sigma * sigma);
            let mut d2 = -1.0 / (sigma * sigma);
            for &i in &rows {
                let p = logistic(xb[i] + b);
                d1 += bundle.y[i] - p;
                d2 -= p * (1.0 - p);
            }
            let step = d1 / d2;
            b -= step;
            curv = -d2;
            if step.abs() < 1e-13 {
                break;
            }
        }
        let s = 1.0 / curv.sqrt();
        let vals: Vec<f64> = xs
            .iter()
            .zip(&ws)
            .map(|(&x, &w)| w.ln() + x * x + log_g(b + std::f64::consts::SQRT_2 * s * x))
            .collect();
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = vals.iter().map(|v| (v - m).exp()).sum();
        total += (std::f64::consts::SQRT_2 * s).ln() + m + sum.ln();
    }
    total
}

/// Plain logistic regression by Newton–Raphson.
pub fn glm_logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    for _ in 0..100 {
        let eta = x * &beta;
        let mu = eta.map(logistic);
        let w = mu.map(|m| m * (1.0 - m));
        let grad = x.transpose() * (y - &mu);
        let mut info = DMatrix::zeros(p, p);
        for i in 0..x.nrows() {
            let r = x.row(i);
            info += w[i] * r.transpose() * r;
        }
        let step = info.cholesky().unwrap().solve(&grad);
        beta += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    beta
}

/// Nelder–Mead minimizer for small oracle problems.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..iters {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap());
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        fv = idx.iter().map(|&i| fv[i]).collect();
        if (fv[n] - fv[0]).abs() < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                fv[n] = fe;
            } else {
                simplex[n] = xr;
                fv[n] = fr;
            }
        } else if fr < fv[n - 1] {
            simplex[n] = xr;
            fv[n] = fr;
        } else {
            let xc = if fr < fv[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < fv[n].min(fr) {
                simplex[n] = xc;
                fv[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    fv[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap()).unwrap();
    (simplex[best].clone(), fv[best])
}

pub fn normal_draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Cleaned events from the synthetic generator.
pub fn synthetic_events(pitches: usize, seed: u64) -> Vec<bangs_core::ingest::PitchEvent> {
    use bangs_core::ingest::{clean, load_csv_reader, SchemaConfig};
    use bangs_core::synth::{write_csv, SynthConfig};
    let mut buf = Vec::new();
    write_csv(&SynthConfig { pitches, seed, ..Default::default() }, &mut buf).unwrap();
    let schema = SchemaConfig::default();
    clean(&load_csv_reader(buf.as_slice(), &schema).unwrap(), &schema).unwrap().0
}

/// A model fitted to one synthetic analysis subset.
pub fn synthetic_fit(
    spec: &bangs_core::glmm::ModelSpec,
    which: bangs_core::ingest::Subset,
    pitches: usize,
    seed: u64,
) -> (bangs_core::glmm::FittedModel, DesignBundle, Vec<bangs_core::ingest::PitchEvent>) {
    use bangs_core::glmm::{build_design, fit, FitOptions};
    use bangs_core::ingest::{subset, SchemaConfig};
    let rows = subset(&synthetic_events(pitches, seed), which, &SchemaConfig::default());
    let bundle = build_design(&rows, spec).unwrap();
    let model = fit(&bundle, spec, &FitOptions::default()).unwrap();
    (model, bundle, rows)
}

/// Spec with no fixed terms (the bundle carries X) and the given random terms;
/// effect 0 is the intercept, later effects are bang slopes.
pub fn spec_for(family: Family, random: &[(Grouping, usize)]) -> ModelSpec {
    ModelSpec {
        name: "test".into(),
        response: Response::Swing,
        family,
        fixed: vec![],
        random: random
            .iter()
            .map(|&(group, k)| RandomTerm {
                group,
                effects: (0..k)
                    .map(|e| if e == 0 { RandomEffect::Intercept } else { RandomEffect::Slope { variable: bangs_core::glmm::Variable::Bang } })
                    .collect(),
                correlated: true,
            })
            .collect(),
    }
}

/// Crossed design: correlated (intercept, slope) by batter, intercept by pitcher.
pub fn crossed_fixture(seed: u64, n: usize) -> DesignBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() - 0.5 });
    let slope: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.4))).collect();
    let y = DVector::from_fn(n, |_, _| f64::from(u8::from(rng.random::<f64>() < 0.45)));
    let lv_b: Vec<usize> = (0..n).map(|i| i % 6).collect();
    let lv_p: Vec<usize> = (0..n).map(|_| rng.random_range(0..9)).collect();
    let mut lv_p_fixed = lv_p.clone();
    for (l, v) in lv_p_fixed.iter_mut().take(9).enumerate() {
        *v = l;
    }
    let batter = RandomBlock {
        group: Grouping::Batter,
        effect_labels: vec!["(Intercept)".into(), "Bang".into()],
        correlated: true,
        levels: RandomBlock::intercept(Grouping::Batter, (0..6).collect()).levels,
        level_of_row: lv_b,
        values: slope.iter().flat_map(|&s| [1.0, s]).collect(),
    };
    DesignBundle::from_parts(
        x,
        vec!["(Intercept)".into(), "x".into()],
        y,
        vec![batter, RandomBlock::intercept(Grouping::Pitcher, lv_p_fixed)],
    )
    .unwrap()
}
