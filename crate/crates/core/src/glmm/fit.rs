use std::cell::RefCell;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{lookup_levels, DesignBundle, DesignLayout};
use super::engine::{inv_logit, Engine, ModeState, PirlsOptions, RowVectors, ThetaLayout};
use super::optim::{minimize, numeric_gradient, BfgsOptions, BfgsResult};
use super::spec::{Family, Grouping, ModelSpec};
use crate::descriptive::two_sided_normal_p;
use crate::error::{Error, Result};
use crate::ingest::{PitchEvent, Player};

/// How the fixed-effect covariance is obtained for Bernoulli fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcovMethod {
    /// Inverse of the finite-difference Hessian of the Laplace objective
    /// over variance parameters and β, β block.
    Hessian,
    /// Inverse of the penalized information of (u, β) at the mode, β block.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartValues {
    /// Factor entries in optimizer order (relative to σ for Gaussian models).
    pub theta: Vec<f64>,
    /// Ignored for Gaussian models, where β is profiled.
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub param_tol: f64,
    pub grad_tol: f64,
    pub pirls_tol: f64,
    pub pirls_max_iter: usize,
    /// A variance parameter is set to zero when doing so worsens the
    /// objective by no more than this.
    pub boundary_tol: f64,
    /// Holds every factor entry fixed (relative to σ for Gaussian models).
    pub fixed_theta: Option<Vec<f64>>,
    pub start: Option<StartValues>,
    pub vcov: VcovMethod,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            rel_tol: 1e-8,
            param_tol: 1e-6,
            grad_tol: 1e-6,
            pirls_tol: 1e-10,
            pirls_max_iter: 100,
            boundary_tol: 1e-6,
            fixed_theta: None,
            start: None,
            vcov: VcovMethod::Hessian,
        }
    }
}

impl FitOptions {
    /// All random-effect variances held at zero.
    pub fn zero_variance(bundle: &DesignBundle) -> Self {
        let n = ThetaLayout::new(bundle).len();
        FitOptions { fixed_theta: Some(vec![0.0; n]), ..Default::default() }
    }

    fn bfgs(&self) -> BfgsOptions {
        BfgsOptions {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            param_tol: self.param_tol,
            grad_tol: self.grad_tol,
        }
    }

    fn pirls(&self) -> PirlsOptions {
        PirlsOptions { tol: self.pirls_tol, max_iter: self.pirls_max_iter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub group: Grouping,
    pub effects: Vec<String>,
    pub sd: Vec<f64>,
    /// Correlation matrix (identity for single effects; 0 where undefined).
    pub correlation: Vec<Vec<f64>>,
    pub singular: bool,
}

/// Conditional modes b = Λû for one random term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlupTable {
    pub group: Grouping,
    pub effects: Vec<String>,
    pub levels: Vec<Player>,
    /// values[level][effect]
    pub values: Vec<Vec<f64>>,
}

impl BlupTable {
    pub fn effect_index(&self, label: &str) -> Result<usize> {
        self.effects
            .iter()
            .position(|e| e == label)
            .ok_or_else(|| Error::UnknownTerm(format!("{label} (random effects by {})", self.group)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub pirls_converged: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub terms: Vec<String>,
    pub beta: Vec<f64>,
    pub se_beta: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    /// Optimizer-scale factor entries (relative to σ for Gaussian models).
    pub theta: Vec<f64>,
    /// Lower-triangular factors L with Σ = L L', per random term.
    pub cov_factors: Vec<Vec<Vec<f64>>>,
    pub variance_components: Vec<VarianceComponent>,
    pub residual_sd: Option<f64>,
    pub blups: Vec<BlupTable>,
    pub eta: Vec<f64>,
    /// Laplace log-likelihood (Bernoulli) or REML log-likelihood (Gaussian).
    pub log_likelihood: f64,
    /// −2 × REML log-likelihood, Gaussian only.
    pub reml_criterion: Option<f64>,
    pub convergence: Convergence,
    pub singular: bool,
    pub layout: Option<DesignLayout>,
    pub n_obs: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
}

impl FittedModel {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn term_index(&self, term: &str) -> Result<usize> {
        self.terms.iter().position(|t| t == term).ok_or_else(|| Error::UnknownTerm(term.to_string()))
    }

    pub fn coefficients(&self) -> Vec<CoefficientRow> {
        self.terms
            .iter()
            .zip(self.beta.iter().zip(&self.se_beta))
            .map(|(t, (&b, &se))| {
                let z = b / se;
                CoefficientRow {
                    term: t.clone(),
                    estimate: b,
                    std_error: se,
                    z_value: z,
                    p_value: if z.is_nan() { f64::NAN } else { two_sided_normal_p(z) },
                }
            })
            .collect()
    }

    /// Covariance matrices Σ_t = L_t L_t'.
    pub fn covariances(&self) -> Vec<DMatrix<f64>> {
        self.cov_factors.iter().map(|l| {
            let l = rows_to_matrix(l);
            &l * l.transpose()
        }).collect()
    }

    pub fn write_coefficients_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["term", "estimate", "std_error", "z_value", "p_value"])?;
        for r in self.coefficients() {
            wtr.write_record([
                r.term.clone(),
                r.estimate.to_string(),
                r.std_error.to_string(),
                r.z_value.to_string(),
                r.p_value.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<coefficients>", e))?;
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn coefficients_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.coefficients())?)
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.len();
    DMatrix::from_fn(k, k, |i, j| rows[i][j])
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Variance parameters on the natural scale, for [`loglik`].
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceParams {
    pub covariances: Vec<DMatrix<f64>>,
    /// Residual standard deviation; Gaussian only.
    pub residual_sd: Option<f64>,
}

fn check_family(bundle: &DesignBundle, family: Family) -> Result<()> {
    if family == Family::BernoulliLogit && bundle.y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Family("Bernoulli response must be 0/1".into()));
    }
    Ok(())
}

fn residual_sigma(family: Family, sd: Option<f64>) -> Result<f64> {
    match family {
        Family::BernoulliLogit => Ok(1.0),
        Family::GaussianIdentity => match sd {
            Some(s) if s > 0.0 && s.is_finite() => Ok(s),
            _ => Err(Error::InvalidArgument("Gaussian log-likelihood needs a positive residual sd".into())),
        },
    }
}

/// Factor entries θ (optimizer order) for per-term covariance matrices.
pub fn theta_from_covariances(bundle: &DesignBundle, covariances: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    ThetaLayout::new(bundle).from_covariances(covariances)
}

/// Marginal log-likelihood: Laplace approximation for Bernoulli models,
/// exact for Gaussian ones.
pub fn loglik(bundle: &DesignBundle, family: Family, beta: &[f64], params: &VarianceParams) -> Result<f64> {
    let theta = theta_from_covariances(bundle, &params.covariances)?;
    let sigma = residual_sigma(family, params.residual_sd)?;
    Ok(laplace_state(bundle, family, beta, &theta, sigma)?.1.laplace())
}

/// Laplace log-likelihood of a Bernoulli model and its gradient with respect
/// to the factor entries θ followed by β.
pub fn loglik_gradient(bundle: &DesignBundle, beta: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (eng, rows, state) = laplace_context(bundle, Family::BernoulliLogit, beta, theta, 1.0)?;
    Ok((state.laplace(), eng.laplace_gradient(&rows, &state, 1.0)))
}

/// Laplace log-likelihood at factor entries θ.
pub fn loglik_theta(bundle: &DesignBundle, family: Family, beta: &[f64], theta: &[f64], residual_sd: Option<f64>) -> Result<f64> {
    let sigma = residual_sigma(family, residual_sd)?;
    Ok(laplace_state(bundle, family, beta, theta, sigma)?.1.laplace())
}

/// Marginal log-likelihood of a Bernoulli model with a single scalar random
/// term by adaptive Gauss–Hermite quadrature around each level's conditional
/// mode. `nodes = 1` reproduces the Laplace approximation.
pub fn loglik_agq(bundle: &DesignBundle, beta: &[f64], sd: f64, nodes: usize) -> Result<f64> {
    if bundle.blocks.len() != 1 || bundle.blocks[0].n_effects() != 1 {
        return Err(Error::InvalidArgument("quadrature needs exactly one scalar random term".into()));
    }
    if nodes == 0 || !(sd >= 0.0) {
        return Err(Error::InvalidArgument("quadrature needs at least one node and sd >= 0".into()));
    }
    let (eng, rows, state) = laplace_context(bundle, Family::BernoulliLogit, beta, &[sd], 1.0)?;
    let block = &bundle.blocks[0];
    let n_levels = block.n_levels();
    let xb: Vec<f64> = (0..bundle.n_obs())
        .map(|i| (0..beta.len()).map(|j| bundle.x[(i, j)] * beta[j]).sum())
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_levels];
    for (i, &l) in block.level_of_row.iter().enumerate() {
        members[l].push(i);
    }
    let (xs, ws) = gauss_hermite(nodes);
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut total = 0.0;
    for (l, rs) in members.iter().enumerate() {
        let idx = eng.coords.u_index(0, l, 1, 0);
        let u_hat = state.u[idx];
        let log_h = |u: f64| -> f64 {
            rs.iter()
                .map(|&i| {
                    let eta = xb[i] + rows.a[0][i] * u;
                    bundle.y[i] * eta - super::engine::softplus(eta)
                })
                .sum::<f64>()
                - 0.5 * u * u
                - half_ln_2pi
        };
        let curv: f64 = 1.0
            + rs.iter()
                .map(|&i| {
                    let mu = inv_logit(state.eta[i]);
                    mu * (1.0 - mu) * rows.a[0][i].powi(2)
                })
                .sum::<f64>();
        let s = std::f64::consts::SQRT_2 / curv.sqrt();
        let terms: Vec<f64> = xs.iter().zip(&ws).map(|(&x, &w)| w.ln() + x * x + log_h(u_hat + s * x)).collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += s.ln() + m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    }
    Ok(total)
}

/// Gauss–Hermite rule for weight e^{-x²} (Golub–Welsch).
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.0], vec![std::f64::consts::PI.sqrt()]);
    }
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i == j + 1 || j == i + 1 {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn laplace_state(bundle: &DesignBundle, family: Family, beta: &[f64], theta: &[f64], sigma: f64) -> Result<(RowVectors, ModeState)> {
    let (_, rows, state) = laplace_context(bundle, family, beta, theta, sigma)?;
    Ok((rows, state))
}

fn laplace_context<'a>(
    bundle: &'a DesignBundle,
    family: Family,
    beta: &[f64],
    theta: &[f64],
    sigma: f64,
) -> Result<(Engine<'a>, RowVectors, ModeState)> {
    check_family(bundle, family)?;
    let eng = Engine::new(bundle, family);
    if beta.len() != eng.p() || theta.len() != eng.theta.len() {
        return Err(Error::Dimension(format!(
            "expected {} fixed effects and {} factor entries, got {} and {}",
            eng.p(),
            eng.theta.len(),
            beta.len(),
            theta.len()
        )));
    }
    let rows = eng.row_vectors(&eng.theta.lambda(theta));
    let u0 = vec![0.0; eng.coords.q];
    let opts = FitOptions::default().pirls();
    let state = eng.pirls(&rows, beta, &u0, sigma, false, opts)?;
    Ok((eng, rows, state))
}

/// Maps free optimizer coordinates to θ: log scale for diagonal entries.
struct ThetaMap {
    template: Vec<f64>,
    free: Vec<usize>,
    diag: Vec<bool>,
}

impl ThetaMap {
    fn new(layout: &ThetaLayout, start: &[f64], fixed: bool) -> Self {
        let diag = (0..layout.len()).map(|i| layout.is_diagonal(i)).collect::<Vec<_>>();
        let template = start
            .iter()
            .zip(&diag)
            .map(|(&v, &d)| if d { v.abs() } else { v })
            .collect();
        let free = if fixed { Vec::new() } else { (0..layout.len()).collect() };
        ThetaMap { template, free, diag }
    }

    fn theta(&self, phi: &[f64]) -> Vec<f64> {
        let mut t = self.template.clone();
        for (&i, &p) in self.free.iter().zip(phi) {
            t[i] = if self.diag[i] { p.exp() } else { p };
        }
        t
    }

    fn phi(&self, theta: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .map(|&i| if self.diag[i] { theta[i].max(1e-8).ln() } else { theta[i] })
            .collect()
    }

    /// dθ/dφ for the free coordinates.
    fn jacobian(&self, theta: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| if self.diag[i] { theta[i] } else { 1.0 }).collect()
    }

    fn fix(&mut self, idx: usize, value: f64, current: &[f64]) {
        self.template = current.to_vec();
        self.template[idx] = value;
        self.free.retain(|&i| i != idx);
    }
}

/// Fits the model described by `spec` to `bundle`.
pub fn fit(bundle: &DesignBundle, spec: &ModelSpec, opts: &FitOptions) -> Result<FittedModel> {
    if spec.random.len() != bundle.blocks.len() {
        return Err(Error::Dimension(format!(
            "spec has {} random terms, design has {}",
            spec.random.len(),
            bundle.blocks.len()
        )));
    }
    bundle.check_rank()?;
    check_family(bundle, spec.family)?;
    let n_theta = ThetaLayout::new(bundle).len();
    for t in opts.fixed_theta.iter().chain(opts.start.as_ref().map(|s| &s.theta)) {
        if t.len() != n_theta {
            return Err(Error::Dimension(format!("expected {n_theta} factor entries, got {}", t.len())));
        }
    }
    if let Some(s) = &opts.start {
        if spec.family == Family::BernoulliLogit && s.beta.len() != bundle.n_fixed() {
            return Err(Error::Dimension(format!("expected {} start values for beta", bundle.n_fixed())));
        }
    }
    match spec.family {
        Family::BernoulliLogit => fit_bernoulli(bundle, spec, opts),
        Family::GaussianIdentity => fit_gaussian(bundle, spec, opts),
    }
}

struct LaplaceProblem<'a> {
    eng: Engine<'a>,
    pirls: PirlsOptions,
    map: ThetaMap,
    u: RefCell<Vec<f64>>,
    beta: RefCell<Vec<f64>>,
}

impl LaplaceProblem<'_> {
    /// −Laplace log-likelihood with β at its penalized estimate given θ.
    fn profiled(&self, phi: &[f64]) -> Result<Option<f64>> {
        let theta = self.map.theta(phi);
        let rows = self.eng.row_vectors(&self.eng.theta.lambda(&theta));
        let beta0 = self.beta.borrow().clone();
        let u0 = self.u.borrow().clone();
        let st = self.eng.pirls(&rows, &beta0, &u0, 1.0, true, self.pirls)?;
        let v = -st.laplace();
        if !v.is_finite() {
            return Ok(None);
        }
        *self.u.borrow_mut() = st.u;
        *self.beta.borrow_mut() = st.beta;
        Ok(Some(v))
    }

    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], &'x [f64]) {
        x.split_at(self.map.free.len())
    }

    fn state(&self, theta: &[f64], beta: &[f64]) -> Result<(RowVectors, ModeState)> {
        let rows = self.eng.row_vectors(&self.eng.theta.lambda(theta));
        let u0 = self.u.borrow().clone();
        let st = self.eng.pirls(&rows, beta, &u0, 1.0, false, self.pirls)?;
        Ok((rows, st))
    }

    /// −Laplace log-likelihood at (φ, β) and its gradient.
    fn value_grad(&self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let (phi, beta) = self.split(x);
        let theta = self.map.theta(phi);
        let (rows, st) = self.state(&theta, beta)?;
        let v = -st.laplace();
        if !v.is_finite() {
            return Ok(None);
        }
        let g = self.eng.laplace_gradient(&rows, &st, 1.0);
        let n_theta = self.eng.theta.len();
        let jac = self.map.jacobian(&theta);
        let mut out = Vec::with_capacity(x.len());
        for (&i, j) in self.map.free.iter().zip(&jac) {
            out.push(-g[i] * j);
        }
        out.extend(g[n_theta..].iter().map(|v| -v));
        *self.u.borrow_mut() = st.u;
        Ok(Some((v, out)))
    }

    fn value_at(&self, theta: &[f64], beta: &[f64]) -> Result<f64> {
        Ok(-self.state(theta, beta)?.1.laplace())
    }
}

fn fit_bernoulli(bundle: &DesignBundle, spec: &ModelSpec, opts: &FitOptions) -> Result<FittedModel> {
    let eng = Engine::new(bundle, Family::BernoulliLogit);
    let p = eng.p();
    let q = eng.coords.q;
    let layout = eng.theta.clone();
    let fixed = opts.fixed_theta.is_some();
    let start_theta = opts
        .fixed_theta
        .clone()
        .or_else(|| opts.start.as_ref().map(|s| s.theta.clone()))
        .unwrap_or_else(|| layout.start());

    // GLM starting values: joint PIRLS with all variances zero.
    let beta_start = match &opts.start {
        Some(s) => s.beta.clone(),
        None => {
            let rows = eng.row_vectors(&layout.lambda(&vec![0.0; layout.len()]));
            eng.pirls(&rows, &vec![0.0; p], &vec![0.0; q], 1.0, true, opts.pirls())?.beta
        }
    };
    let mut prob = LaplaceProblem {
        eng,
        pirls: opts.pirls(),
        map: ThetaMap::new(&layout, &start_theta, fixed),
        u: RefCell::new(vec![0.0; q]),
        beta: RefCell::new(beta_start),
    };

    // Phase 1: variance parameters with β at its penalized mode.
    let mut phi = prob.map.phi(&start_theta);
    if !phi.is_empty() && opts.start.is_none() {
        let mut f = |x: &[f64]| prob.profiled(x);
        let r = minimize(
            |x| {
                let Some(fx) = f(x)? else { return Ok(None) };
                Ok(numeric_gradient(&mut f, x, fx, 1e-5)?.map(|g| (fx, g)))
            },
            &phi,
            BfgsOptions { max_iter: 200, grad_tol: 1e-3, rel_tol: 1e-10, param_tol: 1e-4 },
        )?;
        phi = r.x;
        prob.profiled(&phi)?;
    }

    // Phase 2: joint optimization of variance parameters and β.
    let mut x: Vec<f64> = phi.iter().chain(prob.beta.borrow().iter()).copied().collect();
    let mut result = minimize(|x| prob.value_grad(x), &x, opts.bfgs())?;
    let mut iterations = result.iterations;
    x = result.x.clone();

    // Boundary: zero each remaining diagonal entry in turn and keep it at
    // zero when the objective is not meaningfully worse.
    let candidates: Vec<usize> = prob.map.free.iter().copied().filter(|&i| prob.map.diag[i]).collect();
    for idx in candidates {
        let (phi, beta) = prob.split(&x);
        let theta = prob.map.theta(phi);
        let beta = beta.to_vec();
        let mut clamped = theta.clone();
        clamped[idx] = 0.0;
        let f0 = prob.value_at(&clamped, &beta)?;
        if f0 <= result.f + opts.boundary_tol {
            prob.map.fix(idx, 0.0, &theta);
            let phi = prob.map.phi(&prob.map.template);
            x = phi.iter().chain(beta.iter()).copied().collect();
            result = minimize(|x| prob.value_grad(x), &x, opts.bfgs())?;
            iterations += result.iterations;
            x = result.x.clone();
        }
    }

    let (phi, beta) = prob.split(&x);
    let theta = prob.map.theta(phi);
    let beta = beta.to_vec();
    let (rows, state) = prob.state(&theta, &beta)?;

    let vcov = match opts.vcov {
        VcovMethod::Hessian => hessian_vcov(&prob, &x, p).or_else(|| conditional_vcov(&prob.eng, &rows, &state, p).ok()),
        VcovMethod::Conditional => conditional_vcov(&prob.eng, &rows, &state, p).ok(),
    }
    .ok_or_else(|| Error::Numerical("fixed-effect information matrix is not positive definite".into()))?;

    let lambda = layout.lambda(&theta);
    Ok(assemble(
        bundle,
        spec,
        &prob.eng,
        Assembly {
            beta,
            vcov,
            theta,
            factors: lambda.clone(),
            lambda,
            u: state.u.clone(),
            eta: state.eta.clone(),
            log_likelihood: state.laplace(),
            reml_criterion: None,
            residual_sd: None,
            result: &result,
            iterations,
            pirls_converged: state.converged,
        },
    ))
}

/// β block of the inverse finite-difference Hessian of the objective.
fn hessian_vcov(prob: &LaplaceProblem<'_>, x: &[f64], p: usize) -> Option<DMatrix<f64>> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xt = x.to_vec();
    let u_opt = prob.u.borrow().clone();
    for j in 0..n {
        let step = 1e-4 * x[j].abs().max(1.0);
        xt[j] = x[j] + step;
        let (_, gp) = prob.value_grad(&xt).ok()??;
        *prob.u.borrow_mut() = u_opt.clone();
        xt[j] = x[j] - step;
        let (_, gm) = prob.value_grad(&xt).ok()??;
        *prob.u.borrow_mut() = u_opt.clone();
        xt[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let h = (&h + h.transpose()) * 0.5;
    let inv = h.cholesky()?.inverse();
    let off = n - p;
    Some(inv.view((off, off), (p, p)).into_owned())
}

fn conditional_vcov(eng: &Engine<'_>, rows: &RowVectors, state: &ModeState, p: usize) -> Result<DMatrix<f64>> {
    let f = eng.joint_factor(rows, state, 1.0)?;
    let inv = f.trailing_inverse();
    let off = eng.coords.m_u;
    Ok(inv.view((off, off), (p, p)).into_owned())
}

fn fit_gaussian(bundle: &DesignBundle, spec: &ModelSpec, opts: &FitOptions) -> Result<FittedModel> {
    let eng = Engine::new(bundle, Family::GaussianIdentity);
    let p = eng.p();
    let layout = eng.theta.clone();
    let fixed = opts.fixed_theta.is_some();
    let start_theta = opts
        .fixed_theta
        .clone()
        .or_else(|| opts.start.as_ref().map(|s| s.theta.clone()))
        .unwrap_or_else(|| layout.start());
    let mut map = ThetaMap::new(&layout, &start_theta, fixed);

    let objective = |map: &ThetaMap, phi: &[f64]| -> Result<Option<f64>> {
        let d = eng.reml(&map.theta(phi))?.deviance * 0.5;
        Ok(d.is_finite().then_some(d))
    };
    let run = |map: &ThetaMap, phi0: &[f64]| -> Result<BfgsResult> {
        let mut f = |x: &[f64]| objective(map, x);
        minimize(
            |x| {
                let Some(fx) = f(x)? else { return Ok(None) };
                Ok(numeric_gradient(&mut f, x, fx, 1e-5)?.map(|g| (fx, g)))
            },
            phi0,
            opts.bfgs(),
        )
    };
    let mut result = run(&map, &map.phi(&start_theta))?;
    let mut iterations = result.iterations;
    let candidates: Vec<usize> = map.free.iter().copied().filter(|&i| map.diag[i]).collect();
    for idx in candidates {
        let theta = map.theta(&result.x);
        let mut clamped = theta.clone();
        clamped[idx] = 0.0;
        let f0 = eng.reml(&clamped)?.deviance * 0.5;
        if f0 <= result.f + opts.boundary_tol {
            map.fix(idx, 0.0, &theta);
            let phi = map.phi(&map.template);
            result = run(&map, &phi)?;
            iterations += result.iterations;
        }
    }
    let theta = map.theta(&result.x);
    let st = eng.reml(&theta)?;
    let sigma = st.sigma2.sqrt();
    let inv = st.factor.trailing_inverse();
    let off = eng.coords.m_u;
    let vcov = inv.view((off, off), (p, p)).into_owned() * st.sigma2;
    let lambda = layout.lambda(&theta);
    let factors = lambda.iter().map(|l| l * sigma).collect();
    Ok(assemble(
        bundle,
        spec,
        &eng,
        Assembly {
            beta: st.beta.clone(),
            vcov,
            theta,
            lambda,
            factors,
            u: st.u.clone(),
            eta: st.eta.clone(),
            log_likelihood: -0.5 * st.deviance,
            reml_criterion: Some(st.deviance),
            residual_sd: Some(sigma),
            result: &result,
            iterations,
            pirls_converged: true,
        },
    ))
}

struct Assembly<'r> {
    beta: Vec<f64>,
    vcov: DMatrix<f64>,
    theta: Vec<f64>,
    /// Factors applied to the solver's u to give b.
    lambda: Vec<DMatrix<f64>>,
    /// Absolute covariance factors.
    factors: Vec<DMatrix<f64>>,
    u: Vec<f64>,
    eta: Vec<f64>,
    log_likelihood: f64,
    reml_criterion: Option<f64>,
    residual_sd: Option<f64>,
    result: &'r BfgsResult,
    iterations: usize,
    pirls_converged: bool,
}

fn assemble(bundle: &DesignBundle, spec: &ModelSpec, eng: &Engine<'_>, a: Assembly<'_>) -> FittedModel {
    let p = a.beta.len();
    let se_beta = (0..p).map(|j| a.vcov[(j, j)].max(0.0).sqrt()).collect();
    let mut variance_components = Vec::new();
    let mut blups = Vec::new();
    for (t, block) in bundle.blocks.iter().enumerate() {
        let k = block.n_effects();
        let l = &a.factors[t];
        let cov = l * l.transpose();
        let sd: Vec<f64> = (0..k).map(|d| cov[(d, d)].max(0.0).sqrt()).collect();
        let correlation = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else if sd[i] > 0.0 && sd[j] > 0.0 {
                            (cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let singular = (0..k).any(|d| l[(d, d)] == 0.0);
        variance_components.push(VarianceComponent {
            group: block.group,
            effects: block.effect_labels.clone(),
            sd,
            correlation,
            singular,
        });
        let lam = &a.lambda[t];
        let values = (0..block.n_levels())
            .map(|lvl| {
                let base = eng.coords.u_index(t, lvl, k, 0);
                let u = DVector::from_column_slice(&a.u[base..base + k]);
                (lam * u).iter().copied().collect()
            })
            .collect();
        blups.push(BlupTable {
            group: block.group,
            effects: block.effect_labels.clone(),
            levels: block.levels.clone(),
            values,
        });
    }
    let singular = variance_components.iter().any(|v| v.singular);
    FittedModel {
        spec: spec.clone(),
        terms: bundle.x_labels.clone(),
        beta: a.beta,
        se_beta,
        vcov: matrix_to_rows(&a.vcov),
        theta: a.theta,
        cov_factors: a.factors.iter().map(matrix_to_rows).collect(),
        variance_components,
        residual_sd: a.residual_sd,
        blups,
        eta: a.eta,
        log_likelihood: a.log_likelihood,
        reml_criterion: a.reml_criterion,
        convergence: Convergence {
            converged: a.result.converged,
            iterations: a.iterations,
            gradient_norm: a.result.grad.iter().fold(0.0, |m, g| m.max(g.abs())),
            pirls_converged: a.pirls_converged,
            message: a.result.message.clone(),
        },
        singular,
        layout: bundle.layout.clone(),
        n_obs: bundle.n_obs(),
        warnings: bundle.warnings.clone(),
    }
}

/// Conditional modes of the random effects for the term grouped by `group`.
pub fn blups(model: &FittedModel, group: Grouping) -> Result<&BlupTable> {
    model
        .blups
        .iter()
        .find(|b| b.group == group)
        .ok_or_else(|| Error::UnknownGroup(group.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Response,
}

/// η = Xβ + Zb for new events (b = 0 for unseen levels), or the mean.
pub fn predict(model: &FittedModel, events: &[PitchEvent], scale: Scale) -> Result<Vec<f64>> {
    let layout = model
        .layout
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model was fitted without a column layout".into()))?;
    let x = layout.materialize(events);
    let mut eta: Vec<f64> = (0..events.len())
        .map(|i| (0..model.beta.len()).map(|j| x[(i, j)] * model.beta[j]).sum())
        .collect();
    for (term, table) in model.spec.random.iter().zip(&model.blups) {
        for (i, (lvl, z)) in lookup_levels(&table.levels, &term.effects, term.group, events).into_iter().enumerate() {
            if let Some(l) = lvl {
                eta[i] += z.iter().zip(&table.values[l]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(match (scale, model.spec.family) {
        (Scale::Response, Family::BernoulliLogit) => eta.into_iter().map(inv_logit).collect(),
        _ => eta,
    })
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn inverse_logit(x: f64) -> f64 {
    inv_logit(x)
}
