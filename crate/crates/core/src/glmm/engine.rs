//! Penalized iteratively reweighted least squares, the Laplace objective and
//! its gradient, and the profiled REML criterion.
//!
//! Random effects are written b = Λ(θ) u with u ~ N(0, I) spherical. Λ is
//! block diagonal: one lower-triangular k × k factor per random term,
//! repeated for each level. θ stacks the stored entries of those factors.

use nalgebra::DMatrix;

use super::design::DesignBundle;
use super::spec::Family;
use super::system::{BlockFactor, BlockSystem};
use crate::error::{Error, Result};

/// Where each θ entry lives: random block, row and column in its factor.
#[derive(Debug, Clone)]
pub(crate) struct ThetaLayout {
    pub dims: Vec<usize>,
    pub entries: Vec<(usize, usize, usize)>,
}

impl ThetaLayout {
    pub fn new(bundle: &DesignBundle) -> Self {
        let mut entries = Vec::new();
        let mut dims = Vec::new();
        for (t, b) in bundle.blocks.iter().enumerate() {
            let k = b.n_effects();
            dims.push(k);
            for d in 0..k {
                if b.correlated {
                    for e in 0..=d {
                        entries.push((t, d, e));
                    }
                } else {
                    entries.push((t, d, d));
                }
            }
        }
        ThetaLayout { dims, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_diagonal(&self, idx: usize) -> bool {
        let (_, d, e) = self.entries[idx];
        d == e
    }

    /// Identity factors.
    pub fn start(&self) -> Vec<f64> {
        (0..self.len()).map(|i| if self.is_diagonal(i) { 1.0 } else { 0.0 }).collect()
    }

    pub fn lambda(&self, theta: &[f64]) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.dims.iter().map(|&k| DMatrix::zeros(k, k)).collect();
        for (&(t, d, e), &v) in self.entries.iter().zip(theta) {
            out[t][(d, e)] = v;
        }
        out
    }

    /// θ from per-term covariance matrices Σ = L L'. An all-zero matrix gives
    /// a zero factor; any other non positive-definite matrix is an error.
    pub fn from_covariances(&self, cov: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        if cov.len() != self.dims.len() {
            return Err(Error::Dimension(format!(
                "expected {} covariance matrices, got {}",
                self.dims.len(),
                cov.len()
            )));
        }
        let mut factors = Vec::with_capacity(cov.len());
        for (t, (c, &k)) in cov.iter().zip(&self.dims).enumerate() {
            if c.nrows() != k || c.ncols() != k {
                return Err(Error::Dimension(format!("covariance {t} must be {k}x{k}")));
            }
            if c.iter().all(|v| *v == 0.0) {
                factors.push(DMatrix::zeros(k, k));
                continue;
            }
            if (c - c.transpose()).amax() > 1e-12 * c.amax() {
                return Err(Error::NotPositiveDefinite(format!("covariance {t} is not symmetric")));
            }
            let ch = c
                .clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite(format!("covariance {t}")))?;
            factors.push(ch.l());
        }
        let theta: Vec<f64> = self.entries.iter().map(|&(t, d, e)| factors[t][(d, e)]).collect();
        // Off-diagonal entries of an uncorrelated term must vanish.
        for (t, f) in factors.iter().enumerate() {
            for d in 0..f.nrows() {
                for e in 0..d {
                    let stored = self.entries.contains(&(t, d, e));
                    if !stored && f[(d, e)].abs() > 1e-12 {
                        return Err(Error::InvalidArgument(format!(
                            "covariance {t} has correlations but the term is uncorrelated"
                        )));
                    }
                }
            }
        }
        Ok(theta)
    }
}

/// Coordinates of u: the leading block first (level-major), then the
/// remaining terms concatenated.
#[derive(Debug, Clone)]
pub(crate) struct Coords {
    pub lead: Option<usize>,
    pub k1: usize,
    pub n1: usize,
    pub trail_off: Vec<usize>,
    pub m_u: usize,
    pub q: usize,
}

impl Coords {
    pub fn new(bundle: &DesignBundle) -> Self {
        let lead = bundle
            .blocks
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.n_levels().cmp(&b.n_levels()).then(ib.cmp(ia)))
            .map(|(i, _)| i);
        let (k1, n1) = lead.map_or((0, 0), |t| (bundle.blocks[t].n_effects(), bundle.blocks[t].n_levels()));
        let mut trail_off = vec![0; bundle.blocks.len()];
        let mut m_u = 0;
        for (t, b) in bundle.blocks.iter().enumerate() {
            if Some(t) != lead {
                trail_off[t] = m_u;
                m_u += b.width();
            }
        }
        Coords { lead, k1, n1, trail_off, m_u, q: k1 * n1 + m_u }
    }

    pub fn u_index(&self, t: usize, level: usize, k: usize, e: usize) -> usize {
        if Some(t) == self.lead {
            level * self.k1 + e
        } else {
            self.k1 * self.n1 + self.trail_off[t] + level * k + e
        }
    }
}

/// Per-observation quantities of the conditional log density.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Pointwise {
    pub logp: f64,
    /// d logp / d eta
    pub score: f64,
    /// -d² logp / d eta²
    pub weight: f64,
    /// d weight / d eta
    pub dweight: f64,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn pointwise(family: Family, y: f64, eta: f64, sigma: f64) -> Pointwise {
    match family {
        Family::BernoulliLogit => {
            let mu = inv_logit(eta);
            let w = mu * (1.0 - mu);
            Pointwise {
                logp: y * eta - softplus(eta),
                score: y - mu,
                weight: w,
                dweight: w * (1.0 - 2.0 * mu),
            }
        }
        Family::GaussianIdentity => {
            let s2 = sigma * sigma;
            let r = y - eta;
            Pointwise {
                logp: -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - r * r / (2.0 * s2),
                score: r / s2,
                weight: 1.0 / s2,
                dweight: 0.0,
            }
        }
    }
}

/// Rows of ZΛ for one θ: for each term, n × k values a_i = z_i' L.
pub(crate) struct RowVectors {
    pub a: Vec<Vec<f64>>,
}

/// Conditional mode of u and the quantities at it.
pub(crate) struct ModeState {
    pub u: Vec<f64>,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub cond_loglik: f64,
    pub usq: f64,
    pub factor: BlockFactor,
    pub converged: bool,
}

impl ModeState {
    pub fn penalized(&self) -> f64 {
        self.cond_loglik - 0.5 * self.usq
    }

    /// Laplace approximation of the marginal log-likelihood.
    pub fn laplace(&self) -> f64 {
        self.penalized() - 0.5 * self.factor.logdet
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PirlsOptions {
    pub tol: f64,
    pub max_iter: usize,
}

pub(crate) struct Engine<'a> {
    pub bundle: &'a DesignBundle,
    pub family: Family,
    pub coords: Coords,
    pub theta: ThetaLayout,
    xrows: Vec<f64>,
    p: usize,
}

impl<'a> Engine<'a> {
    pub fn new(bundle: &'a DesignBundle, family: Family) -> Self {
        let n = bundle.n_obs();
        let p = bundle.n_fixed();
        let mut xrows = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                xrows.push(bundle.x[(i, j)]);
            }
        }
        Engine {
            bundle,
            family,
            coords: Coords::new(bundle),
            theta: ThetaLayout::new(bundle),
            xrows,
            p,
        }
    }

    pub fn n(&self) -> usize {
        self.bundle.n_obs()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    fn xrow(&self, i: usize) -> &[f64] {
        &self.xrows[i * self.p..(i + 1) * self.p]
    }

    pub fn row_vectors(&self, lambda: &[DMatrix<f64>]) -> RowVectors {
        let n = self.n();
        let a = self
            .bundle
            .blocks
            .iter()
            .zip(lambda)
            .map(|(b, l)| {
                let k = b.n_effects();
                let mut out = vec![0.0; n * k];
                for i in 0..n {
                    let z = b.row_values(i);
                    for e in 0..k {
                        out[i * k + e] = (e..k).map(|d| z[d] * l[(d, e)]).sum();
                    }
                }
                out
            })
            .collect();
        RowVectors { a }
    }

    /// Leading level / values and sparse trailing entries of row i.
    fn row_parts<'r>(
        &self,
        rows: &'r RowVectors,
        i: usize,
        joint: bool,
        trail: &mut Vec<(usize, f64)>,
    ) -> (Option<usize>, &'r [f64]) {
        trail.clear();
        for (t, b) in self.bundle.blocks.iter().enumerate() {
            if Some(t) == self.coords.lead {
                continue;
            }
            let k = b.n_effects();
            let base = self.coords.trail_off[t] + b.level_of_row[i] * k;
            for e in 0..k {
                trail.push((base + e, rows.a[t][i * k + e]));
            }
        }
        if joint {
            for (j, &x) in self.xrow(i).iter().enumerate() {
                trail.push((self.coords.m_u + j, x));
            }
        }
        match self.coords.lead {
            Some(t) => {
                let k = self.coords.k1;
                (Some(self.bundle.blocks[t].level_of_row[i]), &rows.a[t][i * k..(i + 1) * k])
            }
            None => (None, &[]),
        }
    }

    /// (ZΛu)_i
    fn random_part(&self, rows: &RowVectors, u: &[f64], i: usize) -> f64 {
        let mut s = 0.0;
        for (t, b) in self.bundle.blocks.iter().enumerate() {
            let k = b.n_effects();
            let lvl = b.level_of_row[i];
            let base = self.coords.u_index(t, lvl, k, 0);
            for e in 0..k {
                s += rows.a[t][i * k + e] * u[base + e];
            }
        }
        s
    }

    pub fn eta(&self, rows: &RowVectors, beta: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let xb: f64 = self.xrow(i).iter().zip(beta).map(|(x, b)| x * b).sum();
                xb + self.random_part(rows, u, i)
            })
            .collect()
    }

    fn pointwise_all(&self, eta: &[f64], sigma: f64) -> Vec<Pointwise> {
        let y = &self.bundle.y;
        eta.iter().enumerate().map(|(i, &e)| pointwise(self.family, y[i], e, sigma)).collect()
    }

    /// Builds H = Σ w_i v_i v_i' + I_u and the gradient of the penalized
    /// log-likelihood in solver coordinates (leading, trailing).
    fn system(
        &self,
        rows: &RowVectors,
        pts: &[Pointwise],
        u: &[f64],
        joint: bool,
    ) -> (BlockSystem, Vec<f64>, Vec<f64>) {
        let c = &self.coords;
        let m = c.m_u + if joint { self.p } else { 0 };
        let mut sys = BlockSystem::zeros(c.k1, c.n1, m);
        sys.add_identity(c.m_u);
        let mut g_lead = vec![0.0; c.k1 * c.n1];
        let mut g_trail = vec![0.0; m];
        let mut trail = Vec::new();
        for (i, pt) in pts.iter().enumerate() {
            let (level, lead) = self.row_parts(rows, i, joint, &mut trail);
            sys.add_row(pt.weight, level, lead, &trail);
            if let Some(l) = level {
                for (e, v) in lead.iter().enumerate() {
                    g_lead[l * c.k1 + e] += pt.score * v;
                }
            }
            for &(j, v) in &trail {
                g_trail[j] += pt.score * v;
            }
        }
        let nl = c.k1 * c.n1;
        for (g, uu) in g_lead.iter_mut().zip(&u[..nl]) {
            *g -= uu;
        }
        for (g, uu) in g_trail.iter_mut().zip(&u[nl..]) {
            *g -= uu;
        }
        (sys, g_lead, g_trail)
    }

    fn penalized_at(&self, rows: &RowVectors, beta: &[f64], u: &[f64], sigma: f64) -> (Vec<f64>, f64, f64) {
        let eta = self.eta(rows, beta, u);
        let cond: f64 = self.pointwise_all(&eta, sigma).iter().map(|p| p.logp).sum();
        let usq: f64 = u.iter().map(|v| v * v).sum();
        (eta, cond, usq)
    }

    /// Newton iterations with step halving on the penalized log-likelihood.
    /// With `joint` the fixed effects are updated too (unpenalized).
    pub fn pirls(
        &self,
        rows: &RowVectors,
        beta0: &[f64],
        u0: &[f64],
        sigma: f64,
        joint: bool,
        opts: PirlsOptions,
    ) -> Result<ModeState> {
        let nl = self.coords.k1 * self.coords.n1;
        let mut u = u0.to_vec();
        let mut beta = beta0.to_vec();
        let (mut eta, mut cond, mut usq) = self.penalized_at(rows, &beta, &u, sigma);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < opts.max_iter {
            iterations += 1;
            let pts = self.pointwise_all(&eta, sigma);
            let (sys, gl, gt) = self.system(rows, &pts, &u, joint);
            let factor = sys.factor()?;
            let (dl, dt) = factor.solve(&gl, &gt);
            let old = cond - 0.5 * usq;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let mut u_new = u.clone();
                for (x, d) in u_new[..nl].iter_mut().zip(&dl) {
                    *x += step * d;
                }
                for (x, d) in u_new[nl..].iter_mut().zip(&dt) {
                    *x += step * d;
                }
                let mut beta_new = beta.clone();
                if joint {
                    for (x, d) in beta_new.iter_mut().zip(&dt[self.coords.m_u..]) {
                        *x += step * d;
                    }
                }
                let (eta_n, cond_n, usq_n) = self.penalized_at(rows, &beta_new, &u_new, sigma);
                let new = cond_n - 0.5 * usq_n;
                if new.is_finite() && new >= old - 1e-12 * old.abs().max(1.0) {
                    u = u_new;
                    beta = beta_new;
                    eta = eta_n;
                    cond = cond_n;
                    usq = usq_n;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            let new = cond - 0.5 * usq;
            // Penalized deviance is -2 × this; its relative change decides convergence.
            if !accepted || (new - old).abs() < opts.tol * (new.abs() + 0.1) {
                converged = accepted || (new - old).abs() < opts.tol * (new.abs() + 0.1);
                break;
            }
        }
        let pts = self.pointwise_all(&eta, sigma);
        let (sys, _, _) = self.system(rows, &pts, &u, false);
        let factor = sys.factor()?;
        Ok(ModeState { u, beta, eta, cond_loglik: cond, usq, factor, converged })
    }

    /// Factorization of the joint (u, β) system at a given mode, for the
    /// fixed-effect covariance.
    pub fn joint_factor(&self, rows: &RowVectors, state: &ModeState, sigma: f64) -> Result<BlockFactor> {
        let pts = self.pointwise_all(&state.eta, sigma);
        let (sys, _, _) = self.system(rows, &pts, &state.u, true);
        sys.factor()
    }

    /// Gradient of the Laplace objective at the mode `state`, with respect
    /// to θ (natural entries) followed by β. Implicit differentiation of the
    /// mode accounts for the dependence of the log-determinant on û.
    pub fn laplace_gradient(&self, rows: &RowVectors, state: &ModeState, sigma: f64) -> Vec<f64> {
        let n = self.n();
        let c = &self.coords;
        let nl = c.k1 * c.n1;
        let pts = self.pointwise_all(&state.eta, sigma);
        let f = &state.factor;

        // H⁻¹ a_i on row i's coordinates, and h_i = a_i' H⁻¹ a_i.
        let mut xl_all = vec![0.0; n * c.k1];
        let mut xt_all = vec![0.0; n * c.m_u];
        let mut h = vec![0.0; n];
        let mut trail = Vec::new();
        for i in 0..n {
            let (level, lead) = self.row_parts(rows, i, false, &mut trail);
            let (xl, xt) = f.solve_row(level, lead, &trail);
            let mut hi: f64 = lead.iter().zip(&xl).map(|(a, b)| a * b).sum();
            for &(j, v) in &trail {
                hi += v * xt[j];
            }
            h[i] = hi;
            xl_all[i * c.k1..(i + 1) * c.k1].copy_from_slice(&xl);
            xt_all[i * c.m_u..(i + 1) * c.m_u].copy_from_slice(&xt);
        }

        // a_i · x for a u-space vector x.
        let dot_row = |i: usize, x: &[f64]| -> f64 { self.random_part(rows, x, i) };
        // v -= Σ_i coef_i a_i
        let scatter = |coef: &[f64], v: &mut [f64]| {
            for (t, b) in self.bundle.blocks.iter().enumerate() {
                let k = b.n_effects();
                for i in 0..n {
                    let base = c.u_index(t, b.level_of_row[i], k, 0);
                    for e in 0..k {
                        v[base + e] -= coef[i] * rows.a[t][i * k + e];
                    }
                }
            }
        };

        let mut grad = Vec::with_capacity(self.theta.len() + self.p);
        for &(t, d, e) in &self.theta.entries {
            let b = &self.bundle.blocks[t];
            let k = b.n_effects();
            let mut deta_u = vec![0.0; n];
            let mut v = vec![0.0; c.q];
            let mut t1 = 0.0;
            let mut direct = 0.0;
            for i in 0..n {
                let z = b.row_values(i)[d];
                let idx = c.u_index(t, b.level_of_row[i], k, e);
                deta_u[i] = z * state.u[idx];
                v[idx] += pts[i].score * z;
                let hinv_a = if Some(t) == c.lead {
                    xl_all[i * c.k1 + e]
                } else {
                    xt_all[i * c.m_u + idx - nl]
                };
                t1 += pts[i].weight * z * hinv_a;
                direct += pts[i].score * deta_u[i];
            }
            let coef: Vec<f64> = (0..n).map(|i| pts[i].weight * deta_u[i]).collect();
            scatter(&coef, &mut v);
            let (dl, dt) = f.solve(&v[..nl], &v[nl..]);
            let du: Vec<f64> = dl.into_iter().chain(dt).collect();
            let t2: f64 = (0..n).map(|i| pts[i].dweight * (deta_u[i] + dot_row(i, &du)) * h[i]).sum();
            grad.push(direct - 0.5 * (2.0 * t1 + t2));
        }
        for j in 0..self.p {
            let xj: Vec<f64> = (0..n).map(|i| self.xrow(i)[j]).collect();
            let coef: Vec<f64> = (0..n).map(|i| pts[i].weight * xj[i]).collect();
            let mut v = vec![0.0; c.q];
            scatter(&coef, &mut v);
            let (dl, dt) = f.solve(&v[..nl], &v[nl..]);
            let du: Vec<f64> = dl.into_iter().chain(dt).collect();
            let direct: f64 = (0..n).map(|i| pts[i].score * xj[i]).sum();
            let t2: f64 = (0..n).map(|i| pts[i].dweight * (xj[i] + dot_row(i, &du)) * h[i]).sum();
            grad.push(direct - 0.5 * t2);
        }
        grad
    }

    /// Profiled REML for the Gaussian model at relative factor θ (b = Λu,
    /// u ~ N(0, σ²I)). β and σ² are profiled out.
    pub fn reml(&self, theta: &[f64]) -> Result<RemlState> {
        let lambda = self.theta.lambda(theta);
        let rows = self.row_vectors(&lambda);
        let n = self.n();
        let zero_u = vec![0.0; self.coords.q];
        let zero_b = vec![0.0; self.p];
        let eta0 = vec![0.0; n];
        // Unit weights and score y - 0: one Newton step from zero solves the
        // penalized least-squares problem exactly.
        let pts: Vec<Pointwise> = self
            .bundle
            .y
            .iter()
            .zip(&eta0)
            .map(|(&y, &e)| Pointwise { logp: 0.0, score: y - e, weight: 1.0, dweight: 0.0 })
            .collect();
        let (sys, gl, gt) = self.system(&rows, &pts, &zero_u, true);
        let factor = sys.factor()?;
        let (ul, ut) = factor.solve(&gl, &gt);
        let m_u = self.coords.m_u;
        let mut u = ul;
        u.extend_from_slice(&ut[..m_u]);
        let beta = ut[m_u..].to_vec();
        debug_assert_eq!(zero_b.len(), beta.len());
        let eta = self.eta(&rows, &beta, &u);
        let rss: f64 = self.bundle.y.iter().zip(&eta).map(|(y, e)| (y - e) * (y - e)).sum();
        let usq: f64 = u.iter().map(|v| v * v).sum();
        let pwrss = rss + usq;
        let dof = (n - self.p) as f64;
        let deviance = factor.logdet + dof * (1.0 + (2.0 * std::f64::consts::PI * pwrss / dof).ln());
        Ok(RemlState { deviance, beta, u, eta, sigma2: pwrss / dof, factor })
    }
}

pub(crate) struct RemlState {
    pub deviance: f64,
    pub beta: Vec<f64>,
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
    pub sigma2: f64,
    /// Joint (u, β) factorization.
    pub factor: BlockFactor,
}
