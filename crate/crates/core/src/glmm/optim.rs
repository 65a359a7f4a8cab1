//! Quasi-Newton minimization with a backtracking line search.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when the relative objective change drops below this...
    pub rel_tol: f64,
    /// ...and the largest parameter change below this, on the same step.
    pub param_tol: f64,
    /// Converged when the largest gradient component drops below this.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 500, rel_tol: 1e-8, param_tol: 1e-6, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

/// `fg` returns the objective and its gradient, or `None` where the
/// objective cannot be evaluated (treated as +∞ by the line search).
pub(crate) fn minimize<F>(mut fg: F, x0: &[f64], opts: BfgsOptions) -> crate::Result<BfgsResult>
where
    F: FnMut(&[f64]) -> crate::Result<Option<(f64, Vec<f64>)>>,
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g0) = fg(x.as_slice())?
        .ok_or_else(|| crate::Error::Numerical("objective not finite at the starting point".into()))?;
    let mut g = DVector::from_vec(g0);
    if n == 0 {
        return Ok(BfgsResult { x: vec![], f, grad: vec![], iterations: 0, converged: true, message: "no parameters".into() });
    }
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    for iter in 0..opts.max_iter {
        if g.amax() < opts.grad_tol {
            return Ok(done(x, f, g, iter, true, "gradient below tolerance"));
        }
        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        // Limit the first trial step to a unit move in the largest coordinate.
        let mut step = if !scaled { (1.0 / dir.amax()).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + step * &dir;
            if let Some((ft, gt)) = fg(trial.as_slice())? {
                if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, DVector::from_vec(gt)));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            let conv = g.amax() < opts.grad_tol.sqrt();
            return Ok(done(x, f, g, iter, conv, "line search failed"));
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        let rel = (f - fn_).abs() / f.abs().max(1e-10);
        let dx = s.amax();
        x = xn;
        f = fn_;
        g = gn;
        if rel < opts.rel_tol && dx < opts.param_tol {
            return Ok(done(x, f, g, iter + 1, true, "relative change below tolerance"));
        }
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                hinv *= sy / y.dot(&y);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (rho * rho * yhy + rho) * (&s * s.transpose()) - rho * (&hy * s.transpose() + &s * hy.transpose());
        }
    }
    let conv = g.amax() < opts.grad_tol;
    Ok(done(x, f, g, opts.max_iter, conv, "iteration limit reached"))
}

fn done(x: DVector<f64>, f: f64, g: DVector<f64>, iterations: usize, converged: bool, msg: &str) -> BfgsResult {
    BfgsResult {
        x: x.as_slice().to_vec(),
        f,
        grad: g.as_slice().to_vec(),
        iterations,
        converged,
        message: msg.to_string(),
    }
}

/// Central-difference gradient.
pub(crate) fn numeric_gradient<F>(f: &mut F, x: &[f64], fx: f64, h: f64) -> crate::Result<Option<Vec<f64>>>
where
    F: FnMut(&[f64]) -> crate::Result<Option<f64>>,
{
    let mut g = Vec::with_capacity(x.len());
    let mut xt = x.to_vec();
    for i in 0..x.len() {
        let hi = h * x[i].abs().max(1.0);
        xt[i] = x[i] + hi;
        let fp = f(&xt)?;
        xt[i] = x[i] - hi;
        let fm = f(&xt)?;
        xt[i] = x[i];
        match (fp, fm) {
            (Some(a), Some(b)) => g.push((a - b) / (2.0 * hi)),
            (Some(a), None) => g.push((a - fx) / hi),
            (None, Some(b)) => g.push((fx - b) / hi),
            (None, None) => return Ok(None),
        }
    }
    Ok(Some(g))
}
