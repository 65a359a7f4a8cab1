//! Symmetric positive-definite systems with an arrow structure
//!
//! ```text
//!     H = [ A  C ]   A = diag(A_1, ..., A_L), each A_l is k × k
//!         [ C' B ]   B is m × m dense
//! ```
//!
//! The leading block holds the random effects of the grouping factor with
//! the most levels (every observation touches exactly one of its levels);
//! the trailing block holds the remaining random effects and, for joint
//! systems, the fixed effects. Factorization goes through the Schur
//! complement S = B − C'A⁻¹C, so the cost is linear in the number of leading
//! levels.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct BlockSystem {
    pub k: usize,
    pub levels: usize,
    pub m: usize,
    pub a: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub b: DMatrix<f64>,
}

impl BlockSystem {
    pub fn zeros(k: usize, levels: usize, m: usize) -> Self {
        BlockSystem {
            k,
            levels,
            m,
            a: vec![DMatrix::zeros(k, k); levels],
            c: vec![DMatrix::zeros(k, m); levels],
            b: DMatrix::zeros(m, m),
        }
    }

    /// Adds 1 to the diagonal of every leading coordinate and of trailing
    /// coordinates `0..trail_upto` (the identity penalty on spherical effects).
    pub fn add_identity(&mut self, trail_upto: usize) {
        for a in &mut self.a {
            for d in 0..self.k {
                a[(d, d)] += 1.0;
            }
        }
        for d in 0..trail_upto {
            self.b[(d, d)] += 1.0;
        }
    }

    /// Adds w · v v' for a row vector v with leading part `lead` at `level`
    /// and sparse trailing part `trail`.
    pub fn add_row(&mut self, w: f64, level: Option<usize>, lead: &[f64], trail: &[(usize, f64)]) {
        if let Some(l) = level {
            let a = &mut self.a[l];
            for (i, &vi) in lead.iter().enumerate() {
                let wi = w * vi;
                for (j, &vj) in lead.iter().enumerate() {
                    a[(i, j)] += wi * vj;
                }
            }
            let c = &mut self.c[l];
            for (i, &vi) in lead.iter().enumerate() {
                let wi = w * vi;
                for &(j, vj) in trail {
                    c[(i, j)] += wi * vj;
                }
            }
        }
        for &(i, vi) in trail {
            let wi = w * vi;
            for &(j, vj) in trail {
                self.b[(i, j)] += wi * vj;
            }
        }
    }

    pub fn factor(self) -> Result<BlockFactor> {
        let mut a_chol = Vec::with_capacity(self.levels);
        let mut g = Vec::with_capacity(self.levels);
        let mut logdet = 0.0;
        let mut s = self.b.clone();
        for (l, (a, c)) in self.a.into_iter().zip(&self.c).enumerate() {
            let ch = Cholesky::new(a)
                .ok_or_else(|| Error::NotPositiveDefinite(format!("leading block {l}")))?;
            logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let gl = if self.m > 0 { ch.solve(c) } else { DMatrix::zeros(self.k, 0) };
            if self.m > 0 {
                s -= c.transpose() * &gl;
            }
            a_chol.push(ch);
            g.push(gl);
        }
        let s_chol = if self.m > 0 {
            // Symmetrize against rounding before factoring.
            let st = s.transpose();
            let s = (s + st) * 0.5;
            let ch = Cholesky::new(s).ok_or_else(|| Error::NotPositiveDefinite("Schur complement".into()))?;
            logdet += 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            Some(ch)
        } else {
            None
        };
        Ok(BlockFactor {
            k: self.k,
            m: self.m,
            a_chol,
            g,
            c: self.c,
            s_chol,
            logdet,
        })
    }
}

pub(crate) struct BlockFactor {
    pub k: usize,
    pub m: usize,
    a_chol: Vec<Cholesky<f64, Dyn>>,
    g: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    s_chol: Option<Cholesky<f64, Dyn>>,
    pub logdet: f64,
}

impl BlockFactor {
    /// Solves H x = r; `lead` is level-major (levels × k), `trail` has length m.
    pub fn solve(&self, lead: &[f64], trail: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.k;
        let mut y: Vec<DVector<f64>> = self
            .a_chol
            .iter()
            .enumerate()
            .map(|(l, ch)| ch.solve(&DVector::from_column_slice(&lead[l * k..(l + 1) * k])))
            .collect();
        let mut xt = DVector::from_column_slice(trail);
        if let Some(s) = &self.s_chol {
            for (c, yl) in self.c.iter().zip(&y) {
                xt -= c.transpose() * yl;
            }
            xt = s.solve(&xt);
            for (g, yl) in self.g.iter().zip(y.iter_mut()) {
                *yl -= g * &xt;
            }
        }
        let mut x_lead = Vec::with_capacity(lead.len());
        for yl in y {
            x_lead.extend(yl.iter());
        }
        (x_lead, xt.as_slice().to_vec())
    }

    /// H⁻¹ v restricted to the coordinates of one observation row: the
    /// leading block of `level` and the whole trailing block.
    pub fn solve_row(&self, level: Option<usize>, lead: &[f64], trail: &[(usize, f64)]) -> (Vec<f64>, Vec<f64>) {
        let mut rt = DVector::zeros(self.m);
        for &(j, v) in trail {
            rt[j] += v;
        }
        let yl = level.map(|l| self.a_chol[l].solve(&DVector::from_column_slice(lead)));
        let xt = match &self.s_chol {
            Some(s) => {
                if let (Some(l), Some(yl)) = (level, &yl) {
                    rt -= self.c[l].transpose() * yl;
                }
                s.solve(&rt)
            }
            None => rt,
        };
        let xl = match (level, yl) {
            (Some(l), Some(mut yl)) => {
                if self.m > 0 {
                    yl -= &self.g[l] * &xt;
                }
                yl.as_slice().to_vec()
            }
            _ => Vec::new(),
        };
        (xl, xt.as_slice().to_vec())
    }

    /// Inverse of the Schur complement, i.e. the trailing block of H⁻¹.
    pub fn trailing_inverse(&self) -> DMatrix<f64> {
        match &self.s_chol {
            Some(s) => s.inverse(),
            None => DMatrix::zeros(0, 0),
        }
    }
}
