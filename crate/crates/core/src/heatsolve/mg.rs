//! Conjugate gradients preconditioned by an aggregation multigrid V-cycle.

use nalgebra::{DMatrix, DVector};

use super::stencil::Stencil;
use crate::{Error, Result};

const COARSEST_CELLS: usize = 600;
const SMOOTHING_SWEEPS: usize = 1;
// Unsmoothed aggregation under-corrects smooth error; a fixed scale keeps the
// preconditioner symmetric and recovers most of the lost convergence.
const COARSE_SCALE: f64 = 1.6;

pub(crate) struct Hierarchy {
    levels: Vec<Stencil>,
    coarsest: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    scratch: Vec<Scratch>,
}

struct Scratch {
    b: Vec<f64>,
    x: Vec<f64>,
    r: Vec<f64>,
}

impl Hierarchy {
    pub fn new(fine: Stencil) -> Result<Self> {
        let mut levels = vec![fine];
        while levels.last().map(Stencil::len).unwrap_or(0) > COARSEST_CELLS {
            let next = levels.last().expect("non-empty").coarsen();
            if next.len() == levels.last().expect("non-empty").len() {
                break;
            }
            levels.push(next);
        }
        let last = levels.last().expect("non-empty");
        let n = last.len();
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for c in 0..n {
            e[c] = 1.0;
            last.apply(&e, &mut col);
            e[c] = 0.0;
            for (r, v) in col.iter().enumerate() {
                dense[(r, c)] = *v;
            }
        }
        let coarsest = dense.cholesky().ok_or_else(|| Error::Numerical("conduction matrix is singular (no heat-sink face?)".into()))?;
        let scratch = levels.iter().map(|l| Scratch { b: vec![0.0; l.len()], x: vec![0.0; l.len()], r: vec![0.0; l.len()] }).collect();
        Ok(Hierarchy { levels, coarsest, scratch })
    }

    pub fn fine(&self) -> &Stencil {
        &self.levels[0]
    }

    /// `z = M^{-1} r` for the symmetric V-cycle `M`.
    fn precondition(&mut self, r: &[f64], z: &mut [f64]) {
        self.scratch[0].b.copy_from_slice(r);
        self.vcycle(0);
        z.copy_from_slice(&self.scratch[0].x);
    }

    fn vcycle(&mut self, l: usize) {
        if l + 1 == self.levels.len() {
            let sol = self.coarsest.solve(&DVector::from_column_slice(&self.scratch[l].b));
            self.scratch[l].x.copy_from_slice(sol.as_slice());
            return;
        }
        {
            let st = &self.levels[l];
            let s = &mut self.scratch[l];
            s.x.iter_mut().for_each(|v| *v = 0.0);
            for _ in 0..SMOOTHING_SWEEPS {
                st.gauss_seidel(&s.b, &mut s.x, true);
            }
            st.apply(&s.x, &mut s.r);
            for (r, b) in s.r.iter_mut().zip(&s.b) {
                *r = b - *r;
            }
        }
        let (fine, coarse) = self.scratch.split_at_mut(l + 1);
        self.levels[l].restrict(&fine[l].r, &mut coarse[0].b);
        self.vcycle(l + 1);
        let (fine, coarse) = self.scratch.split_at_mut(l + 1);
        let s = &mut fine[l];
        coarse[0].x.iter_mut().for_each(|v| *v *= COARSE_SCALE);
        self.levels[l].prolong_add(&coarse[0].x, &mut s.x);
        for _ in 0..SMOOTHING_SWEEPS {
            self.levels[l].gauss_seidel(&s.b, &mut s.x, false);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of a linear solve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// Stops at `||b - A x|| <= tol ||b||` or after `max_iter` iterations; in the
/// latter case the partial iterate is kept and the stats say how far it got.
pub(crate) fn pcg(h: &mut Hierarchy, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveStats {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return SolveStats { iterations: 0, relative_residual: 0.0 };
    }
    let mut r = vec![0.0; n];
    h.fine().apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    if rel <= tol {
        return SolveStats { iterations: 0, relative_residual: rel };
    }
    let mut z = vec![0.0; n];
    h.precondition(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        h.fine().apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            return SolveStats { iterations: it, relative_residual: rel };
        }
        h.precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    SolveStats { iterations: max_iter, relative_residual: rel }
}
