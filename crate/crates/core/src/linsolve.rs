//! Sparse symmetric positive-definite solves with Dirichlet constraints
//! eliminated by symmetric row/column reduction.
//!
//! The reduced pattern and its symbolic Cholesky analysis (fill-reducing
//! ordering included) are computed once per system; each numeric
//! factorization reuses them.

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{LltError as DenseLltError, LltRegularization};
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymbolicCholeskyRaw,
    SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use crate::error::{Error, Result};
use crate::sparse::{Pattern, SymmetricCsc};

/// Normwise backward error `‖b - Ax‖∞ / (‖A‖∞ ‖x‖∞ + ‖b‖∞)` every solve
/// must meet.
pub const RESIDUAL_TOL: f64 = 1e-10;
const MAX_REFINEMENT_STEPS: usize = 6;
const NONE: usize = usize::MAX;

#[derive(Debug)]
pub struct ConstrainedSystem {
    name: &'static str,
    pattern: Arc<Pattern>,
    free_dofs: Vec<usize>,
    /// Reduced index of each full dof, `NONE` when constrained.
    reduced_of: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Reduced value index of each full value, `NONE` when dropped.
    value_map: Vec<usize>,
    /// `(full value index, reduced row, constrained full col)`.
    coupling: Vec<(usize, usize, usize)>,
    symbolic: SymbolicCholesky<usize>,
}

impl ConstrainedSystem {
    /// `constrained` lists the full dofs with prescribed values.
    pub fn new(name: &'static str, pattern: Arc<Pattern>, constrained: &[usize]) -> Result<Self> {
        let n = pattern.n;
        let mut reduced_of = vec![0usize; n];
        for &c in constrained {
            reduced_of[c] = NONE;
        }
        let mut free_dofs = Vec::new();
        for (d, slot) in reduced_of.iter_mut().enumerate() {
            if *slot != NONE {
                *slot = free_dofs.len();
                free_dofs.push(d);
            }
        }
        let mut col_ptr = vec![0usize];
        let mut row_idx = Vec::new();
        let mut value_map = vec![NONE; pattern.nnz()];
        let mut coupling = Vec::new();
        for &col in &free_dofs {
            let rc = reduced_of[col];
            for k in pattern.col_ptr[col]..pattern.col_ptr[col + 1] {
                let row = pattern.row_idx[k];
                let rr = reduced_of[row];
                if rr != NONE && rr >= rc {
                    value_map[k] = row_idx.len();
                    row_idx.push(rr);
                }
            }
            col_ptr.push(row_idx.len());
        }
        for col in 0..n {
            if reduced_of[col] != NONE {
                continue;
            }
            for k in pattern.col_ptr[col]..pattern.col_ptr[col + 1] {
                let rr = reduced_of[pattern.row_idx[k]];
                if rr != NONE {
                    coupling.push((k, rr, col));
                }
            }
        }

        let nf = free_dofs.len();
        let symbolic = factorize_symbolic_cholesky(
            SymbolicSparseColMatRef::new_checked(nf, nf, &col_ptr, None, &row_idx),
            Side::Lower,
            SymmetricOrdering::Amd,
            Default::default(),
        )
        .map_err(|e| Error::Singular(format!("{name}: symbolic analysis failed: {e:?}")))?;

        Ok(ConstrainedSystem {
            name,
            pattern,
            free_dofs,
            reduced_of,
            col_ptr,
            row_idx,
            value_map,
            coupling,
            symbolic,
        })
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.reduced_of[dof] == NONE
    }

    /// Numeric Cholesky factorization of the reduced matrix.
    pub fn factor(&self, matrix: &SymmetricCsc) -> Result<Factorization<'_>> {
        assert!(Arc::ptr_eq(&matrix.pattern, &self.pattern), "matrix/system pattern mismatch");
        let mut reduced = vec![0.0; self.row_idx.len()];
        for (k, &slot) in self.value_map.iter().enumerate() {
            if slot != NONE {
                reduced[slot] = matrix.values[k];
            }
        }
        if reduced.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(self.name));
        }
        let nf = self.n_free();
        let mut l_values = vec![0.0; self.symbolic.len_val()];
        let par = Par::Seq;
        let mut mem = MemBuffer::new(
            self.symbolic
                .factorize_numeric_llt_scratch::<f64>(par, Default::default()),
        );
        let a = SparseColMatRef::new(
            SymbolicSparseColMatRef::new_checked(nf, nf, &self.col_ptr, None, &self.row_idx),
            &reduced,
        );
        let res = self.symbolic.factorize_numeric_llt::<f64>(
            &mut l_values,
            a,
            Side::Lower,
            LltRegularization::default(),
            par,
            MemStack::new(&mut mem),
            Default::default(),
        );
        match res {
            Ok(_) => {}
            Err(DenseLltError::NonPositivePivot { index }) => {
                // The simplicial kernel reports the failing column 1-based,
                // the supernodal one 0-based.
                let col = match self.symbolic.raw() {
                    SymbolicCholeskyRaw::Simplicial(_) => index.saturating_sub(1),
                    SymbolicCholeskyRaw::Supernodal(_) => index,
                };
                let reduced_index = match self.symbolic.perm() {
                    Some(p) => p.arrays().0[col],
                    None => col,
                };
                return Err(Error::Factorization {
                    system: self.name,
                    dof: self.free_dofs[reduced_index],
                });
            }
        }
        let mut row_abs = vec![0.0f64; nf];
        for c in 0..nf {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                let r = self.row_idx[k];
                row_abs[r] += reduced[k].abs();
                if r != c {
                    row_abs[c] += reduced[k].abs();
                }
            }
        }
        let norm_inf = row_abs.into_iter().fold(0.0, f64::max);
        Ok(Factorization {
            system: self,
            reduced,
            l_values,
            norm_inf,
        })
    }
}

/// Cholesky factor of one reduced matrix, reusable for any number of
/// right-hand sides.
pub struct Factorization<'a> {
    system: &'a ConstrainedSystem,
    reduced: Vec<f64>,
    l_values: Vec<f64>,
    /// `‖A‖∞` of the reduced matrix.
    norm_inf: f64,
}

impl Factorization<'_> {
    fn back_substitute(&self, b: &mut [f64]) {
        let s = self.system;
        let par = Par::Seq;
        let mut mem = MemBuffer::new(s.symbolic.solve_in_place_scratch::<f64>(1, par));
        let llt = LltRef::<'_, usize, f64>::new(&s.symbolic, &self.l_values);
        let n = b.len();
        let rhs = MatMut::from_column_major_slice_mut(b, n, 1);
        llt.solve_in_place_with_conj(Conj::No, rhs, par, MemStack::new(&mut mem));
    }

    /// `b - Ax` accumulated in double-double arithmetic and rounded once.
    fn residual(&self, b: &[f64], x: &[f64]) -> Vec<f64> {
        let s = self.system;
        let mut hi = b.to_vec();
        let mut lo = vec![0.0; b.len()];
        let mut sub = |i: usize, a: f64, y: f64| {
            let p = a * y;
            let pe = a.mul_add(y, -p);
            let t = hi[i] - p;
            let z = t - hi[i];
            let e = (hi[i] - (t - z)) - (p + z);
            hi[i] = t;
            lo[i] += e - pe;
        };
        for c in 0..x.len() {
            for k in s.col_ptr[c]..s.col_ptr[c + 1] {
                let r = s.row_idx[k];
                let v = self.reduced[k];
                sub(r, v, x[c]);
                if r != c {
                    sub(c, v, x[r]);
                }
            }
        }
        hi.iter().zip(&lo).map(|(h, l)| h + l).collect()
    }

    /// Solves the reduced system in place. Refinement runs on residuals
    /// computed in extended precision until the correction drops to
    /// rounding level, so the result is accurate in the forward sense and
    /// not only backward stable. Returns the final backward error.
    pub fn solve_reduced(&self, b: &mut [f64]) -> Result<f64> {
        let rhs = b.to_vec();
        let bnorm = norm_inf(&rhs);
        self.back_substitute(b);
        if bnorm == 0.0 {
            return Ok(0.0);
        }
        let mut last = f64::INFINITY;
        for _ in 0..MAX_REFINEMENT_STEPS {
            let mut d = self.residual(&rhs, b);
            self.back_substitute(&mut d);
            let dn = norm_inf(&d);
            if !dn.is_finite() {
                return Err(Error::NonFinite(self.system.name));
            }
            b.iter_mut().zip(&d).for_each(|(x, d)| *x += d);
            if dn <= f64::EPSILON * norm_inf(b) || dn > 0.5 * last {
                break;
            }
            last = dn;
        }
        let r = self.residual(&rhs, b);
        let residual = norm_inf(&r) / (self.norm_inf * norm_inf(b) + bnorm);
        if !residual.is_finite() {
            return Err(Error::NonFinite(self.system.name));
        }
        if residual > RESIDUAL_TOL {
            return Err(Error::Residual {
                system: self.system.name,
                residual,
                tolerance: RESIDUAL_TOL,
            });
        }
        Ok(residual)
    }

    /// Solves `A x = load` on the free dofs with `x = prescribed` on the
    /// constrained ones. Both inputs are full-length; `load` entries on
    /// constrained dofs and `prescribed` entries on free dofs are ignored.
    pub fn solve(&self, load: &[f64], prescribed: &[f64], matrix: &SymmetricCsc) -> Result<Solution> {
        let s = self.system;
        let mut b: Vec<f64> = s.free_dofs.iter().map(|&d| load[d]).collect();
        for &(k, rr, col) in &s.coupling {
            b[rr] -= matrix.values[k] * prescribed[col];
        }
        let residual = self.solve_reduced(&mut b)?;
        let mut x = prescribed.to_vec();
        for (&d, &v) in s.free_dofs.iter().zip(&b) {
            x[d] = v;
        }
        Ok(Solution { x, residual })
    }

    /// Homogeneous-constraint solve (`x = 0` on constrained dofs).
    pub fn solve_homogeneous(&self, load: &[f64]) -> Result<Solution> {
        let s = self.system;
        let mut b: Vec<f64> = s.free_dofs.iter().map(|&d| load[d]).collect();
        let residual = self.solve_reduced(&mut b)?;
        let mut x = vec![0.0; s.pattern.n];
        for (&d, &v) in s.free_dofs.iter().zip(&b) {
            x[d] = v;
        }
        Ok(Solution { x, residual })
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub residual: f64,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
