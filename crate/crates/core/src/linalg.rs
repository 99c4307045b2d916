//! Sparse system assembly and linear solves.
//!
//! Contributions are collected as triplets, merged deterministically (stable
//! sort by column then row, duplicates summed in insertion order) into CSC
//! storage, and factorised directly. Symmetric systems (all Picard systems of
//! the flow models are) go through a sparse Cholesky factorisation, with LU as
//! the fallback when a pivot is not positive. Symbolic analyses are reused for
//! as long as the sparsity pattern stays the same.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{MatMut, Side};
use serde::{Deserialize, Serialize};

/// Triplet collector for a square system.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    rhs_abs: Vec<f64>,
}

impl LinearSystem {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            triplets: Vec::with_capacity(5 * n),
            rhs: vec![0.0; n],
            rhs_abs: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.triplets.push((row, col, value));
    }

    #[inline]
    pub fn add_rhs(&mut self, row: usize, value: f64) {
        self.rhs[row] += value;
        self.rhs_abs[row] += value.abs();
    }

    /// Adds the symmetric two-point coupling `t (x_a - x_b)` to row `a` and
    /// `t (x_b - x_a)` to row `b`.
    pub fn add_coupling(&mut self, a: usize, b: usize, t: f64) {
        self.add(a, a, t);
        self.add(a, b, -t);
        self.add(b, b, t);
        self.add(b, a, -t);
    }

    pub fn finish(self) -> CscSystem {
        // stable counting sort by column, then a stable sort by row inside each
        // column, so duplicates are summed in insertion order
        let n = self.n;
        let mut start = vec![0usize; n + 1];
        for &(_, c, _) in &self.triplets {
            start[c + 1] += 1;
        }
        for c in 0..n {
            start[c + 1] += start[c];
        }
        let mut next = start.clone();
        let mut sorted = vec![(0usize, 0.0f64); self.triplets.len()];
        for &(r, c, v) in &self.triplets {
            sorted[next[c]] = (r, v);
            next[c] += 1;
        }
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        for c in 0..n {
            let column = &mut sorted[start[c]..start[c + 1]];
            column.sort_by_key(|&(r, _)| r);
            let first = row_idx.len();
            for &(r, v) in column.iter() {
                if row_idx.len() > first && *row_idx.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                }
            }
            col_ptr[c + 1] = row_idx.len();
        }
        CscSystem {
            n,
            col_ptr,
            row_idx,
            values,
            terms: self.triplets,
            rhs: self.rhs,
            rhs_abs: self.rhs_abs,
        }
    }
}

/// Assembled system in compressed sparse column form.
///
/// The unmerged contributions are kept next to the merged matrix: summing a
/// small storage coefficient into a diagonal dominated by large
/// transmissibilities rounds away its low-order digits, so residuals are
/// evaluated from the individual terms, where the flux pairs `t x_i - t x_j`
/// cancel exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CscSystem {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    terms: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    rhs_abs: Vec<f64>,
}

impl CscSystem {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(row, col, value)` in column-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |c| (self.col_ptr[c]..self.col_ptr[c + 1]).map(move |k| (self.row_idx[k], c, self.values[k])))
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        match self.row_idx[range.clone()].binary_search(&row) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                y[self.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    /// `rhs - A x`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.matvec(x);
        self.rhs.iter().zip(ax).map(|(b, a)| b - a).collect()
    }

    /// `sum_j |a_ij x_j|` per row.
    pub fn abs_row_sums(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for c in 0..self.n {
            for k in self.col_ptr[c]..self.col_ptr[c + 1] {
                out[self.row_idx[k]] += (self.values[k] * x[c]).abs();
            }
        }
        out
    }

    /// `sum |b_k|` over the separate right-hand-side contributions of each
    /// row, the scale of the rounding in `rhs` when they cancel.
    pub fn rhs_magnitude(&self) -> &[f64] {
        &self.rhs_abs
    }

    /// `rhs - A x` from the unmerged terms, accumulated in double-double
    /// arithmetic (error-free products via `fma`, compensated sums) and
    /// rounded once per row.
    pub fn residual_compensated(&self, x: &[f64]) -> Vec<f64> {
        let mut hi = self.rhs.clone();
        let mut lo = vec![0.0; self.n];
        for &(r, c, v) in &self.terms {
            let p = -v * x[c];
            let p_err = (-v).mul_add(x[c], -p);
            let s = hi[r] + p;
            let bb = s - hi[r];
            let s_err = (hi[r] - (s - bb)) + (p - bb);
            hi[r] = s;
            lo[r] += s_err + p_err;
        }
        hi.iter().zip(&lo).map(|(h, l)| h + l).collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0f64; self.n];
        for (r, _, v) in self.entries() {
            rows[r] += v.abs();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Exact symmetry of the stored entries.
    pub fn is_symmetric(&self) -> bool {
        self.entries().all(|(r, c, v)| r == c || self.get(c, r) == v)
    }

    fn same_pattern(&self, col_ptr: &[usize], row_idx: &[usize]) -> bool {
        self.col_ptr == col_ptr && self.row_idx == row_idx
    }

    fn view(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(
            SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx),
            &self.values,
        )
    }
}

/// Linear solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearSolverKind {
    /// Sparse Cholesky (LU for non-symmetric systems) with iterative
    /// refinement on compensated residuals.
    Direct,
    /// Jacobi-preconditioned conjugate gradients (the systems are symmetric).
    Cg { tol: f64, max_iter: usize },
}

impl Default for LinearSolverKind {
    fn default() -> Self {
        LinearSolverKind::Direct
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveFailure {
    Singular,
    NonFinite,
    NotConverged,
}

struct CachedAnalysis {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    llt: Option<SymbolicLlt<usize>>,
    lu: Option<SymbolicLu<usize>>,
}

/// Reusable solver; caches symbolic factorisations for a fixed pattern.
pub struct SparseSolver {
    kind: LinearSolverKind,
    cached: Option<CachedAnalysis>,
}

impl SparseSolver {
    pub fn new(kind: LinearSolverKind) -> Self {
        Self { kind, cached: None }
    }

    pub fn solve(&mut self, sys: &CscSystem) -> Result<Vec<f64>, SolveFailure> {
        let x = match self.kind {
            LinearSolverKind::Direct => self.solve_direct(sys)?,
            LinearSolverKind::Cg { tol, max_iter } => pcg(sys, tol, max_iter)?,
        };
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(SolveFailure::NonFinite)
        }
    }

    fn analysis(&mut self, sys: &CscSystem) -> &mut CachedAnalysis {
        let reuse = matches!(&self.cached, Some(c) if sys.same_pattern(&c.col_ptr, &c.row_idx));
        if !reuse {
            self.cached = Some(CachedAnalysis {
                col_ptr: sys.col_ptr.clone(),
                row_idx: sys.row_idx.clone(),
                llt: None,
                lu: None,
            });
        }
        self.cached.as_mut().unwrap()
    }

    fn solve_direct(&mut self, sys: &CscSystem) -> Result<Vec<f64>, SolveFailure> {
        if sys.is_symmetric() {
            let cache = self.analysis(sys);
            if cache.llt.is_none() {
                cache.llt = SymbolicLlt::try_new(sys.view().symbolic(), Side::Lower).ok();
            }
            if let Some(symbolic) = cache.llt.clone() {
                if let Ok(llt) = Llt::try_new_with_symbolic(symbolic, sys.view(), Side::Lower) {
                    return refined(sys, |b| llt.solve_in_place(MatMut::from_column_major_slice_mut(b, sys.n, 1)));
                }
            }
        }
        let cache = self.analysis(sys);
        if cache.lu.is_none() {
            cache.lu = Some(SymbolicLu::try_new(sys.view().symbolic()).map_err(|_| SolveFailure::Singular)?);
        }
        let symbolic = cache.lu.clone().unwrap();
        let lu = Lu::try_new_with_symbolic(symbolic, sys.view()).map_err(|_| SolveFailure::Singular)?;
        refined(sys, |b| lu.solve_in_place(MatMut::from_column_major_slice_mut(b, sys.n, 1)))
    }
}

/// Maximum number of refinement sweeps after the initial direct solve.
const MAX_REFINEMENT: usize = 6;

/// Direct solve followed by iterative refinement with extra-precise
/// residuals, which recovers a solution accurate to working precision as long
/// as `cond(A) eps < 1` (the interface systems of thin fractures reach
/// condition numbers around `1e9`).
fn refined(sys: &CscSystem, apply: impl Fn(&mut [f64])) -> Result<Vec<f64>, SolveFailure> {
    let mut x = sys.rhs.clone();
    apply(&mut x);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(SolveFailure::Singular);
    }
    let mut last = f64::INFINITY;
    for _ in 0..MAX_REFINEMENT {
        let mut d = sys.residual_compensated(&x);
        apply(&mut d);
        let size = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // stop once corrections are at rounding level or stop shrinking
        if size <= 4.0 * f64::EPSILON * scale || size > 0.5 * last {
            break;
        }
        last = size;
    }
    Ok(x)
}

fn pcg(sys: &CscSystem, tol: f64, max_iter: usize) -> Result<Vec<f64>, SolveFailure> {
    let n = sys.n;
    let inv_diag: Vec<f64> = sys
        .diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dot(&sys.rhs, &sys.rhs).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = sys.rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap = sys.matvec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(SolveFailure::Singular);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveFailure::NotConverged)
}
