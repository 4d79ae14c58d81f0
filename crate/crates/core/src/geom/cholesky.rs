//! Sparse Cholesky factorisation for symmetric positive definite operators.
//!
//! Minimum-degree ordering on the elimination graph, elimination-tree
//! symbolic analysis and an up-looking numeric factorisation. Everything is
//! sequential and tie-broken by index, so factors are bit-reproducible.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use thiserror::Error;

use super::sparse::SparseOperator;

/// Relative residual `‖Ax − b‖ / ‖b‖` every successful solve must reach.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

const MAX_REFINEMENT_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("operator is not declared symmetric")]
    NotSymmetric,
    #[error("dimension mismatch: operator is {op}, right-hand side has {rhs} rows")]
    DimensionMismatch { op: usize, rhs: usize },
    #[error("operator sparsity differs from the analysed pattern")]
    PatternMismatch,
    #[error("system is singular or not positive definite (pivot {pivot})")]
    SingularSystem { pivot: usize },
    #[error("solve stalled at relative residual {residual:e}")]
    NotConverged { residual: f64 },
}

/// Fill-reducing ordering and the sparsity of `L`, reusable for every
/// operator with the same pattern.
#[derive(Debug, Clone)]
pub struct CholeskyPattern {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// For each permuted column k: `(permuted row <= k, index into op values)`.
    upper: Vec<Vec<(usize, usize)>>,
    /// Column pointers and row indices of L (diagonal first in every column).
    lp: Vec<usize>,
    li: Vec<usize>,
    /// Row patterns of L in topological order, concatenated.
    reach_ptr: Vec<usize>,
    reach: Vec<usize>,
}

/// Numeric factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor<'p> {
    pattern: &'p CholeskyPattern,
    lx: Vec<f64>,
}

impl CholeskyPattern {
    pub fn analyze(op: &SparseOperator) -> Result<Self, SolveError> {
        if !op.is_symmetric() {
            return Err(SolveError::NotSymmetric);
        }
        let n = op.dim();
        let perm = minimum_degree(op);
        let mut pinv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }

        let mut upper: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for r in 0..n {
            for k in op.row_ptr()[r]..op.row_ptr()[r + 1] {
                let (pr, pc) = (pinv[r], pinv[op.col_idx()[k]]);
                if pr <= pc {
                    upper[pc].push((pr, k));
                }
            }
        }
        for col in &mut upper {
            col.sort_unstable();
        }

        let parent = etree(&upper);
        let mut marks = vec![usize::MAX; n];
        let mut stack = Vec::new();
        let mut reach_ptr = Vec::with_capacity(n + 1);
        let mut reach = Vec::new();
        let mut counts = vec![1usize; n];
        reach_ptr.push(0);
        for k in 0..n {
            let start = reach.len();
            ereach(&upper[k], k, &parent, &mut marks, &mut stack, &mut reach);
            for &j in &reach[start..] {
                counts[j] += 1;
            }
            reach_ptr.push(reach.len());
        }
        let mut lp = Vec::with_capacity(n + 1);
        lp.push(0);
        for k in 0..n {
            lp.push(lp[k] + counts[k]);
        }
        let mut li = vec![0usize; lp[n]];
        let mut next: Vec<usize> = lp[..n].to_vec();
        for k in 0..n {
            for &j in &reach[reach_ptr[k]..reach_ptr[k + 1]] {
                li[next[j]] = k;
                next[j] += 1;
            }
            li[next[k]] = k;
            next[k] += 1;
        }
        // Rows land in increasing k and every reach entry has j < k, so each
        // column starts with its diagonal.

        Ok(Self {
            n,
            perm,
            row_ptr: op.row_ptr().to_vec(),
            col_idx: op.col_idx().to_vec(),
            upper,
            lp,
            li,
            reach_ptr,
            reach,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Non-zeros in `L`.
    pub fn factor_nnz(&self) -> usize {
        self.li.len()
    }

    pub fn factor(&self, op: &SparseOperator) -> Result<CholeskyFactor<'_>, SolveError> {
        if op.dim() != self.n || op.row_ptr() != self.row_ptr || op.col_idx() != self.col_idx {
            return Err(SolveError::PatternMismatch);
        }
        let values = op.values();
        let n = self.n;
        let mut lx = vec![0.0; self.li.len()];
        let mut next: Vec<usize> = self.lp[..n].to_vec();
        let mut x = vec![0.0; n];
        for k in 0..n {
            for &(row, vi) in &self.upper[k] {
                x[row] += values[vi];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &self.reach[self.reach_ptr[k]..self.reach_ptr[k + 1]] {
                let lki = x[i] / lx[self.lp[i]];
                x[i] = 0.0;
                for p in self.lp[i] + 1..next[i] {
                    x[self.li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                lx[next[i]] = lki;
                next[i] += 1;
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(SolveError::SingularSystem { pivot: self.perm[k] });
            }
            lx[next[k]] = d.sqrt();
            next[k] += 1;
        }
        Ok(CholeskyFactor { pattern: self, lx })
    }
}

impl CholeskyFactor<'_> {
    /// Solves `A x = b` with the factor alone (no residual check).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let pat = self.pattern;
        let n = pat.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = pat.perm.iter().map(|&old| b[old]).collect();
        for j in 0..n {
            x[j] /= self.lx[pat.lp[j]];
            let xj = x[j];
            for p in pat.lp[j] + 1..pat.lp[j + 1] {
                x[pat.li[p]] -= self.lx[p] * xj;
            }
        }
        for j in (0..n).rev() {
            let mut s = x[j];
            for p in pat.lp[j] + 1..pat.lp[j + 1] {
                s -= self.lx[p] * x[pat.li[p]];
            }
            x[j] = s / self.lx[pat.lp[j]];
        }
        let mut out = vec![0.0; n];
        for (new, &old) in pat.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }

    /// Solves with iterative refinement and enforces [`RESIDUAL_TOLERANCE`].
    pub fn solve_refined(&self, op: &SparseOperator, b: &[f64]) -> Result<Vec<f64>, SolveError> {
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let mut x = self.solve(b);
        let mut residual = relative_residual(op, &x, b, b_norm);
        for _ in 0..MAX_REFINEMENT_STEPS {
            if residual < RESIDUAL_TOLERANCE {
                break;
            }
            let ax = op.apply(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let dx = self.solve(&r);
            let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
            let next = relative_residual(op, &candidate, b, b_norm);
            if !(next < residual) {
                break;
            }
            x = candidate;
            residual = next;
        }
        if residual < RESIDUAL_TOLERANCE {
            Ok(x)
        } else {
            Err(SolveError::NotConverged { residual })
        }
    }
}

/// Solves `A X = B` column by column for an SPD operator.
pub fn solve_spd(op: &SparseOperator, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, SolveError> {
    if rhs.nrows() != op.dim() {
        return Err(SolveError::DimensionMismatch { op: op.dim(), rhs: rhs.nrows() });
    }
    let pattern = CholeskyPattern::analyze(op)?;
    let factor = pattern.factor(op)?;
    let mut out = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    for c in 0..rhs.ncols() {
        let b: Vec<f64> = rhs.column(c).iter().copied().collect();
        let x = factor.solve_refined(op, &b)?;
        out.column_mut(c).copy_from_slice(&x);
    }
    Ok(out)
}

/// Single right-hand-side convenience wrapper around [`solve_spd`].
pub fn solve_spd_vec(op: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
    if rhs.len() != op.dim() {
        return Err(SolveError::DimensionMismatch { op: op.dim(), rhs: rhs.len() });
    }
    let pattern = CholeskyPattern::analyze(op)?;
    pattern.factor(op)?.solve_refined(op, rhs)
}

pub fn relative_residual(op: &SparseOperator, x: &[f64], b: &[f64], b_norm: f64) -> f64 {
    let ax = op.apply(x);
    let r: f64 = ax.iter().zip(b).map(|(a, bi)| (a - bi) * (a - bi)).sum::<f64>().sqrt();
    r / b_norm
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Greedy minimum-degree ordering on the explicit elimination graph; ties go
/// to the lowest index. Returns `perm[new] = old`.
fn minimum_degree(op: &SparseOperator) -> Vec<usize> {
    let n = op.dim();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in op.triplets() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let mut queue: BTreeSet<(usize, usize)> = adj.iter().enumerate().map(|(v, a)| (a.len(), v)).collect();
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nb = std::mem::take(&mut adj[v]);
        for &u in &nb {
            queue.remove(&(adj[u].len(), u));
            merged.clear();
            let (a, b) = (&adj[u], &nb);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                let next = match (a.get(i), b.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        x
                    }
                    (Some(_), Some(&y)) => {
                        j += 1;
                        y
                    }
                    (Some(&x), None) => {
                        i += 1;
                        x
                    }
                    (None, Some(&y)) => {
                        j += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            queue.insert((adj[u].len(), u));
        }
    }
    order
}

/// Elimination tree of a matrix given by its upper-triangular columns.
fn etree(upper: &[Vec<(usize, usize)>]) -> Vec<usize> {
    let n = upper.len();
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for (k, col) in upper.iter().enumerate() {
        for &(row, _) in col {
            let mut i = row;
            while i != usize::MAX && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == usize::MAX {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Pattern of row `k` of L (excluding the diagonal), appended to `out` in
/// topological order: every node precedes its elimination-tree ancestors.
fn ereach(
    col: &[(usize, usize)],
    k: usize,
    parent: &[usize],
    marks: &mut [usize],
    stack: &mut Vec<usize>,
    out: &mut Vec<usize>,
) {
    marks[k] = k;
    let mut paths: Vec<Vec<usize>> = Vec::new();
    for &(row, _) in col {
        let mut i = row;
        if i > k {
            continue;
        }
        stack.clear();
        while marks[i] != k {
            stack.push(i);
            marks[i] = k;
            i = parent[i];
        }
        if !stack.is_empty() {
            paths.push(stack.clone());
        }
    }
    // Later paths end below earlier ones, so emit them first.
    for path in paths.iter().rev() {
        out.extend_from_slice(path);
    }
}
