//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! Columns are factorized left-looking (Gilbert–Peierls style): each basis
//! column is reduced against the `L` factor built so far, and the pivot is the
//! largest remaining entry among rows that have not been pivoted yet. Columns
//! are processed in order of increasing nonzero count, which keeps the mostly
//! triangular bases of occupancy LPs nearly fill-free.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Sparse column as parallel index/value vectors.
#[derive(Debug, Clone, Default)]
pub struct SparseCol {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseCol {
    pub fn push(&mut self, i: usize, v: f64) {
        self.idx.push(i);
        self.val.push(v);
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }
}

const SINGULAR_TOL: f64 = 1e-11;

/// `P B Q = L U` in elimination-step coordinates, stored column-compressed.
#[derive(Debug, Clone, Default)]
pub struct LuFactors {
    m: usize,
    /// Pivot row of each step.
    pivot_row: Vec<usize>,
    /// Basis position eliminated at each step.
    pivot_pos: Vec<usize>,
    /// Below-diagonal entries of each `L` column, keyed by original row;
    /// step `k` owns `l_start[k]..l_start[k + 1]`.
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    /// Above-diagonal entries of each `U` column, keyed by step.
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    u_diag: Vec<f64>,
}

/// Result of factorizing a possibly singular basis.
#[derive(Debug)]
pub struct Factorization {
    pub lu: LuFactors,
    /// `(basis position, row)` pairs where a singular column was replaced by
    /// the unit column of `row`.
    pub replaced: Vec<(usize, usize)>,
}

/// Factorizes the `m x m` matrix whose columns are `cols`.
///
/// Singular columns are dropped and replaced by unit columns of the rows left
/// without a pivot; the caller must swap in the matching logical variables.
#[cfg(test)]
pub fn factorize(m: usize, cols: &[SparseCol]) -> Factorization {
    debug_assert_eq!(cols.len(), m);
    factorize_by(m, |pos| (&cols[pos].idx[..], &cols[pos].val[..]))
}

/// Like [`factorize`], with basis column `pos` supplied as `(rows, values)`.
pub fn factorize_by<'c>(m: usize, column: impl Fn(usize) -> (&'c [usize], &'c [f64])) -> Factorization {
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&j| (column(j).0.len(), j));

    let mut f = LuFactors {
        m,
        pivot_row: Vec::with_capacity(m),
        pivot_pos: Vec::with_capacity(m),
        l_start: vec![0],
        u_start: vec![0],
        u_diag: Vec::with_capacity(m),
        ..Default::default()
    };
    let mut step_of_row: Vec<Option<usize>> = vec![None; m];
    let mut work = vec![0.0; m];
    let mut in_pattern = vec![false; m];
    let mut pattern = Vec::new();
    let mut heap = BinaryHeap::new();
    let mut singular = Vec::new();

    let mut eliminate = |pos: usize, idx: &[usize], val: &[f64], f: &mut LuFactors, step_of_row: &mut Vec<Option<usize>>| -> bool {
        pattern.clear();
        for (&i, &v) in idx.iter().zip(val) {
            if !in_pattern[i] {
                in_pattern[i] = true;
                pattern.push(i);
            }
            work[i] += v;
            if let Some(k) = step_of_row[i] {
                heap.push(Reverse(k));
            }
        }
        // Apply L columns in step order; fill-in on pivoted rows always has a
        // later step than the column being applied.
        let mut last = usize::MAX;
        while let Some(Reverse(k)) = heap.pop() {
            if k == last {
                continue;
            }
            last = k;
            let xr = work[f.pivot_row[k]];
            if xr == 0.0 {
                continue;
            }
            for e in f.l_start[k]..f.l_start[k + 1] {
                let i = f.l_idx[e];
                if !in_pattern[i] {
                    in_pattern[i] = true;
                    pattern.push(i);
                }
                work[i] -= f.l_val[e] * xr;
                if let Some(k2) = step_of_row[i] {
                    heap.push(Reverse(k2));
                }
            }
        }
        let mut best: Option<(usize, f64)> = None;
        for &i in pattern.iter() {
            if step_of_row[i].is_none() {
                let v = work[i];
                let better = match best {
                    None => v.abs() > 0.0,
                    Some((bi, bv)) => v.abs() > bv.abs() || (v.abs() == bv.abs() && i < bi),
                };
                if better {
                    best = Some((i, v));
                }
            }
        }
        let ok = matches!(best, Some((_, v)) if v.abs() > SINGULAR_TOL);
        if ok {
            let (prow, pv) = best.unwrap();
            for &i in pattern.iter() {
                let v = work[i];
                if v == 0.0 {
                    continue;
                }
                match step_of_row[i] {
                    Some(k) => {
                        f.u_idx.push(k);
                        f.u_val.push(v);
                    }
                    None if i != prow => {
                        f.l_idx.push(i);
                        f.l_val.push(v / pv);
                    }
                    None => {}
                }
            }
            let k = f.pivot_row.len();
            step_of_row[prow] = Some(k);
            f.pivot_row.push(prow);
            f.pivot_pos.push(pos);
            f.l_start.push(f.l_idx.len());
            f.u_start.push(f.u_idx.len());
            f.u_diag.push(pv);
        }
        for &i in pattern.iter() {
            work[i] = 0.0;
            in_pattern[i] = false;
        }
        ok
    };

    for &pos in &order {
        let (idx, val) = column(pos);
        if !eliminate(pos, idx, val, &mut f, &mut step_of_row) {
            singular.push(pos);
        }
    }

    let mut replaced = Vec::new();
    if !singular.is_empty() {
        let free_rows: Vec<usize> = (0..m).filter(|&i| step_of_row[i].is_none()).collect();
        debug_assert_eq!(free_rows.len(), singular.len());
        for (&pos, &row) in singular.iter().zip(&free_rows) {
            let ok = eliminate(pos, &[row], &[1.0], &mut f, &mut step_of_row);
            debug_assert!(ok);
            replaced.push((pos, row));
        }
    }
    Factorization { lu: f, replaced }
}

impl LuFactors {
    /// Solves `B x = b` in place; `b` is indexed by row, the result by basis position.
    pub fn solve(&self, b: &mut [f64], scratch: &mut Vec<f64>) {
        let m = self.m;
        for k in 0..m {
            let xr = b[self.pivot_row[k]];
            if xr != 0.0 {
                for e in self.l_start[k]..self.l_start[k + 1] {
                    b[self.l_idx[e]] -= self.l_val[e] * xr;
                }
            }
        }
        scratch.clear();
        scratch.extend(self.pivot_row.iter().map(|&r| b[r]));
        for k in (0..m).rev() {
            let z = scratch[k] / self.u_diag[k];
            scratch[k] = z;
            if z != 0.0 {
                for e in self.u_start[k]..self.u_start[k + 1] {
                    scratch[self.u_idx[e]] -= self.u_val[e] * z;
                }
            }
        }
        for k in 0..m {
            b[self.pivot_pos[k]] = scratch[k];
        }
    }

    /// Solves `B^T y = c` in place; `c` is indexed by basis position, the result by row.
    pub fn solve_transpose(&self, c: &mut [f64], scratch: &mut Vec<f64>) {
        let m = self.m;
        scratch.clear();
        scratch.extend(self.pivot_pos.iter().map(|&p| c[p]));
        for k in 0..m {
            let mut v = scratch[k];
            for e in self.u_start[k]..self.u_start[k + 1] {
                v -= self.u_val[e] * scratch[self.u_idx[e]];
            }
            scratch[k] = v / self.u_diag[k];
        }
        for k in 0..m {
            c[self.pivot_row[k]] = scratch[k];
        }
        for k in (0..m).rev() {
            let mut s = 0.0;
            for e in self.l_start[k]..self.l_start[k + 1] {
                s += self.l_val[e] * c[self.l_idx[e]];
            }
            c[self.pivot_row[k]] -= s;
        }
    }
}

/// Elementary column transform from one basis change.
#[derive(Debug, Clone)]
pub struct Eta {
    pub pos: usize,
    pub pivot: f64,
    /// Off-pivot entries of the entering column's `B^{-1} a_q`.
    pub col: SparseCol,
}

impl Eta {
    pub fn new(pos: usize, alpha: &[f64]) -> Self {
        let mut col = SparseCol::default();
        for (i, &a) in alpha.iter().enumerate() {
            if i != pos && a != 0.0 {
                col.push(i, a);
            }
        }
        Self { pos, pivot: alpha[pos], col }
    }

    /// `x <- E^{-1} x`.
    pub fn apply(&self, x: &mut [f64]) {
        let xr = x[self.pos] / self.pivot;
        x[self.pos] = xr;
        if xr != 0.0 {
            for (&i, &a) in self.col.idx.iter().zip(&self.col.val) {
                x[i] -= a * xr;
            }
        }
    }

    /// `c <- E^{-T} c`.
    pub fn apply_transpose(&self, c: &mut [f64]) {
        let mut s = c[self.pos];
        for (&i, &a) in self.col.idx.iter().zip(&self.col.val) {
            s -= a * c[i];
        }
        c[self.pos] = s / self.pivot;
    }
}
