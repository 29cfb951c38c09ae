//! Bounded primal revised simplex for `max c^T x` s.t. `A x (≤|=) b`, `x ≥ 0`.
//!
//! Every row carries a logical column `+e_i`: a slack in `[0, ∞)` for `≤`
//! rows and an artificial fixed at `0` for `=` rows. Since all lower bounds
//! are zero and the only finite upper bounds are those fixed artificials,
//! nonbasic variables always sit at zero and `x_B = B^{-1} b`.
//!
//! Phase I minimizes the sum of bound violations of basic variables (a
//! composite objective recomputed every iteration); Phase II maximizes the
//! true objective. Pricing is Dantzig's rule with ties to the lowest column,
//! the ratio test is Harris' two-pass rule, and after a long run of degenerate
//! pivots the solver falls back to Bland's rule until progress resumes.

use super::lu::{factorize_by, Eta, LuFactors, SparseCol};

pub const PIVOT_TOL: f64 = 1e-10;
pub const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 50;

#[derive(Debug, Clone)]
pub struct StandardLp {
    pub n_rows: usize,
    /// Structural columns keyed by row.
    pub cols: Vec<SparseCol>,
    pub cost: Vec<f64>,
    pub rhs: Vec<f64>,
    pub is_eq: Vec<bool>,
    /// Optional starting basis: one column per row (`j ≥ n` is the logical
    /// of row `j − n`). Singular picks fall back to logicals.
    pub start: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimplexOutcome {
    Optimal { x: Vec<f64>, objective: f64, iterations: usize },
    Infeasible { iterations: usize },
    Unbounded { iterations: usize },
    Stall { iterations: usize },
}

/// Column-compressed copy of the structural matrix followed by the logicals.
struct Columns {
    start: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Columns {
    fn new(lp: &StandardLp) -> Self {
        let mut start = Vec::with_capacity(lp.cols.len() + lp.n_rows + 1);
        let (mut idx, mut val) = (Vec::new(), Vec::new());
        start.push(0);
        for c in &lp.cols {
            idx.extend_from_slice(&c.idx);
            val.extend_from_slice(&c.val);
            start.push(idx.len());
        }
        for i in 0..lp.n_rows {
            idx.push(i);
            val.push(1.0);
            start.push(idx.len());
        }
        Self { start, idx, val }
    }

    #[inline]
    fn get(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.start[j]..self.start[j + 1];
        (&self.idx[r.clone()], &self.val[r])
    }
}

struct Solver<'a> {
    lp: &'a StandardLp,
    m: usize,
    cols: Columns,
    /// Upper bound of every column (structurals then logicals).
    upper: Vec<f64>,
    /// Cost of every column (logicals cost nothing).
    cost: Vec<f64>,
    head: Vec<usize>,
    is_basic: Vec<bool>,
    lu: LuFactors,
    etas: Vec<Eta>,
    x_b: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn refactor(&mut self) {
        let f = {
            let (cols, head) = (&self.cols, &self.head);
            factorize_by(self.m, |pos| cols.get(head[pos]))
        };
        let n = self.lp.cols.len();
        for &(pos, row) in &f.replaced {
            self.is_basic[self.head[pos]] = false;
            self.head[pos] = n + row;
            self.is_basic[n + row] = true;
        }
        self.lu = f.lu;
        self.etas.clear();
        let mut x = self.lp.rhs.clone();
        self.ftran(&mut x);
        self.x_b = x;
    }

    fn ftran(&mut self, x: &mut [f64]) {
        self.lu.solve(x, &mut self.scratch);
        for eta in &self.etas {
            eta.apply(x);
        }
    }

    fn btran(&mut self, c: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            eta.apply_transpose(c);
        }
        self.lu.solve_transpose(c, &mut self.scratch);
    }

    /// Bound violation of the basic variable at `pos`: negative below, positive above.
    #[inline]
    fn violation(&self, pos: usize) -> f64 {
        let v = self.x_b[pos];
        if v < -FEAS_TOL {
            v
        } else {
            let hi = self.upper[self.head[pos]];
            if v > hi + FEAS_TOL {
                v - hi
            } else {
                0.0
            }
        }
    }
}

/// Picks one structural per equality row so the crashed columns form a
/// lower-triangular block; remaining rows keep their logicals.
///
/// Candidates for a row must have no entries in earlier crashed rows. Among
/// them, prefer the fewest entries in inequality rows (so the crash basis
/// leaves budget-like rows slack), then the fewest entries overall, then the
/// largest coefficient magnitude, then the lowest index.
fn crash(lp: &StandardLp) -> Vec<usize> {
    let m = lp.n_rows;
    let n = lp.cols.len();
    let mut row_cols: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (j, c) in lp.cols.iter().enumerate() {
        for &i in &c.idx {
            row_cols[i].push(j);
        }
    }
    let ineq_count: Vec<usize> = lp.cols.iter().map(|c| c.idx.iter().filter(|&&i| !lp.is_eq[i]).count()).collect();
    let mut head: Vec<usize> = (0..m).map(|i| n + i).collect();
    let mut crashed = vec![false; m];
    let mut used = vec![false; n];
    let mut progress = true;
    while progress {
        progress = false;
        for i in 0..m {
            if !lp.is_eq[i] || crashed[i] {
                continue;
            }
            let mut best: Option<(usize, usize, f64, usize)> = None;
            for &j in &row_cols[i] {
                let c = &lp.cols[j];
                if used[j] || c.idx.iter().any(|&r| crashed[r]) {
                    continue;
                }
                let a = c.idx.iter().zip(&c.val).find(|(&r, _)| r == i).map(|(_, &v)| v.abs()).unwrap_or(0.0);
                if a < 1e-7 {
                    continue;
                }
                let key = (ineq_count[j], c.len(), a, j);
                let better = match best {
                    None => true,
                    Some(b) => (key.0, key.1) < (b.0, b.1) || ((key.0, key.1) == (b.0, b.1) && (key.2 > b.2 || (key.2 == b.2 && key.3 < b.3))),
                };
                if better {
                    best = Some(key);
                }
            }
            if let Some((_, _, _, j)) = best {
                head[i] = j;
                crashed[i] = true;
                used[j] = true;
                progress = true;
            }
        }
    }
    head
}

fn distinct(cols: &[usize], total: usize) -> bool {
    let mut seen = vec![false; total];
    cols.iter().all(|&j| !std::mem::replace(&mut seen[j], true))
}

pub fn solve(lp: &StandardLp) -> SimplexOutcome {
    let m = lp.n_rows;
    let n = lp.cols.len();
    let max_iter = 50 * (m + n) + 1000;

    let head = match &lp.start {
        Some(start) if start.len() == m && start.iter().all(|&j| j < n + m) && distinct(start, n + m) => start.clone(),
        _ => crash(lp),
    };
    let mut is_basic = vec![false; n + m];
    for &j in &head {
        is_basic[j] = true;
    }
    let upper = (0..n + m).map(|j| if j >= n && lp.is_eq[j - n] { 0.0 } else { f64::INFINITY }).collect();
    let cost = lp.cost.iter().copied().chain(std::iter::repeat(0.0).take(m)).collect();
    let mut s = Solver {
        lp,
        m,
        cols: Columns::new(lp),
        upper,
        cost,
        head,
        is_basic,
        lu: LuFactors::default(),
        etas: Vec::new(),
        x_b: Vec::new(),
        scratch: Vec::new(),
    };
    s.refactor();

    let mut y = vec![0.0; m];
    let mut alpha = vec![0.0; m];
    let mut degenerate_run = 0usize;
    let mut bland = false;
    let mut iterations = 0usize;
    let mut verified_refactors = 0usize;

    loop {
        if iterations >= max_iter {
            return SimplexOutcome::Stall { iterations };
        }

        // Phase selection and basic costs.
        let mut infeasible = false;
        for pos in 0..m {
            let v = s.violation(pos);
            y[pos] = if v < 0.0 {
                infeasible = true;
                1.0
            } else if v > 0.0 {
                infeasible = true;
                -1.0
            } else {
                0.0
            };
        }
        if !infeasible {
            for (y, &j) in y.iter_mut().zip(&s.head) {
                *y = s.cost[j];
            }
        }
        s.btran(&mut y);

        // Pricing.
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..n + m {
            if s.is_basic[j] || s.upper[j] == 0.0 {
                continue;
            }
            let (idx, val) = s.cols.get(j);
            let mut d = if infeasible { 0.0 } else { s.cost[j] };
            for (&i, &a) in idx.iter().zip(val) {
                d -= y[i] * a;
            }
            if d > OPT_TOL {
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, bd)| d > bd) {
                    entering = Some((j, d));
                }
            }
        }

        let Some((q, _)) = entering else {
            if infeasible {
                return SimplexOutcome::Infeasible { iterations };
            }
            // Confirm optimality on a fresh factorization before reporting.
            if !s.etas.is_empty() && verified_refactors < 3 {
                verified_refactors += 1;
                s.refactor();
                continue;
            }
            let mut x = vec![0.0; n];
            for (pos, &j) in s.head.iter().enumerate() {
                if j < n {
                    x[j] = s.x_b[pos].max(0.0);
                }
            }
            let objective = x.iter().zip(&lp.cost).map(|(x, c)| x * c).sum();
            return SimplexOutcome::Optimal { x, objective, iterations };
        };

        alpha.iter_mut().for_each(|a| *a = 0.0);
        let (idx, val) = s.cols.get(q);
        for (&i, &v) in idx.iter().zip(val) {
            alpha[i] = v;
        }
        s.ftran(&mut alpha);

        // Ratio test. Each basic variable moves as x_i - alpha_i * t and is
        // stopped at the bound it would cross next (its violated bound, when
        // infeasible).
        let blocking = |pos: usize, s: &Solver| -> Option<f64> {
            let a = alpha[pos];
            if a.abs() <= PIVOT_TOL {
                return None;
            }
            let v = s.x_b[pos];
            let hi = s.upper[s.head[pos]];
            if a > 0.0 {
                if v > hi + FEAS_TOL {
                    Some((v - hi).max(0.0))
                } else if v >= -FEAS_TOL {
                    Some(v.max(0.0))
                } else {
                    None
                }
            } else if v < -FEAS_TOL {
                Some(-v)
            } else if hi.is_finite() && v <= hi + FEAS_TOL {
                Some((hi - v).max(0.0))
            } else {
                None
            }
        };

        let mut leave: Option<usize> = None;
        if bland {
            let mut best: Option<(f64, usize, usize)> = None;
            for pos in 0..m {
                if let Some(dist) = blocking(pos, &s) {
                    let ratio = dist / alpha[pos].abs();
                    let key = (ratio, s.head[pos], pos);
                    if best.is_none_or(|b| key.0 < b.0 || (key.0 == b.0 && key.1 < b.1)) {
                        best = Some(key);
                    }
                }
            }
            leave = best.map(|b| b.2);
        } else {
            let mut t_max = f64::INFINITY;
            for pos in 0..m {
                if let Some(dist) = blocking(pos, &s) {
                    t_max = t_max.min((dist + FEAS_TOL) / alpha[pos].abs());
                }
            }
            if t_max.is_finite() {
                let mut best_abs = 0.0;
                for pos in 0..m {
                    if let Some(dist) = blocking(pos, &s) {
                        let a = alpha[pos].abs();
                        if dist / a <= t_max && a > best_abs {
                            best_abs = a;
                            leave = Some(pos);
                        }
                    }
                }
            }
        }

        let Some(r) = leave else {
            if infeasible {
                return SimplexOutcome::Stall { iterations };
            }
            return SimplexOutcome::Unbounded { iterations };
        };

        let step = blocking(r, &s).unwrap() / alpha[r].abs();
        for pos in 0..m {
            if alpha[pos] != 0.0 {
                s.x_b[pos] -= alpha[pos] * step;
            }
        }
        s.x_b[r] = step;
        s.is_basic[s.head[r]] = false;
        s.is_basic[q] = true;
        s.head[r] = q;
        s.etas.push(Eta::new(r, &alpha));
        iterations += 1;

        if step <= 1e-12 {
            degenerate_run += 1;
            if degenerate_run > 2 * (n + m) {
                bland = true;
            }
        } else {
            degenerate_run = 0;
            bland = false;
        }

        if s.etas.len() >= REFACTOR_EVERY {
            s.refactor();
        }
    }
}
