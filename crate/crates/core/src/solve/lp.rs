//! Dense two-phase simplex.
//!
//! The general-form program
//!
//! ```text
//!     minimize    cᵀx
//!     subject to  A_ub x ≤ b_ub,  A_eq x = b_eq,  l ≤ x ≤ u
//! ```
//!
//! is rewritten in standard form (shifted / reflected / split variables,
//! slack columns, an explicit row for every doubly bounded variable), solved
//! with a tableau simplex (Dantzig pricing, Bland's rule after a run of
//! degenerate pivots), and the final basis is refactorized against the
//! original data to recover an accurate primal point and the multipliers.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{Multipliers, SolveError, SolveReport, Status};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    /// `-inf` for no lower bound.
    pub lower: Vec<f64>,
    /// `+inf` for no upper bound.
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// `min cᵀx` over `x ≥ 0`, no rows yet.
    pub fn new(cost: Vec<f64>) -> Self {
        let n = cost.len();
        Self {
            cost,
            a_ub: Vec::new(),
            b_ub: Vec::new(),
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row.into_iter().map(|v| -v).collect());
        self.b_ub.push(-rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn set_free(&mut self, j: usize) {
        self.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
    }

    fn validate(&self) -> Result<(), SolveError> {
        let n = self.num_vars();
        let mismatch = |got: usize| SolveError::DimensionMismatch { expected: n, got };
        if self.lower.len() != n {
            return Err(mismatch(self.lower.len()));
        }
        if self.upper.len() != n {
            return Err(mismatch(self.upper.len()));
        }
        for row in self.a_ub.iter().chain(&self.a_eq) {
            if row.len() != n {
                return Err(mismatch(row.len()));
            }
        }
        if self.a_ub.len() != self.b_ub.len() || self.a_eq.len() != self.b_eq.len() {
            return Err(SolveError::DimensionMismatch {
                expected: self.a_ub.len() + self.a_eq.len(),
                got: self.b_ub.len() + self.b_eq.len(),
            });
        }
        let finite = self.cost.iter().all(|v| v.is_finite())
            && self.a_ub.iter().flatten().all(|v| v.is_finite())
            && self.a_eq.iter().flatten().all(|v| v.is_finite())
            && self.b_ub.iter().chain(&self.b_eq).all(|v| v.is_finite())
            && self.lower.iter().all(|v| *v != f64::INFINITY && !v.is_nan())
            && self.upper.iter().all(|v| *v != f64::NEG_INFINITY && !v.is_nan());
        if !finite {
            return Err(SolveError::NonFiniteValue("LP data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// x = l + x'
    Shift { col: usize, l: f64 },
    /// x = u − x'
    Reflect { col: usize, u: f64 },
    /// x = x⁺ − x⁻
    Split { pos: usize, neg: usize },
    /// x = l + x', with the extra row x' ≤ u − l
    Boxed { col: usize, l: f64, row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Origin {
    Ub(usize),
    Eq(usize),
    Bound,
}

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;

struct Tableau {
    /// rows × (cols + 1); last column is the right-hand side
    t: Vec<Vec<f64>>,
    /// reduced costs, length cols
    d: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterLimit,
}

impl Tableau {
    fn rhs(&self, r: usize) -> f64 {
        self.t[r][self.cols]
    }

    fn pivot(&mut self, r: usize, e: usize) {
        let p = self.t[r][e];
        for v in self.t[r].iter_mut() {
            *v /= p;
        }
        self.t[r][e] = 1.0;
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[e];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[e] = 0.0;
            }
        }
        let f = self.d[e];
        if f != 0.0 {
            for (v, pv) in self.d.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.d[e] = 0.0;
        }
        self.basis[r] = e;
    }

    fn price(&mut self, cost: &[f64]) {
        self.d = cost.to_vec();
        for r in 0..self.t.len() {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for j in 0..self.cols {
                    self.d[j] -= cb * self.t[r][j];
                }
            }
        }
    }

    fn run(&mut self, allowed: &dyn Fn(usize) -> bool, max_iter: usize, iters: &mut usize) -> Outcome {
        let scale = self.d.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let mut degenerate_run = 0usize;
        loop {
            if *iters >= max_iter {
                return Outcome::IterLimit;
            }
            let bland = degenerate_run > 30;
            let mut entering = None;
            let mut best = -COST_TOL * scale;
            for j in 0..self.cols {
                if !allowed(j) {
                    continue;
                }
                if self.d[j] < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = self.d[j];
                }
            }
            let Some(e) = entering else {
                return Outcome::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][e];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                        let better = if tie {
                            if bland {
                                self.basis[r] < self.basis[lr]
                            } else {
                                a > self.t[lr][e]
                            }
                        } else {
                            ratio < lratio
                        };
                        if better {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return Outcome::Unbounded;
            };
            if ratio <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, e);
            *iters += 1;
        }
    }
}

pub fn solve_lp(lp: &LinearProgram) -> Result<SolveReport, SolveError> {
    let start = Instant::now();
    lp.validate()?;
    let n = lp.num_vars();

    // structural columns
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0usize;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new(); // (col, width)
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        let m = match (l.is_finite(), u.is_finite()) {
            (true, true) => {
                bound_rows.push((ncols, u - l));
                VarMap::Boxed {
                    col: ncols,
                    l,
                    row: bound_rows.len() - 1,
                }
            }
            (true, false) => VarMap::Shift { col: ncols, l },
            (false, true) => VarMap::Reflect { col: ncols, u },
            (false, false) => {
                ncols += 1;
                VarMap::Split {
                    pos: ncols - 1,
                    neg: ncols,
                }
            }
        };
        ncols += 1;
        maps.push(m);
    }
    let n_struct = ncols;

    // rows: ub rows, eq rows, bound rows
    let mut rows: Vec<(Vec<f64>, f64, Origin)> = Vec::new();
    let substitute = |a: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut row = vec![0.0; n_struct];
        let mut rhs = rhs;
        for (j, &aj) in a.iter().enumerate() {
            if aj == 0.0 {
                continue;
            }
            match maps[j] {
                VarMap::Shift { col, l } | VarMap::Boxed { col, l, .. } => {
                    row[col] += aj;
                    rhs -= aj * l;
                }
                VarMap::Reflect { col, u } => {
                    row[col] -= aj;
                    rhs -= aj * u;
                }
                VarMap::Split { pos, neg } => {
                    row[pos] += aj;
                    row[neg] -= aj;
                }
            }
        }
        (row, rhs)
    };
    for (i, a) in lp.a_ub.iter().enumerate() {
        let (row, rhs) = substitute(a, lp.b_ub[i]);
        rows.push((row, rhs, Origin::Ub(i)));
    }
    for (i, a) in lp.a_eq.iter().enumerate() {
        let (row, rhs) = substitute(a, lp.b_eq[i]);
        rows.push((row, rhs, Origin::Eq(i)));
    }
    for &(col, width) in &bound_rows {
        let mut row = vec![0.0; n_struct];
        row[col] = 1.0;
        rows.push((row, width, Origin::Bound));
    }
    let m = rows.len();

    // slack columns for every ≤ row
    let mut slack_of = vec![None; m];
    for (r, (_, _, origin)) in rows.iter().enumerate() {
        if !matches!(origin, Origin::Eq(_)) {
            slack_of[r] = Some(ncols);
            ncols += 1;
        }
    }
    let n_real = ncols;

    // dense standard-form matrix with rows flipped to b ≥ 0
    let mut a_std = DMatrix::<f64>::zeros(m, n_real);
    let mut b_std = DVector::<f64>::zeros(m);
    let mut flip = vec![1.0; m];
    for (r, (row, rhs, _)) in rows.iter().enumerate() {
        let s = if *rhs < 0.0 { -1.0 } else { 1.0 };
        flip[r] = s;
        for (j, v) in row.iter().enumerate() {
            a_std[(r, j)] = s * v;
        }
        if let Some(sc) = slack_of[r] {
            a_std[(r, sc)] = s;
        }
        b_std[r] = s * rhs;
    }
    let mut c_std = vec![0.0; n_real];
    for (j, map) in maps.iter().enumerate() {
        let c = lp.cost[j];
        match *map {
            VarMap::Shift { col, .. } | VarMap::Boxed { col, .. } => c_std[col] = c,
            VarMap::Reflect { col, .. } => c_std[col] = -c,
            VarMap::Split { pos, neg } => {
                c_std[pos] = c;
                c_std[neg] = -c;
            }
        }
    }

    // initial basis: unflipped slacks, artificials elsewhere
    let mut basis = vec![0usize; m];
    let mut n_art = 0usize;
    for r in 0..m {
        match slack_of[r] {
            Some(sc) if flip[r] > 0.0 => basis[r] = sc,
            _ => {
                basis[r] = n_real + n_art;
                n_art += 1;
            }
        }
    }
    let cols = n_real + n_art;
    let mut t = vec![vec![0.0; cols + 1]; m];
    for r in 0..m {
        for j in 0..n_real {
            t[r][j] = a_std[(r, j)];
        }
        if basis[r] >= n_real {
            t[r][basis[r]] = 1.0;
        }
        t[r][cols] = b_std[r];
    }
    let mut tab = Tableau {
        t,
        d: vec![0.0; cols],
        basis,
        cols,
    };
    let max_iter = 50 * (m + cols) + 1000;
    let mut iters = 0usize;
    let b_scale = b_std.iter().fold(1.0_f64, |a, v| a.max(v.abs()));

    let fail = |status: Status, iters: usize| SolveReport {
        status,
        point: vec![0.0; n],
        multipliers: Multipliers::default(),
        objective: f64::NAN,
        iterations: iters,
        wall_time: start.elapsed(),
    };

    // phase 1
    let mut removed = vec![false; m];
    if n_art > 0 {
        let mut c1 = vec![0.0; cols];
        c1[n_real..].iter_mut().for_each(|c| *c = 1.0);
        tab.price(&c1);
        match tab.run(&|_| true, max_iter, &mut iters) {
            Outcome::Optimal => {}
            Outcome::IterLimit => return Ok(fail(Status::IterLimit, iters)),
            Outcome::Unbounded => unreachable!("phase one objective is bounded below"),
        }
        let infeas: f64 = (0..m).filter(|&r| tab.basis[r] >= n_real).map(|r| tab.rhs(r)).sum();
        if infeas > 1e-9 * b_scale {
            return Ok(fail(Status::Infeasible, iters));
        }
        for r in 0..m {
            if tab.basis[r] < n_real {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n_real {
                let a = tab.t[r][j].abs();
                if a > PIVOT_TOL && best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            match best {
                Some((j, _)) => tab.pivot(r, j),
                None => removed[r] = true,
            }
        }
    }

    // phase 2
    let mut c2 = c_std.clone();
    c2.resize(cols, 0.0);
    tab.price(&c2);
    match tab.run(&|j| j < n_real, max_iter, &mut iters) {
        Outcome::Optimal => {}
        Outcome::Unbounded => return Ok(fail(Status::Unbounded, iters)),
        Outcome::IterLimit => return Ok(fail(Status::IterLimit, iters)),
    }

    // refactorize the final basis against the original data
    let live: Vec<usize> = (0..m).filter(|&r| !removed[r]).collect();
    let k = live.len();
    let bmat = DMatrix::from_fn(k, k, |i, j| a_std[(live[i], tab.basis[live[j]])]);
    let bvec = DVector::from_fn(k, |i, _| b_std[live[i]]);
    let cb = DVector::from_fn(k, |i, _| c_std[tab.basis[live[i]]]);
    let lu = bmat.clone().lu();
    // nalgebra's triangular solves underflow on an empty basis
    let solved = if k == 0 {
        (Some(DVector::zeros(0)), Some(DVector::zeros(0)))
    } else {
        (lu.solve(&bvec), bmat.transpose().lu().solve(&cb))
    };
    let (xb, pi) = match solved {
        (Some(xb), Some(pi)) => (xb, pi),
        _ => {
            // keep the tableau values if the basis is numerically singular
            let xb = DVector::from_fn(k, |i, _| tab.rhs(live[i]));
            let pi = DVector::zeros(k);
            (xb, pi)
        }
    };
    let mut x_std = vec![0.0; n_real];
    for (i, &r) in live.iter().enumerate() {
        x_std[tab.basis[r]] = xb[i];
    }
    let mut y_std = vec![0.0; m];
    for (i, &r) in live.iter().enumerate() {
        y_std[r] = pi[i];
    }
    let mut is_basic = vec![false; n_real];
    for &r in &live {
        is_basic[tab.basis[r]] = true;
    }

    // row multipliers in the original sign convention (μ ≥ 0 for ≤ rows)
    let mut row_mult = vec![0.0; m];
    for r in 0..m {
        let basic_slack = slack_of[r].is_some_and(|sc| is_basic[sc]);
        if !basic_slack {
            row_mult[r] = -flip[r] * y_std[r];
        }
    }
    let reduced = |col: usize| -> f64 {
        if is_basic[col] {
            return 0.0;
        }
        let mut rc = c_std[col];
        for r in 0..m {
            rc -= y_std[r] * a_std[(r, col)];
        }
        rc
    };

    let mut point = vec![0.0; n];
    let mut lower_mult = vec![0.0; n];
    let mut upper_mult = vec![0.0; n];
    let n_ub = lp.a_ub.len();
    let n_eq = lp.a_eq.len();
    let bound_row0 = n_ub + n_eq;
    for (j, map) in maps.iter().enumerate() {
        match *map {
            VarMap::Shift { col, l } => {
                point[j] = l + x_std[col];
                lower_mult[j] = reduced(col);
            }
            VarMap::Reflect { col, u } => {
                point[j] = u - x_std[col];
                upper_mult[j] = reduced(col);
            }
            VarMap::Split { pos, neg } => point[j] = x_std[pos] - x_std[neg],
            VarMap::Boxed { col, l, row } => {
                point[j] = l + x_std[col];
                lower_mult[j] = reduced(col);
                upper_mult[j] = row_mult[bound_row0 + row];
            }
        }
    }
    let objective = lp.cost.iter().zip(&point).map(|(c, x)| c * x).sum();

    Ok(SolveReport {
        status: Status::Optimal,
        point,
        multipliers: Multipliers {
            ineq: row_mult[..n_ub].to_vec(),
            eq: row_mult[n_ub..n_ub + n_eq].to_vec(),
            lower: lower_mult,
            upper: upper_mult,
        },
        objective,
        iterations: iters,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_lower_bound() {
        // min x s.t. x ≥ 1
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_free(0);
        lp.add_ge(vec![1.0], 1.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.point[0] - 1.0).abs() < 1e-12);
        assert!((r.multipliers.ineq[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn maximize_with_cap() {
        // min −y s.t. −y ≥ −1, y ≥ 0
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.add_ge(vec![-1.0], -1.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.point[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_lp_duals_follow_bound_convention() {
        // min y over y ≤ 0 (row), −10 ≤ y ≤ 10
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.set_bounds(0, -10.0, 10.0);
        lp.add_le(vec![1.0], 0.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.point, vec![-10.0]);
        assert_eq!(r.objective, -10.0);
        assert_eq!(r.multipliers.ineq, vec![0.0]);
        assert!((r.multipliers.lower[0] - 1.0).abs() < 1e-14);
        assert_eq!(r.multipliers.upper[0], 0.0);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_le(vec![1.0], -1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, Status::Infeasible);

        let mut lp = LinearProgram::new(vec![-1.0, 0.0]);
        lp.add_le(vec![-1.0, 1.0], 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, Status::Unbounded);
    }

    #[test]
    fn equality_and_redundant_rows() {
        // x + y = 2 twice, min x − y, x,y ≥ 0
        let mut lp = LinearProgram::new(vec![1.0, -1.0]);
        lp.add_eq(vec![1.0, 1.0], 2.0);
        lp.add_eq(vec![2.0, 2.0], 4.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let mut lp = LinearProgram::new(vec![1.0, 2.0]);
        lp.add_le(vec![1.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(SolveError::DimensionMismatch { .. })));
    }
}
