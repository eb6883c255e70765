//! Primal active-set method for convex quadratic programs
//!
//! ```text
//!     minimize    ½ xᵀHx + gᵀx
//!     subject to  A_ub x ≤ b_ub,  A_eq x = b_eq,  l ≤ x ≤ u
//! ```
//!
//! Simple bounds are handled by fixing variables rather than as rows, so the
//! KKT systems only involve the free variables and the working rows. `H` is
//! expected to be positive semidefinite; when it is not positive definite a
//! small diagonal shift is added, so semidefinite problems are solved up to a
//! perturbation of that order and the method never reports `Unbounded`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{solve_lp, LinearProgram, Multipliers, SolveError, SolveReport, Status};
use crate::linalg::{dot, norm_inf, OrthoBasis};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Starting strategy for [`solve_qp_from`].
#[derive(Debug, Clone, PartialEq)]
pub enum QpStart {
    /// Find a feasible point with a phase-one LP first.
    Cold,
    /// Start from a point that satisfies the constraints; the constraints
    /// active there form the initial working set. Falls back to `Cold` if the
    /// point is noticeably infeasible.
    Feasible(Vec<f64>),
}

impl QuadraticProgram {
    /// Unconstrained problem with free variables.
    pub fn new(hessian: DMatrix<f64>, linear: Vec<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            a_ub: Vec::new(),
            b_ub: Vec::new(),
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.hessian * &xv)) + dot(&self.linear, x)
    }

    fn validate(&self) -> Result<(), SolveError> {
        let n = self.num_vars();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(SolveError::DimensionMismatch {
                expected: n,
                got: self.hessian.nrows(),
            });
        }
        if !self.hessian.iter().all(|v| v.is_finite()) {
            return Err(SolveError::NonFiniteValue("QP Hessian".into()));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| l > u) {
            return Ok(()); // reported as infeasible by the phase-one LP
        }
        Ok(())
    }

    fn as_lp(&self) -> LinearProgram {
        LinearProgram {
            cost: vec![0.0; self.num_vars()],
            a_ub: self.a_ub.clone(),
            b_ub: self.b_ub.clone(),
            a_eq: self.a_eq.clone(),
            b_eq: self.b_eq.clone(),
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        }
    }
}

pub fn solve_qp(qp: &QuadraticProgram) -> Result<SolveReport, SolveError> {
    solve_qp_from(qp, QpStart::Cold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fixed {
    Free,
    Lower,
    Upper,
    /// l = u
    Both,
}

fn regularized_hessian(h: &DMatrix<f64>) -> DMatrix<f64> {
    if h.clone().cholesky().is_some() {
        return h.clone();
    }
    let scale = (0..h.nrows()).fold(1.0_f64, |m, i| m.max(h[(i, i)].abs()));
    let mut delta = 1e-10 * scale;
    loop {
        let mut hr = h.clone();
        for i in 0..h.nrows() {
            hr[(i, i)] += delta;
        }
        if hr.clone().cholesky().is_some() {
            return hr;
        }
        delta *= 10.0;
    }
}

pub fn solve_qp_from(qp: &QuadraticProgram, start: QpStart) -> Result<SolveReport, SolveError> {
    let started = Instant::now();
    qp.validate()?;
    let n = qp.num_vars();
    let n_ub = qp.a_ub.len();
    let n_eq = qp.a_eq.len();
    let row = |k: usize| -> (&[f64], f64) {
        if k < n_ub {
            (&qp.a_ub[k], qp.b_ub[k])
        } else {
            (&qp.a_eq[k - n_ub], qp.b_eq[k - n_ub])
        }
    };
    let report = |status, point: Vec<f64>, multipliers, iterations| SolveReport {
        objective: if status == Status::Optimal {
            qp.objective(&point)
        } else {
            f64::NAN
        },
        status,
        point,
        multipliers,
        iterations,
        wall_time: started.elapsed(),
    };

    let feasible_start = match start {
        QpStart::Feasible(x) if x.len() == n && is_nearly_feasible(qp, &x) => Some(x),
        QpStart::Feasible(x) if x.len() != n => {
            return Err(SolveError::DimensionMismatch {
                expected: n,
                got: x.len(),
            })
        }
        _ => None,
    };
    let mut x = match feasible_start {
        Some(x) => x,
        None => {
            let lp = solve_lp(&qp.as_lp())?;
            if lp.status != Status::Optimal {
                return Ok(report(lp.status, vec![0.0; n], Multipliers::default(), 0));
            }
            lp.point
        }
    };

    let h = regularized_hessian(&qp.hessian);

    // initial working set: active bounds, then active rows that stay independent
    let mut fixed = vec![Fixed::Free; n];
    for j in 0..n {
        let (l, u) = (qp.lower[j], qp.upper[j]);
        let tol = 1e-12 * (1.0 + x[j].abs());
        if l == u {
            fixed[j] = Fixed::Both;
            x[j] = l;
        } else if x[j] <= l + tol {
            fixed[j] = Fixed::Lower;
            x[j] = l;
        } else if x[j] >= u - tol {
            fixed[j] = Fixed::Upper;
            x[j] = u;
        }
    }
    let mut work: Vec<usize> = Vec::new();
    {
        let mut basis = OrthoBasis::new();
        let restricted = |a: &[f64], fixed: &[Fixed]| -> Vec<f64> {
            a.iter()
                .zip(fixed)
                .map(|(v, f)| if *f == Fixed::Free { *v } else { 0.0 })
                .collect()
        };
        let candidates = (n_ub..n_ub + n_eq).chain(0..n_ub);
        for k in candidates {
            let (a, b) = row(k);
            let r = dot(a, &x) - b;
            let tol = 1e-12 * (1.0 + b.abs() + norm_inf(a) * norm_inf(&x));
            let active = k >= n_ub || r >= -tol;
            if active && basis.try_add(&restricted(a, &fixed), 1e-10) {
                work.push(k);
            }
        }
    }

    let max_iter = 10 * (n + n_ub + n_eq) + 100;
    let mut iterations = 0;
    let mut at_subspace_min = false;
    loop {
        if iterations >= max_iter {
            return Ok(report(Status::IterLimit, x, Multipliers::default(), iterations));
        }
        iterations += 1;

        let free: Vec<usize> = (0..n).filter(|&j| fixed[j] == Fixed::Free).collect();
        let nf = free.len();
        let w = work.len();
        let xv = DVector::from_column_slice(&x);
        let grad: Vec<f64> = (&h * &xv).iter().zip(&qp.linear).map(|(a, b)| a + b).collect();

        let dim = nf + w;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = h[(i, j)];
            }
            rhs[a] = -grad[i];
        }
        for (r, &k) in work.iter().enumerate() {
            let (arow, _) = row(k);
            for (a, &j) in free.iter().enumerate() {
                kkt[(nf + r, a)] = arow[j];
                kkt[(a, nf + r)] = arow[j];
            }
        }
        let solved = if dim == 0 {
            Some(DVector::zeros(0))
        } else {
            kkt.lu().solve(&rhs)
        };
        let Some(sol) = solved else {
            return Ok(report(Status::Stalled, x, Multipliers::default(), iterations));
        };
        let mut p = vec![0.0; n];
        for (a, &j) in free.iter().enumerate() {
            p[j] = sol[a];
        }
        let lambda: Vec<f64> = (0..w).map(|r| sol[nf + r]).collect();

        let pnorm = norm_inf(&p);
        if at_subspace_min || pnorm <= 1e-12 * (1.0 + norm_inf(&x)) {
            // multipliers of the fixed bounds from the stationarity residual
            let mut resid = grad.clone();
            for (r, &k) in work.iter().enumerate() {
                let (arow, _) = row(k);
                for j in 0..n {
                    resid[j] += lambda[r] * arow[j];
                }
            }
            // lowest index with a negative multiplier leaves: rows first, then bounds
            let dtol = 1e-10 * (1.0 + norm_inf(&grad));
            let mut leaving: Option<(usize, Drop)> = None;
            for (r, &k) in work.iter().enumerate() {
                if k < n_ub && lambda[r] < -dtol && leaving.is_none_or(|(lk, _)| k < lk) {
                    leaving = Some((k, Drop::Row(r)));
                }
            }
            if leaving.is_none() {
                leaving = (0..n)
                    .find(|&j| match fixed[j] {
                        Fixed::Lower => resid[j] < -dtol,
                        Fixed::Upper => -resid[j] < -dtol,
                        _ => false,
                    })
                    .map(|j| (j, Drop::Bound(j)));
            }
            match leaving {
                Some((_, Drop::Row(r))) => {
                    work.remove(r);
                    at_subspace_min = false;
                    continue;
                }
                Some((_, Drop::Bound(j))) => {
                    fixed[j] = Fixed::Free;
                    at_subspace_min = false;
                    continue;
                }
                None => {}
            }
            let mut mult = Multipliers {
                ineq: vec![0.0; n_ub],
                eq: vec![0.0; n_eq],
                lower: vec![0.0; n],
                upper: vec![0.0; n],
            };
            for (r, &k) in work.iter().enumerate() {
                if k < n_ub {
                    mult.ineq[k] = lambda[r];
                } else {
                    mult.eq[k - n_ub] = lambda[r];
                }
            }
            for j in 0..n {
                match fixed[j] {
                    Fixed::Lower => mult.lower[j] = resid[j],
                    Fixed::Upper => mult.upper[j] = -resid[j],
                    Fixed::Both if resid[j] >= 0.0 => mult.lower[j] = resid[j],
                    Fixed::Both => mult.upper[j] = -resid[j],
                    Fixed::Free => {}
                }
            }
            return Ok(report(Status::Optimal, x, mult, iterations));
        }

        // ratio test
        let mut alpha = 1.0;
        let mut blocking: Option<Block> = None;
        for k in 0..n_ub {
            if work.contains(&k) {
                continue;
            }
            let (a, b) = row(k);
            let ap = dot(a, &p);
            if ap <= 1e-12 * crate::linalg::norm2(a) * crate::linalg::norm2(&p) {
                continue;
            }
            let step = (b - dot(a, &x)).max(0.0) / ap;
            if step < alpha {
                alpha = step;
                blocking = Some(Block::Row(k));
            }
        }
        for &j in &free {
            let pj = p[j];
            if pj < 0.0 && qp.lower[j].is_finite() {
                let step = (x[j] - qp.lower[j]).max(0.0) / -pj;
                if step < alpha {
                    alpha = step;
                    blocking = Some(Block::Lower(j));
                }
            } else if pj > 0.0 && qp.upper[j].is_finite() {
                let step = (qp.upper[j] - x[j]).max(0.0) / pj;
                if step < alpha {
                    alpha = step;
                    blocking = Some(Block::Upper(j));
                }
            }
        }
        for j in 0..n {
            x[j] += alpha * p[j];
        }
        match blocking {
            None => at_subspace_min = true,
            Some(Block::Row(k)) => {
                work.push(k);
                at_subspace_min = false;
            }
            Some(Block::Lower(j)) => {
                x[j] = qp.lower[j];
                fixed[j] = Fixed::Lower;
                at_subspace_min = false;
            }
            Some(Block::Upper(j)) => {
                x[j] = qp.upper[j];
                fixed[j] = Fixed::Upper;
                at_subspace_min = false;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Drop {
    Row(usize),
    Bound(usize),
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

fn is_nearly_feasible(qp: &QuadraticProgram, x: &[f64]) -> bool {
    let scale = 1.0 + norm_inf(x);
    let tol = 1e-7 * scale;
    let rows_ok = qp
        .a_ub
        .iter()
        .zip(&qp.b_ub)
        .all(|(a, b)| dot(a, x) - b <= tol * (1.0 + b.abs()));
    let eq_ok = qp
        .a_eq
        .iter()
        .zip(&qp.b_eq)
        .all(|(a, b)| (dot(a, x) - b).abs() <= tol * (1.0 + b.abs()));
    let bounds_ok = x
        .iter()
        .zip(qp.lower.iter().zip(&qp.upper))
        .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol);
    rows_ok && eq_ok && bounds_ok
}
