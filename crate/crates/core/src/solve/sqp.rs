//! SQP with an ℓ1 merit line search.
//!
//! Each iteration solves an elastic QP in the step `d`: the exact Lagrangian
//! Hessian plus a Levenberg shift, linearized constraints, slacks (penalized
//! in the QP objective) only on rows violated at the current point, and a box
//! `‖d‖∞ ≤ Δ`. Inequalities that are affine in a single variable are treated
//! as simple bounds: the start is projected onto them and every step keeps
//! them satisfied.
//!
//! Convergence is tested at the current iterate with the QP multipliers, so an
//! `Optimal` report always refers to a point where stationarity, feasibility
//! and complementarity hold to `tol`.

use std::time::Instant;

use nalgebra::DMatrix;

use super::{solve_qp_from, Multipliers, QpStart, QuadraticProgram, SolveError, SolveReport, Status};
use crate::linalg::{dot, norm_inf};
use crate::reform::Nlp;

#[derive(Debug, Clone, PartialEq)]
pub struct SqpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial trust box half-width.
    pub initial_radius: f64,
    pub max_radius: f64,
    /// Print one line per iteration to standard error.
    pub verbose: bool,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            initial_radius: 10.0,
            max_radius: 1e3,
            verbose: false,
        }
    }
}

/// One accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iter: usize,
    pub penalty: f64,
    /// ℓ1 merit before and after the step, both at `penalty`.
    pub merit_before: f64,
    pub merit_after: f64,
    /// Constraint violation before the step.
    pub feasibility: f64,
    /// Stationarity residual before the step.
    pub stationarity: f64,
    /// `α‖d‖∞`
    pub step: f64,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;
const MIN_RADIUS: f64 = 1e-10;
const ZERO_ROW: f64 = 1e-14;

/// Simple bound derived from an inequality `a·x_j + b ≤ 0`.
#[derive(Debug, Clone, Copy)]
struct BoundSource {
    row: usize,
    coef: f64,
}

struct Structure {
    /// Inequality rows handled as general linearized rows.
    general: Vec<usize>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_src: Vec<Option<BoundSource>>,
    upper_src: Vec<Option<BoundSource>>,
    ineq_vars: Vec<Vec<usize>>,
    eq_vars: Vec<Vec<usize>>,
    obj_vars: Vec<usize>,
    ineq_affine: Vec<bool>,
    eq_affine: Vec<bool>,
}

fn analyze(nlp: &Nlp) -> Result<Structure, SolveError> {
    let n = nlp.dim;
    let zero = vec![0.0; n];
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    let mut lower_src = vec![None; n];
    let mut upper_src = vec![None; n];
    let ineq_vars: Vec<Vec<usize>> = nlp.ineq.iter().map(|e| e.variables()).collect();
    let ineq_affine: Vec<bool> = nlp.ineq.iter().map(|e| e.is_affine()).collect();
    let mut candidates = vec![false; nlp.ineq.len()];
    for (i, c) in nlp.ineq.iter().enumerate() {
        if !ineq_affine[i] || ineq_vars[i].len() != 1 {
            continue;
        }
        let j = ineq_vars[i][0];
        let jet = c.jet(&zero, &[j], false)?;
        let (a, b) = (jet.grad[0], jet.value);
        if a == 0.0 {
            continue;
        }
        candidates[i] = true;
        let bound = -b / a;
        let src = Some(BoundSource { row: i, coef: a });
        if a > 0.0 && bound < upper[j] {
            upper[j] = bound;
            upper_src[j] = src;
        } else if a < 0.0 && bound > lower[j] {
            lower[j] = bound;
            lower_src[j] = src;
        }
    }
    // conflicting bounds stay general rows
    let mut general = Vec::new();
    for (i, &cand) in candidates.iter().enumerate() {
        if cand {
            let j = ineq_vars[i][0];
            if lower[j] <= upper[j] {
                continue;
            }
        }
        general.push(i);
    }
    for j in 0..n {
        if lower[j] > upper[j] {
            lower[j] = f64::NEG_INFINITY;
            upper[j] = f64::INFINITY;
            lower_src[j] = None;
            upper_src[j] = None;
        }
    }
    Ok(Structure {
        general,
        lower,
        upper,
        lower_src,
        upper_src,
        ineq_vars,
        eq_vars: nlp.eq.iter().map(|e| e.variables()).collect(),
        obj_vars: nlp.objective.variables(),
        ineq_affine,
        eq_affine: nlp.eq.iter().map(|e| e.is_affine()).collect(),
    })
}

/// Values and gradients at a point.
struct Local {
    f: f64,
    grad_f: Vec<f64>,
    c: Vec<f64>,
    jac_c: Vec<Vec<f64>>,
    h: Vec<f64>,
    jac_h: Vec<Vec<f64>>,
}

fn scatter(dim: usize, vars: &[usize], local: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    for (&v, &x) in vars.iter().zip(local) {
        g[v] = x;
    }
    g
}

fn scatter_hess(h: &mut DMatrix<f64>, vars: &[usize], jet_hess: &[f64], weight: f64) {
    let k = vars.len();
    for a in 0..k {
        for b in 0..k {
            h[(vars[a], vars[b])] += weight * jet_hess[a * k + b];
        }
    }
}

/// Evaluates values and gradients, and accumulates the Lagrangian Hessian
/// with the given multipliers.
fn evaluate(
    nlp: &Nlp,
    st: &Structure,
    x: &[f64],
    lambda: &[f64],
    nu: &[f64],
    hess: Option<&mut DMatrix<f64>>,
) -> Result<Local, SolveError> {
    let dim = nlp.dim;
    let mut hess = hess;
    if let Some(h) = hess.as_deref_mut() {
        h.fill(0.0);
    }
    let second = hess.is_some();
    let jet = nlp.objective.jet(x, &st.obj_vars, second)?;
    if let Some(h) = hess.as_deref_mut() {
        scatter_hess(h, &st.obj_vars, &jet.hess, 1.0);
    }
    let f = jet.value;
    let grad_f = scatter(dim, &st.obj_vars, &jet.grad);

    let mut c = Vec::with_capacity(nlp.ineq.len());
    let mut jac_c = Vec::with_capacity(nlp.ineq.len());
    for (i, e) in nlp.ineq.iter().enumerate() {
        let want = second && !st.ineq_affine[i] && lambda[i] != 0.0;
        let jet = e.jet(x, &st.ineq_vars[i], want)?;
        if want {
            scatter_hess(hess.as_deref_mut().unwrap(), &st.ineq_vars[i], &jet.hess, lambda[i]);
        }
        c.push(jet.value);
        jac_c.push(scatter(dim, &st.ineq_vars[i], &jet.grad));
    }
    let mut h = Vec::with_capacity(nlp.eq.len());
    let mut jac_h = Vec::with_capacity(nlp.eq.len());
    for (j, e) in nlp.eq.iter().enumerate() {
        let want = second && !st.eq_affine[j] && nu[j] != 0.0;
        let jet = e.jet(x, &st.eq_vars[j], want)?;
        if want {
            scatter_hess(hess.as_deref_mut().unwrap(), &st.eq_vars[j], &jet.hess, nu[j]);
        }
        h.push(jet.value);
        jac_h.push(scatter(dim, &st.eq_vars[j], &jet.grad));
    }
    Ok(Local {
        f,
        grad_f,
        c,
        jac_c,
        h,
        jac_h,
    })
}

fn violation(c: &[f64], h: &[f64], general: &[usize]) -> f64 {
    general.iter().map(|&i| c[i].max(0.0)).sum::<f64>() + h.iter().map(|v| v.abs()).sum::<f64>()
}

fn max_violation(c: &[f64], h: &[f64]) -> f64 {
    c.iter().fold(0.0_f64, |m, v| m.max(*v)).max(norm_inf(h))
}

fn merit(nlp: &Nlp, st: &Structure, x: &[f64], rho: f64) -> Option<f64> {
    let f = nlp.objective.eval(x).ok()?;
    let mut viol = 0.0;
    for &i in &st.general {
        viol += nlp.ineq[i].eval(x).ok()?.max(0.0);
    }
    for e in &nlp.eq {
        viol += e.eval(x).ok()?.abs();
    }
    let m = f + rho * viol;
    m.is_finite().then_some(m)
}

/// Stationarity residual, max violation and complementarity at `x`.
fn kkt_measures(loc: &Local, lambda: &[f64], nu: &[f64]) -> (f64, f64, f64) {
    let mut r = loc.grad_f.clone();
    for (l, g) in lambda.iter().zip(&loc.jac_c) {
        if *l != 0.0 {
            crate::linalg::axpy(&mut r, *l, g);
        }
    }
    for (v, g) in nu.iter().zip(&loc.jac_h) {
        if *v != 0.0 {
            crate::linalg::axpy(&mut r, *v, g);
        }
    }
    let stat = norm_inf(&r);
    let feas = max_violation(&loc.c, &loc.h);
    let comp = lambda
        .iter()
        .zip(&loc.c)
        .map(|(l, c)| (l * c).abs().max(-l))
        .fold(0.0_f64, f64::max);
    (stat, feas, comp)
}

/// Factorizable `H + τI`, τ = 0 or doubling from 1e-8.
fn shift_hessian(h: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    if h.clone().cholesky().is_some() {
        return (h.clone(), 0.0);
    }
    let mut tau = 1e-8;
    loop {
        let mut hs = h.clone();
        for i in 0..h.nrows() {
            hs[(i, i)] += tau;
        }
        if hs.clone().cholesky().is_some() {
            return (hs, tau);
        }
        tau *= 2.0;
    }
}

pub fn solve_nlp(nlp: &Nlp, start: &[f64], tol: f64, max_iter: usize) -> Result<SolveReport, SolveError> {
    let opts = SqpOptions {
        tol,
        max_iter,
        ..SqpOptions::default()
    };
    solve_nlp_with(nlp, start, &opts).map(|(r, _)| r)
}

pub fn solve_nlp_with(
    nlp: &Nlp,
    start: &[f64],
    opts: &SqpOptions,
) -> Result<(SolveReport, Vec<IterationLog>), SolveError> {
    let started = Instant::now();
    let n = nlp.dim;
    if start.len() != n {
        return Err(SolveError::DimensionMismatch {
            expected: n,
            got: start.len(),
        });
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFiniteValue("start point".into()));
    }
    let st = analyze(nlp)?;
    let mut x: Vec<f64> = start
        .iter()
        .enumerate()
        .map(|(j, v)| v.clamp(st.lower[j], st.upper[j]))
        .collect();
    let n_ineq = nlp.ineq.len();
    let n_eq = nlp.eq.len();
    let mut lambda = vec![0.0; n_ineq];
    let mut nu = vec![0.0; n_eq];
    let mut rho = 1.0_f64;
    let mut radius = opts.initial_radius;
    let mut logs = Vec::new();
    let mut hess = DMatrix::<f64>::zeros(n, n);

    let finish = |status, x: Vec<f64>, lambda: Vec<f64>, nu: Vec<f64>, iters, logs| {
        let objective = nlp.objective.eval(&x).unwrap_or(f64::NAN);
        Ok((
            SolveReport {
                status,
                point: x,
                multipliers: Multipliers {
                    ineq: lambda,
                    eq: nu,
                    lower: Vec::new(),
                    upper: Vec::new(),
                },
                objective,
                iterations: iters,
                wall_time: started.elapsed(),
            },
            logs,
        ))
    };

    for iter in 0..opts.max_iter {
        let loc = evaluate(nlp, &st, &x, &lambda, &nu, Some(&mut hess))?;
        let (hs, tau) = shift_hessian(&hess);
        let slack_curv = tau.max(1e-8);
        let rho_qp = (10.0 * rho).max(1e4);

        // elastic QP in (d, slacks)
        let mut slack_ineq = Vec::new(); // (row, slack index)
        let mut slack_eq = Vec::new(); // (row, s+, s−)
        let mut nv = n;
        for &i in &st.general {
            if loc.c[i] > ZERO_ROW {
                slack_ineq.push((i, nv));
                nv += 1;
            }
        }
        for j in 0..n_eq {
            if loc.h[j].abs() > ZERO_ROW {
                slack_eq.push((j, nv, nv + 1));
                nv += 2;
            }
        }
        let mut qh = DMatrix::<f64>::zeros(nv, nv);
        qh.view_mut((0, 0), (n, n)).copy_from(&hs);
        for k in n..nv {
            qh[(k, k)] = slack_curv;
        }
        let mut lin = loc.grad_f.clone();
        lin.resize(nv, rho_qp);
        let mut qp = QuadraticProgram::new(qh, lin);
        let mut start_qp = vec![0.0; nv];
        let mut slack_of_ineq = vec![None; n_ineq];
        for &(i, s) in &slack_ineq {
            slack_of_ineq[i] = Some(s);
        }
        let mut ineq_rows = Vec::with_capacity(st.general.len());
        for &i in &st.general {
            let mut row = loc.jac_c[i].clone();
            row.resize(nv, 0.0);
            let rhs = if let Some(s) = slack_of_ineq[i] {
                row[s] = -1.0;
                start_qp[s] = loc.c[i];
                -loc.c[i]
            } else if loc.c[i].abs() <= ZERO_ROW {
                0.0
            } else {
                -loc.c[i]
            };
            qp.add_le(row, rhs);
            ineq_rows.push(i);
        }
        let mut slack_of_eq = vec![None; n_eq];
        for &(j, sp, sm) in &slack_eq {
            slack_of_eq[j] = Some((sp, sm));
        }
        for j in 0..n_eq {
            let mut row = loc.jac_h[j].clone();
            row.resize(nv, 0.0);
            let rhs = if let Some((sp, sm)) = slack_of_eq[j] {
                row[sp] = -1.0;
                row[sm] = 1.0;
                start_qp[sp] = loc.h[j].max(0.0);
                start_qp[sm] = (-loc.h[j]).max(0.0);
                -loc.h[j]
            } else {
                0.0
            };
            qp.add_eq(row, rhs);
        }
        for j in 0..n {
            qp.lower[j] = (st.lower[j] - x[j]).min(0.0).max(-radius);
            qp.upper[j] = (st.upper[j] - x[j]).max(0.0).min(radius);
        }
        for k in n..nv {
            qp.lower[k] = 0.0;
        }
        let sol = solve_qp_from(&qp, QpStart::Feasible(start_qp))?;
        if sol.status != Status::Optimal {
            if radius > MIN_RADIUS {
                radius = (radius / 4.0).max(MIN_RADIUS);
                continue;
            }
            return finish(Status::Stalled, x, lambda, nu, iter, logs);
        }
        let d: Vec<f64> = sol.point[..n].to_vec();

        // multipliers of the NLP rows
        let mut new_lambda = vec![0.0; n_ineq];
        for (r, &i) in ineq_rows.iter().enumerate() {
            new_lambda[i] = sol.multipliers.ineq[r];
        }
        for j in 0..n {
            if let Some(src) = st.upper_src[j] {
                if st.upper[j] - x[j] <= radius {
                    new_lambda[src.row] = sol.multipliers.upper[j] / src.coef;
                }
            }
            if let Some(src) = st.lower_src[j] {
                if x[j] - st.lower[j] <= radius {
                    new_lambda[src.row] = -sol.multipliers.lower[j] / src.coef;
                }
            }
        }
        let new_nu = sol.multipliers.eq.clone();

        let (stat, feas, comp) = kkt_measures(&loc, &new_lambda, &new_nu);
        if stat <= opts.tol && feas <= opts.tol && comp <= opts.tol {
            if opts.verbose {
                eprintln!("sqp {iter:4} converged: stat {stat:.3e} feas {feas:.3e} comp {comp:.3e}");
            }
            return finish(Status::Optimal, x, new_lambda, new_nu, iter, logs);
        }
        lambda = new_lambda;
        nu = new_nu;
        let mult_norm = norm_inf(&lambda).max(norm_inf(&nu));
        rho = rho.max(2.0 * mult_norm + 1.0);

        // directional derivative of the merit along d
        let viol0 = violation(&loc.c, &loc.h, &st.general);
        let mut lin_viol = 0.0;
        for &i in &st.general {
            lin_viol += (loc.c[i] + dot(&loc.jac_c[i], &d)).max(0.0);
        }
        for j in 0..n_eq {
            lin_viol += (loc.h[j] + dot(&loc.jac_h[j], &d)).abs();
        }
        let slope = (dot(&loc.grad_f, &d) - rho * (viol0 - lin_viol)).min(0.0);
        let merit0 = loc.f + rho * viol0;

        let dnorm = norm_inf(&d);
        let xnorm = norm_inf(&x);
        if dnorm <= 1e-15 * (1.0 + xnorm) {
            if opts.verbose {
                eprintln!("sqp {iter:4} stalled: zero step, stat {stat:.3e} feas {feas:.3e}");
            }
            return finish(Status::Stalled, x, lambda, nu, iter, logs);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = (0..n)
                .map(|j| (x[j] + alpha * d[j]).clamp(st.lower[j], st.upper[j]))
                .collect();
            if let Some(m) = merit(nlp, &st, &trial, rho) {
                if m <= merit0 + ARMIJO * alpha * slope {
                    accepted = Some((trial, m));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, merit1)) = accepted else {
            if opts.verbose {
                eprintln!("sqp {iter:4} stalled: line search failed");
            }
            return finish(Status::Stalled, x, lambda, nu, iter, logs);
        };
        let step = alpha * dnorm;
        if opts.verbose {
            eprintln!(
                "sqp {iter:4} merit {merit0:.6e} feas {feas:.3e} stat {stat:.3e} step {step:.3e} alpha {alpha:.3e} radius {radius:.1e}"
            );
        }
        logs.push(IterationLog {
            iter,
            penalty: rho,
            merit_before: merit0,
            merit_after: merit1,
            feasibility: feas,
            stationarity: stat,
            step,
        });
        if alpha < 1.0 {
            radius = (2.0 * step).min(radius).max(MIN_RADIUS);
        } else if dnorm >= 0.99 * radius {
            radius = (2.0 * radius).min(opts.max_radius);
        }
        if step <= 1e-15 * (1.0 + xnorm) {
            x = trial;
            return finish(Status::Stalled, x, lambda, nu, iter + 1, logs);
        }
        x = trial;
    }
    finish(Status::IterLimit, x, lambda, nu, opts.max_iter, logs)
}
