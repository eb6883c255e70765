//! The relaxation method: alternate a lower-level solve at the current
//! upper-level point with a solve of the `t`-relaxed reformulation, shrinking
//! `t` geometrically.
//!
//! Each outer iteration `k`:
//!
//! 1. solve the lower level at `x̃` for `ỹ` and its multipliers `ũ`, form
//!    `w̃ = (x̃, ỹ, ỹ, ũ)` (WDP) or `(x̃, ỹ, ũ)` (MPEC) and stop if `w̃` is a
//!    KKT point of the unrelaxed reformulation;
//! 2. solve the relaxation with parameter `t_k` from `w̃`, stop if the result
//!    is a KKT point of the unrelaxed reformulation;
//! 3. move `x̃` to the x-block of that solution (or keep it, with
//!    `literal_step3`) and set `t_{k+1} = max(σ t_k, δ_min)`.
//!
//! "KKT point" means [`kkt_residual`] at most `eps_p`.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bench::{infeasibility, BenchError};
use crate::certify::{kkt_residual, CertifyError};
use crate::model::{BilevelProblem, LinearBilevelData, ModelError};
use crate::reform::{
    build_mpec_with, build_wdp_with, check_feasible, lower_level, relax_mpec, relax_wdp, Nlp, ReformError,
    ReformOptions,
};
use crate::solve::{solve_lp, solve_nlp_with, SolveError, SolveReport, SqpOptions, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxMode {
    Wdp,
    Mpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxConfig {
    pub t0: f64,
    pub sigma: f64,
    pub eps_p: f64,
    /// Tolerance handed to the relaxed-subproblem solver.
    pub eps_r: f64,
    pub delta_min: f64,
    pub max_outer: usize,
    pub mode: RelaxMode,
    /// Keep `x̃` fixed across outer iterations.
    pub literal_step3: bool,
    /// Adds `u ≤ u_cap` to the reformulation.
    pub u_cap: Option<f64>,
    /// Iteration budget of each relaxed solve.
    pub sqp_max_iter: usize,
    pub verbose: bool,
}

impl Default for RelaxConfig {
    fn default() -> Self {
        RelaxConfig {
            t0: 1.0,
            sigma: 0.1,
            eps_p: 1e-8,
            eps_r: 1e-16,
            delta_min: 1e-16,
            max_outer: 20,
            mode: RelaxMode::Wdp,
            literal_step3: false,
            u_cap: None,
            sqp_max_iter: 100,
            verbose: false,
        }
    }
}

impl RelaxConfig {
    pub fn validate(&self) -> Result<(), RelaxError> {
        let bad = |msg: String| Err(RelaxError::InvalidConfig(msg));
        if !(self.t0.is_finite() && self.t0 > 0.0) {
            return bad(format!("t0 must be positive, got {}", self.t0));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("sigma must lie in (0, 1), got {}", self.sigma));
        }
        if !(self.eps_p.is_finite() && self.eps_p > 0.0) {
            return bad(format!("eps_p must be positive, got {}", self.eps_p));
        }
        if !(self.eps_r > 0.0 && self.eps_r <= self.eps_p) {
            return bad(format!("eps_r must lie in (0, eps_p], got {}", self.eps_r));
        }
        if !(self.delta_min >= 0.0 && self.delta_min <= self.t0) {
            return bad(format!("delta_min must lie in [0, t0], got {}", self.delta_min));
        }
        if self.max_outer == 0 {
            return bad("max_outer must be at least 1".into());
        }
        if let Some(cap) = self.u_cap {
            if !(cap.is_finite() && cap > 0.0) {
                return bad(format!("u_cap must be positive, got {cap}"));
            }
        }
        Ok(())
    }
}

/// One outer iteration that reached the relaxed solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub t: f64,
    /// Upper-level objective at the relaxed solution.
    pub objective: f64,
    /// KKT residual of the unrelaxed reformulation there; infinite if the
    /// point is infeasible for it.
    pub kkt_residual: f64,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The lower-level point `w̃` was already KKT.
    LowerLevelPoint,
    /// A relaxed solution was KKT for the unrelaxed problem.
    RelaxedPoint,
    MaxOuter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Final point in the layout of the reformulation.
    pub point: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    /// For linear data the benchmark metric; otherwise the largest
    /// constraint violation of the unrelaxed reformulation.
    pub infeasibility: f64,
    pub outer_iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
    pub wall_time: Duration,
}

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("starting point violates the upper-level constraints")]
    InfeasibleStart,
    #[error("lower-level problem infeasible or unsolved at outer iteration {iteration}")]
    LowerLevelInfeasible { iteration: usize, trace: Vec<TraceRow> },
    #[error("relaxed subproblem failed at outer iteration {iteration}: {status:?}")]
    SolverFailure {
        iteration: usize,
        status: Status,
        trace: Vec<TraceRow>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reform(#[from] ReformError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

/// Lower-level solution `(y, u, v)` at some `x`.
struct LowerSolution {
    y: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Runs the method on linear data from `x̃ = 0`, solving the lower level as
/// an LP.
pub fn run(d: &LinearBilevelData, cfg: &RelaxConfig) -> Result<RunReport, RelaxError> {
    cfg.validate()?;
    let bp = d.to_expressions()?;
    let (n, ..) = d.dims();
    let lower = |x: &[f64], _: &[f64]| -> Result<Option<LowerSolution>, RelaxError> {
        let rep = solve_lp(&d.lower_level_lp(x))?;
        if rep.status != Status::Optimal {
            return Ok(None);
        }
        Ok(Some(LowerSolution {
            u: d.lower_multipliers(&rep),
            y: rep.point,
            v: Vec::new(),
        }))
    };
    let metric = |x: &[f64], y: &[f64], _: &Nlp, _: &[f64]| -> Result<f64, RelaxError> { Ok(infeasibility(d, x, y)?) };
    drive(&bp, &vec![0.0; n], cfg, lower, metric)
}

/// Runs the method on a general problem from `x0`, solving each lower level
/// with the SQP solver warm-started at the previous `ỹ`.
pub fn run_general(bp: &BilevelProblem, x0: &[f64], cfg: &RelaxConfig) -> Result<RunReport, RelaxError> {
    cfg.validate()?;
    if x0.len() != bp.n {
        return Err(RelaxError::Reform(ReformError::DimensionMismatch {
            expected: bp.n,
            got: x0.len(),
        }));
    }
    let sqp = SqpOptions {
        tol: cfg.eps_p * 1e-2,
        max_iter: 200,
        ..SqpOptions::default()
    };
    let lower = |x: &[f64], y_prev: &[f64]| -> Result<Option<LowerSolution>, RelaxError> {
        let nlp = lower_level(bp, x)?;
        let (rep, _) = solve_nlp_with(&nlp, y_prev, &sqp)?;
        if !matches!(rep.status, Status::Optimal) {
            return Ok(None);
        }
        Ok(Some(LowerSolution {
            y: rep.point,
            u: rep.multipliers.ineq,
            v: rep.multipliers.eq,
        }))
    };
    let metric = |_: &[f64], _: &[f64], nlp: &Nlp, w: &[f64]| -> Result<f64, RelaxError> {
        Ok(check_feasible(nlp, w, 0.0)?.max_violation())
    };
    drive(bp, x0, cfg, lower, metric)
}

fn kkt_or_inf(nlp: &Nlp, w: &[f64], tol: f64) -> Result<f64, RelaxError> {
    match kkt_residual(nlp, w, tol) {
        Ok(r) => Ok(r.residual),
        Err(CertifyError::InfeasiblePoint { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

fn drive<L, M>(bp: &BilevelProblem, x0: &[f64], cfg: &RelaxConfig, lower: L, metric: M) -> Result<RunReport, RelaxError>
where
    L: Fn(&[f64], &[f64]) -> Result<Option<LowerSolution>, RelaxError>,
    M: Fn(&[f64], &[f64], &Nlp, &[f64]) -> Result<f64, RelaxError>,
{
    let started = Instant::now();
    let (n, m) = (bp.n, bp.m);
    for c in &bp.upper_ineq {
        let mut xy = x0.to_vec();
        xy.resize(n + m, 0.0);
        if c.eval(&xy).map_err(ReformError::from)? > 0.0 {
            return Err(RelaxError::InfeasibleStart);
        }
    }
    let options = ReformOptions {
        u_cap: cfg.u_cap,
        componentwise: false,
    };
    let nlp = match cfg.mode {
        RelaxMode::Wdp => build_wdp_with(bp, options)?,
        RelaxMode::Mpec => build_mpec_with(bp, options)?,
    };
    let assemble = |x: &[f64], s: &LowerSolution| -> Vec<f64> {
        let mut w = x.to_vec();
        w.extend(&s.y);
        if cfg.mode == RelaxMode::Wdp {
            w.extend(&s.y);
        }
        w.extend(&s.u);
        w.extend(&s.v);
        w
    };
    let sqp = SqpOptions {
        tol: cfg.eps_r,
        max_iter: cfg.sqp_max_iter,
        verbose: cfg.verbose,
        ..SqpOptions::default()
    };

    let mut x = x0.to_vec();
    let mut y_prev = vec![0.0; m];
    let mut t = cfg.t0;
    let mut trace = Vec::new();
    let mut last: Option<(Vec<f64>, Termination)> = None;
    let mut outer = 0;
    for k in 0..cfg.max_outer {
        outer = k + 1;
        // Step 1
        let Some(sol) = lower(&x, &y_prev)? else {
            return Err(RelaxError::LowerLevelInfeasible { iteration: k, trace });
        };
        y_prev = sol.y.clone();
        let w_tilde = assemble(&x, &sol);
        if kkt_or_inf(&nlp, &w_tilde, cfg.eps_p)? <= cfg.eps_p {
            last = Some((w_tilde, Termination::LowerLevelPoint));
            break;
        }
        // Step 2
        let relaxed = match cfg.mode {
            RelaxMode::Wdp => relax_wdp(&nlp, t)?,
            RelaxMode::Mpec => relax_mpec(&nlp, t)?,
        };
        let (rep, _): (SolveReport, _) = solve_nlp_with(&relaxed, &w_tilde, &sqp)?;
        if matches!(rep.status, Status::Infeasible | Status::Unbounded) {
            return Err(RelaxError::SolverFailure {
                iteration: k,
                status: rep.status,
                trace,
            });
        }
        let w = rep.point;
        let residual = kkt_or_inf(&nlp, &w, cfg.eps_p)?;
        trace.push(TraceRow {
            k,
            t,
            objective: rep.objective,
            kkt_residual: residual,
            status: rep.status,
        });
        if cfg.verbose {
            eprintln!(
                "outer {k:3} t {t:.3e} objective {:.6e} kkt {residual:.3e} {:?}",
                rep.objective, rep.status
            );
        }
        if residual <= cfg.eps_p {
            last = Some((w, Termination::RelaxedPoint));
            break;
        }
        // Step 3
        if !cfg.literal_step3 {
            x = w[..n].to_vec();
        }
        last = Some((w, Termination::MaxOuter));
        t = (cfg.sigma * t).max(cfg.delta_min);
    }
    let (point, termination) = last.expect("max_outer ≥ 1");
    let x = point[..n].to_vec();
    let y = point[n..n + m].to_vec();
    let mut xy = x.clone();
    xy.extend(&y);
    let objective = bp.upper_objective.eval(&xy).map_err(ReformError::from)?;
    let infeasibility = metric(&x, &y, &nlp, &point)?;
    Ok(RunReport {
        point,
        x,
        y,
        objective,
        infeasibility,
        outer_iterations: outer,
        termination,
        trace,
        wall_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// min x + y over x ∈ [0, 2]; lower level min y s.t. y ≥ 0 (bounds
    /// only), independent of x.
    fn trivial() -> LinearBilevelData {
        LinearBilevelData {
            a1: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            b1: vec![2.0, 0.0],
            c1: vec![1.0],
            c2: vec![1.0],
            d2: vec![1.0],
            a2: DMatrix::zeros(0, 1),
            b2_mat: DMatrix::zeros(0, 1),
            b2: vec![],
            l_b: vec![0.0],
            u_b: vec![5.0],
        }
    }

    #[test]
    fn stops_in_step_one_when_already_stationary() {
        let r = run(&trivial(), &RelaxConfig::default()).unwrap();
        assert_eq!(r.termination, Termination::LowerLevelPoint);
        assert_eq!(r.outer_iterations, 1);
        assert!(r.trace.is_empty());
        assert_eq!(r.x, vec![0.0]);
        assert_eq!(r.infeasibility, 0.0);
    }

    #[test]
    fn trace_follows_geometric_schedule() {
        // literal step 3 on a problem that is never stationary at w̃: the
        // upper objective rewards a suboptimal y, so every relaxed solution
        // sits at gap t and is infeasible for the unrelaxed problem.
        let mut d = trivial();
        d.c1 = vec![-1.0];
        d.c2 = vec![-1.0];
        let cfg = RelaxConfig {
            max_outer: 4,
            literal_step3: true,
            ..RelaxConfig::default()
        };
        let r = run(&d, &cfg).unwrap();
        let ts: Vec<f64> = r.trace.iter().map(|row| row.t).collect();
        assert_eq!(ts.len(), 4);
        for (t, want) in ts.iter().zip([1.0, 0.1, 0.01, 0.001]) {
            assert!((t - want).abs() <= 1e-15 * want);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = RelaxConfig {
            sigma: 1.5,
            ..RelaxConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(RelaxError::InvalidConfig(_))));
        let cfg = RelaxConfig {
            eps_r: 1e-4,
            ..RelaxConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
