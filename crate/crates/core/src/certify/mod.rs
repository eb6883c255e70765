//! Certification of candidate points: KKT residuals, MPEC S-stationarity,
//! MFCQ, abnormal multipliers, positive-linear dependence and Wolfe duality
//! gaps.
//!
//! Every `Holds` verdict carries a certificate, and each certificate kind has
//! a `verify_*` function that re-checks it by direct evaluation, without
//! solving anything.
//!
//! Activity: constraint `c_i` is active at `p` when
//! `|c_i(p)| ≤ tol·(1 + ‖∇c_i(p)‖∞)`. The same scaled test defines
//! feasibility within `tol`.

mod cq;
mod gap;
mod mpec;

use std::fmt;

use thiserror::Error;

use crate::expr::ExprError;
use crate::linalg::{axpy, norm_inf};
use crate::reform::{Nlp, ReformError};
use crate::solve::{solve_lp, LinearProgram, SolveError, Status};

pub use cq::{
    active_gradients, mfcq_check, plin_dependent, verify_mfcq_direction, verify_plin, ActiveGradients, DirectionCheck,
};
pub use gap::duality_gap;
pub use mpec::{
    abnormal_multiplier, classify, s_stationarity, verify_abnormal, verify_s_stationarity, wdp_kkt_to_s,
    AbnormalMultiplier, IndexClass, SMultipliers, WdpMultipliers, ABNORMAL_TOL,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("point is infeasible (violation {violation:.3e})")]
    InfeasiblePoint { violation: f64 },
    #[error("point is not on the diagonal z = y (max |z − y| = {distance:.3e})")]
    NotOnDiagonal { distance: f64 },
    #[error("infeasible input: {0}")]
    InfeasibleInput(String),
    #[error("point has dimension {got}, problem has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected a {0} reformulation")]
    WrongForm(&'static str),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Reform(#[from] ReformError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "Holds",
            Verdict::Fails => "Fails",
            Verdict::Inconclusive => "Inconclusive",
        })
    }
}

/// Multipliers for the rows of an [`Nlp`], in the convention
/// `∇F + Σ ineq_i ∇c_i + Σ eq_j ∇h_j = 0`, `ineq ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktMultipliers {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    Kkt(KktMultipliers),
    SStationary(SMultipliers),
    /// MFCQ direction `d`.
    Direction(Vec<f64>),
    Abnormal(AbnormalMultiplier),
    /// Nontrivial `Σ α_i a^i + Σ β_j b^j = 0`, `α ≥ 0`.
    PositiveCombination {
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyReport {
    pub verdict: Verdict,
    pub certificate: Option<Certificate>,
    /// Check-specific residual: minimized stationarity residual for KKT and
    /// S-stationarity, the MFCQ margin `s`, the largest abnormal-system
    /// residual.
    pub residual: f64,
}

/// Values and dense gradients of everything in an [`Nlp`] at one point.
#[derive(Debug, Clone)]
pub(crate) struct Evaluated {
    pub grad_f: Vec<f64>,
    pub c: Vec<f64>,
    pub jac_c: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub jac_h: Vec<Vec<f64>>,
}

impl Evaluated {
    pub fn at(nlp: &Nlp, p: &[f64]) -> Result<Self, CertifyError> {
        if p.len() != nlp.dim {
            return Err(CertifyError::DimensionMismatch {
                expected: nlp.dim,
                got: p.len(),
            });
        }
        let mut c = Vec::with_capacity(nlp.ineq.len());
        let mut jac_c = Vec::with_capacity(nlp.ineq.len());
        for e in &nlp.ineq {
            c.push(e.eval(p)?);
            jac_c.push(e.full_grad(p)?);
        }
        let mut h = Vec::with_capacity(nlp.eq.len());
        let mut jac_h = Vec::with_capacity(nlp.eq.len());
        for e in &nlp.eq {
            h.push(e.eval(p)?);
            jac_h.push(e.full_grad(p)?);
        }
        Ok(Evaluated {
            grad_f: nlp.objective.full_grad(p)?,
            c,
            jac_c,
            h,
            jac_h,
        })
    }

    pub fn ineq_scale(&self, i: usize) -> f64 {
        1.0 + norm_inf(&self.jac_c[i])
    }

    pub fn eq_scale(&self, j: usize) -> f64 {
        1.0 + norm_inf(&self.jac_h[j])
    }

    pub fn ineq_active(&self, i: usize, tol: f64) -> bool {
        self.c[i].abs() <= tol * self.ineq_scale(i)
    }

    /// Largest scaled violation `max(c_i / scale_i, |h_j| / scale_j)`.
    pub fn scaled_violation(&self) -> f64 {
        let ineq = (0..self.c.len()).map(|i| self.c[i].max(0.0) / self.ineq_scale(i));
        let eq = (0..self.h.len()).map(|j| self.h[j].abs() / self.eq_scale(j));
        ineq.chain(eq).fold(0.0, f64::max)
    }

    pub fn require_feasible(&self, tol: f64) -> Result<(), CertifyError> {
        let violation = self.scaled_violation();
        if violation > tol {
            Err(CertifyError::InfeasiblePoint { violation })
        } else {
            Ok(())
        }
    }
}

/// Sign restriction on one multiplier column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sign {
    NonNeg,
    Free,
    Zero,
}

/// `‖g + Σ m_k col_k‖∞`.
pub(crate) fn combination_residual(g: &[f64], cols: &[&[f64]], mult: &[f64]) -> f64 {
    let mut r = g.to_vec();
    for (col, m) in cols.iter().zip(mult) {
        if *m != 0.0 {
            axpy(&mut r, *m, col);
        }
    }
    norm_inf(&r)
}

/// Minimizes `‖g + Σ m_k col_k‖∞` over multipliers with the given sign
/// restrictions. Returns `None` if the LP solver does not finish.
pub(crate) fn min_residual(
    g: &[f64],
    cols: &[&[f64]],
    signs: &[Sign],
) -> Result<Option<(Vec<f64>, f64)>, CertifyError> {
    let dim = g.len();
    let live: Vec<usize> = (0..cols.len()).filter(|&k| signs[k] != Sign::Zero).collect();
    let nv = live.len() + 1; // multipliers, then r
    let mut cost = vec![0.0; nv];
    cost[nv - 1] = 1.0;
    let mut lp = LinearProgram::new(cost);
    for (a, &k) in live.iter().enumerate() {
        if signs[k] == Sign::Free {
            lp.set_free(a);
        }
    }
    for row in 0..dim {
        // g + Σ m col − r ≤ 0 and −g − Σ m col − r ≤ 0
        let mut plus: Vec<f64> = live.iter().map(|&k| cols[k][row]).collect();
        plus.push(-1.0);
        let mut minus: Vec<f64> = live.iter().map(|&k| -cols[k][row]).collect();
        minus.push(-1.0);
        lp.add_le(plus, -g[row]);
        lp.add_le(minus, g[row]);
    }
    let rep = solve_lp(&lp)?;
    if rep.status != Status::Optimal {
        return Ok(None);
    }
    let mut mult = vec![0.0; cols.len()];
    for (a, &k) in live.iter().enumerate() {
        mult[k] = rep.point[a];
        if signs[k] == Sign::NonNeg {
            mult[k] = mult[k].max(0.0);
        }
    }
    let r = combination_residual(g, cols, &mult);
    Ok(Some((mult, r)))
}

/// Minimal ∞-norm KKT stationarity residual at `p` over multipliers that are
/// nonnegative on active inequalities, zero on inactive ones and free on
/// equalities. Holds iff the residual is at most `tol`.
pub fn kkt_residual(nlp: &Nlp, p: &[f64], tol: f64) -> Result<CertifyReport, CertifyError> {
    let ev = Evaluated::at(nlp, p)?;
    ev.require_feasible(tol)?;
    let mut cols: Vec<&[f64]> = Vec::new();
    let mut signs = Vec::new();
    for i in 0..nlp.ineq.len() {
        cols.push(&ev.jac_c[i]);
        signs.push(if ev.ineq_active(i, tol) {
            Sign::NonNeg
        } else {
            Sign::Zero
        });
    }
    for j in 0..nlp.eq.len() {
        cols.push(&ev.jac_h[j]);
        signs.push(Sign::Free);
    }
    let Some((mult, r)) = min_residual(&ev.grad_f, &cols, &signs)? else {
        return Ok(CertifyReport {
            verdict: Verdict::Inconclusive,
            certificate: None,
            residual: f64::INFINITY,
        });
    };
    let ni = nlp.ineq.len();
    let cert = KktMultipliers {
        ineq: mult[..ni].to_vec(),
        eq: mult[ni..].to_vec(),
    };
    let holds = r <= tol;
    Ok(CertifyReport {
        verdict: if holds { Verdict::Holds } else { Verdict::Fails },
        certificate: holds.then_some(Certificate::Kkt(cert)),
        residual: r,
    })
}

/// Direct re-check of a KKT certificate: returns the largest of the
/// stationarity residual, scaled infeasibility, multiplier sign violation and
/// scaled complementarity `|λ_i c_i|`.
pub fn verify_kkt(nlp: &Nlp, p: &[f64], mult: &KktMultipliers) -> Result<f64, CertifyError> {
    let ev = Evaluated::at(nlp, p)?;
    if mult.ineq.len() != nlp.ineq.len() || mult.eq.len() != nlp.eq.len() {
        return Err(CertifyError::DimensionMismatch {
            expected: nlp.ineq.len() + nlp.eq.len(),
            got: mult.ineq.len() + mult.eq.len(),
        });
    }
    let cols: Vec<&[f64]> = ev.jac_c.iter().chain(&ev.jac_h).map(|v| v.as_slice()).collect();
    let all: Vec<f64> = mult.ineq.iter().chain(&mult.eq).copied().collect();
    let stat = combination_residual(&ev.grad_f, &cols, &all);
    let sign = mult.ineq.iter().fold(0.0_f64, |m, l| m.max(-l));
    let comp = (0..nlp.ineq.len())
        .map(|i| (mult.ineq[i] * ev.c[i]).abs() / ev.ineq_scale(i))
        .fold(0.0, f64::max);
    Ok(stat.max(ev.scaled_violation()).max(sign).max(comp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    fn v(i: usize) -> Expr {
        Expr::var(i)
    }

    #[test]
    fn unconstrained_minimum_holds_with_zero_multipliers() {
        let nlp = Nlp::new(2, (v(0) - 1.0).powi(2) + v(1).powi(2), vec![v(0) - 5.0], vec![]);
        let r = kkt_residual(&nlp, &[1.0, 0.0], 1e-9).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        let Some(Certificate::Kkt(m)) = r.certificate else {
            panic!()
        };
        assert_eq!(m.ineq, vec![0.0]);
        assert!(verify_kkt(&nlp, &[1.0, 0.0], &m).unwrap() <= 1e-12);
    }

    #[test]
    fn active_bound_needs_positive_multiplier() {
        // min x s.t. 1 − x ≤ 0 at x = 1: λ = 1
        let nlp = Nlp::new(1, v(0), vec![1.0 - v(0)], vec![]);
        let r = kkt_residual(&nlp, &[1.0], 1e-9).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        let Some(Certificate::Kkt(m)) = r.certificate else {
            panic!()
        };
        assert!((m.ineq[0] - 1.0).abs() < 1e-12);
        // max x there is not KKT
        let nlp = Nlp::new(1, -v(0), vec![1.0 - v(0)], vec![]);
        let r = kkt_residual(&nlp, &[1.0], 1e-9).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        assert!((r.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_point_is_an_error() {
        let nlp = Nlp::new(1, v(0), vec![1.0 - v(0)], vec![]);
        assert!(matches!(
            kkt_residual(&nlp, &[0.0], 1e-9),
            Err(CertifyError::InfeasiblePoint { .. })
        ));
    }
}
