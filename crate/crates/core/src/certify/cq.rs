//! MFCQ and positive-linear dependence.

use nalgebra::{DMatrix, SVD};

use super::{Certificate, CertifyError, CertifyReport, Evaluated, Verdict};
use crate::linalg::{axpy, dot, norm_inf};
use crate::reform::Nlp;
use crate::solve::{solve_lp, LinearProgram, Status};

/// Internal tolerance of [`plin_dependent`], which takes none.
const PLIN_TOL: f64 = 1e-9;

/// Gradients of the equality constraints and of the active inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveGradients {
    pub eq: Vec<Vec<f64>>,
    /// Row indices into `nlp.ineq`.
    pub ineq_rows: Vec<usize>,
    pub ineq: Vec<Vec<f64>>,
}

/// Checks feasibility within `tol` and collects the gradients MFCQ looks at.
pub fn active_gradients(nlp: &Nlp, p: &[f64], tol: f64) -> Result<ActiveGradients, CertifyError> {
    let ev = Evaluated::at(nlp, p)?;
    ev.require_feasible(tol)?;
    Ok(collect(ev, tol))
}

fn collect(ev: Evaluated, tol: f64) -> ActiveGradients {
    let ineq_rows: Vec<usize> = (0..ev.c.len()).filter(|&i| ev.ineq_active(i, tol)).collect();
    let ineq = ineq_rows.iter().map(|&i| ev.jac_c[i].clone()).collect();
    ActiveGradients {
        eq: ev.jac_h,
        ineq_rows,
        ineq,
    }
}

/// Numerical rank of a family of vectors by column-pivoted QR, counting
/// diagonal entries of `R` above `tol·max(1, |R₀₀|)`.
pub(crate) fn rank(vectors: &[Vec<f64>], dim: usize, tol: f64) -> usize {
    if vectors.is_empty() || dim == 0 {
        return 0;
    }
    let a = DMatrix::from_fn(dim, vectors.len(), |i, j| vectors[j][i]);
    let r = a.col_piv_qr().unpack_r();
    let k = r.nrows().min(r.ncols());
    let thr = tol * r[(0, 0)].abs().max(1.0);
    (0..k).filter(|&i| r[(i, i)].abs() > thr).count()
}

/// MFCQ at a feasible point: equality gradients linearly independent and a
/// direction `d` with `∇hᵀd = 0` and `∇g_iᵀd ≤ −s` on active rows for some
/// margin `s > tol`, found by maximizing `s` over `‖d‖∞ ≤ 1`.
///
/// The report residual is the optimal margin (0 if the rank test fails).
pub fn mfcq_check(nlp: &Nlp, p: &[f64], tol: f64) -> Result<CertifyReport, CertifyError> {
    let act = active_gradients(nlp, p, tol)?;
    let dim = nlp.dim;
    if rank(&act.eq, dim, tol) < act.eq.len() {
        return Ok(CertifyReport {
            verdict: Verdict::Fails,
            certificate: None,
            residual: 0.0,
        });
    }
    // variables (d, s), maximize s
    let mut cost = vec![0.0; dim + 1];
    cost[dim] = -1.0;
    let mut lp = LinearProgram::new(cost);
    for j in 0..dim {
        lp.set_bounds(j, -1.0, 1.0);
    }
    lp.set_bounds(dim, f64::NEG_INFINITY, 1.0);
    for g in &act.eq {
        let mut row = g.clone();
        row.push(0.0);
        lp.add_eq(row, 0.0);
    }
    for g in &act.ineq {
        let mut row = g.clone();
        row.push(1.0);
        lp.add_le(row, 0.0);
    }
    let rep = solve_lp(&lp)?;
    if rep.status != Status::Optimal {
        return Ok(CertifyReport {
            verdict: Verdict::Inconclusive,
            certificate: None,
            residual: f64::NAN,
        });
    }
    let s = rep.point[dim];
    let d = rep.point[..dim].to_vec();
    let holds = s > tol;
    Ok(CertifyReport {
        verdict: if holds { Verdict::Holds } else { Verdict::Fails },
        certificate: holds.then_some(Certificate::Direction(d)),
        residual: s,
    })
}

/// Outcome of re-checking an MFCQ direction by evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionCheck {
    /// `max_j |∇h_jᵀd|`
    pub eq_residual: f64,
    /// `max_i ∇g_iᵀd` over active rows; `−∞` if none is active.
    pub max_active_slope: f64,
    pub eq_rank_full: bool,
}

impl DirectionCheck {
    /// Accepts with equality residual at most `tol` and every active slope
    /// strictly negative.
    pub fn accepts(&self, tol: f64) -> bool {
        self.eq_rank_full && self.eq_residual <= tol && self.max_active_slope < 0.0
    }
}

/// Re-checks an MFCQ direction at `p`. No bound on `‖d‖` is imposed, so
/// hand-made directions are accepted as given.
pub fn verify_mfcq_direction(nlp: &Nlp, p: &[f64], d: &[f64], tol: f64) -> Result<DirectionCheck, CertifyError> {
    if d.len() != nlp.dim {
        return Err(CertifyError::DimensionMismatch {
            expected: nlp.dim,
            got: d.len(),
        });
    }
    let act = active_gradients(nlp, p, tol)?;
    let eq_residual = act.eq.iter().map(|g| dot(g, d).abs()).fold(0.0, f64::max);
    let max_active_slope = act.ineq.iter().map(|g| dot(g, d)).fold(f64::NEG_INFINITY, f64::max);
    Ok(DirectionCheck {
        eq_residual,
        max_active_slope,
        eq_rank_full: rank(&act.eq, nlp.dim, tol) == act.eq.len(),
    })
}

fn same_dim(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize, CertifyError> {
    let dim = a.iter().chain(b).next().map_or(0, |v| v.len());
    match a.iter().chain(b).find(|v| v.len() != dim) {
        Some(v) => Err(CertifyError::DimensionMismatch {
            expected: dim,
            got: v.len(),
        }),
        None => Ok(dim),
    }
}

/// Positive-linear dependence of `(A, B)`: is there `(α, β) ≠ 0` with
/// `α ≥ 0` and `Σ α_i a^i + Σ β_j b^j = 0`?
///
/// Decided in two stages. First an LP maximizes `Σ α` subject to the
/// combination vanishing and `Σ α ≤ 1`; a positive optimum gives a
/// certificate with `α ≠ 0`. Otherwise every dependence has `α = 0`, so the
/// question is whether `B` alone is linearly dependent, read off an SVD.
pub fn plin_dependent(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<CertifyReport, CertifyError> {
    let dim = same_dim(a, b)?;
    let (l, r) = (a.len(), b.len());
    if l > 0 {
        let mut cost = vec![0.0; l + r];
        cost[..l].iter_mut().for_each(|c| *c = -1.0);
        let mut lp = LinearProgram::new(cost);
        for j in 0..r {
            lp.set_free(l + j);
        }
        for k in 0..dim {
            let row = a.iter().chain(b).map(|v| v[k]).collect();
            lp.add_eq(row, 0.0);
        }
        let mut sum = vec![1.0; l];
        sum.extend(vec![0.0; r]);
        lp.add_le(sum, 1.0);
        let rep = solve_lp(&lp)?;
        if rep.status == Status::Optimal && -rep.objective > PLIN_TOL {
            let alpha: Vec<f64> = rep.point[..l].iter().map(|v| v.max(0.0)).collect();
            let beta = rep.point[l..].to_vec();
            let residual = plin_residual(a, b, &alpha, &beta);
            return Ok(CertifyReport {
                verdict: Verdict::Holds,
                certificate: Some(Certificate::PositiveCombination { alpha, beta }),
                residual,
            });
        }
    }
    if r > 0 && dim > 0 {
        let mat = DMatrix::from_fn(dim, r, |i, j| b[j][i]);
        let null = if r > dim {
            // more vectors than dimensions: pad with zero rows so V is square
            let padded = DMatrix::from_fn(r, r, |i, j| if i < dim { mat[(i, j)] } else { 0.0 });
            smallest_right_singular(padded)
        } else {
            smallest_right_singular(mat)
        };
        if let Some((sigma, beta)) = null {
            let scale = b.iter().map(|v| norm_inf(v)).fold(1.0, f64::max);
            if sigma <= PLIN_TOL * scale {
                let alpha = vec![0.0; l];
                let residual = plin_residual(a, b, &alpha, &beta);
                return Ok(CertifyReport {
                    verdict: Verdict::Holds,
                    certificate: Some(Certificate::PositiveCombination { alpha, beta }),
                    residual,
                });
            }
        }
    } else if r > 0 {
        // zero-dimensional vectors are always dependent
        let mut beta = vec![0.0; r];
        beta[0] = 1.0;
        return Ok(CertifyReport {
            verdict: Verdict::Holds,
            certificate: Some(Certificate::PositiveCombination {
                alpha: vec![0.0; l],
                beta,
            }),
            residual: 0.0,
        });
    }
    Ok(CertifyReport {
        verdict: Verdict::Fails,
        certificate: None,
        residual: 0.0,
    })
}

/// Smallest singular value and its right singular vector (unit 2-norm).
fn smallest_right_singular(mat: DMatrix<f64>) -> Option<(f64, Vec<f64>)> {
    let svd = SVD::new(mat, false, true);
    let v_t = svd.v_t?;
    let (k, sigma) = svd
        .singular_values
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    Some((sigma, v_t.row(k).iter().copied().collect()))
}

fn plin_residual(a: &[Vec<f64>], b: &[Vec<f64>], alpha: &[f64], beta: &[f64]) -> f64 {
    let dim = a.iter().chain(b).next().map_or(0, |v| v.len());
    let mut r = vec![0.0; dim];
    for (v, m) in a.iter().zip(alpha).chain(b.iter().zip(beta)) {
        axpy(&mut r, *m, v);
    }
    norm_inf(&r)
}

/// Re-checks a positive-linear-dependence certificate. Returns the
/// combination residual plus any negative part of `α`, both relative to
/// `‖(α, β)‖∞`; infinite for the trivial certificate.
pub fn verify_plin(a: &[Vec<f64>], b: &[Vec<f64>], alpha: &[f64], beta: &[f64]) -> Result<f64, CertifyError> {
    same_dim(a, b)?;
    if alpha.len() != a.len() || beta.len() != b.len() {
        return Err(CertifyError::DimensionMismatch {
            expected: a.len() + b.len(),
            got: alpha.len() + beta.len(),
        });
    }
    let size = norm_inf(alpha).max(norm_inf(beta));
    if size == 0.0 {
        return Ok(f64::INFINITY);
    }
    let neg = alpha.iter().fold(0.0_f64, |m, v| m.max(-v));
    Ok(plin_residual(a, b, alpha, beta).max(neg) / size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;

    #[test]
    fn single_active_bound_has_descent_direction() {
        let nlp = Nlp::new(1, Expr::var(0), vec![Expr::var(0)], vec![]);
        let r = mfcq_check(&nlp, &[0.0], 1e-9).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        let Some(Certificate::Direction(d)) = r.certificate else {
            panic!()
        };
        assert_eq!(d, vec![-1.0]);
        assert!(verify_mfcq_direction(&nlp, &[0.0], &d, 1e-9).unwrap().accepts(1e-9));
    }

    #[test]
    fn opposing_actives_fail() {
        // x ≤ 0 and −x ≤ 0 both active at 0
        let x = Expr::var(0);
        let nlp = Nlp::new(1, x.clone(), vec![x.clone(), -x], vec![]);
        let r = mfcq_check(&nlp, &[0.0], 1e-9).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        assert!(r.residual.abs() < 1e-12);
    }

    #[test]
    fn dependent_equalities_fail_rank() {
        let x = Expr::var(0);
        let nlp = Nlp::new(2, x.clone(), vec![], vec![x.clone(), 2.0 * x]);
        assert_eq!(mfcq_check(&nlp, &[0.0, 0.0], 1e-9).unwrap().verdict, Verdict::Fails);
    }

    #[test]
    fn plin_basic_cases() {
        let r = plin_dependent(&[vec![1.0, 0.0]], &[vec![-1.0, 0.0]]).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        let Some(Certificate::PositiveCombination { alpha, beta }) = r.certificate else {
            panic!()
        };
        assert!((alpha[0] - beta[0]).abs() < 1e-12 && alpha[0] > 0.0);
        assert!(verify_plin(&[vec![1.0, 0.0]], &[vec![-1.0, 0.0]], &alpha, &beta).unwrap() < 1e-12);

        let r = plin_dependent(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[]).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);

        // only B is dependent
        let b = [vec![1.0, 1.0], vec![2.0, 2.0]];
        let r = plin_dependent(&[vec![1.0, 0.0]], &b).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        let Some(Certificate::PositiveCombination { alpha, beta }) = r.certificate else {
            panic!()
        };
        assert!(verify_plin(&[vec![1.0, 0.0]], &b, &alpha, &beta).unwrap() < 1e-12);

        assert_eq!(verify_plin(&[vec![1.0]], &[], &[0.0], &[]).unwrap(), f64::INFINITY);
        assert!(plin_dependent(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rank_counts_independent_columns() {
        let v = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]];
        assert_eq!(rank(&v, 3, 1e-9), 2);
        assert_eq!(rank(&[], 3, 1e-9), 0);
    }
}
