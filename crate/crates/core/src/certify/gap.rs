//! Wolfe duality gap.

use super::CertifyError;
use crate::linalg::norm_inf;
use crate::model::BilevelProblem;
use crate::reform::wdp_lagrangian;

/// `f(x,y) − L(x,z,u,v)` for `y ∈ Y(x)` and a Wolfe-dual feasible
/// `(z,u,v)`, i.e. `u ≥ 0` and `∇_z L(x,z,u,v) = 0`. `zuv` is the
/// concatenation `(z, u, v)`. Both feasibility conditions are checked within
/// `tol`, scaled like constraint activity.
pub fn duality_gap(bp: &BilevelProblem, x: &[f64], y: &[f64], zuv: &[f64], tol: f64) -> Result<f64, CertifyError> {
    let (n, m, p, q) = (bp.n, bp.m, bp.p(), bp.q());
    for (expected, got) in [(n, x.len()), (m, y.len()), (m + p + q, zuv.len())] {
        if expected != got {
            return Err(CertifyError::DimensionMismatch { expected, got });
        }
    }
    let xy: Vec<f64> = x.iter().chain(y).copied().collect();
    for (i, g) in bp.lower_ineq.iter().enumerate() {
        let val = g.eval(&xy)?;
        if val > tol * (1.0 + norm_inf(&g.full_grad(&xy)?)) {
            return Err(CertifyError::InfeasibleInput(format!("g[{i}](x,y) = {val:e} > 0")));
        }
    }
    for (j, h) in bp.lower_eq.iter().enumerate() {
        let val = h.eval(&xy)?;
        if val.abs() > tol * (1.0 + norm_inf(&h.full_grad(&xy)?)) {
            return Err(CertifyError::InfeasibleInput(format!("h[{j}](x,y) = {val:e} ≠ 0")));
        }
    }
    let u = &zuv[m..m + p];
    if let Some(i) = (0..p).find(|&i| u[i] < -tol) {
        return Err(CertifyError::InfeasibleInput(format!("u[{i}] = {:e} < 0", u[i])));
    }
    // WDP coordinates (x, y, z, u, v)
    let point: Vec<f64> = xy.iter().chain(zuv).copied().collect();
    let l = wdp_lagrangian(bp);
    let z_vars: Vec<usize> = (n + m..n + 2 * m).collect();
    let grad_z = l.grad(&point, &z_vars)?;
    let scale = 1.0 + norm_inf(&l.full_grad(&point)?);
    if norm_inf(&grad_z) > tol * scale {
        return Err(CertifyError::InfeasibleInput(format!(
            "‖∇_z L‖∞ = {:e} exceeds tolerance",
            norm_inf(&grad_z)
        )));
    }
    Ok(bp.lower_objective.eval(&xy)? - l.eval(&point)?)
}
