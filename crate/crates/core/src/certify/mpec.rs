//! S-stationarity of MPEC points, the WDP-KKT to S-multiplier map, and the
//! abnormal multiplier that rules out MFCQ on the WDP when `z = y`.

use std::ops::Range;

use super::{min_residual, Certificate, CertifyError, CertifyReport, Evaluated, KktMultipliers, Sign, Verdict};
use crate::linalg::{axpy, norm_inf};
use crate::reform::{Form, Nlp};

/// Threshold for the abnormal system rows.
pub const ABNORMAL_TOL: f64 = 1e-10;
/// Relative tolerance for `z = y`.
const DIAGONAL_TOL: f64 = 1e-12;

/// Biactivity class of a lower-level inequality at an MPEC point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexClass {
    /// `g_i = 0 < u_i`
    ZeroPlus,
    /// `g_i < 0 = u_i`
    MinusZero,
    /// `g_i = 0 = u_i`
    ZeroZero,
}

/// S-stationarity multipliers of an MPEC, one block per constraint group.
/// `gamma` multiplies the rows of `∇_y L = 0`; the complementarity rows get
/// no multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct SMultipliers {
    pub upper: Vec<f64>,
    pub lambda_g: Vec<f64>,
    pub lambda_u: Vec<f64>,
    pub cap: Vec<f64>,
    pub nu_h: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// KKT multipliers of a WDP split by constraint group: `eta_g` for
/// `g(x,y) ≤ 0`, `alpha` for the gap row, `eta_u` for `−u ≤ 0`, `beta` for
/// `∇_z L = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WdpMultipliers {
    pub upper: Vec<f64>,
    pub eta_g: Vec<f64>,
    pub alpha: f64,
    pub eta_u: Vec<f64>,
    pub cap: Vec<f64>,
    pub nu_h: Vec<f64>,
    pub beta: Vec<f64>,
}

/// The abnormal multiplier `(α, β, η^g, η^u) = (1, 0, u, −g(x,y))`, with
/// `ν_h = v` on the lower equalities and zero on upper and cap rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AbnormalMultiplier {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub eta_g: Vec<f64>,
    pub eta_u: Vec<f64>,
    pub nu_h: Vec<f64>,
}

fn require(nlp: &Nlp, form: Form) -> Result<(), CertifyError> {
    if nlp.form == form && nlp.sizes.is_some() {
        Ok(())
    } else {
        Err(CertifyError::WrongForm(if form == Form::Wdp { "WDP" } else { "MPEC" }))
    }
}

impl WdpMultipliers {
    pub fn from_kkt(wdp: &Nlp, kkt: &KktMultipliers) -> Result<Self, CertifyError> {
        require(wdp, Form::Wdp)?;
        if kkt.ineq.len() != wdp.ineq.len() || kkt.eq.len() != wdp.eq.len() {
            return Err(CertifyError::DimensionMismatch {
                expected: wdp.ineq.len() + wdp.eq.len(),
                got: kkt.ineq.len() + kkt.eq.len(),
            });
        }
        let ig = |name| kkt.ineq[wdp.ineq_group(name).unwrap_or(0..0)].to_vec();
        let eg = |name| kkt.eq[wdp.eq_group(name).unwrap_or(0..0)].to_vec();
        Ok(WdpMultipliers {
            upper: ig("upper"),
            eta_g: ig("g"),
            alpha: ig("gap").first().copied().unwrap_or(0.0),
            eta_u: ig("u_nonneg"),
            cap: ig("u_cap"),
            nu_h: eg("h"),
            beta: eg("stationarity"),
        })
    }
}

/// Classifies each lower inequality at an MPEC point. `g_i` counts as zero
/// under the scaled activity test, `u_i` when `u_i ≤ tol`; points where
/// both are clearly nonzero violate complementarity.
pub fn classify(mpec: &Nlp, p: &[f64], tol: f64) -> Result<Vec<IndexClass>, CertifyError> {
    require(mpec, Form::Mpec)?;
    let ev = Evaluated::at(mpec, p)?;
    classify_with(mpec, &ev, p, tol)
}

fn classify_with(mpec: &Nlp, ev: &Evaluated, p: &[f64], tol: f64) -> Result<Vec<IndexClass>, CertifyError> {
    let g = mpec.ineq_group("g").unwrap_or(0..0);
    let u = mpec.block_or_empty("u");
    g.zip(u)
        .map(|(row, ui)| {
            let g_zero = ev.ineq_active(row, tol);
            let u_zero = p[ui] <= tol;
            match (g_zero, u_zero) {
                (true, true) => Ok(IndexClass::ZeroZero),
                (true, false) => Ok(IndexClass::ZeroPlus),
                (false, true) => Ok(IndexClass::MinusZero),
                (false, false) => Err(CertifyError::InfeasiblePoint {
                    violation: (p[ui] * ev.c[row]).abs(),
                }),
            }
        })
        .collect()
}

/// Column layout used by both the S-stationarity LP and its verifier.
struct SColumns {
    upper: Range<usize>,
    g: Range<usize>,
    u: Range<usize>,
    cap: Range<usize>,
    h: Range<usize>,
    stat: Range<usize>,
}

impl SColumns {
    fn of(mpec: &Nlp) -> Self {
        let ig = |name| mpec.ineq_group(name).unwrap_or(0..0);
        let eg = |name| mpec.eq_group(name).unwrap_or(0..0);
        SColumns {
            upper: ig("upper"),
            g: ig("g"),
            u: ig("u_nonneg"),
            cap: ig("u_cap"),
            h: eg("h"),
            stat: eg("stationarity"),
        }
    }

    /// Gradient columns in the order upper, g, u, cap, h, stationarity.
    fn gradients<'a>(&self, ev: &'a Evaluated) -> Vec<&'a [f64]> {
        let ineq = |r: &Range<usize>| ev.jac_c[r.clone()].iter().map(|v| v.as_slice()).collect::<Vec<_>>();
        let eq = |r: &Range<usize>| ev.jac_h[r.clone()].iter().map(|v| v.as_slice()).collect::<Vec<_>>();
        let mut cols = ineq(&self.upper);
        cols.extend(ineq(&self.g));
        cols.extend(ineq(&self.u));
        cols.extend(ineq(&self.cap));
        cols.extend(eq(&self.h));
        cols.extend(eq(&self.stat));
        cols
    }

    fn signs(&self, ev: &Evaluated, classes: &[IndexClass], tol: f64) -> Vec<Sign> {
        let active = |i: usize| {
            if ev.ineq_active(i, tol) {
                Sign::NonNeg
            } else {
                Sign::Zero
            }
        };
        let mut s: Vec<Sign> = self.upper.clone().map(active).collect();
        s.extend(classes.iter().map(|c| match c {
            IndexClass::MinusZero => Sign::Zero,
            IndexClass::ZeroPlus => Sign::Free,
            IndexClass::ZeroZero => Sign::NonNeg,
        }));
        s.extend(classes.iter().map(|c| match c {
            IndexClass::MinusZero => Sign::Free,
            IndexClass::ZeroPlus => Sign::Zero,
            IndexClass::ZeroZero => Sign::NonNeg,
        }));
        s.extend(self.cap.clone().map(active));
        s.extend(std::iter::repeat_n(Sign::Free, self.h.len() + self.stat.len()));
        s
    }

    fn split(&self, flat: &[f64]) -> SMultipliers {
        let mut at = 0;
        let mut take = |len: usize| {
            let v = flat[at..at + len].to_vec();
            at += len;
            v
        };
        SMultipliers {
            upper: take(self.upper.len()),
            lambda_g: take(self.g.len()),
            lambda_u: take(self.u.len()),
            cap: take(self.cap.len()),
            nu_h: take(self.h.len()),
            gamma: take(self.stat.len()),
        }
    }

    fn flatten(&self, m: &SMultipliers) -> Result<Vec<f64>, CertifyError> {
        let parts = [
            (&m.upper, self.upper.len()),
            (&m.lambda_g, self.g.len()),
            (&m.lambda_u, self.u.len()),
            (&m.cap, self.cap.len()),
            (&m.nu_h, self.h.len()),
            (&m.gamma, self.stat.len()),
        ];
        let mut out = Vec::new();
        for (v, len) in parts {
            if v.len() != len {
                return Err(CertifyError::DimensionMismatch {
                    expected: len,
                    got: v.len(),
                });
            }
            out.extend(v.iter().copied());
        }
        Ok(out)
    }
}

/// S-stationarity of an MPEC point: the least ∞-norm residual of
/// `∇F + Σ multipliers · gradients` under the sign rules of each biactivity
/// class (`λ^g_i = 0` on `g_i < 0 = u_i`, `λ^u_i = 0` on `g_i = 0 < u_i`,
/// both nonnegative on `g_i = 0 = u_i`). Holds iff that residual is at most
/// `tol`.
pub fn s_stationarity(mpec: &Nlp, p: &[f64], tol: f64) -> Result<CertifyReport, CertifyError> {
    require(mpec, Form::Mpec)?;
    let ev = Evaluated::at(mpec, p)?;
    ev.require_feasible(tol)?;
    let classes = classify_with(mpec, &ev, p, tol)?;
    let cols = SColumns::of(mpec);
    let grads = cols.gradients(&ev);
    let signs = cols.signs(&ev, &classes, tol);
    let Some((flat, r)) = min_residual(&ev.grad_f, &grads, &signs)? else {
        return Ok(CertifyReport {
            verdict: Verdict::Inconclusive,
            certificate: None,
            residual: f64::INFINITY,
        });
    };
    let holds = r <= tol;
    Ok(CertifyReport {
        verdict: if holds { Verdict::Holds } else { Verdict::Fails },
        certificate: holds.then(|| Certificate::SStationary(cols.split(&flat))),
        residual: r,
    })
}

/// Direct re-check of S-stationarity multipliers: the largest of the
/// stationarity residual, scaled infeasibility and every sign-rule
/// violation at the classification implied by `tol`.
pub fn verify_s_stationarity(mpec: &Nlp, p: &[f64], mult: &SMultipliers, tol: f64) -> Result<f64, CertifyError> {
    require(mpec, Form::Mpec)?;
    let ev = Evaluated::at(mpec, p)?;
    let classes = classify_with(mpec, &ev, p, tol)?;
    let cols = SColumns::of(mpec);
    let flat = cols.flatten(mult)?;
    let signs = cols.signs(&ev, &classes, tol);
    let stat = super::combination_residual(&ev.grad_f, &cols.gradients(&ev), &flat);
    let sign = flat
        .iter()
        .zip(&signs)
        .map(|(v, s)| match s {
            Sign::Free => 0.0,
            Sign::NonNeg => (-v).max(0.0),
            Sign::Zero => v.abs(),
        })
        .fold(0.0, f64::max);
    Ok(stat.max(sign).max(ev.scaled_violation()))
}

fn diagonal_distance(wdp: &Nlp, p: &[f64]) -> f64 {
    let y = wdp.block_or_empty("y");
    let z = wdp.block_or_empty("z");
    y.zip(z)
        .map(|(i, j)| (p[i] - p[j]).abs() / (1.0 + p[i].abs()))
        .fold(0.0, f64::max)
}

fn require_diagonal(wdp: &Nlp, p: &[f64]) -> Result<(), CertifyError> {
    if p.len() != wdp.dim {
        return Err(CertifyError::DimensionMismatch {
            expected: wdp.dim,
            got: p.len(),
        });
    }
    let distance = diagonal_distance(wdp, p);
    if distance > DIAGONAL_TOL {
        Err(CertifyError::NotOnDiagonal { distance })
    } else {
        Ok(())
    }
}

/// Maps WDP-KKT multipliers at a point with `z = y` to S-stationarity
/// multipliers of the MPEC at `(x, y, u, v)`:
/// `λ^g = η^g − αu`, `λ^u = η^u + αg(x,y)`, `γ = β`, `ν_h ↦ ν_h − αv`;
/// upper and cap multipliers carry over.
pub fn wdp_kkt_to_s(wdp: &Nlp, mult: &WdpMultipliers, p: &[f64]) -> Result<SMultipliers, CertifyError> {
    require(wdp, Form::Wdp)?;
    require_diagonal(wdp, p)?;
    let u = &p[wdp.block_or_empty("u")];
    let v = &p[wdp.block_or_empty("v")];
    if mult.eta_g.len() != u.len() || mult.eta_u.len() != u.len() || mult.nu_h.len() != v.len() {
        return Err(CertifyError::DimensionMismatch {
            expected: 2 * u.len() + v.len(),
            got: mult.eta_g.len() + mult.eta_u.len() + mult.nu_h.len(),
        });
    }
    let mut g = Vec::with_capacity(u.len());
    for row in wdp.ineq_group("g").unwrap_or(0..0) {
        g.push(wdp.ineq[row].eval(p)?);
    }
    let a = mult.alpha;
    Ok(SMultipliers {
        upper: mult.upper.clone(),
        lambda_g: mult.eta_g.iter().zip(u).map(|(e, ui)| e - a * ui).collect(),
        lambda_u: mult.eta_u.iter().zip(&g).map(|(e, gi)| e + a * gi).collect(),
        cap: mult.cap.clone(),
        nu_h: mult.nu_h.iter().zip(v).map(|(n, vj)| n - a * vj).collect(),
        gamma: mult.beta.clone(),
    })
}

/// Builds the abnormal multiplier at a WDP point with `z = y` and checks
/// every row of the abnormal KKT system (stationarity without `∇F`,
/// complementarity, signs, feasibility). Holds iff all are at most
/// [`ABNORMAL_TOL`], which certifies that MFCQ fails.
pub fn abnormal_multiplier(wdp: &Nlp, p: &[f64]) -> Result<CertifyReport, CertifyError> {
    require(wdp, Form::Wdp)?;
    require_diagonal(wdp, p)?;
    let mut eta_u = Vec::new();
    for row in wdp.ineq_group("g").unwrap_or(0..0) {
        eta_u.push(-wdp.ineq[row].eval(p)?);
    }
    let mult = AbnormalMultiplier {
        alpha: 1.0,
        beta: vec![0.0; wdp.eq_group("stationarity").map_or(0, |r| r.len())],
        eta_g: p[wdp.block_or_empty("u")].to_vec(),
        eta_u,
        nu_h: p[wdp.block_or_empty("v")].to_vec(),
    };
    let residual = verify_abnormal(wdp, p, &mult)?;
    let holds = residual <= ABNORMAL_TOL;
    Ok(CertifyReport {
        verdict: if holds { Verdict::Holds } else { Verdict::Fails },
        certificate: holds.then_some(Certificate::Abnormal(mult)),
        residual,
    })
}

/// Largest residual of the abnormal system at `p` for the given multiplier
/// (upper and cap multipliers zero). Infinite if the multiplier is zero.
pub fn verify_abnormal(wdp: &Nlp, p: &[f64], mult: &AbnormalMultiplier) -> Result<f64, CertifyError> {
    require(wdp, Form::Wdp)?;
    let ev = Evaluated::at(wdp, p)?;
    let g = wdp.ineq_group("g").unwrap_or(0..0);
    let u = wdp.ineq_group("u_nonneg").unwrap_or(0..0);
    let h = wdp.eq_group("h").unwrap_or(0..0);
    let stat = wdp.eq_group("stationarity").unwrap_or(0..0);
    let gap = wdp
        .ineq_group("gap")
        .map(|r| r.start)
        .ok_or(CertifyError::WrongForm("WDP"))?;
    if mult.eta_g.len() != g.len()
        || mult.eta_u.len() != u.len()
        || mult.nu_h.len() != h.len()
        || mult.beta.len() != stat.len()
    {
        return Err(CertifyError::DimensionMismatch {
            expected: g.len() + u.len() + h.len() + stat.len(),
            got: mult.eta_g.len() + mult.eta_u.len() + mult.nu_h.len() + mult.beta.len(),
        });
    }
    let size = mult
        .alpha
        .abs()
        .max(norm_inf(&mult.beta))
        .max(norm_inf(&mult.eta_g))
        .max(norm_inf(&mult.eta_u));
    if size == 0.0 {
        return Ok(f64::INFINITY);
    }

    let mut r = vec![0.0; wdp.dim];
    axpy(&mut r, mult.alpha, &ev.jac_c[gap]);
    for (k, row) in g.clone().enumerate() {
        axpy(&mut r, mult.eta_g[k], &ev.jac_c[row]);
    }
    for (k, row) in u.clone().enumerate() {
        axpy(&mut r, mult.eta_u[k], &ev.jac_c[row]);
    }
    for (k, row) in h.enumerate() {
        axpy(&mut r, mult.nu_h[k], &ev.jac_h[row]);
    }
    for (k, row) in stat.enumerate() {
        axpy(&mut r, mult.beta[k], &ev.jac_h[row]);
    }
    let mut worst = norm_inf(&r);
    worst = worst.max((mult.alpha * ev.c[gap]).abs());
    for (k, row) in g.enumerate() {
        worst = worst.max((mult.eta_g[k] * ev.c[row]).abs());
    }
    for (k, row) in u.enumerate() {
        worst = worst.max((mult.eta_u[k] * ev.c[row]).abs());
    }
    let neg = std::iter::once(&mult.alpha)
        .chain(&mult.eta_g)
        .chain(&mult.eta_u)
        .fold(0.0_f64, |m, v| m.max(-v));
    Ok(worst.max(neg).max(ev.scaled_violation()))
}
