//! Single-level reformulations of a [`BilevelProblem`] and their
//! t-relaxations.
//!
//! Variable layouts:
//!
//! * WDP: `(x, y, z, u, v)` of sizes `n, m, m, p, q`;
//! * MPEC: `(x, y, u, v)` of sizes `n, m, p, q`.
//!
//! Constraint order in the WDP: inequalities `upper`, `g(x,y)`,
//! `gap = f(x,y) − L(x,z,u,v)`, `−u`, optionally `u − u_cap`; equalities
//! `h(x,y)`, `∇_z L`. In the MPEC: inequalities `upper`, `g(x,y)`, `−u`,
//! optionally `u − u_cap`; equalities `h(x,y)`, `∇_y L`, complementarity.

use std::fmt::{self, Write as _};
use std::ops::Range;

use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::model::{BilevelProblem, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReformError {
    #[error("invalid bilevel problem: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidProblem(Vec<ModelError>),
    #[error("not a WDP reformulation")]
    NotAWdp,
    #[error("not an MPEC reformulation")]
    NotAnMpec,
    #[error("point layout mismatch: expected {expected} entries, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("point has dimension {got}, problem has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Wdp,
    Mpec,
    /// Any other NLP, e.g. a lower-level problem.
    Plain,
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Form::Wdp => "wdp",
            Form::Mpec => "mpec",
            Form::Plain => "plain",
        })
    }
}

/// Named contiguous range of variables or constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub range: Range<usize>,
}

/// Bilevel dimensions carried by a reformulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizes {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q: usize,
    /// Number of upper-level constraints.
    pub upper: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReformOptions {
    /// Adds `u ≤ u_cap` rows.
    pub u_cap: Option<f64>,
    /// MPEC only: `u_i g_i = 0` per index instead of the single `uᵀg = 0`.
    pub componentwise: bool,
}

/// `min objective` s.t. `ineq ≤ 0`, `eq = 0` over `dim` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Nlp {
    pub dim: usize,
    pub objective: Expr,
    pub ineq: Vec<Expr>,
    pub eq: Vec<Expr>,
    pub layout: Vec<Block>,
    pub ineq_groups: Vec<Block>,
    pub eq_groups: Vec<Block>,
    pub form: Form,
    pub sizes: Option<Sizes>,
    pub options: ReformOptions,
    /// Relaxation parameter `t`, if this is a relaxed reformulation.
    pub relaxation: Option<f64>,
    /// Unrelaxed gap expression (WDP) or complementarity products (MPEC).
    core: Vec<Expr>,
}

fn blocks(parts: &[(&'static str, usize)]) -> Vec<Block> {
    let mut start = 0;
    parts
        .iter()
        .filter(|(_, len)| *len > 0)
        .map(|&(name, len)| {
            let b = Block {
                name,
                range: start..start + len,
            };
            start += len;
            b
        })
        .collect()
}

fn find(blocks: &[Block], name: &str) -> Option<Range<usize>> {
    blocks.iter().find(|b| b.name == name).map(|b| b.range.clone())
}

impl Nlp {
    /// A plain NLP with a single variable block `w`.
    pub fn new(dim: usize, objective: Expr, ineq: Vec<Expr>, eq: Vec<Expr>) -> Self {
        let (ni, ne) = (ineq.len(), eq.len());
        Nlp {
            dim,
            objective,
            ineq,
            eq,
            layout: blocks(&[("w", dim)]),
            ineq_groups: blocks(&[("ineq", ni)]),
            eq_groups: blocks(&[("eq", ne)]),
            form: Form::Plain,
            sizes: None,
            options: ReformOptions::default(),
            relaxation: None,
            core: Vec::new(),
        }
    }

    /// Variable block by name (`x`, `y`, `z`, `u`, `v`); empty blocks are absent.
    pub fn block(&self, name: &str) -> Option<Range<usize>> {
        find(&self.layout, name)
    }

    /// Like [`block`](Self::block) but an absent block is the empty range at
    /// its natural position.
    pub fn block_or_empty(&self, name: &str) -> Range<usize> {
        if let Some(r) = self.block(name) {
            return r;
        }
        let order = ["x", "y", "z", "u", "v"];
        let pos = order.iter().position(|n| *n == name).unwrap_or(order.len());
        let end = order[..pos]
            .iter()
            .rev()
            .find_map(|n| self.block(n))
            .map_or(0, |r| r.end);
        end..end
    }

    pub fn ineq_group(&self, name: &str) -> Option<Range<usize>> {
        find(&self.ineq_groups, name)
    }

    pub fn eq_group(&self, name: &str) -> Option<Range<usize>> {
        find(&self.eq_groups, name)
    }

    fn check_dim(&self, p: &[f64]) -> Result<(), ReformError> {
        if p.len() != self.dim {
            return Err(ReformError::DimensionMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        Ok(())
    }

    /// Text dump: layout, groups and every expression in prefix form.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "form {}", self.form);
        let _ = writeln!(out, "dim {}", self.dim);
        if let Some(t) = self.relaxation {
            let _ = writeln!(out, "relaxation {t:e}");
        }
        if let Some(cap) = self.options.u_cap {
            let _ = writeln!(out, "u_cap {cap:e}");
        }
        for b in &self.layout {
            let _ = writeln!(out, "block {} {}..{}", b.name, b.range.start, b.range.end);
        }
        let _ = writeln!(out, "objective {}", self.objective);
        for g in &self.ineq_groups {
            for i in g.range.clone() {
                let _ = writeln!(out, "ineq {} {} {}", g.name, i, self.ineq[i]);
            }
        }
        for g in &self.eq_groups {
            for i in g.range.clone() {
                let _ = writeln!(out, "eq {} {} {}", g.name, i, self.eq[i]);
            }
        }
        out
    }
}

fn validated(bp: &BilevelProblem) -> Result<Sizes, ReformError> {
    bp.validate().map_err(ReformError::InvalidProblem)?;
    Ok(Sizes {
        n: bp.n,
        m: bp.m,
        p: bp.p(),
        q: bp.q(),
        upper: bp.upper_ineq.len(),
    })
}

/// Lagrangian `f + uᵀg + vᵀh` with the lower-level variables renumbered to
/// start at `y_at` and multipliers `u` at `u_at`, `v` at `u_at + p`.
fn lagrangian(bp: &BilevelProblem, y_at: usize, u_at: usize) -> Expr {
    let n = bp.n;
    let shift = |i: usize| if i >= n { i - n + y_at } else { i };
    let p = bp.p();
    let mut terms = vec![bp.lower_objective.remap(&shift)];
    for (i, g) in bp.lower_ineq.iter().enumerate() {
        terms.push(Expr::var(u_at + i) * g.remap(&shift));
    }
    for (j, h) in bp.lower_eq.iter().enumerate() {
        terms.push(Expr::var(u_at + p + j) * h.remap(&shift));
    }
    Expr::sum(terms)
}

/// The Wolfe-dual Lagrangian `L(x, z, u, v)` in WDP coordinates.
pub fn wdp_lagrangian(bp: &BilevelProblem) -> Expr {
    lagrangian(bp, bp.n + bp.m, bp.n + 2 * bp.m)
}

pub fn build_wdp(bp: &BilevelProblem) -> Result<Nlp, ReformError> {
    build_wdp_with(bp, ReformOptions::default())
}

pub fn build_wdp_with(bp: &BilevelProblem, options: ReformOptions) -> Result<Nlp, ReformError> {
    let s = validated(bp)?;
    let (n, m, p, q) = (s.n, s.m, s.p, s.q);
    let z0 = n + m;
    let u0 = n + 2 * m;
    let dim = n + 2 * m + p + q;
    let l = wdp_lagrangian(bp);
    let gap = &bp.lower_objective - &l;

    let mut ineq = bp.upper_ineq.clone();
    ineq.extend(bp.lower_ineq.iter().cloned());
    ineq.push(gap.clone());
    ineq.extend((0..p).map(|i| -Expr::var(u0 + i)));
    let cap_rows = if let Some(cap) = options.u_cap {
        ineq.extend((0..p).map(|i| Expr::var(u0 + i) - cap));
        p
    } else {
        0
    };
    let mut eq = bp.lower_eq.clone();
    eq.extend((0..m).map(|k| l.diff(z0 + k)));

    Ok(Nlp {
        dim,
        objective: bp.upper_objective.clone(),
        ineq,
        eq,
        layout: blocks(&[("x", n), ("y", m), ("z", m), ("u", p), ("v", q)]),
        ineq_groups: blocks(&[
            ("upper", s.upper),
            ("g", p),
            ("gap", 1),
            ("u_nonneg", p),
            ("u_cap", cap_rows),
        ]),
        eq_groups: blocks(&[("h", q), ("stationarity", m)]),
        form: Form::Wdp,
        sizes: Some(s),
        options: ReformOptions {
            componentwise: false,
            ..options
        },
        relaxation: None,
        core: vec![gap],
    })
}

pub fn build_mpec(bp: &BilevelProblem) -> Result<Nlp, ReformError> {
    build_mpec_with(bp, ReformOptions::default())
}

pub fn build_mpec_with(bp: &BilevelProblem, options: ReformOptions) -> Result<Nlp, ReformError> {
    let s = validated(bp)?;
    let (n, m, p, q) = (s.n, s.m, s.p, s.q);
    let u0 = n + m;
    let dim = n + m + p + q;
    let l = lagrangian(bp, n, u0);

    let mut ineq = bp.upper_ineq.clone();
    ineq.extend(bp.lower_ineq.iter().cloned());
    ineq.extend((0..p).map(|i| -Expr::var(u0 + i)));
    let cap_rows = if let Some(cap) = options.u_cap {
        ineq.extend((0..p).map(|i| Expr::var(u0 + i) - cap));
        p
    } else {
        0
    };
    let products: Vec<Expr> = bp
        .lower_ineq
        .iter()
        .enumerate()
        .map(|(i, g)| Expr::var(u0 + i) * g.clone())
        .collect();
    let core = if options.componentwise {
        products
    } else {
        vec![Expr::sum(products)]
    };
    let mut eq = bp.lower_eq.clone();
    eq.extend((0..m).map(|k| l.diff(n + k)));
    eq.extend(core.iter().cloned());

    Ok(Nlp {
        dim,
        objective: bp.upper_objective.clone(),
        ineq,
        eq,
        layout: blocks(&[("x", n), ("y", m), ("u", p), ("v", q)]),
        ineq_groups: blocks(&[("upper", s.upper), ("g", p), ("u_nonneg", p), ("u_cap", cap_rows)]),
        eq_groups: blocks(&[("h", q), ("stationarity", m), ("complementarity", core.len())]),
        form: Form::Mpec,
        sizes: Some(s),
        options,
        relaxation: None,
        core,
    })
}

fn check_t(t: f64) -> Result<(), ReformError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(ReformError::InvalidParameter(format!(
            "relaxation parameter must be finite and nonnegative, got {t}"
        )))
    }
}

/// WDP(t): the gap row becomes `f − L − t ≤ 0`. Relaxing an already relaxed
/// problem replaces its parameter.
pub fn relax_wdp(w: &Nlp, t: f64) -> Result<Nlp, ReformError> {
    check_t(t)?;
    let gap_row = match (w.form, w.ineq_group("gap")) {
        (Form::Wdp, Some(r)) if w.core.len() == 1 => r.start,
        _ => return Err(ReformError::NotAWdp),
    };
    let mut out = w.clone();
    out.ineq[gap_row] = &w.core[0] - &Expr::constant(t);
    out.relaxation = Some(t);
    Ok(out)
}

/// MPEC(t): the complementarity equalities are replaced by `−uᵀg − t ≤ 0`
/// (or `−u_i g_i − t ≤ 0` per index in componentwise mode).
pub fn relax_mpec(mp: &Nlp, t: f64) -> Result<Nlp, ReformError> {
    check_t(t)?;
    if mp.form != Form::Mpec || mp.core.is_empty() {
        return Err(ReformError::NotAnMpec);
    }
    let mut out = mp.clone();
    if let Some(r) = out.eq_group("complementarity") {
        out.eq.truncate(r.start);
        out.eq_groups.retain(|b| b.name != "complementarity");
    }
    if let Some(r) = out.ineq_group("complementarity") {
        out.ineq.truncate(r.start);
        out.ineq_groups.retain(|b| b.name != "complementarity");
    }
    let start = out.ineq.len();
    out.ineq.extend(mp.core.iter().map(|c| -c - t));
    out.ineq_groups.push(Block {
        name: "complementarity",
        range: start..out.ineq.len(),
    });
    out.relaxation = Some(t);
    Ok(out)
}

/// `(x, y, u, v) ↦ (x, y, z = y, u, v)` for the WDP matching `mpec`.
pub fn lift_point(mpec: &Nlp, point: &[f64]) -> Result<Vec<f64>, ReformError> {
    let s = match (mpec.form, mpec.sizes) {
        (Form::Mpec, Some(s)) => s,
        _ => return Err(ReformError::NotAnMpec),
    };
    let expected = s.n + s.m + s.p + s.q;
    if point.len() != expected {
        return Err(ReformError::LayoutMismatch {
            expected,
            got: point.len(),
        });
    }
    let split = s.n + s.m;
    let mut out = Vec::with_capacity(expected + s.m);
    out.extend_from_slice(&point[..split]);
    out.extend_from_slice(&point[s.n..split]);
    out.extend_from_slice(&point[split..]);
    Ok(out)
}

/// `(x, y, z, u, v) ↦ (x, y, u, v)`.
pub fn drop_z(wdp: &Nlp, point: &[f64]) -> Result<Vec<f64>, ReformError> {
    let s = match (wdp.form, wdp.sizes) {
        (Form::Wdp, Some(s)) => s,
        _ => return Err(ReformError::NotAWdp),
    };
    let expected = s.n + 2 * s.m + s.p + s.q;
    if point.len() != expected {
        return Err(ReformError::LayoutMismatch {
            expected,
            got: point.len(),
        });
    }
    let split = s.n + s.m;
    let mut out = point[..split].to_vec();
    out.extend_from_slice(&point[split + s.m..]);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    /// `max(0, max_i c_i)`
    pub max_ineq_violation: f64,
    /// `max_j |h_j|`
    pub max_eq_violation: f64,
    pub feasible: bool,
}

impl Feasibility {
    pub fn max_violation(&self) -> f64 {
        self.max_ineq_violation.max(self.max_eq_violation)
    }
}

pub fn check_feasible(nlp: &Nlp, point: &[f64], tol: f64) -> Result<Feasibility, ReformError> {
    nlp.check_dim(point)?;
    let mut max_ineq = 0.0_f64;
    for c in &nlp.ineq {
        max_ineq = max_ineq.max(c.eval(point)?);
    }
    let mut max_eq = 0.0_f64;
    for h in &nlp.eq {
        max_eq = max_eq.max(h.eval(point)?.abs());
    }
    Ok(Feasibility {
        max_ineq_violation: max_ineq,
        max_eq_violation: max_eq,
        feasible: max_ineq <= tol && max_eq <= tol,
    })
}

/// The lower-level problem at fixed `x` as an NLP in `y` alone.
pub fn lower_level(bp: &BilevelProblem, x: &[f64]) -> Result<Nlp, ReformError> {
    validated(bp)?;
    if x.len() != bp.n {
        return Err(ReformError::DimensionMismatch {
            expected: bp.n,
            got: x.len(),
        });
    }
    let n = bp.n;
    let fix = |i: usize| {
        if i < n {
            Expr::constant(x[i])
        } else {
            Expr::var(i - n)
        }
    };
    let objective = bp.lower_objective.substitute(&fix);
    let ineq = bp.lower_ineq.iter().map(|g| g.substitute(&fix)).collect();
    let eq = bp.lower_eq.iter().map(|h| h.substitute(&fix)).collect();
    let mut nlp = Nlp::new(bp.m, objective, ineq, eq);
    nlp.layout = blocks(&[("y", bp.m)]);
    Ok(nlp)
}
