//! Bilevel problems: the general smooth model, its linear specialization and
//! the random instance generator.
//!
//! Variables of a [`BilevelProblem`] are numbered `x = 0..n`, `y = n..n+m`.

mod file;
mod generate;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::Expr;
use crate::solve::{LinearProgram, SolveReport};

pub use file::{FileError, PointFile, PointForm, Problem, ProblemFile};
pub use generate::{generate_instance, generate_instance_with_retries, Generated};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: String, expected: usize, got: usize },
    #[error("{what} references variable {index}, outside 0..{dim}")]
    IndexOutOfRange { what: String, index: usize, dim: usize },
    #[error("upper-level constraint {constraint} references lower-level variable {index}")]
    UpperConstraintUsesY { constraint: usize, index: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
}

/// `min_x F(x,y)` s.t. `G_X(x) ≤ 0` and `y` solving
/// `min_y f(x,y)` s.t. `g(x,y) ≤ 0, h(x,y) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelProblem {
    pub n: usize,
    pub m: usize,
    pub upper_objective: Expr,
    pub lower_objective: Expr,
    /// `g`, each `≤ 0`
    pub lower_ineq: Vec<Expr>,
    /// `h`, each `= 0`
    pub lower_eq: Vec<Expr>,
    /// `G_X`, each `≤ 0`, over `x` only
    pub upper_ineq: Vec<Expr>,
}

impl BilevelProblem {
    /// Number of lower-level inequalities.
    pub fn p(&self) -> usize {
        self.lower_ineq.len()
    }

    /// Number of lower-level equalities.
    pub fn q(&self) -> usize {
        self.lower_eq.len()
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    /// All invariant violations, or `Ok` for a well-formed problem.
    pub fn validate(&self) -> Result<(), Vec<ModelError>> {
        let dim = self.dim();
        let mut errors = Vec::new();
        let mut check = |what: String, e: &Expr| {
            if let Some(index) = e.max_var().filter(|&i| i >= dim) {
                errors.push(ModelError::IndexOutOfRange { what, index, dim });
            }
        };
        check("upper objective".into(), &self.upper_objective);
        check("lower objective".into(), &self.lower_objective);
        for (i, g) in self.lower_ineq.iter().enumerate() {
            check(format!("lower inequality {i}"), g);
        }
        for (j, h) in self.lower_eq.iter().enumerate() {
            check(format!("lower equality {j}"), h);
        }
        for (i, c) in self.upper_ineq.iter().enumerate() {
            check(format!("upper constraint {i}"), c);
        }
        for (i, c) in self.upper_ineq.iter().enumerate() {
            if let Some(&index) = c.variables().iter().find(|&&v| v >= self.n && v < dim) {
                errors.push(ModelError::UpperConstraintUsesY { constraint: i, index });
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// Linear bilevel data:
///
/// ```text
///     min_x  c1ᵀx + c2ᵀy   s.t.  A1 x ≤ b1,
///     y ∈ argmin_y { d2ᵀy : A2 x + B2 y ≤ b2, l_b ≤ y ≤ u_b }
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBilevelData {
    /// p × n
    pub a1: DMatrix<f64>,
    pub b1: Vec<f64>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub d2: Vec<f64>,
    /// q × n
    pub a2: DMatrix<f64>,
    /// q × m
    pub b2_mat: DMatrix<f64>,
    pub b2: Vec<f64>,
    pub l_b: Vec<f64>,
    pub u_b: Vec<f64>,
}

impl LinearBilevelData {
    /// `(n, p, m, q)`: upper variables, upper constraints, lower variables,
    /// lower general constraints.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.c1.len(), self.b1.len(), self.c2.len(), self.b2.len())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (n, p, m, q) = self.dims();
        let shape = |what: &str, mat: &DMatrix<f64>, rows: usize, cols: usize| {
            if mat.nrows() != rows {
                Err(ModelError::DimensionMismatch {
                    what: format!("{what} rows"),
                    expected: rows,
                    got: mat.nrows(),
                })
            } else if mat.ncols() != cols {
                Err(ModelError::DimensionMismatch {
                    what: format!("{what} columns"),
                    expected: cols,
                    got: mat.ncols(),
                })
            } else {
                Ok(())
            }
        };
        shape("A1", &self.a1, p, n)?;
        shape("A2", &self.a2, q, n)?;
        shape("B2", &self.b2_mat, q, m)?;
        for (what, v) in [("d2", &self.d2), ("l_b", &self.l_b), ("u_b", &self.u_b)] {
            if v.len() != m {
                return Err(ModelError::DimensionMismatch {
                    what: what.into(),
                    expected: m,
                    got: v.len(),
                });
            }
        }
        let all = self
            .a1
            .iter()
            .chain(self.a2.iter())
            .chain(self.b2_mat.iter())
            .chain(self.b1.iter())
            .chain(&self.c1)
            .chain(&self.c2)
            .chain(&self.d2)
            .chain(&self.b2)
            .chain(&self.l_b)
            .chain(&self.u_b);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(ModelError::InvalidData("non-finite entry".into()));
        }
        if let Some(j) = (0..m).find(|&j| self.l_b[j] >= self.u_b[j]) {
            return Err(ModelError::InvalidData(format!("l_b[{j}] ≥ u_b[{j}]")));
        }
        Ok(())
    }

    /// Upper objective `c1ᵀx + c2ᵀy`.
    pub fn upper_objective(&self, x: &[f64], y: &[f64]) -> f64 {
        crate::linalg::dot(&self.c1, x) + crate::linalg::dot(&self.c2, y)
    }

    /// Lower inequality values `g = (A2x + B2y − b2; y − u_b; l_b − y)`.
    pub fn lower_ineq_values(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let (_, _, m, q) = self.dims();
        let mut g = Vec::with_capacity(q + 2 * m);
        for i in 0..q {
            let ax: f64 = (0..x.len()).map(|j| self.a2[(i, j)] * x[j]).sum();
            let by: f64 = (0..m).map(|j| self.b2_mat[(i, j)] * y[j]).sum();
            g.push(ax + by - self.b2[i]);
        }
        g.extend((0..m).map(|j| y[j] - self.u_b[j]));
        g.extend((0..m).map(|j| self.l_b[j] - y[j]));
        g
    }

    /// The lower-level LP at fixed `x`: `min d2ᵀy` s.t.
    /// `B2 y ≤ b2 − A2 x`, `l_b ≤ y ≤ u_b`.
    pub fn lower_level_lp(&self, x: &[f64]) -> LinearProgram {
        let (n, _, m, q) = self.dims();
        let mut lp = LinearProgram::new(self.d2.clone());
        for i in 0..q {
            let ax: f64 = (0..n).map(|j| self.a2[(i, j)] * x[j]).sum();
            lp.add_le(self.b2_mat.row(i).iter().copied().collect(), self.b2[i] - ax);
        }
        for j in 0..m {
            lp.set_bounds(j, self.l_b[j], self.u_b[j]);
        }
        lp
    }

    /// Lower-level multipliers `u = (u1, u2, u3)` ordered like
    /// [`lower_ineq_values`](Self::lower_ineq_values), read off an optimal
    /// report of [`lower_level_lp`](Self::lower_level_lp). They satisfy
    /// `d2 + B2ᵀu1 + u2 − u3 = 0`.
    pub fn lower_multipliers(&self, report: &SolveReport) -> Vec<f64> {
        let mult = &report.multipliers;
        let mut u = mult.ineq.clone();
        u.extend(&mult.upper);
        u.extend(&mult.lower);
        u
    }

    /// The general expression form of this data.
    pub fn to_expressions(&self) -> Result<BilevelProblem, ModelError> {
        self.validate()?;
        let (n, p, m, q) = self.dims();
        let row = |mat: &DMatrix<f64>, i: usize| -> Vec<f64> { mat.row(i).iter().copied().collect() };
        let upper_ineq = (0..p)
            .map(|i| Expr::linear(&row(&self.a1, i), 0) - self.b1[i])
            .collect();
        let mut lower_ineq = Vec::with_capacity(q + 2 * m);
        for i in 0..q {
            lower_ineq.push(Expr::linear(&row(&self.a2, i), 0) + Expr::linear(&row(&self.b2_mat, i), n) - self.b2[i]);
        }
        for j in 0..m {
            lower_ineq.push(Expr::var(n + j) - self.u_b[j]);
        }
        for j in 0..m {
            lower_ineq.push(self.l_b[j] - Expr::var(n + j));
        }
        Ok(BilevelProblem {
            n,
            m,
            upper_objective: Expr::linear(&self.c1, 0) + Expr::linear(&self.c2, n),
            lower_objective: Expr::linear(&self.d2, n),
            lower_ineq,
            lower_eq: Vec::new(),
            upper_ineq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solve::{solve_lp, Status};

    fn one_by_one() -> LinearBilevelData {
        LinearBilevelData {
            a1: DMatrix::from_element(1, 1, 1.0),
            b1: vec![0.0],
            c1: vec![3.0],
            c2: vec![4.0],
            d2: vec![1.0],
            a2: DMatrix::zeros(1, 1),
            b2_mat: DMatrix::from_element(1, 1, 1.0),
            b2: vec![0.0],
            l_b: vec![-10.0],
            u_b: vec![10.0],
        }
    }

    #[test]
    fn linear_to_expressions() {
        let bp = one_by_one().to_expressions().unwrap();
        assert_eq!(bp.p(), 3);
        assert_eq!(bp.q(), 0);
        assert_eq!(bp.upper_objective.eval(&[1.0, 2.0]).unwrap(), 11.0);
        assert!(bp.validate().is_ok());
    }

    #[test]
    fn one_dimensional_lower_lp() {
        let d = one_by_one();
        let r = solve_lp(&d.lower_level_lp(&[0.0])).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert_eq!(r.point, vec![-10.0]);
        assert_eq!(r.objective, -10.0);
        let u = d.lower_multipliers(&r);
        // d2 + B2ᵀu1 + u2 − u3 = 0
        assert!((1.0 + u[0] + u[1] - u[2]).abs() < 1e-14);
    }

    #[test]
    fn validation_errors() {
        let mut bp = one_by_one().to_expressions().unwrap();
        bp.lower_ineq.push(Expr::var(2));
        bp.upper_ineq.push(Expr::var(1));
        let errs = bp.validate().unwrap_err();
        assert!(matches!(errs[0], ModelError::IndexOutOfRange { index: 2, .. }));
        assert!(matches!(
            errs[1],
            ModelError::UpperConstraintUsesY {
                constraint: 1,
                index: 1
            }
        ));

        let mut d = one_by_one();
        d.d2.push(0.0);
        assert!(matches!(d.to_expressions(), Err(ModelError::DimensionMismatch { .. })));
    }
}
