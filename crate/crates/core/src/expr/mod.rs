//! Differentiable scalar expressions over indexed variables.
//!
//! Every objective and constraint in this crate is an [`Expr`]: an immutable
//! tree of constants, variables and a handful of smooth operations. Trees are
//! reference counted, so cloning is cheap and expressions can be shared
//! between threads.
//!
//! Two kinds of derivatives are offered:
//!
//! * numeric: [`Expr::grad`] and [`Expr::hess`] evaluate exact first and
//!   second derivatives at a point by forward propagation of value, gradient
//!   and Hessian through the tree;
//! * symbolic: [`Expr::diff`] returns a new expression for a partial
//!   derivative, which is how stationarity rows like `∇_z L = 0` become
//!   ordinary constraints.
//!
//! The smart constructors fold constants and drop neutral elements so that
//! symbolic derivatives of linear data stay small.

mod jet;
mod text;

use std::collections::BTreeSet;
use std::fmt;
use std::ops;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

pub use jet::Jet;
pub use text::ParseError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("point has dimension {got} but the expression references variable {index}")]
    DimensionMismatch { index: usize, got: usize },
    #[error("non-finite value encountered ({0})")]
    NonFiniteValue(&'static str),
}

/// One node of an expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, u32),
    Exp(Expr),
    Neg(Expr),
}

#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl Expr {
    fn from_node(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(value: f64) -> Self {
        Self::from_node(Node::Const(value))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn var(index: usize) -> Self {
        Self::from_node(Node::Var(index))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_const(&self, value: f64) -> bool {
        self.as_const() == Some(value)
    }

    /// `self^k` for a nonnegative integer exponent.
    pub fn powi(&self, k: u32) -> Expr {
        match (k, self.node()) {
            (0, _) => Expr::one(),
            (1, _) => self.clone(),
            (_, Node::Const(c)) => Expr::constant(c.powi(k as i32)),
            _ => Self::from_node(Node::Pow(self.clone(), k)),
        }
    }

    pub fn exp(&self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(c.exp()),
            _ => Self::from_node(Node::Exp(self.clone())),
        }
    }

    /// Sum of many terms, built as a balanced tree to keep recursion shallow.
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        let mut terms: Vec<Expr> = terms.into_iter().filter(|t| !t.is_const(0.0)).collect();
        if terms.is_empty() {
            return Expr::zero();
        }
        while terms.len() > 1 {
            let mut next = Vec::with_capacity(terms.len().div_ceil(2));
            let mut it = terms.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(a + b),
                    None => next.push(a),
                }
            }
            terms = next;
        }
        terms.pop().unwrap()
    }

    /// `Σ coeffs[i] · x[offset + i]`, skipping zero coefficients.
    pub fn linear(coeffs: &[f64], offset: usize) -> Expr {
        Expr::sum(
            coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(i, &c)| Expr::constant(c) * Expr::var(offset + i)),
        )
    }

    /// Sorted, deduplicated variable indices referenced by the tree.
    pub fn variables(&self) -> Vec<usize> {
        let mut set = BTreeSet::new();
        self.collect_vars(&mut set);
        set.into_iter().collect()
    }

    fn collect_vars(&self, set: &mut BTreeSet<usize>) {
        match self.node() {
            Node::Const(_) => {}
            Node::Var(i) => {
                set.insert(*i);
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.collect_vars(set);
                b.collect_vars(set);
            }
            Node::Pow(a, _) | Node::Exp(a) | Node::Neg(a) => a.collect_vars(set),
        }
    }

    /// Largest referenced variable index, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.variables().last().copied()
    }

    /// Polynomial degree if the expression is polynomial, `None` otherwise
    /// (division by a non-constant or `exp` of a non-constant).
    pub fn degree(&self) -> Option<u32> {
        match self.node() {
            Node::Const(_) => Some(0),
            Node::Var(_) => Some(1),
            Node::Add(a, b) | Node::Sub(a, b) => Some(a.degree()?.max(b.degree()?)),
            Node::Mul(a, b) => Some(a.degree()? + b.degree()?),
            Node::Div(a, b) => match b.degree()? {
                0 => a.degree(),
                _ => None,
            },
            Node::Pow(a, k) => Some(a.degree()? * k),
            Node::Exp(a) => match a.degree()? {
                0 => Some(0),
                _ => None,
            },
            Node::Neg(a) => a.degree(),
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.degree(), Some(d) if d <= 1)
    }

    /// Replaces every variable `i` by `map(i)`.
    pub fn substitute(&self, map: &dyn Fn(usize) -> Expr) -> Expr {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => map(*i),
            Node::Add(a, b) => a.substitute(map) + b.substitute(map),
            Node::Sub(a, b) => a.substitute(map) - b.substitute(map),
            Node::Mul(a, b) => a.substitute(map) * b.substitute(map),
            Node::Div(a, b) => a.substitute(map) / b.substitute(map),
            Node::Pow(a, k) => a.substitute(map).powi(*k),
            Node::Exp(a) => a.substitute(map).exp(),
            Node::Neg(a) => -a.substitute(map),
        }
    }

    /// Renumbers variables: `i ↦ map(i)`.
    pub fn remap(&self, map: &dyn Fn(usize) -> usize) -> Expr {
        self.substitute(&|i| Expr::var(map(i)))
    }

    /// Symbolic partial derivative with respect to variable `wrt`.
    pub fn diff(&self, wrt: usize) -> Expr {
        match self.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(i) => {
                if *i == wrt {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(a, b) => a.diff(wrt) + b.diff(wrt),
            Node::Sub(a, b) => a.diff(wrt) - b.diff(wrt),
            Node::Mul(a, b) => a.diff(wrt) * b.clone() + a.clone() * b.diff(wrt),
            Node::Div(a, b) => {
                let da = a.diff(wrt);
                let db = b.diff(wrt);
                if db.is_const(0.0) {
                    da / b.clone()
                } else {
                    (da * b.clone() - a.clone() * db) / b.powi(2)
                }
            }
            Node::Pow(a, k) => Expr::constant(*k as f64) * a.powi(k - 1) * a.diff(wrt),
            Node::Exp(a) => self.clone() * a.diff(wrt),
            Node::Neg(a) => -a.diff(wrt),
        }
    }

    fn check_dim(&self, point: &[f64]) -> Result<(), ExprError> {
        match self.max_var() {
            Some(index) if index >= point.len() => Err(ExprError::DimensionMismatch {
                index,
                got: point.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        self.check_dim(point)?;
        let v = self.eval_unchecked(point);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFiniteValue("evaluation"))
        }
    }

    fn eval_unchecked(&self, p: &[f64]) -> f64 {
        match self.node() {
            Node::Const(c) => *c,
            Node::Var(i) => p[*i],
            Node::Add(a, b) => a.eval_unchecked(p) + b.eval_unchecked(p),
            Node::Sub(a, b) => a.eval_unchecked(p) - b.eval_unchecked(p),
            Node::Mul(a, b) => a.eval_unchecked(p) * b.eval_unchecked(p),
            Node::Div(a, b) => a.eval_unchecked(p) / b.eval_unchecked(p),
            Node::Pow(a, k) => a.eval_unchecked(p).powi(*k as i32),
            Node::Exp(a) => a.eval_unchecked(p).exp(),
            Node::Neg(a) => -a.eval_unchecked(p),
        }
    }

    /// Value, gradient and (optionally) Hessian with respect to `wrt`.
    pub fn jet(&self, point: &[f64], wrt: &[usize], second_order: bool) -> Result<Jet, ExprError> {
        self.check_dim(point)?;
        jet::evaluate(self, point, wrt, second_order)
    }

    pub fn grad(&self, point: &[f64], wrt: &[usize]) -> Result<Vec<f64>, ExprError> {
        Ok(self.jet(point, wrt, false)?.grad)
    }

    /// Hessian block over `wrt`; symmetric bit for bit.
    pub fn hess(&self, point: &[f64], wrt: &[usize]) -> Result<DMatrix<f64>, ExprError> {
        let jet = self.jet(point, wrt, true)?;
        let k = wrt.len();
        Ok(DMatrix::from_fn(k, k, |i, j| jet.hess_at(i, j)))
    }

    /// Gradient with respect to every variable `0..dim`.
    pub fn full_grad(&self, point: &[f64]) -> Result<Vec<f64>, ExprError> {
        let vars = self.variables();
        let mut out = vec![0.0; point.len()];
        let jet = self.jet(point, &vars, false)?;
        for (slot, g) in vars.iter().zip(jet.grad) {
            out[*slot] = g;
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Expr, ParseError> {
        text::parse(text)
    }
}

impl From<f64> for Expr {
    fn from(value: f64) -> Self {
        Expr::constant(value)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        text::write_prefix(self, f)
    }
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a + b),
            (Some(a), _) if a == 0.0 => rhs,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr::from_node(Node::Add(self, rhs)),
        }
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a - b),
            (Some(a), _) if a == 0.0 => -rhs,
            (_, Some(b)) if b == 0.0 => self,
            _ => Expr::from_node(Node::Sub(self, rhs)),
        }
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a * b),
            (Some(a), _) | (_, Some(a)) if a == 0.0 => Expr::zero(),
            (Some(a), _) if a == 1.0 => rhs,
            (_, Some(b)) if b == 1.0 => self,
            (Some(a), _) if a == -1.0 => -rhs,
            (_, Some(b)) if b == -1.0 => -self,
            _ => Expr::from_node(Node::Mul(self, rhs)),
        }
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if b != 0.0 => Expr::constant(a / b),
            (Some(a), _) if a == 0.0 => Expr::zero(),
            (_, Some(b)) if b == 1.0 => self,
            _ => Expr::from_node(Node::Div(self, rhs)),
        }
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(a) => a.clone(),
            _ => Expr::from_node(Node::Neg(self)),
        }
    }
}

macro_rules! ref_ops {
    ($($tr:ident $method:ident),*) => {$(
        impl ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                ops::$tr::$method(self.clone(), rhs.clone())
            }
        }
        impl ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                ops::$tr::$method(self, Expr::constant(rhs))
            }
        }
        impl ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                ops::$tr::$method(Expr::constant(self), rhs)
            }
        }
    )*};
}

ref_ops!(Add add, Sub sub, Mul mul, Div div);

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -self.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: usize) -> Expr {
        Expr::var(i)
    }

    /// L(x,z,u) = −e^{−(z−x)²} + 0.3z² − 0.6xz − u(z−x), variables (x,z,u).
    fn example_lagrangian() -> Expr {
        let s = x(1) - x(0);
        -(-(s.powi(2))).exp() + 0.3 * x(1).powi(2) - 0.6 * x(0) * x(1) - x(2) * s
    }

    #[test]
    fn constant_and_square() {
        assert_eq!(Expr::constant(5.0).eval(&[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(Expr::constant(5.0).eval(&[]).unwrap(), 5.0);
        assert_eq!(x(0).powi(2).eval(&[3.0]).unwrap(), 9.0);
    }

    #[test]
    fn lagrangian_value_at_reference_point() {
        let l = example_lagrangian();
        assert_eq!(l.eval(&[0.0, 0.0, 1.3]).unwrap(), -1.0);
    }

    #[test]
    fn lagrangian_stationarity_vanishes_at_origin() {
        let l = example_lagrangian();
        let g = l.grad(&[0.0, 0.0, 0.0], &[1]).unwrap();
        assert_eq!(g, vec![0.0]);
        // symbolic route agrees with the printed stationarity expression
        let dz = l.diff(1);
        let printed = |p: &[f64]| {
            let s = p[1] - p[0];
            2.0 * s * (-s * s).exp() + 0.6 * s - p[2]
        };
        for p in [[0.3, -0.7, 1.1], [2.0, 1.0, 0.0], [-1.0, 0.5, 3.0]] {
            approx::assert_relative_eq!(dz.eval(&p).unwrap(), printed(&p), epsilon = 1e-14);
        }
    }

    #[test]
    fn grad_of_constant_is_zero() {
        assert_eq!(Expr::constant(2.5).grad(&[1.0, 2.0], &[0, 1]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hessians_of_simple_trees() {
        let lin = 3.0 * x(0) - 2.0 * x(1) + 1.0;
        assert_eq!(lin.hess(&[0.4, 0.2], &[0, 1]).unwrap(), DMatrix::zeros(2, 2));
        let sq = x(0).powi(2).hess(&[7.0], &[0]).unwrap();
        assert_eq!(sq[(0, 0)], 2.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let e = x(3) + x(0);
        assert_eq!(
            e.eval(&[1.0, 2.0]),
            Err(ExprError::DimensionMismatch { index: 3, got: 2 })
        );
    }

    #[test]
    fn division_by_zero_is_non_finite() {
        let e = Expr::one() / x(0);
        assert!(matches!(e.eval(&[0.0]), Err(ExprError::NonFiniteValue(_))));
        assert!(matches!(e.grad(&[0.0], &[0]), Err(ExprError::NonFiniteValue(_))));
    }

    #[test]
    fn smart_constructors_fold() {
        assert_eq!((Expr::zero() * x(0)).as_const(), Some(0.0));
        assert_eq!(x(0) * Expr::one(), x(0));
        assert_eq!(-(-x(2)), x(2));
        assert_eq!(x(1).powi(0).as_const(), Some(1.0));
        assert_eq!((Expr::constant(2.0) + 3.0).as_const(), Some(5.0));
    }

    #[test]
    fn degree_classification() {
        assert!((2.0 * x(0) - x(1) / 4.0).is_affine());
        assert_eq!((x(0) * x(1)).degree(), Some(2));
        assert_eq!(x(0).powi(3).degree(), Some(3));
        assert_eq!(x(0).exp().degree(), None);
        assert_eq!((Expr::one() / x(0)).degree(), None);
    }

    #[test]
    fn linear_skips_zeros_and_offsets() {
        let e = Expr::linear(&[1.0, 0.0, -2.0], 3);
        assert_eq!(e.variables(), vec![3, 5]);
        assert_eq!(e.eval(&[0.0, 0.0, 0.0, 1.0, 9.0, 2.0]).unwrap(), -3.0);
    }
}
