//! Forward propagation of (value, gradient, Hessian) through an expression.
//!
//! Derivatives are taken with respect to a caller-chosen list of variables
//! (the "local" coordinates); all other variables are treated as constants.
//! Hessians are dense in the local coordinates.

use super::{Expr, ExprError, Node};

#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `k × k`; empty when only first order was requested.
    pub hess: Vec<f64>,
}

impl Jet {
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[i * self.dim() + j]
    }
}

struct Ctx<'a> {
    point: &'a [f64],
    slot: Vec<Option<usize>>,
    k: usize,
    second: bool,
}

pub(super) fn evaluate(expr: &Expr, point: &[f64], wrt: &[usize], second_order: bool) -> Result<Jet, ExprError> {
    let mut slot = vec![None; point.len()];
    for (local, &global) in wrt.iter().enumerate() {
        if global >= point.len() {
            return Err(ExprError::DimensionMismatch {
                index: global,
                got: point.len(),
            });
        }
        slot[global] = Some(local);
    }
    let ctx = Ctx {
        point,
        slot,
        k: wrt.len(),
        second: second_order,
    };
    let mut jet = ctx.eval(expr);
    if second_order {
        let k = ctx.k;
        for i in 0..k {
            for j in 0..i {
                jet.hess[i * k + j] = jet.hess[j * k + i];
            }
        }
    }
    let finite =
        jet.value.is_finite() && jet.grad.iter().all(|v| v.is_finite()) && jet.hess.iter().all(|v| v.is_finite());
    if finite {
        Ok(jet)
    } else {
        Err(ExprError::NonFiniteValue("derivative evaluation"))
    }
}

impl Ctx<'_> {
    fn constant(&self, value: f64) -> Jet {
        Jet {
            value,
            grad: vec![0.0; self.k],
            hess: if self.second {
                vec![0.0; self.k * self.k]
            } else {
                Vec::new()
            },
        }
    }

    fn eval(&self, e: &Expr) -> Jet {
        match e.node() {
            Node::Const(c) => self.constant(*c),
            Node::Var(i) => {
                let mut j = self.constant(self.point[*i]);
                if let Some(s) = self.slot[*i] {
                    j.grad[s] = 1.0;
                }
                j
            }
            Node::Add(a, b) => {
                let (mut ja, jb) = (self.eval(a), self.eval(b));
                ja.value += jb.value;
                axpy(&mut ja.grad, 1.0, &jb.grad);
                axpy(&mut ja.hess, 1.0, &jb.hess);
                ja
            }
            Node::Sub(a, b) => {
                let (mut ja, jb) = (self.eval(a), self.eval(b));
                ja.value -= jb.value;
                axpy(&mut ja.grad, -1.0, &jb.grad);
                axpy(&mut ja.hess, -1.0, &jb.hess);
                ja
            }
            Node::Neg(a) => {
                let mut ja = self.eval(a);
                ja.value = -ja.value;
                ja.grad.iter_mut().for_each(|g| *g = -*g);
                ja.hess.iter_mut().for_each(|h| *h = -*h);
                ja
            }
            Node::Mul(a, b) => {
                let (ja, jb) = (self.eval(a), self.eval(b));
                let mut out = self.constant(ja.value * jb.value);
                for i in 0..self.k {
                    out.grad[i] = ja.value * jb.grad[i] + jb.value * ja.grad[i];
                }
                if self.second {
                    let k = self.k;
                    for i in 0..k {
                        for j in i..k {
                            let idx = i * k + j;
                            out.hess[idx] = ja.value * jb.hess[idx]
                                + jb.value * ja.hess[idx]
                                + (ja.grad[i] * jb.grad[j] + jb.grad[i] * ja.grad[j]);
                        }
                    }
                }
                out
            }
            Node::Div(a, b) => {
                let (ja, jb) = (self.eval(a), self.eval(b));
                let q = ja.value / jb.value;
                let mut out = self.constant(q);
                for i in 0..self.k {
                    out.grad[i] = (ja.grad[i] - q * jb.grad[i]) / jb.value;
                }
                if self.second {
                    let k = self.k;
                    for i in 0..k {
                        for j in i..k {
                            let idx = i * k + j;
                            out.hess[idx] = (ja.hess[idx]
                                - q * jb.hess[idx]
                                - (out.grad[i] * jb.grad[j] + jb.grad[i] * out.grad[j]))
                                / jb.value;
                        }
                    }
                }
                out
            }
            Node::Pow(a, n) => {
                let ja = self.eval(a);
                let n = *n;
                let d1 = n as f64 * ja.value.powi(n as i32 - 1);
                let d2 = if n >= 2 {
                    (n as f64) * (n as f64 - 1.0) * ja.value.powi(n as i32 - 2)
                } else {
                    0.0
                };
                self.chain(ja.value.powi(n as i32), d1, d2, &ja)
            }
            Node::Exp(a) => {
                let ja = self.eval(a);
                let v = ja.value.exp();
                self.chain(v, v, v, &ja)
            }
        }
    }

    /// Composition φ(a) given φ(a), φ'(a), φ''(a).
    fn chain(&self, value: f64, d1: f64, d2: f64, ja: &Jet) -> Jet {
        let mut out = self.constant(value);
        for i in 0..self.k {
            out.grad[i] = d1 * ja.grad[i];
        }
        if self.second {
            let k = self.k;
            for i in 0..k {
                for j in i..k {
                    let idx = i * k + j;
                    out.hess[idx] = d1 * ja.hess[idx] + d2 * (ja.grad[i] * ja.grad[j]);
                }
            }
        }
        out
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
