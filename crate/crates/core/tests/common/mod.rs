#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use wolfe_bilevel::model::{BilevelProblem, ProblemFile};
use wolfe_bilevel::Expr;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn fixture(name: &str) -> BilevelProblem {
    ProblemFile::load(&fixture_path(name))
        .unwrap()
        .into_problem()
        .unwrap()
        .bilevel()
        .unwrap()
}

/// Random tree over `vars` variables. Divisions are by `1 + e²` and
/// exponents see a damped argument so values stay moderate on `[-1, 1]^k`.
pub fn random_tree<R: Rng>(rng: &mut R, depth: u32, vars: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.2) {
        return if rng.gen_bool(0.7) {
            Expr::var(rng.gen_range(0..vars))
        } else {
            Expr::constant(rng.gen_range(-2.0..2.0))
        };
    }
    let a = random_tree(rng, depth - 1, vars);
    match rng.gen_range(0..7) {
        0 => a + random_tree(rng, depth - 1, vars),
        1 => a - random_tree(rng, depth - 1, vars),
        2 => a * random_tree(rng, depth - 1, vars),
        3 => a / (random_tree(rng, depth - 1, vars).powi(2) + 1.0),
        4 => a.powi(rng.gen_range(0..4)),
        5 => (a * 0.5).exp(),
        _ => -a,
    }
}

/// Central differences of the value.
pub fn fd_grad(e: &Expr, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (e.eval(&a).unwrap() - e.eval(&b).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the analytic gradient.
pub fn fd_hess(e: &Expr, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let wrt: Vec<usize> = (0..x.len()).collect();
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            let ga = e.grad(&a, &wrt).unwrap();
            let gb = e.grad(&b, &wrt).unwrap();
            ga.iter().zip(&gb).map(|(p, q)| (p - q) / (2.0 * h)).collect()
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// All `k`-subsets of `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0..1usize << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

/// Best vertex of `{A x ≤ b, lo ≤ x ≤ hi}`, or `None` if no vertex is
/// feasible. Bounded, so a nonempty region always has one.
pub fn vertex_oracle(c: &[f64], a: &[Vec<f64>], b: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let n = c.len();
    let mut rows: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), hi));
        rows.push((e.iter().map(|v| -v).collect(), -lo));
    }
    let mut best: Option<f64> = None;
    for s in subsets(rows.len(), n) {
        let m = DMatrix::from_fn(n, n, |r, col| rows[s[r]].0[col]);
        let rhs = DVector::from_fn(n, |r, _| rows[s[r]].1);
        let Some(x) = m.lu().solve(&rhs) else { continue };
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        let feasible = rows
            .iter()
            .all(|(row, bi)| row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= bi + 1e-9);
        if feasible {
            let v: f64 = c.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}
