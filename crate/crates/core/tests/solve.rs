mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wolfe_bilevel::certify::kkt_residual;
use wolfe_bilevel::reform::{build_mpec, build_wdp, Nlp};
use wolfe_bilevel::solve::{
    solve_lp, solve_nlp, solve_nlp_with, solve_qp, LinearProgram, QuadraticProgram, SqpOptions, Status,
};
use wolfe_bilevel::Expr;

use common::{fixture, subsets, vertex_oracle};

#[test]
fn lp_trivial_cases() {
    let mut lp = LinearProgram::new(vec![1.0]);
    lp.add_ge(vec![1.0], 1.0);
    let r = solve_lp(&lp).unwrap();
    assert_eq!(r.status, Status::Optimal);
    assert!((r.point[0] - 1.0).abs() < 1e-12);
    assert!((r.multipliers.ineq[0] - 1.0).abs() < 1e-12);

    let mut lp = LinearProgram::new(vec![-1.0]);
    lp.add_ge(vec![-1.0], -1.0);
    let r = solve_lp(&lp).unwrap();
    assert!((r.point[0] - 1.0).abs() < 1e-12);
}

#[test]
fn lp_matches_vertex_enumeration_and_strong_duality() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (lo, hi) = (-3.0, 4.0);
    let mut optimal = 0;
    for case in 0..200 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=6);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..3.0)).collect();
        let mut lp = LinearProgram::new(c.clone());
        for (row, bi) in a.iter().zip(&b) {
            lp.add_le(row.clone(), *bi);
        }
        for j in 0..n {
            lp.set_bounds(j, lo, hi);
        }
        let rep = solve_lp(&lp).unwrap();
        match vertex_oracle(&c, &a, &b, lo, hi) {
            None => assert_eq!(rep.status, Status::Infeasible, "case {case}"),
            Some(best) => {
                assert_eq!(rep.status, Status::Optimal, "case {case}");
                optimal += 1;
                assert!((rep.objective - best).abs() <= 1e-9 * (1.0 + best.abs()), "case {case}");
                let mu = &rep.multipliers;
                // c + Aᵀλ − μ_lo + μ_hi = 0, all multipliers nonnegative
                for j in 0..n {
                    let r = c[j] + (0..m).map(|i| a[i][j] * mu.ineq[i]).sum::<f64>() - mu.lower[j] + mu.upper[j];
                    assert!(r.abs() < 1e-9, "case {case}: stationarity {r}");
                }
                assert!(mu.ineq.iter().chain(&mu.lower).chain(&mu.upper).all(|&v| v >= -1e-12));
                let dual = -b.iter().zip(&mu.ineq).map(|(p, q)| p * q).sum::<f64>() + lo * mu.lower.iter().sum::<f64>()
                    - hi * mu.upper.iter().sum::<f64>();
                assert!(
                    (dual - rep.objective).abs() <= 1e-9 * (1.0 + dual.abs()),
                    "case {case}: gap"
                );
            }
        }
    }
    assert!(optimal > 100, "too few feasible cases: {optimal}");
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Strictly convex QP by brute force: for each working set solve the
/// equality-constrained KKT system and keep the primal-dual feasible one.
fn qp_oracle(h: &DMatrix<f64>, g: &[f64], a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = g.len();
    for k in 0..=a.len().min(n) {
        for w in subsets(a.len(), k) {
            let dim = n + k;
            let mut kkt = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            for j in 0..n {
                rhs[j] = -g[j];
            }
            for (r, &i) in w.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = a[i][j];
                    kkt[(j, n + r)] = a[i][j];
                }
                rhs[n + r] = b[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x: Vec<f64> = sol.iter().take(n).copied().collect();
            let dual_ok = sol.iter().skip(n).all(|&l| l >= -1e-10);
            let primal_ok = a.iter().zip(b).all(|(row, bi)| dot(row, &x) <= bi + 1e-10);
            if dual_ok && primal_ok {
                return x;
            }
        }
    }
    panic!("oracle found no KKT point");
}

fn random_qp(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let n = rng.gen_range(1..=5);
    let k = rng.gen_range(0..=6);
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.5;
    let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let b: Vec<f64> = a.iter().map(|row| dot(row, &x0) + rng.gen_range(0.0..1.0)).collect();
    (h, g, a, b)
}

#[test]
fn qp_trivial_cases() {
    let mut qp = QuadraticProgram::new(DMatrix::identity(1, 1), vec![0.0]);
    qp.add_le(vec![-1.0], -1.0);
    let r = solve_qp(&qp).unwrap();
    assert!((r.point[0] - 1.0).abs() < 1e-12);

    let c = [1.5, -2.0];
    let qp = QuadraticProgram::new(DMatrix::identity(2, 2), c.iter().map(|v| -v).collect());
    let r = solve_qp(&qp).unwrap();
    assert!((r.point[0] - c[0]).abs() < 1e-12 && (r.point[1] - c[1]).abs() < 1e-12);
}

#[test]
fn qp_matches_subset_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..200 {
        let (h, g, a, b) = random_qp(&mut rng);
        let mut qp = QuadraticProgram::new(h.clone(), g.clone());
        for (row, bi) in a.iter().zip(&b) {
            qp.add_le(row.clone(), *bi);
        }
        let rep = solve_qp(&qp).unwrap();
        assert_eq!(rep.status, Status::Optimal, "case {case}");
        let x = qp_oracle(&h, &g, &a, &b);
        for (p, q) in rep.point.iter().zip(&x) {
            assert!((p - q).abs() <= 1e-8 * (1.0 + q.abs()), "case {case}: {p} vs {q}");
        }
    }
}

/// `½xᵀHx + gᵀx` s.t. `A x ≤ b` as an [`Nlp`].
fn qp_as_nlp(h: &DMatrix<f64>, g: &[f64], a: &[Vec<f64>], b: &[f64]) -> Nlp {
    let n = g.len();
    let mut terms = vec![Expr::linear(g, 0)];
    for i in 0..n {
        for j in 0..n {
            terms.push(Expr::var(i) * Expr::var(j) * (0.5 * h[(i, j)]));
        }
    }
    let ineq = a.iter().zip(b).map(|(row, bi)| Expr::linear(row, 0) - *bi).collect();
    Nlp::new(n, Expr::sum(terms), ineq, Vec::new())
}

#[test]
fn sqp_on_convex_qps_matches_qp_solver_and_certifier() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let tol = 1e-9;
    for case in 0..40 {
        let (h, g, a, b) = random_qp(&mut rng);
        let mut qp = QuadraticProgram::new(h.clone(), g.clone());
        for (row, bi) in a.iter().zip(&b) {
            qp.add_le(row.clone(), *bi);
        }
        let want = solve_qp(&qp).unwrap();
        let nlp = qp_as_nlp(&h, &g, &a, &b);
        let got = solve_nlp(&nlp, &vec![0.0; g.len()], tol, 200).unwrap();
        assert_eq!(got.status, Status::Optimal, "case {case}");
        for (p, q) in got.point.iter().zip(&want.point) {
            assert!((p - q).abs() <= 1e-8 * (1.0 + q.abs()), "case {case}: {p} vs {q}");
        }
        let cert = kkt_residual(&nlp, &got.point, 1e-6).unwrap();
        assert!(cert.residual <= 10.0 * tol, "case {case}: residual {}", cert.residual);
    }
}

/// The WDP optimum (0,0,0,0) of the nonconvex example is not a KKT point:
/// the gap row has zero gradient on the diagonal, so the y-component of
/// stationarity forces the multiplier of `x − y ≤ 0` to be −1. The SQP can
/// only creep toward it with growing multipliers; the relaxation method is
/// what reaches it.
#[test]
fn nonconvex_wdp_optimum_is_not_kkt_and_sqp_descends_feasibly() {
    let wdp = build_wdp(&fixture("ex31.prob")).unwrap();
    let origin = kkt_residual(&wdp, &[0.0; 4], 1e-6).unwrap();
    assert_eq!(origin.verdict, wolfe_bilevel::certify::Verdict::Fails);
    assert!((origin.residual - 1.0).abs() < 1e-9, "residual {}", origin.residual);

    let tol = 1e-8;
    let rep = solve_nlp(&wdp, &[1.0, 1.0, 1.0, 0.0], tol, 200).unwrap();
    assert!(rep.objective < 1.0, "objective {}", rep.objective);
    let viol = wolfe_bilevel::reform::check_feasible(&wdp, &rep.point, 1e-6).unwrap();
    assert!(viol.feasible, "{viol:?}");
    if rep.status == Status::Optimal {
        assert!(kkt_residual(&wdp, &rep.point, 1e-6).unwrap().residual <= 10.0 * tol);
    }
}

#[test]
fn sqp_stays_at_the_global_mpec_optimum() {
    let mpec = build_mpec(&fixture("ex42.prob")).unwrap();
    let rep = solve_nlp(&mpec, &[0.0, 1.0, 0.0, 0.0], 1e-8, 200).unwrap();
    assert!((rep.objective + 9.0).abs() <= 1e-8, "objective {}", rep.objective);
    assert!((rep.point[0]).abs() <= 1e-6 && (rep.point[1] - 1.0).abs() <= 1e-6);
}

#[test]
fn merit_never_increases_on_accepted_steps() {
    let opts = SqpOptions {
        tol: 1e-10,
        ..SqpOptions::default()
    };
    for (name, start) in [
        ("ex31.prob", vec![1.0, 1.0, 1.0, 0.0]),
        ("ex41.prob", vec![2.0, 0.5, 0.5, 1.0, 1.0]),
    ] {
        let wdp = build_wdp(&fixture(name)).unwrap();
        let (_, log) = solve_nlp_with(&wdp, &start, &opts).unwrap();
        assert!(!log.is_empty());
        for step in &log {
            assert!(step.merit_after <= step.merit_before + 1e-12, "{name}: {step:?}");
        }
    }
}
