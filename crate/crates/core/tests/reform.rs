mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wolfe_bilevel::model::generate_instance;
use wolfe_bilevel::reform::{
    build_mpec, build_mpec_with, build_wdp, build_wdp_with, check_feasible, drop_z, lift_point, relax_mpec, relax_wdp,
    Form, Nlp, ReformOptions,
};

use common::fixture;

fn eval_all(rows: &[wolfe_bilevel::Expr], p: &[f64]) -> Vec<f64> {
    rows.iter().map(|e| e.eval(p).unwrap()).collect()
}

/// Constraint values of the nonconvex example's WDP in (x, y, z, u), hand
/// written: x ≥ 0, y ≥ x, f(x,y) − L(x,z,u) ≤ 0, −u ≤ 0 and ∇_z L = 0.
fn ex31_rows(p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (x, y, z, u) = (p[0], p[1], p[2], p[3]);
    let f = |x: f64, y: f64| -(-(y - x).powi(2)).exp() + 0.3 * y * y - 0.6 * x * y;
    let l = f(x, z) - u * (z - x);
    let s = z - x;
    let lz = 2.0 * s * (-s * s).exp() + 0.6 * s - u;
    (vec![-x, x - y, f(x, y) - l, -u], vec![lz])
}

#[test]
fn nonconvex_example_wdp_structure() {
    let w = build_wdp(&fixture("ex31.prob")).unwrap();
    assert_eq!(w.form, Form::Wdp);
    assert_eq!(w.dim, 4);
    assert_eq!(w.ineq_group("gap"), Some(2..3));
    assert_eq!(w.eq_group("stationarity"), Some(0..1));
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let p: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (ineq, eq) = ex31_rows(&p);
        for (a, b) in eval_all(&w.ineq, &p).iter().zip(&ineq) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
        for (a, b) in eval_all(&w.eq, &p).iter().zip(&eq) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn cubic_example_stationarity_row() {
    let w = build_wdp(&fixture("ex41.prob")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (z, u1, u2) = (p[2], p[3], p[4]);
        let want = 1.0 + 3.0 * u1 * z * z - u2;
        assert!((w.eq[0].eval(&p).unwrap() - want).abs() <= 1e-13 * (1.0 + want.abs()));
    }
}

#[test]
fn quadratic_example_mpec_structure() {
    let mp = build_mpec(&fixture("ex42.prob")).unwrap();
    assert_eq!(mp.form, Form::Mpec);
    assert_eq!(mp.dim, 4);
    let st = mp.eq_group("stationarity").unwrap();
    let cp = mp.eq_group("complementarity").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..20 {
        let p: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (x, y, u1, u2) = (p[0], p[1], p[2], p[3]);
        let want = 2.0 * (y - 1.0) - u1 + u2;
        assert!((mp.eq[st.start].eval(&p).unwrap() - want).abs() <= 1e-13);
        let comp = u1 * (3.0 * x - y - 3.0) + u2 * (x + y - 1.0);
        assert!((mp.eq[cp.start].eval(&p).unwrap() - comp).abs() <= 1e-13);
    }
    // u = 0 with g < 0 satisfies complementarity
    assert_eq!(mp.eq[cp.start].eval(&[-1.0, 0.5, 0.0, 0.0]).unwrap(), 0.0);

    let cw = build_mpec_with(
        &fixture("ex42.prob"),
        ReformOptions {
            componentwise: true,
            ..ReformOptions::default()
        },
    )
    .unwrap();
    assert_eq!(cw.eq_group("complementarity").unwrap().len(), 2);
}

#[test]
fn relaxed_wdp_differs_by_the_parameter() {
    let w = build_wdp(&fixture("ex31.prob")).unwrap();
    let gap = w.ineq_group("gap").unwrap().start;
    let at_zero = relax_wdp(&w, 0.0).unwrap();
    let r = relax_wdp(&w, 0.1).unwrap();
    assert_eq!(r.relaxation, Some(0.1));
    // f = L = −1 at the origin, so the relaxed gap row reads −0.1
    assert!((r.ineq[gap].eval(&[0.0; 4]).unwrap() + 0.1).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..50 {
        let p: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = w.ineq[gap].eval(&p).unwrap();
        assert_eq!(at_zero.ineq[gap].eval(&p).unwrap(), base);
        assert!((r.ineq[gap].eval(&p).unwrap() - (base - 0.1)).abs() < 1e-14);
    }
    // relaxing again replaces rather than stacks the parameter
    let twice = relax_wdp(&r, 0.01).unwrap();
    assert!((twice.ineq[gap].eval(&[0.0; 4]).unwrap() + 0.01).abs() < 1e-15);
    assert!(relax_wdp(&w, -1.0).is_err());
    assert!(relax_wdp(&build_mpec(&fixture("ex31.prob")).unwrap(), 0.1).is_err());
}

#[test]
fn relaxed_mpec_bounds_the_negated_product() {
    let mp = build_mpec(&fixture("ex42.prob")).unwrap();
    let t = 0.3;
    let r = relax_mpec(&mp, t).unwrap();
    assert!(r.eq_group("complementarity").is_none());
    let row = r.ineq_group("complementarity").unwrap();
    assert_eq!(row.len(), 1);
    // u = (1, 0) and g1 = 3x − y − 3 = −0.5 give −uᵀg − t = 0.5 − t
    let p = [0.0, -2.5, 1.0, 0.0];
    let g1 = 3.0 * p[0] - p[1] - 3.0;
    assert_eq!(g1, -0.5);
    assert!((r.ineq[row.start].eval(&p).unwrap() - (0.5 - t)).abs() < 1e-15);
    // u = 0 reads 0 ≤ t
    assert_eq!(r.ineq[row.start].eval(&[0.7, 0.2, 0.0, 0.0]).unwrap(), -t);
    assert!(relax_mpec(&build_wdp(&fixture("ex42.prob")).unwrap(), t).is_err());
}

#[test]
fn lift_and_drop() {
    let bp = fixture("ex42.prob");
    let mp = build_mpec(&bp).unwrap();
    let w = build_wdp(&bp).unwrap();
    let lifted = lift_point(&mp, &[0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(lifted, vec![0.0, 1.0, 1.0, 0.0, 0.0]);
    assert_eq!(drop_z(&w, &lifted).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    assert!(lift_point(&mp, &[0.0; 3]).is_err());
    assert!(lift_point(&w, &[0.0; 5]).is_err());
}

/// `(x, y, u)` from the lower LP at a random `x`.
fn mpec_point(d: &wolfe_bilevel::model::LinearBilevelData, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use wolfe_bilevel::solve::{solve_lp, Status};
    let (n, ..) = d.dims();
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let r = solve_lp(&d.lower_level_lp(&x)).unwrap();
        if r.status == Status::Optimal {
            let mut p = x;
            p.extend(&r.point);
            p.extend(d.lower_multipliers(&r));
            return p;
        }
    }
}

#[test]
fn lifting_preserves_feasibility_in_both_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for seed in 0..10 {
        let d = generate_instance(seed, (3, 2, 4, 3), 0.4).unwrap();
        let bp = d.to_expressions().unwrap();
        // drop the upper rows so only the lower-level structure is compared
        let bp = wolfe_bilevel::model::BilevelProblem {
            upper_ineq: vec![],
            ..bp
        };
        let (mp, w) = (build_mpec(&bp).unwrap(), build_wdp(&bp).unwrap());
        for _ in 0..10 {
            let p = mpec_point(&d, &mut rng);
            let mut bad = p.clone();
            let k = rng.gen_range(mp.block("y").unwrap());
            bad[k] += rng.gen_range(-30.0..30.0);
            for q in [p, bad] {
                let a = check_feasible(&mp, &q, 1e-10).unwrap().feasible;
                let b = check_feasible(&w, &lift_point(&mp, &q).unwrap(), 1e-10)
                    .unwrap()
                    .feasible;
                assert_eq!(a, b, "{q:?}");
            }
        }
    }
}

fn brute_violation(nlp: &Nlp, p: &[f64]) -> f64 {
    let ineq = nlp.ineq.iter().map(|c| c.eval(p).unwrap().max(0.0));
    let eq = nlp.eq.iter().map(|h| h.eval(p).unwrap().abs());
    ineq.chain(eq).fold(0.0, f64::max)
}

#[test]
fn feasibility_report() {
    let w = build_wdp(&fixture("ex41.prob")).unwrap();
    let f = check_feasible(&w, &[8.0, 0.0, -3.0, 0.0, 1.0], 0.0).unwrap();
    assert!(f.feasible);
    assert_eq!(f.max_violation(), 0.0);
    let f = check_feasible(&w, &[8.0, 0.0, -3.0, -1.0, 1.0], 1e-9).unwrap();
    assert!(!f.feasible);
    // u1 = −1 also perturbs the gap and stationarity rows; the u ≥ 0 row alone reads 1
    let row = w.ineq_group("u_nonneg").unwrap().start;
    assert_eq!(w.ineq[row].eval(&[8.0, 0.0, -3.0, -1.0, 1.0]).unwrap(), 1.0);
    assert!(f.max_ineq_violation >= 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..50 {
        let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let f = check_feasible(&w, &p, 1e-9).unwrap();
        assert!((f.max_violation() - brute_violation(&w, &p)).abs() <= 1e-14);
    }
    assert!(check_feasible(&w, &[0.0; 4], 1e-9).is_err());
}

#[test]
fn multiplier_cap_rows() {
    let bp = fixture("ex41.prob");
    let opts = ReformOptions {
        u_cap: Some(5.0),
        ..ReformOptions::default()
    };
    let w = build_wdp_with(&bp, opts).unwrap();
    let caps = w.ineq_group("u_cap").unwrap();
    assert_eq!(caps.len(), 2);
    let p = [8.0, 0.0, -3.0, 0.0, 7.0];
    assert_eq!(w.ineq[caps.start + 1].eval(&p).unwrap(), 2.0);
    assert!(build_wdp(&bp).unwrap().ineq_group("u_cap").is_none());
}
