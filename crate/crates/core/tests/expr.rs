mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wolfe_bilevel::expr::ExprError;
use wolfe_bilevel::Expr;

use common::{fd_grad, fd_hess, fixture, random_tree, rel_err};

fn tree(seed: u64, vars: usize) -> Expr {
    random_tree(&mut ChaCha8Rng::seed_from_u64(seed), 4, vars)
}

#[test]
fn small_examples() {
    assert_eq!(Expr::constant(5.0).eval(&[1.0, 2.0]).unwrap(), 5.0);
    assert_eq!(Expr::var(0).powi(2).eval(&[3.0]).unwrap(), 9.0);
    assert_eq!(Expr::constant(5.0).grad(&[1.0, 2.0], &[0, 1]).unwrap(), vec![0.0, 0.0]);
    let lin = Expr::linear(&[1.0, -2.0, 3.0], 0) + 4.0;
    assert!(lin
        .hess(&[0.3, 0.1, 9.0], &[0, 1, 2])
        .unwrap()
        .iter()
        .all(|&v| v == 0.0));
    assert_eq!(Expr::var(0).powi(2).hess(&[7.0], &[0]).unwrap()[(0, 0)], 2.0);
}

#[test]
fn nonconvex_lagrangian_values() {
    // WDP coordinates (x, y, z, u)
    let l = wolfe_bilevel::reform::wdp_lagrangian(&fixture("ex31.prob"));
    assert!((l.eval(&[0.0, 0.0, 0.0, 1.3]).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(l.diff(2).eval(&[0.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
    // hand derivative 2(z−x)e^{−(z−x)²} + 0.6(z−x) − u
    let (x, z, u) = (0.4, 1.1, 0.7);
    let s: f64 = z - x;
    let want = 2.0 * s * (-s * s).exp() + 0.6 * s - u;
    assert!((l.diff(2).eval(&[x, 0.0, z, u]).unwrap() - want).abs() < 1e-14);
}

#[test]
fn out_of_range_variable_is_an_error() {
    let e = Expr::var(3) + Expr::var(0);
    assert!(matches!(e.eval(&[1.0, 2.0]), Err(ExprError::DimensionMismatch { .. })));
}

#[test]
fn parse_errors() {
    for bad in ["", "(add 1)", "(foo 1 2)", "(var 0) 1", "(pow (var 0) -1)", "(add 1 2"] {
        assert!(Expr::parse(bad).is_err(), "{bad:?} parsed");
    }
    let e = Expr::parse("(add 1 2 (var 0))").unwrap();
    assert_eq!(e.eval(&[4.0]).unwrap(), 7.0);
}

proptest! {
    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), pt in prop::collection::vec(-1.0f64..1.0, 3)) {
        let e = tree(seed, 3);
        let g = e.grad(&pt, &[0, 1, 2]).unwrap();
        for (a, b) in g.iter().zip(fd_grad(&e, &pt, 1e-6)) {
            prop_assert!(rel_err(*a, b) <= 1e-6, "{e}: {a} vs {b}");
        }
    }

    #[test]
    fn hessian_matches_differences_of_gradient(seed in any::<u64>(), pt in prop::collection::vec(-1.0f64..1.0, 3)) {
        let e = tree(seed, 3);
        let h = e.hess(&pt, &[0, 1, 2]).unwrap();
        for (i, row) in fd_hess(&e, &pt, 1e-5).iter().enumerate() {
            for (j, b) in row.iter().enumerate() {
                prop_assert!(rel_err(h[(i, j)], *b) <= 1e-5, "{e}: H[{i},{j}] {} vs {b}", h[(i, j)]);
                prop_assert_eq!(h[(i, j)].to_bits(), h[(j, i)].to_bits());
            }
        }
    }

    #[test]
    fn symbolic_and_forward_derivatives_agree(seed in any::<u64>(), pt in prop::collection::vec(-1.0f64..1.0, 3)) {
        let e = tree(seed, 3);
        let g = e.grad(&pt, &[0, 1, 2]).unwrap();
        for (k, gk) in g.iter().enumerate() {
            let d = e.diff(k).eval(&pt).unwrap();
            prop_assert!(rel_err(d, *gk) <= 1e-12, "{e}: d/dx{k} {d} vs {gk}");
        }
    }

    #[test]
    fn sums_evaluate_to_sums(a in any::<u64>(), b in any::<u64>(), pt in prop::collection::vec(-1.0f64..1.0, 3)) {
        let (ea, eb) = (tree(a, 3), tree(b, 3));
        let sum = (ea.clone() + eb.clone()).eval(&pt).unwrap();
        let want = ea.eval(&pt).unwrap() + eb.eval(&pt).unwrap();
        prop_assert!(rel_err(sum, want) <= 1e-14);
    }

    #[test]
    fn text_round_trip(seed in any::<u64>(), pt in prop::collection::vec(-1.0f64..1.0, 3)) {
        let e = tree(seed, 3);
        let text = e.to_string();
        let back = Expr::parse(&text).unwrap();
        prop_assert_eq!(back.to_string(), text);
        prop_assert_eq!(back.eval(&pt).unwrap().to_bits(), e.eval(&pt).unwrap().to_bits());
    }
}
