use admissos::heuristic::{Gradient, Heuristic};
use admissos::poly::{monomials_up_to, Polynomial};
use proptest::prelude::*;

fn poly_with(nvars: usize, coef: impl Strategy<Value = f64> + Clone) -> impl Strategy<Value = Polynomial> {
    prop::collection::vec((prop::collection::vec(0u32..=3, nvars), coef), 0..7)
        .prop_map(move |terms| Polynomial::from_terms(nvars, terms).unwrap())
}

fn integer_poly(nvars: usize) -> impl Strategy<Value = Polynomial> {
    poly_with(nvars, (-5i32..=5).prop_map(f64::from))
}

fn real_poly(nvars: usize) -> impl Strategy<Value = Polynomial> {
    poly_with(nvars, -2.0..2.0f64)
}

fn same(a: &Polynomial, b: &Polynomial) -> bool {
    a.try_sub(b).unwrap().max_abs_coefficient() <= 1e-12
}

fn triple() -> impl Strategy<Value = (Polynomial, Polynomial, Polynomial)> {
    (1usize..=3).prop_flat_map(|n| (integer_poly(n), integer_poly(n), integer_poly(n)))
}

fn binomial(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
}

proptest! {
    #[test]
    fn addition_is_commutative_and_associative((a, b, c) in triple()) {
        prop_assert!(same(&(&a + &b), &(&b + &a)));
        prop_assert!(same(&(&(&a + &b) + &c), &(&a + &(&b + &c))));
    }

    #[test]
    fn multiplication_is_commutative_and_associative((a, b, c) in triple()) {
        prop_assert!(same(&(&a * &b), &(&b * &a)));
        prop_assert!(same(&(&(&a * &b) * &c), &(&a * &(&b * &c))));
    }

    #[test]
    fn multiplication_distributes((a, b, c) in triple()) {
        prop_assert!(same(&(&a * &(&b + &c)), &(&(&a * &b) + &(&a * &c))));
    }

    #[test]
    fn evaluation_is_multiplicative(
        (a, b, pt) in (1usize..=3).prop_flat_map(|n| (real_poly(n), real_poly(n), prop::collection::vec(-1.5..1.5f64, n)))
    ) {
        let lhs = (&a * &b).eval(&pt).unwrap();
        let rhs = a.eval(&pt).unwrap() * b.eval(&pt).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn gradient_matches_central_difference(
        (p, pt, i) in (1usize..=3).prop_flat_map(|n| (real_poly(n), prop::collection::vec(-1.0..1.0f64, n), 0..n))
    ) {
        let h = 1e-5;
        let mut up = pt.clone();
        let mut down = pt.clone();
        up[i] += h;
        down[i] -= h;
        let fd = (p.eval(&up).unwrap() - p.eval(&down).unwrap()) / (2.0 * h);
        let exact = p.grad().get(i).eval(&pt).unwrap();
        // truncation h^2 |p'''| / 6 with |p'''| bounded by the coefficients
        let bound = h * h * 6.0 * 27.0 * p.max_abs_coefficient() * p.num_terms() as f64 + 1e-9;
        prop_assert!((fd - exact).abs() <= bound, "{fd} vs {exact}");
    }

    #[test]
    fn composite_gradient_matches_central_difference(
        pt in prop::collection::vec(-2.0..2.0f64, 3),
        lo in prop::collection::vec(-0.5..0.0f64, 2),
        scale in 0.1..2.0f64,
    ) {
        let h = Heuristic::max(vec![
            Heuristic::distance_to_box(3, vec![0, 1], lo.clone(), vec![0.5, 0.5]),
            Heuristic::scaled(scale, Heuristic::abs(3, 2)),
        ]);
        let c = h.compile();
        if let Gradient::Smooth(g) = c.gradient(&pt) {
            let step = 1e-5;
            for i in 0..3 {
                let mut up = pt.clone();
                let mut down = pt.clone();
                up[i] += step;
                down[i] -= step;
                let fd = (c.value(&up) - c.value(&down)) / (2.0 * step);
                prop_assert!((fd - g[i]).abs() <= 1e-4, "axis {i}: {fd} vs {}", g[i]);
            }
        }
    }
}

#[test]
fn monomial_count_matches_binomial() {
    for n in 1..=4usize {
        for d in 0..=12u32 {
            assert_eq!(
                monomials_up_to(n, d).len() as u64,
                binomial(n as u64 + d as u64, d as u64),
                "nvars {n} degree {d}"
            );
        }
    }
}
