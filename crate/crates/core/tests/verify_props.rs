use admissos::heuristic::Heuristic;
use admissos::poly::Polynomial;
use admissos::synth::{builtin, compare, value_oracle, BuiltinOptions, OracleSpec};
use admissos::verify::{certify_admissible, falsify, CertifyOptions, FalsifyOptions, PolyProblem};
use proptest::prelude::*;

fn problem(name: &str, dim: usize) -> PolyProblem {
    let opts = BuiltinOptions {
        dim,
        ..BuiltinOptions::default()
    };
    builtin(name, &opts).unwrap().as_poly().unwrap().clone()
}

fn grid(p: &PolyProblem, per_axis: usize) -> FalsifyOptions {
    FalsifyOptions::uniform(per_axis, p.nstate() + p.ncontrol())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn certified_heuristics_survive_falsification(a in -1.5..1.5f64, b in -1.0..1.0f64) {
        let p = problem("single_integrator_1d", 1);
        let x = Polynomial::var(1, 0);
        let h = &x.scale(a) + &(&x * &x).scale(b);
        if certify_admissible(&p, &h, &CertifyOptions::default()).is_ok() {
            let mut opts = grid(&p, 50);
            opts.tol = 1e-6;
            let r = falsify(&p.black_box().unwrap(), &Heuristic::from(h), &opts).unwrap();
            prop_assert!(r.counterexample.is_none(), "{:?}", r.counterexample);
        }
    }

    #[test]
    fn max_of_admissible_heuristics_is_admissible(a in 0.0..1.0f64, b in 0.0..1.0f64, lo in -0.5..0.0f64) {
        let p = problem("shortest_path_nd", 2);
        let bb = p.black_box().unwrap();
        let h1 = Heuristic::scaled(a, Heuristic::euclidean(2, vec![0, 1]));
        let h2 = Heuristic::scaled(b, Heuristic::distance_to_box(2, vec![1], vec![lo], vec![-lo]));
        let opts = grid(&p, 21);
        for h in [&h1, &h2] {
            prop_assert!(falsify(&bb, h, &opts).unwrap().counterexample.is_none());
        }
        let r = falsify(&bb, &Heuristic::max(vec![h1, h2]), &opts).unwrap();
        prop_assert!(r.counterexample.is_none(), "{:?}", r.counterexample);
        if let Some(t) = r.tie_min_ah2 {
            prop_assert!(t >= -1e-9, "tie set value {t}");
        }
    }
}

#[test]
fn euclidean_distance_is_admissible_in_low_dimensions() {
    for n in 1..=3 {
        let p = problem("shortest_path_nd", n);
        let per_axis = [0, 41, 21, 9][n];
        let r = falsify(
            &p.black_box().unwrap(),
            &Heuristic::euclidean(n, (0..n).collect()),
            &grid(&p, per_axis),
        )
        .unwrap();
        assert!(r.counterexample.is_none(), "n = {n}: {:?}", r.counterexample);
        assert!(r.min_ah2 >= -1e-9, "n = {n}: {}", r.min_ah2);
    }
}

#[test]
fn certified_heuristic_stays_under_the_oracle() {
    let p = problem("single_integrator_1d", 1);
    let h = Polynomial::var(1, 0);
    certify_admissible(&p, &h, &CertifyOptions::default()).unwrap();
    let bb = p.black_box().unwrap();
    let o = value_oracle(&bb, &OracleSpec::over(&bb, 81)).unwrap();
    let c = compare(&Heuristic::from(h), &o, None).unwrap();
    assert!(c.max_overshoot <= o.error_estimate, "{} > {}", c.max_overshoot, o.error_estimate);
}
