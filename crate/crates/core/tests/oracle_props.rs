use admissos::synth::{builtin, double_integrator_excursion, value_oracle, BuiltinOptions, OracleSpec, ValueOracle};
use admissos::verify::BlackBoxProblem;

fn black_box(name: &str) -> BlackBoxProblem {
    builtin(name, &BuiltinOptions::default()).unwrap().black_box().unwrap()
}

fn oracle(bb: &BlackBoxProblem, per_axis: usize, controls: usize, estimate: bool) -> ValueOracle {
    let mut spec = OracleSpec::over(bb, per_axis);
    spec.control_samples = controls;
    spec.estimate_error = estimate;
    value_oracle(bb, &spec).unwrap()
}

#[test]
fn more_controls_never_raise_values() {
    for (name, n) in [("single_integrator_1d", 81), ("double_integrator_1d", 41)] {
        let bb = black_box(name);
        let coarse = oracle(&bb, n, 11, false);
        let fine = oracle(&bb, n, 21, false);
        for (k, (c, f)) in coarse.values.iter().zip(&fine.values).enumerate() {
            if c.is_finite() {
                assert!(f.is_finite(), "{name} node {k}: finer control set lost reachability");
                assert!(*f <= c + 1e-5 * (1.0 + c), "{name} node {k}: {f} > {c}");
            }
        }
    }
}

/// States of `S = [-2,2] x [-√2,√2]` whose unconstrained time-optimal path
/// keeps at least 0.5 clearance from the edge of `[-3,3]^2`.
fn clearance_region(z: &[f64]) -> bool {
    let (e1, e2) = double_integrator_excursion(z[0], z[1]);
    z[0].abs() <= 2.0 && z[1].abs() <= 2f64.sqrt() && e1 <= 2.5 && e2 <= 2.5
}

fn max_rise(coarse: &ValueOracle, fine: &ValueOracle, region: impl Fn(&[f64]) -> bool) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for (k, c) in coarse.values.iter().enumerate() {
        let z = coarse.node(k);
        let v = fine.interpolate(&z);
        if region(&z) && c.is_finite() && v.is_finite() {
            worst = worst.max(v - c);
        }
    }
    worst
}

#[test]
fn refinement_stays_within_the_error_estimate() {
    let bb = black_box("single_integrator_1d");
    let (coarse, fine) = (oracle(&bb, 41, 11, false), oracle(&bb, 81, 11, true));
    let rise = max_rise(&coarse, &fine, |_| true);
    assert!(fine.error_estimate.is_finite());
    assert!(rise <= fine.error_estimate, "rise {rise} vs estimate {}", fine.error_estimate);

    let bb = black_box("double_integrator_1d");
    let (coarse, fine) = (oracle(&bb, 61, 11, false), oracle(&bb, 121, 11, true));
    let rise = max_rise(&coarse, &fine, clearance_region);
    let est = fine.error_on(clearance_region);
    assert!(est.is_finite());
    assert!(rise <= est, "rise {rise} vs estimate {est}");
}
