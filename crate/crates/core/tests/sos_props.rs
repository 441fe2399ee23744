mod common;

use admissos::heuristic::{Gradient, Heuristic};
use admissos::sdp::SdpSettings;
use admissos::semialg::Measure;
use admissos::sosprog::{check_sos, RESIDUAL_TOL};
use admissos::synth::{builtin, synthesize, BuiltinOptions, SynthesisRequest, SynthesisStatus};
use admissos::verify::PolyProblem;
use common::random_gram_polynomial;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn problem(name: &str) -> PolyProblem {
    builtin(name, &BuiltinOptions::default()).unwrap().as_poly().unwrap().clone()
}

/// Smallest `<grad H, f> + g` over a uniform grid of states and controls.
fn min_ah2(p: &PolyProblem, h: &Heuristic, per_axis: usize) -> f64 {
    let bb = p.black_box().unwrap();
    let c = h.compile();
    let xb = bb.xfree_bounds();
    let ob = bb.omega_bounds();
    let lo: Vec<f64> = xb.lo.iter().chain(&ob.lo).copied().collect();
    let hi: Vec<f64> = xb.hi.iter().chain(&ob.hi).copied().collect();
    let n = bb.nstate();
    let dims = lo.len();
    let total = per_axis.pow(dims as u32);
    let mut worst = f64::INFINITY;
    for k in 0..total {
        let mut r = k;
        let z: Vec<f64> = (0..dims)
            .map(|i| {
                let t = (r % per_axis) as f64 / (per_axis - 1) as f64;
                r /= per_axis;
                lo[i] + t * (hi[i] - lo[i])
            })
            .collect();
        let (s, u) = z.split_at(n);
        let Gradient::Smooth(g) = c.gradient(s) else {
            continue;
        };
        let f = bb.dynamics(s, u);
        let v: f64 = g.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + bb.cost(s, u);
        worst = worst.min(v);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gram_polynomials_round_trip(seed in any::<u64>(), nvars in 1usize..=2, half in 1u32..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_gram_polynomial(&mut rng, nvars, half);
        let cert = check_sos(&p, &SdpSettings::default()).unwrap();
        prop_assert!(cert.is_valid());
        prop_assert!(cert.max_residual <= RESIDUAL_TOL, "residual {}", cert.max_residual);
    }
}

fn synthesized(name: &str, measure: Measure, degrees: &[u32]) -> Vec<(u32, f64, Heuristic)> {
    let p = problem(name);
    degrees
        .iter()
        .map(|&d| {
            let r = synthesize(&SynthesisRequest::new(p.clone(), measure.clone(), d)).unwrap();
            assert_eq!(r.status, SynthesisStatus::Ok, "{name} degree {d}");
            (d, r.objective.unwrap(), Heuristic::from(r.heuristic.unwrap()))
        })
        .collect()
}

#[test]
fn extracted_heuristics_pass_pointwise_recheck() {
    let single = Measure::discrete(vec![(vec![-1.0], 1.0), (vec![1.0], 1.0)]).unwrap();
    let double = Measure::box_lebesgue(&[-2.0, -2f64.sqrt()], &[2.0, 2f64.sqrt()]).unwrap();
    for (name, m, degs) in [
        ("single_integrator_1d", single, vec![2, 4, 6, 8, 10]),
        ("double_integrator_1d", double, vec![2, 4, 6]),
    ] {
        let p = problem(name);
        let runs = synthesized(name, m, &degs);
        for (d, _, h) in &runs {
            assert!(min_ah2(&p, h, 50) >= -1e-6, "{name} degree {d}");
            let origin = vec![0.0; p.nstate()];
            assert!(h.value(&origin).abs() <= 1e-7, "{name} degree {d}: H(goal) = {}", h.value(&origin));
        }
        for w in runs.windows(2) {
            assert!(w[1].1 >= w[0].1 - 1e-6, "{name}: objective {} at {} after {} at {}", w[1].1, w[1].0, w[0].1, w[0].0);
        }
    }
}
