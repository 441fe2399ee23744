#![allow(dead_code)]

use admissos::poly::{monomials_up_to, Polynomial};
use admissos::sdp::{Constraint, SdpProblem, SdpSolution};
use nalgebra::DMatrix;
use rand::Rng;

pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| uniform(rng, -1.0, 1.0))
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    (&a + a.transpose()) * 0.5
}

pub fn random_orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    random_matrix(rng, n, n).qr().q()
}

/// A feasible SDP with a planted strictly complementary optimal pair and
/// its optimal value.
pub struct Planted {
    pub problem: SdpProblem,
    pub optimum: f64,
}

pub fn planted_sdp(rng: &mut impl Rng, max_block: usize, max_rows: usize) -> Planted {
    let k = rng.random_range(1..=3);
    let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=max_block)).collect();
    let svec: usize = sizes.iter().map(|n| n * (n + 1) / 2).sum();
    let m = rng.random_range(1..=max_rows.min(svec));
    let mut xs = Vec::new();
    let mut zs = Vec::new();
    for &n in &sizes {
        let u = random_orthogonal(rng, n);
        let r = rng.random_range(0..=n);
        let lx = DMatrix::from_fn(n, n, |i, j| if i == j && i < r { uniform(rng, 0.5, 2.0) } else { 0.0 });
        let lz = DMatrix::from_fn(n, n, |i, j| if i == j && i >= r { uniform(rng, 0.5, 2.0) } else { 0.0 });
        xs.push(&u * lx * u.transpose());
        zs.push(&u * lz * u.transpose());
    }
    let y: Vec<f64> = (0..m).map(|_| uniform(rng, -1.0, 1.0)).collect();
    let mut p = SdpProblem::new(sizes.clone(), 0);
    let mut c: Vec<DMatrix<f64>> = zs.iter().map(|z| -z).collect();
    for yi in &y {
        let mut row = Constraint::new(0.0);
        let mut rhs = 0.0;
        for (b, &n) in sizes.iter().enumerate() {
            let a = random_symmetric(rng, n);
            for i in 0..n {
                for j in i..n {
                    row.add_entry(b, i, j, a[(i, j)]);
                }
            }
            rhs += a.dot(&xs[b]);
            c[b] += &a * *yi;
        }
        row.rhs = rhs;
        p.add_constraint(row).expect("well-formed row");
    }
    for (b, cb) in c.iter().enumerate() {
        for i in 0..cb.nrows() {
            for j in i..cb.ncols() {
                p.add_objective_entry(b, i, j, cb[(i, j)]).expect("well-formed entry");
            }
        }
    }
    let optimum = c.iter().zip(&xs).map(|(c, x)| c.dot(x)).sum();
    Planted { problem: p, optimum }
}

pub fn relative_gap(s: &SdpSolution) -> f64 {
    (s.dual_objective - s.primal_objective).abs() / (1.0 + s.primal_objective.abs() + s.dual_objective.abs())
}

/// `m(x)' Q m(x)` for a random PSD `Q` over all monomials of degree at most
/// `half` in `nvars` variables.
pub fn random_gram_polynomial(rng: &mut impl Rng, nvars: usize, half: u32) -> Polynomial {
    let basis = monomials_up_to(nvars, half);
    let n = basis.len();
    let f = random_matrix(rng, n, n);
    let q = &f * f.transpose() + DMatrix::identity(n, n) * 1e-3;
    let mut p = Polynomial::zero(nvars);
    for i in 0..n {
        for j in 0..n {
            p.add_term(basis[i].mul(&basis[j]), q[(i, j)]);
        }
    }
    p
}

/// Midpoint rule on `[lo, hi]` with `cells` cells.
pub fn midpoint(f: impl Fn(f64) -> f64, lo: f64, hi: f64, cells: usize) -> f64 {
    let h = (hi - lo) / cells as f64;
    (0..cells).map(|k| f(lo + (k as f64 + 0.5) * h)).sum::<f64>() * h
}
