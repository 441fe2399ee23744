//! Heuristic synthesis pipeline, built-in example problems, and a
//! grid-based value function oracle.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::heuristic::Heuristic;
use crate::poly::{PolyVector, Polynomial};
use crate::sdp::{self, SdpSettings, SdpStatus};
use crate::semialg::{Bounds, GoalSpec, Measure, SemialgebraicSet, SetError};
use crate::sosprog::{build_heuristic_program, GoalMode, ProgramOptions, SosCertificate, SosError};
use crate::verify::{falsify, BlackBoxProblem, FalsifyOptions, FalsifyReport, PolyProblem, Problem, ProblemError};

/// Objectives beyond this are reported as unbounded.
pub const UNBOUNDED_OBJECTIVE: f64 = 1e10;
/// Violation threshold for the post-synthesis falsifier run.
pub const POST_CHECK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("unknown builtin problem '{0}'")]
    UnknownBuiltin(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("{0} has non-polynomial dynamics; use falsification instead")]
    NotPolynomial(String),
    #[error("value iteration did not converge in {sweeps} sweeps (last change {change:.3e})")]
    NotConverged { sweeps: usize, change: f64 },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisStatus {
    Ok,
    Unbounded,
    Infeasible,
    SolverFailure,
}

#[derive(Debug, Clone)]
pub struct SynthesisRequest {
    pub problem: PolyProblem,
    pub measure: Measure,
    pub deg_h: u32,
    pub deg_lambda: Option<u32>,
    pub settings: SdpSettings,
    /// Falsifier grid per joint axis; 50 per axis when unset.
    pub verify_grid: Option<Vec<usize>>,
    /// Certify against the cost `(1 - epsilon) g`, so `H <= (1 - epsilon) V`.
    pub epsilon: f64,
    pub goal_mode: GoalMode,
}

impl SynthesisRequest {
    pub fn new(problem: PolyProblem, measure: Measure, deg_h: u32) -> Self {
        SynthesisRequest {
            problem,
            measure,
            deg_h,
            deg_lambda: None,
            settings: SdpSettings::default(),
            verify_grid: None,
            epsilon: 0.0,
            goal_mode: GoalMode::Equality,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.deg_h < 2 || !self.deg_h.is_multiple_of(2) {
            return Err(SynthError::BadRequest(format!("heuristic degree must be even and at least 2, got {}", self.deg_h)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(SynthError::BadRequest(format!("margin must lie in [0, 1), got {}", self.epsilon)));
        }
        self.measure.validate()?;
        if self.measure.dim() != self.problem.nstate() {
            return Err(SynthError::BadRequest(format!(
                "measure dimension {} vs {} states",
                self.measure.dim(),
                self.problem.nstate()
            )));
        }
        if let Some(b) = self.problem.xfree().bounds() {
            let (lo, hi) = self.measure.support_bounds();
            let outside = (0..lo.len()).any(|i| lo[i] < b.lo[i] - 1e-12 || hi[i] > b.hi[i] + 1e-12);
            if outside {
                return Err(SynthError::BadRequest("measure support leaves the free-space bounding box".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisResult {
    pub status: SynthesisStatus,
    /// Present only when the status is `Ok`.
    pub heuristic: Option<Polynomial>,
    /// `∫ H dm`.
    pub objective: Option<f64>,
    pub certificate: Option<SosCertificate>,
    pub falsifier: Option<FalsifyReport>,
    pub solver_status: SdpStatus,
    pub iterations: usize,
    pub deg_lambda: u32,
    pub diagnostic: Option<String>,
}

fn unbounded_diagnostic(req: &SynthesisRequest) -> String {
    let (lo, hi) = req.measure.support_bounds();
    let mut s = format!("objective does not admit a maximum; measure support {lo:?} x {hi:?}");
    if let Some(b) = req.problem.xfree().bounds() {
        let touching: Vec<usize> = (0..lo.len())
            .filter(|&i| lo[i] <= b.lo[i] + 1e-12 || hi[i] >= b.hi[i] - 1e-12)
            .collect();
        if !touching.is_empty() {
            let _ = write!(
                s,
                "; it reaches the free-space boundary along axes {touching:?}, where states may need to leave the free space to reach the goal"
            );
        }
    }
    s
}

/// Maximizes `∫ H dm` over certified heuristics of the requested degree,
/// then re-checks the result with the falsifier. `H` is returned only when
/// both the certificate and the falsifier pass.
pub fn synthesize(req: &SynthesisRequest) -> Result<SynthesisResult, SynthError> {
    req.validate()?;
    let p = &req.problem;
    let scaled;
    let mut data = p.program_data();
    if req.epsilon > 0.0 {
        scaled = p.g().scale(1.0 - req.epsilon);
        data.g = &scaled;
    }
    let opts = ProgramOptions {
        deg_lambda: req.deg_lambda,
        goal_mode: req.goal_mode,
    };
    let prog = build_heuristic_program(&data, &req.measure, req.deg_h, &opts)?;
    log::info!("synthesis program: {}", prog.describe());
    let sol = sdp::solve(&prog.to_sdp(), &req.settings);
    let mut result = SynthesisResult {
        status: SynthesisStatus::SolverFailure,
        heuristic: None,
        objective: None,
        certificate: None,
        falsifier: None,
        solver_status: sol.status,
        iterations: sol.iterations,
        deg_lambda: prog.lambda_degree(),
        diagnostic: None,
    };
    let blown_up = sol.history.iter().any(|h| h.primal_objective > UNBOUNDED_OBJECTIVE);
    match sol.status {
        SdpStatus::DualInfeasible => {
            result.status = SynthesisStatus::Unbounded;
            result.diagnostic = Some(unbounded_diagnostic(req));
            return Ok(result);
        }
        SdpStatus::PrimalInfeasible => {
            result.status = SynthesisStatus::Infeasible;
            result.diagnostic = Some("no heuristic of this degree satisfies the constraints".into());
            return Ok(result);
        }
        _ if blown_up => {
            result.status = SynthesisStatus::Unbounded;
            result.diagnostic = Some(unbounded_diagnostic(req));
            return Ok(result);
        }
        s if !s.is_solved() => {
            result.diagnostic = Some(format!("solver stopped with {s:?}"));
            return Ok(result);
        }
        _ => {}
    }
    let (h, cert) = prog.extract(&sol)?;
    let objective = req.measure.integrate(&h)?;
    result.objective = Some(objective);
    if !cert.is_valid() {
        result.diagnostic = Some(format!(
            "certificate outside tolerance: min eigenvalue {:.3e}, residual {:.3e}",
            cert.min_eigenvalue(),
            cert.max_residual
        ));
        result.certificate = Some(cert);
        return Ok(result);
    }
    result.certificate = Some(cert);
    let dims = p.nstate() + p.ncontrol();
    let fopts = FalsifyOptions {
        grid: req.verify_grid.clone().unwrap_or_else(|| vec![50; dims]),
        halton: 10_000,
        tol: POST_CHECK_TOL,
    };
    let report = falsify(&p.black_box()?, &Heuristic::from(h.clone()), &fopts)?;
    if let Some(ce) = &report.counterexample {
        result.diagnostic = Some(format!(
            "falsifier found {:?} violation {:.3e} at state {:?}, control {:?}",
            ce.condition, ce.value, ce.state, ce.control
        ));
        result.falsifier = Some(report);
        return Ok(result);
    }
    result.falsifier = Some(report);
    result.status = SynthesisStatus::Ok;
    result.heuristic = Some(h);
    Ok(result)
}

/// Parameters of the built-in problems.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinOptions {
    /// State dimension of the shortest-path problem.
    pub dim: usize,
    /// Cost weight of the pendulum.
    pub rho: f64,
    /// Replace `sin` by its cubic Taylor polynomial in the pendulum. The
    /// result differs from the true pendulum by up to `|θ|^5 / 120`
    /// (about 2.6 at `|θ| = π`), so heuristics synthesized for it carry no
    /// guarantee for the original dynamics.
    pub taylor: bool,
}

impl Default for BuiltinOptions {
    fn default() -> Self {
        BuiltinOptions {
            dim: 2,
            rho: 1.0,
            taylor: false,
        }
    }
}

pub const BUILTINS: [&str; 5] = ["single_integrator_1d", "double_integrator_1d", "shortest_path_nd", "unicycle", "pendulum"];

fn box_set(lo: &[f64], hi: &[f64]) -> SemialgebraicSet {
    SemialgebraicSet::boxed(lo, hi).expect("valid box")
}

fn window(n: usize, lo: &[f64], hi: &[f64]) -> SemialgebraicSet {
    SemialgebraicSet::whole_space(n)
        .with_bounds(Bounds::new(lo.to_vec(), hi.to_vec()).expect("valid window"))
        .expect("matching dimension")
}

fn point_goal(point: Vec<f64>) -> (Arc<dyn Fn(&[f64]) -> bool + Send + Sync>, Option<Vec<f64>>) {
    let p = point.clone();
    (
        Arc::new(move |s: &[f64]| s.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-12)),
        Some(point),
    )
}

/// Example problems. `unicycle` and the non-Taylor `pendulum` come back as
/// evaluator problems; unbounded free spaces carry a sampling window.
pub fn builtin(name: &str, opts: &BuiltinOptions) -> Result<Problem, SynthError> {
    let one = |n: usize| Polynomial::constant(n, 1.0);
    match name {
        "single_integrator_1d" => Ok(Problem::Poly(PolyProblem::new(
            name,
            PolyVector::new(vec![Polynomial::var(2, 1)]).expect("one component"),
            one(2),
            box_set(&[-1.0], &[1.0]),
            box_set(&[-1.0], &[1.0]),
            GoalSpec::point(vec![0.0]),
        )?)),
        "double_integrator_1d" => Ok(Problem::Poly(PolyProblem::new(
            name,
            PolyVector::new(vec![Polynomial::var(3, 1), Polynomial::var(3, 2)]).expect("two components"),
            one(3),
            box_set(&[-3.0, -3.0], &[3.0, 3.0]),
            box_set(&[-1.0], &[1.0]),
            GoalSpec::point(vec![0.0, 0.0]),
        )?)),
        "shortest_path_nd" => {
            let n = opts.dim;
            if n == 0 {
                return Err(SynthError::BadRequest("dimension must be positive".into()));
            }
            let joint = 2 * n;
            let f = PolyVector::new((0..n).map(|i| Polynomial::var(joint, n + i)).collect()).expect("n components");
            let mut ball = one(n);
            for i in 0..n {
                let v = Polynomial::var(n, i);
                ball = &ball - &(&v * &v);
            }
            let omega = SemialgebraicSet::new(n, vec![ball])?.with_bounds(Bounds::new(vec![-1.0; n], vec![1.0; n])?)?;
            Ok(Problem::Poly(PolyProblem::new(
                name,
                f,
                one(joint),
                window(n, &vec![-2.0; n], &vec![2.0; n]),
                omega,
                GoalSpec::point(vec![0.0; n]),
            )?))
        }
        "unicycle" => {
            let xb = Bounds::new(vec![-2.0, -2.0, -PI], vec![2.0, 2.0, PI])?;
            let ob = Bounds::new(vec![-1.0], vec![1.0])?;
            let (goal, point) = point_goal(vec![0.0; 3]);
            Ok(Problem::BlackBox(
                BlackBoxProblem::new(
                    name,
                    xb,
                    ob,
                    Arc::new(|s: &[f64], c: &[f64]| vec![s[2].cos(), s[2].sin(), c[0]]),
                    Arc::new(|_: &[f64], _: &[f64]| 1.0),
                )
                .with_xfree(Arc::new(|_: &[f64]| true))
                .with_goal(goal, point),
            ))
        }
        "pendulum" if opts.taylor => {
            let rho = opts.rho;
            let (th, om, u) = (Polynomial::var(3, 0), Polynomial::var(3, 1), Polynomial::var(3, 2));
            let sin3 = &th - &th.pow(3).scale(1.0 / 6.0);
            let f = PolyVector::new(vec![om.clone(), &sin3 + &u]).expect("two components");
            let g = (&(&(&th * &th) + &(&om * &om)) + &(&u * &u)).scale(rho);
            Ok(Problem::Poly(PolyProblem::new(
                "pendulum_taylor",
                f,
                g,
                window(2, &[-PI, -PI], &[PI, PI]),
                box_set(&[-1.0], &[1.0]),
                GoalSpec::point(vec![0.0, 0.0]),
            )?))
        }
        "pendulum" => {
            let rho = opts.rho;
            if !(rho >= 0.0) {
                return Err(SynthError::BadRequest("cost weight must be nonnegative".into()));
            }
            let xb = Bounds::new(vec![-PI, -PI], vec![PI, PI])?;
            let ob = Bounds::new(vec![-1.0], vec![1.0])?;
            let (goal, point) = point_goal(vec![0.0; 2]);
            Ok(Problem::BlackBox(
                BlackBoxProblem::new(
                    name,
                    xb,
                    ob,
                    Arc::new(|s: &[f64], c: &[f64]| vec![s[1], s[0].sin() + c[0]]),
                    Arc::new(move |s: &[f64], c: &[f64]| rho * (s[0] * s[0] + s[1] * s[1] + c[0] * c[0])),
                )
                .with_xfree(Arc::new(|_: &[f64]| true))
                .with_goal(goal, point),
            ))
        }
        _ => Err(SynthError::UnknownBuiltin(name.to_string())),
    }
}

/// Minimum time to the origin for `x1' = x2, x2' = u`, `|u| <= 1`, with no
/// state constraints.
pub fn double_integrator_min_time(x1: f64, x2: f64) -> f64 {
    if x1 >= -x2 * x2.abs() / 2.0 {
        x2 + 2.0 * (x1 + x2 * x2 / 2.0).max(0.0).sqrt()
    } else {
        -x2 + 2.0 * (-x1 + x2 * x2 / 2.0).max(0.0).sqrt()
    }
}

/// Largest `|x1|` and `|x2|` along the unconstrained minimum-time path from
/// `(x1, x2)` for the double integrator.
pub fn double_integrator_excursion(x1: f64, x2: f64) -> (f64, f64) {
    if x1 < -x2 * x2.abs() / 2.0 {
        return double_integrator_excursion(-x1, -x2);
    }
    // brake with u = -1 to the switching curve, then u = +1 into the origin
    let e = x1 + x2 * x2 / 2.0;
    let peak = if x2 > 0.0 { e } else { x1.abs() };
    (peak.max(x1.abs()).max(e / 2.0), x2.abs().max(e.max(0.0).sqrt()))
}

/// Value iteration grid and discretization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Grid nodes per axis (at least 2).
    pub counts: Vec<usize>,
    /// Uniform samples per control axis over the control bounds.
    pub control_samples: usize,
    /// Integration step.
    pub dt: f64,
    /// Integration steps per transition at most.
    pub max_substeps: usize,
    /// A transition ends once the state has moved this many grid spacings
    /// along some axis.
    pub reach: f64,
    /// Sweeps stop once no finite value changes by more than this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Value assigned to unreached states and to nodes outside the free space.
    /// It should exceed every finite value of interest; values at or above
    /// half of it are reported as `+inf`.
    pub cap: f64,
    /// Also solve on the grid with every other node removed and report the
    /// largest disagreement as the error estimate.
    pub estimate_error: bool,
}

impl OracleSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Self {
        OracleSpec {
            lo,
            hi,
            counts,
            control_samples: 11,
            dt: 0.02,
            max_substeps: 100,
            reach: 2.0,
            tol: 1e-6,
            max_sweeps: 100_000,
            cap: 1e3,
            estimate_error: true,
        }
    }

    /// Grid over the free-space bounds of `p`.
    pub fn over(p: &BlackBoxProblem, per_axis: usize) -> Self {
        let b = p.xfree_bounds();
        OracleSpec::new(b.lo.clone(), b.hi.clone(), vec![per_axis; b.dim()])
    }

    fn spacing(&self) -> Vec<f64> {
        (0..self.lo.len())
            .map(|i| (self.hi[i] - self.lo[i]) / (self.counts[i] - 1) as f64)
            .collect()
    }

    fn coarsened(&self) -> Option<OracleSpec> {
        if self.counts.iter().any(|&c| c < 5 || c % 2 == 0) {
            return None;
        }
        let mut s = self.clone();
        s.counts = self.counts.iter().map(|c| (c - 1) / 2 + 1).collect();
        s.estimate_error = false;
        Some(s)
    }
}

/// Approximate value function on a grid; `+inf` marks states from which the
/// goal was not reached without leaving the free space.
#[derive(Debug, Clone, Serialize)]
pub struct ValueOracle {
    pub spec: OracleSpec,
    pub controls: Vec<Vec<f64>>,
    #[serde(serialize_with = "ser_values")]
    pub values: Vec<f64>,
    pub sweeps: usize,
    /// Reported bound on `|V̂ - V|` over all finite cells; see
    /// [`ValueOracle::error_on`].
    pub error_estimate: f64,
    /// Largest running cost times the integration step.
    pub base_error: f64,
    /// Per-node `|V̂ - V̂_coarse|` against the half-resolution solution
    /// (NaN on infinite cells).
    #[serde(skip)]
    pub disagreement: Option<Vec<f64>>,
}

fn ser_values<S: serde::Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&if x.is_finite() { Some(*x) } else { None })?;
    }
    seq.end()
}

struct Stencil {
    offsets: Vec<usize>,
    corners: Vec<(u32, f64)>,
    cost: Vec<f64>,
}

fn unravel(mut idx: usize, counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .map(|&c| {
            let k = idx % c;
            idx /= c;
            k
        })
        .collect()
}

impl ValueOracle {
    pub fn dim(&self) -> usize {
        self.spec.lo.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let h = self.spec.spacing();
        unravel(idx, &self.spec.counts)
            .iter()
            .enumerate()
            .map(|(i, &k)| if k + 1 == self.spec.counts[i] { self.spec.hi[i] } else { self.spec.lo[i] + h[i] * k as f64 })
            .collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        (0..self.values.len()).map(|i| (self.node(i), self.values[i]))
    }

    /// Error estimate over the finite cells accepted by `region`: one
    /// integration step of the largest running cost, plus the largest
    /// disagreement with the half-resolution solution scaled by
    /// `1 / (sqrt 2 - 1)`, the extrapolation factor for convergence of order
    /// one half.
    pub fn error_on(&self, region: impl Fn(&[f64]) -> bool) -> f64 {
        let Some(d) = &self.disagreement else {
            return self.base_error;
        };
        let worst = (0..self.values.len())
            .filter(|&i| self.values[i].is_finite())
            .filter(|&i| region(&self.node(i)))
            .map(|i| d[i])
            .fold(0.0, f64::max);
        self.base_error + worst / (std::f64::consts::SQRT_2 - 1.0)
    }

    /// Multilinear interpolation; `+inf` outside the grid or next to an
    /// unreachable node.
    pub fn interpolate(&self, z: &[f64]) -> f64 {
        match corners(z, &self.spec.lo, &self.spec.hi, &self.spec.counts) {
            None => f64::INFINITY,
            Some(cs) => cs.iter().map(|&(i, w)| w * self.values[i as usize]).sum(),
        }
    }
}

fn corners(z: &[f64], lo: &[f64], hi: &[f64], counts: &[usize]) -> Option<Vec<(u32, f64)>> {
    let d = lo.len();
    let mut base = Vec::with_capacity(d);
    let mut frac = Vec::with_capacity(d);
    for i in 0..d {
        let h = (hi[i] - lo[i]) / (counts[i] - 1) as f64;
        let t = (z[i] - lo[i]) / h;
        let last = (counts[i] - 1) as f64;
        if !(t >= -1e-9 && t <= last + 1e-9) {
            return None;
        }
        let t = t.clamp(0.0, last);
        let k = (t.floor() as usize).min(counts[i] - 2);
        base.push(k);
        frac.push(t - k as f64);
    }
    let mut out = Vec::with_capacity(1 << d);
    for mask in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for i in 0..d {
            let up = mask >> i & 1 == 1;
            w *= if up { frac[i] } else { 1.0 - frac[i] };
            idx += (base[i] + up as usize) * stride;
            stride *= counts[i];
        }
        if w > 0.0 {
            out.push((idx as u32, w));
        }
    }
    Some(out)
}

fn control_grid(b: &Bounds, samples: usize) -> Vec<Vec<f64>> {
    let m = b.dim();
    let total = samples.pow(m as u32);
    (0..total)
        .map(|idx| {
            unravel(idx, &vec![samples; m])
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    if samples == 1 {
                        0.5 * (b.lo[i] + b.hi[i])
                    } else {
                        b.lo[i] + (b.hi[i] - b.lo[i]) * k as f64 / (samples - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

struct FlowStep {
    state: Vec<f64>,
    cost: f64,
    reached_goal: bool,
}

// RK4 steps of `dt` on the state and running cost under a constant control,
// until the state has moved one grid spacing along some axis, reaches the
// goal, or `max_substeps` steps have been taken. `None` if it leaves the
// free space.
fn flow(
    p: &BlackBoxProblem,
    z0: &[f64],
    c: &[f64],
    spec: &OracleSpec,
    h: &[f64],
    is_goal: &dyn Fn(&[f64]) -> bool,
) -> Option<FlowStep> {
    let d = z0.len();
    let rhs = |z: &[f64]| -> Vec<f64> {
        let mut v = p.dynamics(z, c);
        v.push(p.cost(z, c));
        v
    };
    let mut y: Vec<f64> = z0.iter().copied().chain([0.0]).collect();
    let dt = spec.dt;
    for _ in 0..spec.max_substeps {
        let shift = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> { y.iter().zip(k).map(|(u, v)| u + a * v).collect() };
        let k1 = rhs(&y[..d]);
        let k2 = rhs(&shift(&y, &k1, 0.5 * dt)[..d]);
        let k3 = rhs(&shift(&y, &k2, 0.5 * dt)[..d]);
        let k4 = rhs(&shift(&y, &k3, dt)[..d]);
        for i in 0..=d {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let z = &y[..d];
        if !p.in_xfree(z) || z.iter().zip(&spec.lo).zip(&spec.hi).any(|((v, l), u)| v < l || v > u) {
            return None;
        }
        if is_goal(z) {
            return Some(FlowStep {
                state: z.to_vec(),
                cost: y[d],
                reached_goal: true,
            });
        }
        if z.iter().zip(z0).zip(h).any(|((a, b), hh)| (a - b).abs() >= spec.reach * hh) {
            break;
        }
    }
    Some(FlowStep {
        state: y[..d].to_vec(),
        cost: y[d],
        reached_goal: false,
    })
}

/// Semi-Lagrangian value iteration `V(z) = min_u ∫ g + V(z(τ))` with
/// deterministic Jacobi sweeps, where `z(τ)` follows a constant control for
/// about one grid cell.
pub fn value_oracle(p: &BlackBoxProblem, spec: &OracleSpec) -> Result<ValueOracle, SynthError> {
    let d = p.nstate();
    if spec.lo.len() != d || spec.hi.len() != d || spec.counts.len() != d {
        return Err(SynthError::BadRequest(format!("oracle grid must have {d} axes")));
    }
    if spec.counts.iter().any(|&c| c < 2) || spec.control_samples == 0 || !(spec.dt > 0.0) || !(spec.cap > 0.0) {
        return Err(SynthError::BadRequest("oracle grid needs at least 2 nodes per axis, a control sample, dt > 0 and cap > 0".into()));
    }
    let controls: Vec<Vec<f64>> = control_grid(p.omega_bounds(), spec.control_samples)
        .into_iter()
        .filter(|c| p.in_omega(c))
        .collect();
    let total: usize = spec.counts.iter().product();
    let h = spec.spacing();
    let mut shell = ValueOracle {
        spec: spec.clone(),
        controls: controls.clone(),
        values: Vec::new(),
        sweeps: 0,
        error_estimate: 0.0,
        base_error: 0.0,
        disagreement: None,
    };

    let is_goal = |z: &[f64]| {
        p.in_goal(z)
            || p.goal_point().is_some_and(|g| z.iter().zip(g).zip(&h).all(|((a, b), hh)| (a - b).abs() <= 0.5 * hh + 1e-12))
    };
    let goal: Vec<bool> = (0..total).into_par_iter().map(|i| is_goal(&shell.node(i))).collect();

    let stencils: Vec<Stencil> = (0..total)
        .into_par_iter()
        .map(|i| {
            let mut st = Stencil {
                offsets: vec![0],
                corners: Vec::new(),
                cost: Vec::new(),
            };
            let z = shell.node(i);
            if goal[i] || !p.in_xfree(&z) {
                return st;
            }
            for c in &controls {
                let Some(step) = flow(p, &z, c, spec, &h, &is_goal) else {
                    continue;
                };
                if step.reached_goal {
                    st.offsets.push(st.corners.len());
                    st.cost.push(step.cost);
                } else if let Some(cs) = corners(&step.state, &spec.lo, &spec.hi, &spec.counts) {
                    st.corners.extend(cs);
                    st.offsets.push(st.corners.len());
                    st.cost.push(step.cost);
                }
            }
            st
        })
        .collect();

    let mut v: Vec<f64> = goal.iter().map(|&g| if g { 0.0 } else { spec.cap }).collect();
    let mut sweeps = 0;
    loop {
        let next: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|i| {
                if goal[i] {
                    return 0.0;
                }
                let st = &stencils[i];
                let mut best = spec.cap;
                for k in 0..st.cost.len() {
                    let val = st.cost[k]
                        + st.corners[st.offsets[k]..st.offsets[k + 1]]
                            .iter()
                            .map(|&(j, w)| w * v[j as usize])
                            .sum::<f64>();
                    best = best.min(val);
                }
                best
            })
            .collect();
        sweeps += 1;
        let change = next
            .iter()
            .zip(&v)
            .filter(|(a, _)| **a < spec.cap)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change <= spec.tol {
            break;
        }
        if sweeps >= spec.max_sweeps {
            return Err(SynthError::NotConverged { sweeps, change });
        }
    }
    shell.values = v
        .into_iter()
        .map(|x| if x >= 0.5 * spec.cap { f64::INFINITY } else { x.max(0.0) })
        .collect();
    shell.sweeps = sweeps;
    let gmax = (0..total)
        .into_par_iter()
        .map(|i| {
            let z = shell.node(i);
            controls.iter().map(|c| p.cost(&z, c)).fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    shell.base_error = gmax * spec.dt;
    if let Some(coarse) = spec.coarsened().filter(|_| spec.estimate_error) {
        let c = value_oracle(p, &coarse)?;
        shell.disagreement = Some(
            (0..total)
                .into_par_iter()
                .map(|i| {
                    let v = shell.values[i];
                    if v.is_finite() {
                        (v - c.interpolate(&shell.node(i))).abs()
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
        );
    }
    let err = shell.error_on(|_| true);
    shell.error_estimate = err;
    log::info!("value oracle: {total} nodes, {sweeps} sweeps, error estimate {err:.3e}");
    Ok(shell)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// `max (H - V̂)` over finite cells.
    pub max_overshoot: f64,
    /// Mean of `V̂ - H` over finite cells.
    pub mean_gap: f64,
    pub cells: usize,
    /// `(state, H, V̂)` per finite cell, in grid order.
    pub curve: Vec<(Vec<f64>, f64, f64)>,
}

/// Compares `H` with the oracle on finite cells, optionally restricted to a
/// region.
pub fn compare(h: &Heuristic, oracle: &ValueOracle, region: Option<&Bounds>) -> Result<Comparison, SynthError> {
    if h.nvars() != oracle.dim() {
        return Err(SynthError::BadRequest(format!(
            "heuristic over {} variables, oracle over {}",
            h.nvars(),
            oracle.dim()
        )));
    }
    let curve: Vec<(Vec<f64>, f64, f64)> = oracle
        .nodes()
        .filter(|(z, v)| v.is_finite() && region.is_none_or(|r| r.contains(z)))
        .map(|(z, v)| {
            let hv = h.value(&z);
            (z, hv, v)
        })
        .collect();
    let max_overshoot = curve.iter().map(|(_, hv, v)| hv - v).fold(f64::NEG_INFINITY, f64::max);
    let mean_gap = if curve.is_empty() {
        0.0
    } else {
        curve.iter().map(|(_, hv, v)| v - hv).sum::<f64>() / curve.len() as f64
    };
    Ok(Comparison {
        max_overshoot,
        mean_gap,
        cells: curve.len(),
        curve,
    })
}

/// Formats a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// CSV with one row per oracle node: state coordinates, `H`, `V̂`.
/// Fields are unquoted numbers; infinite values are written as `inf`.
pub fn oracle_csv(h: Option<&Heuristic>, oracle: &ValueOracle, names: &[String]) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..oracle.dim())
        .map(|i| names.get(i).cloned().unwrap_or_else(|| format!("x{i}")))
        .chain(["H".to_string(), "V".to_string()])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (z, v) in oracle.nodes() {
        let hv = h.map_or(f64::NAN, |h| h.value(&z));
        let row: Vec<String> = z.iter().map(|&x| fmt17(x)).chain([fmt17(hv), fmt17(v)]).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(p: Problem) -> PolyProblem {
        p.as_poly().unwrap().clone()
    }

    #[test]
    fn builtin_data() {
        let si = poly(builtin("single_integrator_1d", &BuiltinOptions::default()).unwrap());
        assert_eq!(si.xfree().bounds().unwrap().lo, vec![-1.0]);
        assert_eq!(si.g(), &Polynomial::constant(2, 1.0));
        let di = poly(builtin("double_integrator_1d", &BuiltinOptions::default()).unwrap());
        assert_eq!(di.xfree().bounds().unwrap().hi, vec![3.0, 3.0]);
        assert_eq!(di.goal(), &GoalSpec::point(vec![0.0, 0.0]));
        let pe = builtin("pendulum", &BuiltinOptions::default()).unwrap().black_box().unwrap();
        assert_eq!(pe.cost(&[1.0, 2.0], &[0.5]), 5.25);
        assert!(matches!(builtin("nope", &BuiltinOptions::default()), Err(SynthError::UnknownBuiltin(_))));
    }

    #[test]
    fn closed_form_min_time() {
        assert_eq!(double_integrator_min_time(0.0, 0.0), 0.0);
        // from (0, 1): brake with u = -1 to (1/2, 0), then bang-bang back
        assert!((double_integrator_min_time(0.0, 1.0) - (1.0 + 2.0 * 0.5f64.sqrt())).abs() < 1e-14);
        assert!((double_integrator_min_time(-0.5, 1.0) - 1.0).abs() < 1e-14);
        assert_eq!(double_integrator_min_time(1.0, 0.0), double_integrator_min_time(-1.0, 0.0));
    }

    #[test]
    fn single_integrator_oracle_is_abs() {
        let p = builtin("single_integrator_1d", &BuiltinOptions::default()).unwrap().black_box().unwrap();
        let o = value_oracle(&p, &OracleSpec::over(&p, 201)).unwrap();
        for (z, v) in o.nodes() {
            assert!((v - z[0].abs()).abs() <= o.error_estimate, "{z:?} {v}");
        }
        let zero = compare(&Heuristic::zero(1), &o, None).unwrap();
        let mean = o.values.iter().sum::<f64>() / o.len() as f64;
        assert!((zero.mean_gap - mean).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_requests() {
        let p = poly(builtin("single_integrator_1d", &BuiltinOptions::default()).unwrap());
        let m = Measure::discrete(vec![(vec![1.0], 1.0)]).unwrap();
        let mut r = SynthesisRequest::new(p.clone(), m, 3);
        assert!(matches!(synthesize(&r), Err(SynthError::BadRequest(_))));
        r.deg_h = 4;
        r.measure = Measure::discrete(vec![(vec![2.0], 1.0)]).unwrap();
        assert!(matches!(synthesize(&r), Err(SynthError::BadRequest(_))));
    }

    #[test]
    fn quadratic_synthesis_on_single_integrator() {
        let p = poly(builtin("single_integrator_1d", &BuiltinOptions::default()).unwrap());
        let m = Measure::discrete(vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)]).unwrap();
        let r = synthesize(&SynthesisRequest::new(p, m, 2)).unwrap();
        assert_eq!(r.status, SynthesisStatus::Ok);
        // |H'| <= 1 on [-1, 1] forces H = x^2 / 2
        let h = r.heuristic.unwrap();
        assert!((r.objective.unwrap() - 1.0).abs() < 1e-6);
        assert!((h.eval(&[1.0]).unwrap() - 0.5).abs() < 1e-6);
    }
}
