//! Admissibility and consistency of heuristics.
//!
//! Certification is exact up to solver tolerance and applies to polynomial
//! problems: `<grad H, f> + g` must be SOS modulo multipliers of the set
//! constraints, and `H` must vanish (consistency) or be nonpositive
//! (admissibility) on the goal. Falsification samples the same inequality
//! pointwise for any problem, polynomial or not; finding nothing is not a
//! proof.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::heuristic::{Compiled, Gradient, Heuristic};
use crate::poly::{PolyError, PolyVector, Polynomial};
use crate::sdp::{self, SdpSettings};
use crate::semialg::{Bounds, GoalSpec, SemialgebraicSet, SetError};
use crate::sosprog::{build_certification_program, ProgramData, SosCertificate, SosError};

/// Goal conditions on a fixed heuristic are checked to this tolerance.
pub const GOAL_TOL: f64 = 1e-9;
/// A sampled AH2 value below `-FALSIFY_TOL` is a violation.
pub const FALSIFY_TOL: f64 = 1e-9;
/// Multiplier degree retries stop after this degree.
pub const DEFAULT_DEGREE_CAP: u32 = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("running cost is negative ({value:.3e}) at state {state:?}, control {control:?}")]
    NegativeCost { state: Vec<f64>, control: Vec<f64>, value: f64 },
    #[error("{0} needs finite bounds for sampling")]
    MissingBounds(&'static str),
    #[error("evaluator returned a non-finite value at state {state:?}, control {control:?}")]
    NonFinite { state: Vec<f64>, control: Vec<f64> },
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Set(#[from] SetError),
}

/// Optimal control problem with polynomial data. Dynamics and cost are over
/// the joint space (states first, then controls).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyProblem {
    pub name: String,
    f: PolyVector,
    g: Polynomial,
    xfree: SemialgebraicSet,
    omega: SemialgebraicSet,
    goal: GoalSpec,
}

impl PolyProblem {
    pub fn new(
        name: impl Into<String>,
        f: PolyVector,
        g: Polynomial,
        xfree: SemialgebraicSet,
        omega: SemialgebraicSet,
        goal: GoalSpec,
    ) -> Result<Self, ProblemError> {
        let n = xfree.nvars();
        let m = omega.nvars();
        if f.len() != n {
            return Err(ProblemError::Dimension(format!("{} dynamics components for {n} states", f.len())));
        }
        if f.nvars() != n + m || g.nvars() != n + m {
            return Err(ProblemError::Dimension(format!(
                "dynamics and cost must be over {} joint variables",
                n + m
            )));
        }
        if goal.dim() != n {
            return Err(ProblemError::Dimension(format!("goal dimension {} vs {n} states", goal.dim())));
        }
        let p = PolyProblem {
            name: name.into(),
            f,
            g,
            xfree,
            omega,
            goal,
        };
        p.check_cost_sign()?;
        Ok(p)
    }

    // g >= 0 on a coarse grid over the bounded parts of X_free x Omega.
    fn check_cost_sign(&self) -> Result<(), ProblemError> {
        let (Some(xb), Some(ob)) = (self.xfree.bounds(), self.omega.bounds()) else {
            log::debug!("{}: unbounded sets, skipping the cost-sign grid check", self.name);
            return Ok(());
        };
        let lo: Vec<f64> = xb.lo.iter().chain(&ob.lo).copied().collect();
        let hi: Vec<f64> = xb.hi.iter().chain(&ob.hi).copied().collect();
        let counts = vec![7usize; lo.len()];
        let n = self.nstate();
        for idx in 0..counts.iter().product::<usize>() {
            let z = grid_point(idx, &counts, &lo, &hi);
            let (s, c) = z.split_at(n);
            if !self.xfree.contains(s)? || !self.omega.contains(c)? {
                continue;
            }
            let v = self.g.eval(&z)?;
            if v < -GOAL_TOL {
                return Err(ProblemError::NegativeCost {
                    state: s.to_vec(),
                    control: c.to_vec(),
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn nstate(&self) -> usize {
        self.xfree.nvars()
    }

    pub fn ncontrol(&self) -> usize {
        self.omega.nvars()
    }

    pub fn f(&self) -> &PolyVector {
        &self.f
    }

    pub fn g(&self) -> &Polynomial {
        &self.g
    }

    pub fn xfree(&self) -> &SemialgebraicSet {
        &self.xfree
    }

    pub fn omega(&self) -> &SemialgebraicSet {
        &self.omega
    }

    pub fn goal(&self) -> &GoalSpec {
        &self.goal
    }

    pub fn program_data(&self) -> ProgramData<'_> {
        ProgramData {
            f: &self.f,
            g: &self.g,
            xfree: &self.xfree,
            omega: &self.omega,
            goal: &self.goal,
        }
    }

    /// Evaluator view; both sets need bounds.
    pub fn black_box(&self) -> Result<BlackBoxProblem, ProblemError> {
        let xb = self.xfree.bounds().ok_or(ProblemError::MissingBounds("state set"))?.clone();
        let ob = self.omega.bounds().ok_or(ProblemError::MissingBounds("control set"))?.clone();
        let n = self.nstate();
        let (f, g) = (self.f.clone(), self.g.clone());
        let joint = move |s: &[f64], c: &[f64]| -> Vec<f64> { s.iter().chain(c).copied().collect() };
        let xf = self.xfree.clone();
        let om = self.omega.clone();
        let goal = self.goal.clone();
        let goal_point = match &self.goal {
            GoalSpec::Point { point } => Some(point.clone()),
            GoalSpec::Set { .. } => None,
        };
        let goal_bounds = match &self.goal {
            GoalSpec::Set { set } => set.bounds().cloned(),
            GoalSpec::Point { .. } => None,
        };
        let mut bb = BlackBoxProblem::new(
            self.name.clone(),
            xb,
            ob,
            Arc::new(move |s, c| f.components().iter().map(|p| p.eval_unchecked(&joint(s, c))).collect()),
            Arc::new(move |s, c| g.eval_unchecked(&s.iter().chain(c).copied().collect::<Vec<_>>())),
        )
        .with_xfree(Arc::new(move |s| xf.contains(s).unwrap_or(false)))
        .with_omega(Arc::new(move |c| om.contains(c).unwrap_or(false)))
        .with_goal(Arc::new(move |s| goal.contains(s).unwrap_or(false)), goal_point);
        bb.goal_bounds = goal_bounds;
        debug_assert_eq!(bb.nstate(), n);
        Ok(bb)
    }
}

pub type FieldFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type CostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Optimal control problem given by evaluators, for dynamics outside the
/// polynomial class.
#[derive(Clone)]
pub struct BlackBoxProblem {
    pub name: String,
    f: FieldFn,
    g: CostFn,
    xfree: Predicate,
    xfree_bounds: Bounds,
    omega: Predicate,
    omega_bounds: Bounds,
    goal: Predicate,
    goal_point: Option<Vec<f64>>,
    goal_bounds: Option<Bounds>,
}

impl fmt::Debug for BlackBoxProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BlackBoxProblem")
            .field("name", &self.name)
            .field("xfree_bounds", &self.xfree_bounds)
            .field("omega_bounds", &self.omega_bounds)
            .field("goal_point", &self.goal_point)
            .finish()
    }
}

impl BlackBoxProblem {
    /// Both sets default to their bounding boxes; the goal defaults to empty.
    pub fn new(name: impl Into<String>, xfree_bounds: Bounds, omega_bounds: Bounds, f: FieldFn, g: CostFn) -> Self {
        let xb = xfree_bounds.clone();
        let ob = omega_bounds.clone();
        BlackBoxProblem {
            name: name.into(),
            f,
            g,
            xfree: Arc::new(move |s| xb.contains(s)),
            xfree_bounds,
            omega: Arc::new(move |c| ob.contains(c)),
            omega_bounds,
            goal: Arc::new(|_| false),
            goal_point: None,
            goal_bounds: None,
        }
    }

    pub fn with_xfree(mut self, p: Predicate) -> Self {
        self.xfree = p;
        self
    }

    pub fn with_omega(mut self, p: Predicate) -> Self {
        self.omega = p;
        self
    }

    pub fn with_goal(mut self, p: Predicate, point: Option<Vec<f64>>) -> Self {
        self.goal = p;
        self.goal_point = point;
        self
    }

    pub fn nstate(&self) -> usize {
        self.xfree_bounds.dim()
    }

    pub fn ncontrol(&self) -> usize {
        self.omega_bounds.dim()
    }

    pub fn xfree_bounds(&self) -> &Bounds {
        &self.xfree_bounds
    }

    pub fn omega_bounds(&self) -> &Bounds {
        &self.omega_bounds
    }

    pub fn goal_point(&self) -> Option<&[f64]> {
        self.goal_point.as_deref()
    }

    pub fn dynamics(&self, s: &[f64], c: &[f64]) -> Vec<f64> {
        (self.f)(s, c)
    }

    pub fn cost(&self, s: &[f64], c: &[f64]) -> f64 {
        (self.g)(s, c)
    }

    pub fn in_xfree(&self, s: &[f64]) -> bool {
        (self.xfree)(s)
    }

    pub fn in_omega(&self, c: &[f64]) -> bool {
        (self.omega)(c)
    }

    pub fn in_goal(&self, s: &[f64]) -> bool {
        (self.goal)(s)
    }
}

/// Either kind of problem.
#[derive(Debug, Clone)]
pub enum Problem {
    Poly(PolyProblem),
    BlackBox(BlackBoxProblem),
}

impl Problem {
    pub fn name(&self) -> &str {
        match self {
            Problem::Poly(p) => &p.name,
            Problem::BlackBox(b) => &b.name,
        }
    }

    pub fn black_box(&self) -> Result<BlackBoxProblem, ProblemError> {
        match self {
            Problem::Poly(p) => p.black_box(),
            Problem::BlackBox(b) => Ok(b.clone()),
        }
    }

    pub fn as_poly(&self) -> Option<&PolyProblem> {
        match self {
            Problem::Poly(p) => Some(p),
            Problem::BlackBox(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    /// `H <= 0` on the goal.
    Ah1,
    /// `<grad H, f> + g >= 0` on free states and admissible controls.
    Ah2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    /// AH2 expression value, or `H(state)` for an AH1 failure.
    pub value: f64,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsifyReport {
    pub counterexample: Option<Counterexample>,
    /// Smallest AH2 value over smooth sample points.
    pub min_ah2: f64,
    pub min_state: Vec<f64>,
    pub min_control: Vec<f64>,
    /// Largest heuristic value over sampled goal states.
    pub max_goal_value: Option<f64>,
    pub samples: usize,
    /// Samples skipped because the heuristic is not differentiable there.
    pub kinks: usize,
    /// Samples on the tie set of a maximum, evaluated separately.
    pub ties: usize,
    /// Smallest AH2 value on the tie set using the largest active-branch
    /// directional derivative.
    pub tie_min_ah2: Option<f64>,
}

impl FalsifyReport {
    pub fn refuted(&self) -> bool {
        self.counterexample.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsifyOptions {
    /// Grid points per joint axis (states, then controls).
    pub grid: Vec<usize>,
    /// Additional low-discrepancy samples over the joint box.
    pub halton: usize,
    pub tol: f64,
}

impl FalsifyOptions {
    pub fn uniform(per_axis: usize, dims: usize) -> Self {
        FalsifyOptions {
            grid: vec![per_axis; dims],
            halton: 10_000,
            tol: FALSIFY_TOL,
        }
    }
}

fn grid_point(mut idx: usize, counts: &[usize], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let k = idx % c;
            idx /= c;
            if c == 1 {
                0.5 * (lo[i] + hi[i])
            } else {
                lo[i] + (hi[i] - lo[i]) * k as f64 / (c - 1) as f64
            }
        })
        .collect()
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// `index`-th point of the Halton sequence in `[0, 1)^dim` (dim <= 12).
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    PRIMES[..dim]
        .iter()
        .map(|&b| {
            let (mut f, mut r, mut i) = (1.0, 0.0, index);
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Sample {
    value: f64,
    point: Vec<f64>,
}

// Total order used by the parallel reduction: value, then point.
fn better(a: Sample, b: Sample) -> Sample {
    let ord = a.value.total_cmp(&b.value).then_with(|| {
        a.point
            .iter()
            .zip(&b.point)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    if ord == Ordering::Greater {
        b
    } else {
        a
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    best: Option<Sample>,
    tie_best: Option<Sample>,
    samples: usize,
    kinks: usize,
    ties: usize,
    bad: Option<Vec<f64>>,
}

fn merge_opt(a: Option<Sample>, b: Option<Sample>) -> Option<Sample> {
    match (a, b) {
        (Some(a), Some(b)) => Some(better(a, b)),
        (a, None) => a,
        (None, b) => b,
    }
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            best: merge_opt(self.best, o.best),
            tie_best: merge_opt(self.tie_best, o.tie_best),
            samples: self.samples + o.samples,
            kinks: self.kinks + o.kinks,
            ties: self.ties + o.ties,
            bad: self.bad.or(o.bad),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn eval_point(p: &BlackBoxProblem, h: &Compiled, z: &[f64]) -> Tally {
    let n = p.nstate();
    let (s, c) = z.split_at(n);
    let mut t = Tally::default();
    if !p.in_xfree(s) || !p.in_omega(c) {
        return t;
    }
    t.samples = 1;
    let f = p.dynamics(s, c);
    let g = p.cost(s, c);
    if f.iter().any(|v| !v.is_finite()) || !g.is_finite() {
        t.bad = Some(z.to_vec());
        return t;
    }
    match h.gradient(s) {
        Gradient::Smooth(grad) => {
            t.best = Some(Sample {
                value: dot(&grad, &f) + g,
                point: z.to_vec(),
            });
        }
        Gradient::Kink => t.kinks = 1,
        Gradient::Tie(grads) => {
            t.ties = 1;
            let v = grads.iter().map(|gr| dot(gr, &f)).fold(f64::NEG_INFINITY, f64::max) + g;
            t.tie_best = Some(Sample {
                value: v,
                point: z.to_vec(),
            });
        }
    }
    t
}

/// Samples AH2 on a grid plus Halton points over the joint bounding box, and
/// AH1 on goal states. Returns the worst violator, if any.
pub fn falsify(p: &BlackBoxProblem, h: &Heuristic, opts: &FalsifyOptions) -> Result<FalsifyReport, ProblemError> {
    let n = p.nstate();
    let m = p.ncontrol();
    if h.nvars() != n {
        return Err(ProblemError::Dimension(format!("heuristic over {} variables, {n} states", h.nvars())));
    }
    if opts.grid.len() != n + m || opts.grid.contains(&0) {
        return Err(ProblemError::Dimension(format!(
            "grid needs {} positive per-axis counts",
            n + m
        )));
    }
    let lo: Vec<f64> = p.xfree_bounds.lo.iter().chain(&p.omega_bounds.lo).copied().collect();
    let hi: Vec<f64> = p.xfree_bounds.hi.iter().chain(&p.omega_bounds.hi).copied().collect();
    let hc = h.compile();
    let total: usize = opts.grid.iter().product();
    let grid = (0..total)
        .into_par_iter()
        .map(|i| eval_point(p, &hc, &grid_point(i, &opts.grid, &lo, &hi)))
        .reduce(Tally::default, Tally::merge);
    let dim = n + m;
    let hal = (1..=opts.halton as u64)
        .into_par_iter()
        .map(|i| {
            let u = halton(i, dim.min(PRIMES.len()));
            let z: Vec<f64> = (0..dim).map(|k| lo[k] + (hi[k] - lo[k]) * u[k % u.len()]).collect();
            eval_point(p, &hc, &z)
        })
        .reduce(Tally::default, Tally::merge);
    let tally = grid.merge(hal);
    if let Some(z) = tally.bad {
        let (s, c) = z.split_at(n);
        return Err(ProblemError::NonFinite {
            state: s.to_vec(),
            control: c.to_vec(),
        });
    }
    if tally.kinks > 0 {
        log::info!("falsify: skipped {} non-differentiable sample points", tally.kinks);
    }
    if tally.ties > 0 {
        log::info!("falsify: {} sample points on a tie set of the maximum", tally.ties);
    }

    // AH1 on goal states: the goal point plus goal-positive grid states.
    let mut goal_states: Vec<Vec<f64>> = p.goal_point.iter().cloned().collect();
    let (glo, ghi) = match &p.goal_bounds {
        Some(b) => (b.lo.clone(), b.hi.clone()),
        None => (p.xfree_bounds.lo.clone(), p.xfree_bounds.hi.clone()),
    };
    let scounts = &opts.grid[..n];
    let stotal: usize = scounts.iter().product();
    goal_states.extend(
        (0..stotal)
            .into_par_iter()
            .map(|i| grid_point(i, scounts, &glo, &ghi))
            .filter(|s| p.in_goal(s))
            .collect::<Vec<_>>(),
    );
    let mut max_goal: Option<Sample> = None;
    for s in goal_states {
        let v = hc.value(&s);
        let cand = Sample { value: -v, point: s };
        max_goal = merge_opt(max_goal, Some(cand));
    }

    let (min_ah2, min_state, min_control) = match &tally.best {
        Some(b) => (b.value, b.point[..n].to_vec(), b.point[n..].to_vec()),
        None => (f64::INFINITY, Vec::new(), Vec::new()),
    };
    let mut counterexample = None;
    if let Some(b) = &tally.best {
        if b.value < -opts.tol {
            counterexample = Some(Counterexample {
                state: min_state.clone(),
                control: min_control.clone(),
                value: b.value,
                condition: Condition::Ah2,
            });
        }
    }
    if counterexample.is_none() {
        if let Some(g) = &max_goal {
            if -g.value > opts.tol {
                counterexample = Some(Counterexample {
                    state: g.point.clone(),
                    control: Vec::new(),
                    value: -g.value,
                    condition: Condition::Ah1,
                });
            }
        }
    }
    Ok(FalsifyReport {
        counterexample,
        min_ah2,
        min_state,
        min_control,
        max_goal_value: max_goal.map(|g| -g.value),
        samples: tally.samples,
        kinks: tally.kinks,
        ties: tally.ties,
        tie_min_ah2: tally.tie_best.map(|t| t.value),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub deg_lambda: u32,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// Multiplier degree of the successful attempt.
    pub deg_lambda: u32,
    pub attempts: Vec<Attempt>,
    pub sos: SosCertificate,
    /// `H` at the goal point, when the goal is a point.
    pub goal_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("H is positive on the goal: H = {value:.3e}")]
    Ah1Violated { value: f64 },
    #[error("H does not vanish on the goal: H = {value:.3e}")]
    Ch1Violated { value: f64 },
    #[error("relaxation infeasible at every multiplier degree tried ({})", fmt_attempts(.attempts))]
    NotCertified { attempts: Vec<Attempt> },
    #[error("solver failure ({})", fmt_attempts(.attempts))]
    SolverFailure { attempts: Vec<Attempt> },
    #[error(transparent)]
    Sos(SosError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn fmt_attempts(a: &[Attempt]) -> String {
    a.iter()
        .map(|t| format!("degree {}: {}", t.deg_lambda, t.outcome))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    /// Starting multiplier degree; derived from the expression if unset.
    pub deg_lambda: Option<u32>,
    /// Retries at `+2` stop once the degree would exceed this cap.
    pub degree_cap: u32,
    pub settings: SdpSettings,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            deg_lambda: None,
            degree_cap: DEFAULT_DEGREE_CAP,
            settings: SdpSettings::default(),
        }
    }
}

fn goal_check(p: &PolyProblem, h: &Polynomial, strict: bool) -> Result<Option<f64>, CertifyError> {
    match p.goal() {
        GoalSpec::Point { point } => {
            let v = h.eval(point).map_err(ProblemError::from)?;
            if strict && v.abs() > GOAL_TOL {
                return Err(CertifyError::Ch1Violated { value: v });
            }
            if v > GOAL_TOL {
                return Err(CertifyError::Ah1Violated { value: v });
            }
            Ok(Some(v))
        }
        GoalSpec::Set { set } => {
            if strict {
                let b = set.bounds().ok_or(ProblemError::MissingBounds("goal set"))?;
                let counts = vec![5usize; b.dim()];
                for i in 0..counts.iter().product::<usize>() {
                    let z = grid_point(i, &counts, &b.lo, &b.hi);
                    if set.contains(&z).map_err(ProblemError::from)? {
                        let v = h.eval(&z).map_err(ProblemError::from)?;
                        if v.abs() > GOAL_TOL {
                            return Err(CertifyError::Ch1Violated { value: v });
                        }
                    }
                }
            }
            Ok(None)
        }
    }
}

fn certify(p: &PolyProblem, h: &Polynomial, opts: &CertifyOptions, strict: bool) -> Result<Certificate, CertifyError> {
    if h.nvars() != p.nstate() {
        return Err(ProblemError::Dimension(format!("heuristic over {} variables, {} states", h.nvars(), p.nstate())).into());
    }
    let goal_value = goal_check(p, h, strict)?;
    let data = p.program_data();
    let first = build_certification_program(&data, h, opts.deg_lambda).map_err(CertifyError::Sos)?;
    let mut deg = first.lambda_degree();
    let mut prog = first;
    let mut attempts = Vec::new();
    let mut last_failure_is_solver;
    loop {
        let sol = sdp::solve(&prog.to_sdp(), &opts.settings);
        let outcome = match prog.extract(&sol) {
            Ok((_, cert)) if cert.is_valid() => {
                attempts.push(Attempt {
                    deg_lambda: deg,
                    outcome: "certified".into(),
                });
                return Ok(Certificate {
                    deg_lambda: deg,
                    attempts,
                    sos: cert,
                    goal_value,
                });
            }
            Ok((_, cert)) => {
                last_failure_is_solver = false;
                format!(
                    "inexact certificate (min eigenvalue {:.2e}, residual {:.2e})",
                    cert.min_eigenvalue(),
                    cert.max_residual
                )
            }
            Err(e) => {
                last_failure_is_solver = !e.is_refutation();
                e.to_string()
            }
        };
        log::info!("certification at multiplier degree {deg}: {outcome}");
        attempts.push(Attempt {
            deg_lambda: deg,
            outcome,
        });
        if deg + 2 > opts.degree_cap {
            break;
        }
        deg += 2;
        prog = build_certification_program(&data, h, Some(deg)).map_err(CertifyError::Sos)?;
    }
    if last_failure_is_solver {
        Err(CertifyError::SolverFailure { attempts })
    } else {
        Err(CertifyError::NotCertified { attempts })
    }
}

/// SOS certificate that `H` is an admissible heuristic.
pub fn certify_admissible(p: &PolyProblem, h: &Polynomial, opts: &CertifyOptions) -> Result<Certificate, CertifyError> {
    certify(p, h, opts, false)
}

/// SOS certificate that `H` is a consistent heuristic: the admissibility
/// inequality plus `H = 0` on the goal.
pub fn certify_consistent(p: &PolyProblem, h: &Polynomial, opts: &CertifyOptions) -> Result<Certificate, CertifyError> {
    certify(p, h, opts, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Monomial;

    fn ex4() -> PolyProblem {
        PolyProblem::new(
            "single integrator",
            PolyVector::new(vec![Polynomial::var(2, 1)]).unwrap(),
            Polynomial::constant(2, 1.0),
            SemialgebraicSet::boxed(&[-1.0], &[1.0]).unwrap(),
            SemialgebraicSet::boxed(&[-1.0], &[1.0]).unwrap(),
            GoalSpec::point(vec![0.0]),
        )
        .unwrap()
    }

    fn lin(c: f64, k: f64) -> Polynomial {
        Polynomial::from_terms(1, [(vec![1], c), (vec![0], k)]).unwrap()
    }

    #[test]
    fn identity_heuristic_is_certified_with_half_multiplier() {
        let cert = certify_admissible(&ex4(), &lin(1.0, 0.0), &CertifyOptions::default()).unwrap();
        assert_eq!(cert.deg_lambda, 0);
        assert!(cert.sos.is_valid());
        // the hand multiplier 1/2 satisfies the identity exactly
        let u = Polynomial::var(1, 0);
        let lhs = &(&u + &Polynomial::constant(1, 1.0)) - &(&Polynomial::constant(1, 1.0) - &(&u * &u)).scale(0.5);
        let sq = &(&u + &Polynomial::constant(1, 1.0)) * &(&u + &Polynomial::constant(1, 1.0));
        assert_eq!(lhs, sq.scale(0.5));
    }

    #[test]
    fn steep_heuristic_is_refused() {
        let err = certify_admissible(&ex4(), &lin(2.0, 0.0), &CertifyOptions::default()).unwrap_err();
        assert!(matches!(err, CertifyError::NotCertified { ref attempts } if attempts.len() == 5), "{err}");
    }

    #[test]
    fn zero_heuristic_is_certified() {
        let cert = certify_admissible(&ex4(), &Polynomial::zero(1), &CertifyOptions::default()).unwrap();
        assert!(cert.sos.is_valid());
    }

    #[test]
    fn consistency_requires_vanishing_at_goal() {
        assert!(certify_consistent(&ex4(), &lin(1.0, 0.0), &CertifyOptions::default()).is_ok());
        assert!(certify_admissible(&ex4(), &lin(1.0, -1.0), &CertifyOptions::default()).is_ok());
        assert!(matches!(
            certify_consistent(&ex4(), &lin(1.0, -1.0), &CertifyOptions::default()),
            Err(CertifyError::Ch1Violated { value }) if value == -1.0
        ));
        assert!(matches!(
            certify_admissible(&ex4(), &lin(1.0, 1.0), &CertifyOptions::default()),
            Err(CertifyError::Ah1Violated { .. })
        ));
    }

    #[test]
    fn falsifier_finds_steep_violation() {
        let bb = ex4().black_box().unwrap();
        let h = Heuristic::from(lin(2.0, 0.0));
        let r = falsify(&bb, &h, &FalsifyOptions::uniform(21, 2)).unwrap();
        let ce = r.counterexample.unwrap();
        assert_eq!(ce.condition, Condition::Ah2);
        assert!((ce.value + 1.0).abs() < 1e-12);
        assert_eq!(ce.control, vec![-1.0]);

        let ok = falsify(&bb, &Heuristic::from(lin(1.0, 0.0)), &FalsifyOptions::uniform(21, 2)).unwrap();
        assert!(!ok.refuted());
        assert!(ok.min_ah2.abs() < 1e-12);
    }

    #[test]
    fn falsifier_is_deterministic() {
        let bb = ex4().black_box().unwrap();
        let h = Heuristic::from(Polynomial::monomial(Monomial::new(vec![2]), 3.0));
        let a = falsify(&bb, &h, &FalsifyOptions::uniform(31, 2)).unwrap();
        let b = falsify(&bb, &h, &FalsifyOptions::uniform(31, 2)).unwrap();
        assert_eq!(a, b);
        assert!(a.refuted());
    }

    #[test]
    fn negative_cost_rejected() {
        let r = PolyProblem::new(
            "bad",
            PolyVector::new(vec![Polynomial::var(2, 1)]).unwrap(),
            Polynomial::var(2, 0),
            SemialgebraicSet::boxed(&[-1.0], &[1.0]).unwrap(),
            SemialgebraicSet::boxed(&[-1.0], &[1.0]).unwrap(),
            GoalSpec::point(vec![0.0]),
        );
        assert!(matches!(r, Err(ProblemError::NegativeCost { .. })));
    }

    #[test]
    fn halton_prefix() {
        assert_eq!(halton(1, 2), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton(2, 2), vec![0.25, 2.0 / 3.0]);
    }
}
