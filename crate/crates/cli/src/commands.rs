use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use admissos::heuristic::Heuristic;
use admissos::planner::{self, PlanError, SearchStatus, World};
use admissos::poly::Polynomial;
use admissos::semialg::{Bounds, Measure};
use admissos::sosprog::{build_heuristic_program, ProgramOptions};
use admissos::synth::{self, fmt17, OracleSpec, SynthError, SynthesisRequest, SynthesisStatus};
use admissos::verify::{
    self, certify_admissible, certify_consistent, BlackBoxProblem, CertifyError, CertifyOptions, FalsifyOptions,
    ProblemError,
};
use serde::Serialize;
use thiserror::Error;

use crate::file::{self, FileError, Loaded};

pub const EXIT_OK: u8 = 0;
pub const EXIT_REFUTED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_EXHAUSTED: u8 = 3;
pub const EXIT_CAP: u8 = 4;
pub const EXIT_UNBOUNDED: u8 = 5;
pub const EXIT_INFEASIBLE: u8 = 6;
pub const EXIT_SOLVER: u8 = 7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::File(_) | CliError::Usage(_) | CliError::Write { .. } => EXIT_INPUT,
            CliError::Synth(SynthError::UnknownBuiltin(_) | SynthError::BadRequest(_) | SynthError::NotPolynomial(_)) => {
                EXIT_INPUT
            }
            CliError::Problem(_) | CliError::Plan(PlanError::Config(_) | PlanError::World(_)) => EXIT_INPUT,
            _ => EXIT_SOLVER,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable report") + "\n"
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| fmt17(*x)).collect();
    format!("[{}]", parts.join(", "))
}

/// `zero`, `euclid` (distance to the goal point), `quadratic:<a>`
/// (`a/2 |z - goal|^2`) or a heuristic JSON file.
pub fn resolve_heuristic(spec: &str, bb: &BlackBoxProblem) -> Result<Heuristic> {
    let n = bb.nstate();
    let goal = || {
        bb.goal_point()
            .map(<[f64]>::to_vec)
            .ok_or_else(|| CliError::Usage(format!("'{spec}' needs a point goal")))
    };
    let h = if spec == "zero" {
        Heuristic::zero(n)
    } else if spec == "euclid" {
        let g = goal()?;
        Heuristic::distance_to_box(n, (0..n).collect(), g.clone(), g)
    } else if let Some(a) = spec.strip_prefix("quadratic:") {
        let a: f64 = a
            .parse()
            .map_err(|_| CliError::Usage(format!("bad coefficient in '{spec}'")))?;
        let g = goal()?;
        let mut p = Polynomial::zero(n);
        for (i, gi) in g.iter().enumerate() {
            let d = &Polynomial::var(n, i) - &Polynomial::constant(n, *gi);
            p = &p + &(&d * &d);
        }
        Heuristic::from(p.scale(0.5 * a))
    } else {
        let text = file::read_text(Path::new(spec))?;
        file::parse_json(spec, &text)?
    };
    h.validate().map_err(CliError::Usage)?;
    if h.nvars() != n {
        return Err(CliError::Usage(format!("heuristic has {} variables, problem {n} states", h.nvars())));
    }
    Ok(h)
}

fn grid_points(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let axis = |i: usize| -> Vec<f64> {
        if per_axis < 2 || lo[i] == hi[i] {
            return vec![0.5 * (lo[i] + hi[i])];
        }
        (0..per_axis)
            .map(|k| lo[i] + (hi[i] - lo[i]) * k as f64 / (per_axis - 1) as f64)
            .collect()
    };
    let mut pts = vec![Vec::new()];
    for i in 0..lo.len() {
        let ax = axis(i);
        pts = pts
            .into_iter()
            .flat_map(|p| {
                ax.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    pts
}

/// Heuristic values on a uniform grid, last axis fastest.
pub fn surface_csv(h: &Heuristic, names: &[String], lo: &[f64], hi: &[f64], per_axis: usize) -> String {
    let mut out = names.join(",");
    out.push_str(",H\n");
    for z in grid_points(lo, hi, per_axis) {
        for v in &z {
            out.push_str(&fmt17(*v));
            out.push(',');
        }
        out.push_str(&fmt17(h.value(&z)));
        out.push('\n');
    }
    out
}

pub struct SynthArgs {
    pub problem: String,
    pub degree: Option<u32>,
    pub lambda_degree: Option<u32>,
    pub epsilon: f64,
    pub out: Option<PathBuf>,
    pub surface_grid: Option<usize>,
}

fn default_measure(l: &Loaded) -> Result<Measure> {
    if let Some(m) = &l.measure {
        return Ok(m.clone());
    }
    let p = l.problem.as_poly().expect("checked polynomial");
    let b = p
        .xfree()
        .bounds()
        .ok_or_else(|| CliError::Usage("no measure given and the free set has no bounds".into()))?;
    Ok(Measure::box_lebesgue(&b.lo, &b.hi).map_err(SynthError::from)?)
}

fn require_poly(l: &Loaded) -> Result<&verify::PolyProblem> {
    l.problem
        .as_poly()
        .ok_or_else(|| SynthError::NotPolynomial(l.problem.name().to_string()).into())
}

pub fn synth(a: &SynthArgs) -> Result<u8> {
    let l = file::load(&a.problem)?;
    let p = require_poly(&l)?;
    let deg = a
        .degree
        .or(l.degrees.heuristic)
        .ok_or_else(|| CliError::Usage("give --degree or a degrees.heuristic entry".into()))?;
    let measure = default_measure(&l)?;
    let mut req = SynthesisRequest::new(p.clone(), measure.clone(), deg);
    req.deg_lambda = a.lambda_degree.or(l.degrees.multiplier);
    req.epsilon = a.epsilon;
    let r = synth::synthesize(&req)?;
    let status = match r.status {
        SynthesisStatus::Ok => "ok",
        SynthesisStatus::Unbounded => "unbounded",
        SynthesisStatus::Infeasible => "infeasible",
        SynthesisStatus::SolverFailure => "solver_failure",
    };
    println!("status {status}");
    println!("solver_status {:?}", r.solver_status);
    println!("iterations {}", r.iterations);
    println!("multiplier_degree {}", r.deg_lambda);
    if let Some(o) = r.objective {
        println!("objective {}", fmt17(o));
    }
    if let Some(h) = &r.heuristic {
        println!("heuristic {}", h.display_with(&l.state_names));
    }
    if let Some(d) = &r.diagnostic {
        println!("diagnostic {d}");
    }
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.display().to_string(),
            source,
        })?;
        write_file(&dir.join("report.json"), &pretty(&r))?;
        if let Some(h) = &r.heuristic {
            let h = Heuristic::from(h.clone());
            write_file(&dir.join("heuristic.json"), &pretty(&h))?;
            let (lo, hi) = measure.support_bounds();
            let per_axis = a.surface_grid.unwrap_or(match lo.len() {
                1 => 201,
                2 => 41,
                _ => 11,
            });
            write_file(&dir.join("surface.csv"), &surface_csv(&h, &l.state_names, &lo, &hi, per_axis))?;
        }
    }
    Ok(match r.status {
        SynthesisStatus::Ok => EXIT_OK,
        SynthesisStatus::Unbounded => EXIT_UNBOUNDED,
        SynthesisStatus::Infeasible => EXIT_INFEASIBLE,
        SynthesisStatus::SolverFailure => EXIT_SOLVER,
    })
}

pub struct VerifyArgs {
    pub problem: String,
    pub heuristic: String,
    pub consistent: bool,
    pub lambda_degree: Option<u32>,
    pub degree_cap: u32,
}

#[derive(Serialize)]
struct MultiplierReport {
    label: String,
    polynomial: String,
}

#[derive(Serialize)]
struct VerifyReport {
    condition: &'static str,
    result: &'static str,
    detail: Option<String>,
    multiplier_degree: Option<u32>,
    max_residual: Option<f64>,
    min_eigenvalue: Option<f64>,
    goal_value: Option<f64>,
    multipliers: Vec<MultiplierReport>,
    attempts: Vec<verify::Attempt>,
    counterexample: Option<verify::Counterexample>,
}

pub fn verify_cmd(a: &VerifyArgs) -> Result<u8> {
    let l = file::load(&a.problem)?;
    let p = require_poly(&l)?;
    let bb = p.black_box()?;
    let h = resolve_heuristic(&a.heuristic, &bb)?;
    let Heuristic::Polynomial { poly } = &h else {
        return Err(CliError::Usage("certification needs a polynomial heuristic".into()));
    };
    let opts = CertifyOptions {
        deg_lambda: a.lambda_degree,
        degree_cap: a.degree_cap,
        ..CertifyOptions::default()
    };
    let condition = if a.consistent { "consistent" } else { "admissible" };
    let outcome = if a.consistent {
        certify_consistent(p, poly, &opts)
    } else {
        certify_admissible(p, poly, &opts)
    };
    let mut report = VerifyReport {
        condition,
        result: "certified",
        detail: None,
        multiplier_degree: None,
        max_residual: None,
        min_eigenvalue: None,
        goal_value: None,
        multipliers: Vec::new(),
        attempts: Vec::new(),
        counterexample: None,
    };
    let code = match outcome {
        Ok(c) => {
            report.multiplier_degree = Some(c.deg_lambda);
            report.max_residual = Some(c.sos.max_residual);
            report.min_eigenvalue = Some(c.sos.min_eigenvalue());
            report.goal_value = c.goal_value;
            report.multipliers = c
                .sos
                .multipliers()
                .into_iter()
                .map(|(label, m)| MultiplierReport {
                    label,
                    polynomial: m.to_string(),
                })
                .collect();
            report.attempts = c.attempts;
            EXIT_OK
        }
        Err(e @ (CertifyError::Ah1Violated { .. } | CertifyError::Ch1Violated { .. })) => {
            report.result = "refuted";
            report.detail = Some(e.to_string());
            EXIT_REFUTED
        }
        Err(CertifyError::NotCertified { attempts }) => {
            report.attempts = attempts;
            let dims = bb.nstate() + bb.ncontrol();
            let f = verify::falsify(&bb, &h, &FalsifyOptions::uniform(50, dims))?;
            if let Some(cx) = f.counterexample {
                report.result = "refuted";
                report.detail = Some(format!("falsifier value {}", fmt17(cx.value)));
                report.counterexample = Some(cx);
                EXIT_REFUTED
            } else {
                report.result = "inconclusive";
                report.detail = Some("no certificate and no counterexample".into());
                EXIT_SOLVER
            }
        }
        Err(CertifyError::SolverFailure { attempts }) => {
            report.result = "solver_failure";
            report.attempts = attempts;
            EXIT_SOLVER
        }
        Err(e) => return Err(e.into()),
    };
    print!("{}", pretty(&report));
    Ok(code)
}

pub struct FalsifyArgs {
    pub problem: String,
    pub heuristic: String,
    pub grid: Vec<usize>,
    pub halton: Option<usize>,
    pub tol: Option<f64>,
}

pub fn falsify_cmd(a: &FalsifyArgs) -> Result<u8> {
    let l = file::load(&a.problem)?;
    let bb = l.problem.black_box()?;
    let h = resolve_heuristic(&a.heuristic, &bb)?;
    let dims = bb.nstate() + bb.ncontrol();
    let mut opts = FalsifyOptions::uniform(a.grid.first().copied().unwrap_or(50), dims);
    if a.grid.len() > 1 {
        if a.grid.len() != dims {
            return Err(CliError::Usage(format!("--grid needs 1 or {dims} entries")));
        }
        opts.grid = a.grid.clone();
    }
    if let Some(n) = a.halton {
        opts.halton = n;
    }
    if let Some(t) = a.tol {
        opts.tol = t;
    }
    let r = verify::falsify(&bb, &h, &opts)?;
    println!("samples {}", r.samples);
    println!("min_ah2 {}", fmt17(r.min_ah2));
    println!("min_state {}", fmt_vec(&r.min_state));
    println!("min_control {}", fmt_vec(&r.min_control));
    println!("kinks {}", r.kinks);
    println!("ties {}", r.ties);
    match &r.counterexample {
        Some(c) => {
            println!(
                "counterexample {:?} state={} control={} value={}",
                c.condition,
                fmt_vec(&c.state),
                fmt_vec(&c.control),
                fmt17(c.value)
            );
            Ok(EXIT_REFUTED)
        }
        None => {
            println!("counterexample none");
            Ok(EXIT_OK)
        }
    }
}

pub struct PlanArgs {
    pub world: String,
    pub problem: Option<String>,
    pub heuristic: String,
    pub trace: Option<PathBuf>,
    pub max_iterations: Option<usize>,
    pub start: Option<Vec<f64>>,
}

fn load_world(arg: &str) -> Result<World> {
    if let Some(w) = World::bundled(arg) {
        return Ok(w);
    }
    let text = file::read_text(Path::new(arg))?;
    let w: World = file::parse_json(arg, &text)?;
    Ok(World::from_json(&serde_json::to_string(&w).expect("serializable world"))?)
}

pub fn plan_cmd(a: &PlanArgs) -> Result<u8> {
    let mut w = load_world(&a.world)?;
    if let Some(pf) = &a.problem {
        let l = file::load(pf)?;
        if let Some(cfg) = l.planner {
            w.planner = cfg;
        }
    }
    if let Some(n) = a.max_iterations {
        w.planner.max_iterations = n;
    }
    if let Some(s) = &a.start {
        w.start = s.clone();
    }
    let p = w.problem();
    let cfg = w.config();
    let h = match a.heuristic.as_str() {
        "zero" => Heuristic::zero(p.nstate()),
        "world" => w.heuristic(),
        "euclid" => Heuristic::distance_to_box(p.nstate(), vec![0, 1], w.goal.lo[..2].to_vec(), w.goal.hi[..2].to_vec()),
        other => resolve_heuristic(other, &p)?,
    };
    let r = planner::plan(&p, &h, &w.start, &cfg)?;
    let status = match r.status {
        SearchStatus::Solved => "solved",
        SearchStatus::Exhausted => "exhausted",
        SearchStatus::CapReached => "cap_reached",
    };
    println!("world {}", w.name);
    println!("status {status}");
    println!("iterations {}", r.iterations);
    println!("generated {}", r.generated);
    println!("cost {}", fmt17(r.cost));
    println!("edges {}", r.controls.len());
    if let Some(t) = &a.trace {
        write_file(t, &planner::trace_csv(&r))?;
    }
    Ok(match r.status {
        SearchStatus::Solved => match planner::validate_path(&p, &r, &cfg) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("path failed re-validation: {e}");
                EXIT_SOLVER
            }
        },
        SearchStatus::Exhausted => EXIT_EXHAUSTED,
        SearchStatus::CapReached => EXIT_CAP,
    })
}

pub struct OracleArgs {
    pub problem: String,
    pub grid: usize,
    pub heuristic: Option<String>,
    pub out: Option<PathBuf>,
}

pub fn oracle_cmd(a: &OracleArgs) -> Result<u8> {
    let l = file::load(&a.problem)?;
    let bb = l.problem.black_box()?;
    let h = a.heuristic.as_deref().map(|s| resolve_heuristic(s, &bb)).transpose()?;
    let o = synth::value_oracle(&bb, &OracleSpec::over(&bb, a.grid))?;
    let csv = synth::oracle_csv(h.as_ref(), &o, &l.state_names);
    match &a.out {
        Some(path) => {
            write_file(path, &csv)?;
            println!("nodes {}", o.len());
            println!("sweeps {}", o.sweeps);
            println!("error_estimate {}", fmt17(o.error_estimate));
            if let Some(h) = &h {
                let c = synth::compare(h, &o, None)?;
                println!("max_overshoot {}", fmt17(c.max_overshoot));
                println!("mean_gap {}", fmt17(c.mean_gap));
            }
        }
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

pub struct ReportArgs {
    pub problem: String,
    pub degree: Option<u32>,
    pub lambda_degree: Option<u32>,
    /// Append the sparse SDP dump.
    pub sdp: bool,
}

pub fn report_cmd(a: &ReportArgs) -> Result<u8> {
    let l = file::load(&a.problem)?;
    let bb = l.problem.black_box()?;
    let mut s = String::new();
    let _ = writeln!(s, "problem {}", l.problem.name());
    let _ = writeln!(s, "states {} ({})", bb.nstate(), l.state_names.join(", "));
    let _ = writeln!(s, "controls {}", bb.ncontrol());
    let b: &Bounds = bb.xfree_bounds();
    let _ = writeln!(s, "free_bounds {} {}", fmt_vec(&b.lo), fmt_vec(&b.hi));
    let _ = writeln!(s, "control_bounds {} {}", fmt_vec(&bb.omega_bounds().lo), fmt_vec(&bb.omega_bounds().hi));
    if let Some(g) = bb.goal_point() {
        let _ = writeln!(s, "goal_point {}", fmt_vec(g));
    }
    match l.problem.as_poly() {
        Some(p) => {
            let _ = writeln!(s, "dynamics polynomial");
            for (i, fi) in p.f().components().iter().enumerate() {
                let _ = writeln!(s, "  f{i} = {fi}");
            }
            let _ = writeln!(s, "  g = {}", p.g());
            if let Some(deg) = a.degree.or(l.degrees.heuristic) {
                let m = default_measure(&l)?;
                let opts = ProgramOptions {
                    deg_lambda: a.lambda_degree.or(l.degrees.multiplier),
                    ..ProgramOptions::default()
                };
                let prog = build_heuristic_program(&p.program_data(), &m, deg, &opts).map_err(SynthError::from)?;
                let _ = writeln!(s, "program degree {deg}");
                let d = prog.describe();
                match d.find("sdp-sparse") {
                    Some(k) if !a.sdp => s.push_str(&d[..k]),
                    _ => s.push_str(&d),
                }
            }
        }
        None => {
            let _ = writeln!(s, "dynamics evaluator (falsification only)");
        }
    }
    print!("{s}");
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_grid_order() {
        let h = Heuristic::from(Polynomial::var(2, 0));
        let csv = surface_csv(&h, &["a".into(), "b".into()], &[0.0, 0.0], &[1.0, 1.0], 2);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "a,b,H");
        assert_eq!(rows.len(), 5);
        assert!(rows[2].starts_with("0.0000000000000000e0,1.0000000000000000e0"));
    }

    #[test]
    fn heuristic_specs() {
        let l = file::load("builtin:pendulum").unwrap();
        let bb = l.problem.black_box().unwrap();
        let q = resolve_heuristic("quadratic:2", &bb).unwrap();
        assert!((q.value(&[1.0, 2.0]) - 5.0).abs() < 1e-12);
        assert_eq!(resolve_heuristic("zero", &bb).unwrap().value(&[3.0, 1.0]), 0.0);
        assert!((resolve_heuristic("euclid", &bb).unwrap().value(&[3.0, 4.0]) - 5.0).abs() < 1e-12);
        assert!(resolve_heuristic("quadratic:x", &bb).is_err());
    }
}
