//! Problem file schema.
//!
//! Polynomials are sparse term lists. Dynamics and cost terms range over the
//! joint variables (states first, then controls); set constraints range over
//! the states or the controls alone.

use std::f64::consts::SQRT_2;
use std::path::Path;

use admissos::planner::WorldPlanner;
use admissos::poly::{PolyVector, Polynomial};
use admissos::semialg::{Bounds, GoalSpec, Measure, SemialgebraicSet};
use admissos::synth::{builtin, BuiltinOptions};
use admissos::verify::{PolyProblem, Problem};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}\n  | {context}\n  | {caret}")]
    Schema {
        path: String,
        line: usize,
        column: usize,
        message: String,
        context: String,
        caret: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variables {
    pub state: Vec<String>,
    #[serde(default)]
    pub control: Vec<String>,
}

/// Exactly one of `builtin` and `polynomial`. `rho`, `dim` and `taylor`
/// parameterize builtins.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub polynomial: Option<Vec<Vec<Term>>>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub taylor: bool,
}

/// A box when only bounds are given, a semialgebraic set `{p_i >= 0}` when
/// constraints are given (bounds then act as a sampling window), and the
/// whole space when empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSpec {
    #[serde(default)]
    pub constraints: Vec<Vec<Term>>,
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum GoalFileSpec {
    Point(Vec<f64>),
    Set(SetSpec),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sets {
    pub free: Option<SetSpec>,
    pub control: Option<SetSpec>,
    pub goal: Option<GoalFileSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Degrees {
    pub heuristic: Option<u32>,
    pub multiplier: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub name: Option<String>,
    pub variables: Option<Variables>,
    pub dynamics: Dynamics,
    pub cost: Option<Vec<Term>>,
    #[serde(default)]
    pub sets: Sets,
    pub measure: Option<Measure>,
    #[serde(default)]
    pub degrees: Degrees,
    pub planner: Option<WorldPlanner>,
}

/// A problem file resolved into library types.
pub struct Loaded {
    pub problem: Problem,
    pub state_names: Vec<String>,
    pub measure: Option<Measure>,
    pub degrees: Degrees,
    pub planner: Option<WorldPlanner>,
}

fn schema_error(path: &str, text: &str, e: serde_json::Error) -> FileError {
    let line = e.line();
    let column = e.column();
    let context = text.lines().nth(line.saturating_sub(1)).unwrap_or("").to_string();
    let caret = format!("{}^", " ".repeat(column.saturating_sub(1)));
    FileError::Schema {
        path: path.to_string(),
        line,
        column,
        message: e.to_string(),
        context,
        caret,
    }
}

pub fn read_text(path: &Path) -> Result<String, FileError> {
    std::fs::read_to_string(path).map_err(|source| FileError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_json<T: serde::de::DeserializeOwned>(path: &str, text: &str) -> Result<T, FileError> {
    serde_json::from_str(text).map_err(|e| schema_error(path, text, e))
}

/// Loads `builtin:<name>` or a JSON problem file.
pub fn load(arg: &str) -> Result<Loaded, FileError> {
    let file = match arg.strip_prefix("builtin:") {
        Some(name) => ProblemFile {
            name: None,
            variables: None,
            dynamics: Dynamics {
                builtin: Some(name.to_string()),
                ..Dynamics::default()
            },
            cost: None,
            sets: Sets::default(),
            measure: None,
            degrees: Degrees::default(),
            planner: None,
        },
        None => {
            let text = read_text(Path::new(arg))?;
            parse_json(arg, &text)?
        }
    };
    resolve(file)
}

fn poly(nvars: usize, terms: &[Term]) -> Result<Polynomial, FileError> {
    Polynomial::from_terms(nvars, terms.iter().map(|t| (t.exponents.clone(), t.coefficient)))
        .map_err(|e| FileError::Invalid(e.to_string()))
}

fn set(nvars: usize, spec: &SetSpec, what: &str) -> Result<SemialgebraicSet, FileError> {
    let invalid = |e: String| FileError::Invalid(format!("{what}: {e}"));
    let bounds = match (&spec.lo, &spec.hi) {
        (Some(lo), Some(hi)) => Some(Bounds::new(lo.clone(), hi.clone()).map_err(|e| invalid(e.to_string()))?),
        (None, None) => None,
        _ => return Err(invalid("give both lo and hi".into())),
    };
    let s = if spec.constraints.is_empty() {
        match &bounds {
            Some(b) => SemialgebraicSet::boxed(&b.lo, &b.hi),
            None => Ok(SemialgebraicSet::whole_space(nvars)),
        }
    } else {
        let cs = spec
            .constraints
            .iter()
            .map(|t| poly(nvars, t))
            .collect::<Result<Vec<_>, _>>()?;
        let s = SemialgebraicSet::new(nvars, cs).map_err(|e| invalid(e.to_string()))?;
        match bounds {
            Some(b) => s.with_bounds(b),
            None => Ok(s),
        }
    }
    .map_err(|e| invalid(e.to_string()))?;
    if s.nvars() != nvars {
        return Err(invalid(format!("expected {nvars} variables, got {}", s.nvars())));
    }
    Ok(s)
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Default measure for builtins: the boundary atoms of the single
/// integrator and the box `[-2,2] x [-√2,√2]` for the double integrator.
fn builtin_measure(name: &str) -> Option<Measure> {
    match name {
        "single_integrator_1d" => Measure::discrete(vec![(vec![-1.0], 1.0), (vec![1.0], 1.0)]).ok(),
        "double_integrator_1d" => Measure::box_lebesgue(&[-2.0, -SQRT_2], &[2.0, SQRT_2]).ok(),
        _ => None,
    }
}

pub fn resolve(file: ProblemFile) -> Result<Loaded, FileError> {
    let d = &file.dynamics;
    let (problem, measure) = match (&d.builtin, &d.polynomial) {
        (Some(name), None) => {
            if file.cost.is_some() || file.sets != Sets::default() {
                return Err(FileError::Invalid("builtin problems take no cost or sets blocks".into()));
            }
            let mut opts = BuiltinOptions {
                taylor: d.taylor,
                ..BuiltinOptions::default()
            };
            if let Some(r) = d.rho {
                opts.rho = r;
            }
            if let Some(n) = d.dim {
                opts.dim = n;
            }
            let p = builtin(name, &opts).map_err(|e| FileError::Invalid(e.to_string()))?;
            (p, file.measure.clone().or_else(|| builtin_measure(name)))
        }
        (None, Some(polynomial)) => {
            if d.rho.is_some() || d.dim.is_some() || d.taylor {
                return Err(FileError::Invalid("rho, dim and taylor apply to builtins only".into()));
            }
            let vars = file
                .variables
                .as_ref()
                .ok_or_else(|| FileError::Invalid("polynomial dynamics need a variables block".into()))?;
            let (n, m) = (vars.state.len(), vars.control.len());
            if polynomial.len() != n {
                return Err(FileError::Invalid(format!("{} dynamics rows for {n} states", polynomial.len())));
            }
            let f = PolyVector::new(polynomial.iter().map(|t| poly(n + m, t)).collect::<Result<_, _>>()?)
                .map_err(|e| FileError::Invalid(e.to_string()))?;
            let g = poly(n + m, file.cost.as_deref().ok_or_else(|| FileError::Invalid("missing cost".into()))?)?;
            let xfree = set(n, &file.sets.free.clone().unwrap_or_default(), "free set")?;
            let omega = set(m, &file.sets.control.clone().unwrap_or_default(), "control set")?;
            let goal = match &file.sets.goal {
                Some(GoalFileSpec::Point(z)) => GoalSpec::point(z.clone()),
                Some(GoalFileSpec::Set(s)) => GoalSpec::Set { set: set(n, s, "goal set")? },
                None => GoalSpec::point(vec![0.0; n]),
            };
            let name = file.name.clone().unwrap_or_else(|| "problem".into());
            let p = PolyProblem::new(name, f, g, xfree, omega, goal).map_err(|e| FileError::Invalid(e.to_string()))?;
            (Problem::Poly(p), file.measure.clone())
        }
        _ => return Err(FileError::Invalid("dynamics needs exactly one of builtin and polynomial".into())),
    };
    let n = problem.black_box().map_err(|e| FileError::Invalid(e.to_string()))?.nstate();
    let state_names = match &file.variables {
        Some(v) if v.state.len() == n => v.state.clone(),
        Some(v) => {
            return Err(FileError::Invalid(format!("{} state names for {n} states", v.state.len())));
        }
        None => default_names("x", n),
    };
    if let Some(m) = &measure {
        m.validate().map_err(|e| FileError::Invalid(format!("measure: {e}")))?;
        if m.dim() != n {
            return Err(FileError::Invalid(format!("measure has dimension {}, states {n}", m.dim())));
        }
    }
    Ok(Loaded {
        problem,
        state_names,
        measure,
        degrees: file.degrees,
        planner: file.planner,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX4: &str = r#"{
  "name": "ex4",
  "variables": {"state": ["x"], "control": ["u"]},
  "dynamics": {"polynomial": [[{"exponents": [0, 1], "coefficient": 1.0}]]},
  "cost": [{"exponents": [0, 0], "coefficient": 1.0}],
  "sets": {
    "free": {"lo": [-1.0], "hi": [1.0]},
    "control": {"lo": [-1.0], "hi": [1.0]},
    "goal": {"point": [0.0]}
  },
  "measure": {"kind": "discrete", "atoms": [{"point": [-1.0], "weight": 1.0}, {"point": [1.0], "weight": 1.0}]},
  "degrees": {"heuristic": 4}
}"#;

    #[test]
    fn polynomial_file_resolves() {
        let f: ProblemFile = parse_json("ex4.json", EX4).unwrap();
        let l = resolve(f).unwrap();
        let p = l.problem.as_poly().unwrap();
        assert_eq!((p.nstate(), p.ncontrol()), (1, 1));
        assert_eq!(l.state_names, vec!["x".to_string()]);
        assert_eq!(l.degrees.heuristic, Some(4));
    }

    #[test]
    fn unknown_key_has_line_context() {
        let text = EX4.replace("\"degrees\"", "\"degreez\"");
        let Err(FileError::Schema { line, context, .. }) = parse_json::<ProblemFile>("bad.json", &text) else {
            panic!("expected a schema error");
        };
        assert_eq!(line, 12);
        assert!(context.contains("degreez"));
    }

    #[test]
    fn builtin_shorthand() {
        let l = load("builtin:double_integrator_1d").unwrap();
        assert!(l.problem.as_poly().is_some());
        assert!(matches!(l.measure, Some(Measure::BoxLebesgue { .. })));
        assert!(load("builtin:nope").is_err());
    }

    #[test]
    fn builtin_rejects_overrides() {
        let text = r#"{"dynamics": {"builtin": "pendulum"}, "cost": []}"#;
        let f: ProblemFile = parse_json("p.json", text).unwrap();
        assert!(matches!(resolve(f), Err(FileError::Invalid(_))));
    }
}
