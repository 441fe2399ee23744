//! Compilation of sum-of-squares constraints into block SDPs.
//!
//! Every SOS constraint becomes a polynomial identity
//!
//! ```text
//!   data(z) + sum_k c_k * t_k(z)  ==  sum_b  mult_b(z) * m_b(z)' Q_b m_b(z)
//! ```
//!
//! matched coefficient by coefficient, where the `c_k` are the free
//! coefficients of the heuristic, each `Q_b` is a PSD Gram block and
//! `mult_b` is `1` for a plain SOS term or a set-defining polynomial `h`
//! for a multiplier term `lambda * h`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::poly::{monomials_up_to, Monomial, PolyError, PolyVector, Polynomial};
use crate::sdp::{self, Constraint, SdpError, SdpProblem, SdpSettings, SdpSolution, SdpStatus};
use crate::semialg::{GoalSpec, Measure, SemialgebraicSet, SetError};

/// Gram blocks must have a minimum eigenvalue at least this large.
pub const EIGENVALUE_TOL: f64 = -1e-8;
/// Largest acceptable coefficient mismatch of a reconstructed identity.
pub const RESIDUAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SosError {
    #[error("SOS degree must be even, got {0}")]
    OddDegree(u32),
    #[error("multiplier degree must be even, got {0}")]
    OddMultiplierDegree(u32),
    #[error("variable-space mismatch: {0}")]
    VariableSpace(String),
    #[error("goal set needs finite bounds to place the goal equalities")]
    UnboundedGoalSet,
    #[error("relaxation infeasible (solver status {0:?})")]
    Infeasible(SdpStatus),
    #[error("solver did not reach a usable solution (status {0:?})")]
    SolverFailure(SdpStatus),
    #[error("solution does not certify: min eigenvalue {min_eigenvalue:.3e}, residual {residual:.3e}")]
    Uncertified { min_eigenvalue: f64, residual: f64 },
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

impl SosError {
    /// True when the failure is a proof-level refutation rather than a
    /// numerical or usage problem.
    pub fn is_refutation(&self) -> bool {
        matches!(self, SosError::OddDegree(_) | SosError::Infeasible(_))
    }
}

/// Monomial basis of a Gram block and the product monomial of each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GramParam {
    nvars: usize,
    basis: Vec<Monomial>,
}

impl GramParam {
    /// Basis over a subset `vars` of an `nvars`-dimensional space.
    pub fn over_vars(nvars: usize, vars: &[usize], half_degree: u32) -> Self {
        let basis = if vars.is_empty() {
            vec![Monomial::one(nvars)]
        } else {
            monomials_up_to(vars.len(), half_degree)
                .into_iter()
                .map(|m| m.embed(nvars, vars))
                .collect()
        };
        GramParam { nvars, basis }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn basis(&self) -> &[Monomial] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Product monomial for entry `(i, j)`; symmetric in its arguments.
    pub fn product(&self, i: usize, j: usize) -> Monomial {
        self.basis[i].mul(&self.basis[j])
    }

    /// `m' Q m`.
    pub fn polynomial(&self, q: &DMatrix<f64>) -> Polynomial {
        let mut p = Polynomial::zero(self.nvars);
        for i in 0..self.dim() {
            for j in i..self.dim() {
                let c = if i == j { q[(i, i)] } else { q[(i, j)] + q[(j, i)] };
                p.add_term(self.product(i, j), c);
            }
        }
        p
    }
}

pub fn gram_parameterize(nvars: usize, degree2d: u32) -> Result<GramParam, SosError> {
    if !degree2d.is_multiple_of(2) {
        return Err(SosError::OddDegree(degree2d));
    }
    let vars: Vec<usize> = (0..nvars).collect();
    Ok(GramParam::over_vars(nvars, &vars, degree2d / 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockRole {
    /// The SOS remainder of an identity.
    Remainder,
    /// Multiplier of a set-defining constraint.
    Multiplier,
    /// 1x1 slack turning a goal equality into `H(z*) <= 0`.
    GoalSlack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SosBlock {
    pub label: String,
    pub role: BlockRole,
    pub gram: GramParam,
}

// data + sum_k c_k t_k == sum (mult * gram_poly(block))
#[derive(Debug, Clone, PartialEq)]
struct Identity {
    label: String,
    data: Polynomial,
    coef_terms: Vec<Polynomial>,
    grams: Vec<(usize, Polynomial)>,
}

impl Identity {
    fn monomials(&self, blocks: &[SosBlock]) -> Vec<Monomial> {
        let mut set = std::collections::BTreeSet::new();
        for (m, _) in self.data.terms() {
            set.insert(m.clone());
        }
        for t in &self.coef_terms {
            for (m, _) in t.terms() {
                set.insert(m.clone());
            }
        }
        for (b, mult) in &self.grams {
            let g = &blocks[*b].gram;
            for i in 0..g.dim() {
                for j in i..g.dim() {
                    let p = g.product(i, j);
                    for (t, _) in mult.terms() {
                        set.insert(p.mul(t));
                    }
                }
            }
        }
        set.into_iter().collect()
    }

    fn residual(&self, coefs: &[f64], grams: &[DMatrix<f64>], blocks: &[SosBlock]) -> Polynomial {
        let mut lhs = self.data.clone();
        for (c, t) in coefs.iter().zip(&self.coef_terms) {
            lhs = &lhs + &t.scale(*c);
        }
        for (b, mult) in &self.grams {
            lhs = &lhs - &(mult * &blocks[*b].gram.polynomial(&grams[*b]));
        }
        lhs
    }
}

// sum_k c_k * coefs[k] + (slack block value) == rhs
#[derive(Debug, Clone, PartialEq)]
struct LinearRow {
    label: String,
    coefs: Vec<f64>,
    slack: Option<usize>,
    rhs: f64,
}

/// An SOS program with free heuristic coefficients `c_k` over a fixed basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SosProgram {
    coef_basis: Vec<Monomial>,
    coef_nvars: usize,
    blocks: Vec<SosBlock>,
    identities: Vec<Identity>,
    rows: Vec<LinearRow>,
    objective: Vec<f64>,
    lambda_degree: u32,
}

/// How the goal enters the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    /// `H = 0` on the goal, which also yields consistency.
    #[default]
    Equality,
    /// Only `H <= 0` on the goal.
    NonPositive,
}

/// Problem data shared by synthesis and certification. `f` and `g` live on
/// the joint space (states first, then controls); `xfree` and `goal` on the
/// state space; `omega` on the control space.
#[derive(Debug, Clone, Copy)]
pub struct ProgramData<'a> {
    pub f: &'a PolyVector,
    pub g: &'a Polynomial,
    pub xfree: &'a SemialgebraicSet,
    pub omega: &'a SemialgebraicSet,
    pub goal: &'a GoalSpec,
}

impl ProgramData<'_> {
    pub fn nstate(&self) -> usize {
        self.xfree.nvars()
    }

    pub fn ncontrol(&self) -> usize {
        self.omega.nvars()
    }

    fn check(&self) -> Result<(), SosError> {
        let n = self.nstate();
        let joint = n + self.ncontrol();
        if self.f.len() != n {
            return Err(SosError::VariableSpace(format!(
                "dynamics have {} components for {n} states",
                self.f.len()
            )));
        }
        if self.f.nvars() != joint || self.g.nvars() != joint {
            return Err(SosError::VariableSpace(format!(
                "dynamics and cost must be over {joint} joint variables"
            )));
        }
        if self.goal.dim() != n {
            return Err(SosError::VariableSpace(format!(
                "goal has dimension {}, state space {n}",
                self.goal.dim()
            )));
        }
        Ok(())
    }

    // Set constraints lifted to the joint space, labelled.
    fn joint_constraints(&self) -> Vec<(String, Polynomial)> {
        let n = self.nstate();
        let m = self.ncontrol();
        let joint = n + m;
        let smap: Vec<usize> = (0..n).collect();
        let cmap: Vec<usize> = (n..joint).collect();
        let mut out = Vec::new();
        for (k, h) in self.xfree.constraints().iter().enumerate() {
            out.push((format!("state constraint {k}"), h.embed(joint, &smap)));
        }
        for (k, h) in self.omega.constraints().iter().enumerate() {
            out.push((format!("control constraint {k}"), h.embed(joint, &cmap)));
        }
        out
    }
}

/// Options for [`build_heuristic_program`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProgramOptions {
    /// Shared multiplier degree; derived from the expression degree if unset.
    pub deg_lambda: Option<u32>,
    pub goal_mode: GoalMode,
}

fn even_ceil(d: i64) -> u32 {
    if d <= 0 {
        0
    } else {
        (2 * ((d + 1) / 2)) as u32
    }
}

/// Default multiplier degree `2 ceil((deg_expr - deg h) / 2)`, taking the
/// smallest `deg h` among the constraints so every product fits.
pub fn default_lambda_degree(deg_expr: u32, constraints: &[Polynomial]) -> u32 {
    constraints
        .iter()
        .map(|h| even_ceil(deg_expr as i64 - h.degree() as i64))
        .max()
        .unwrap_or(0)
}

struct Builder {
    blocks: Vec<SosBlock>,
    identities: Vec<Identity>,
    rows: Vec<LinearRow>,
    lambda_degree: u32,
}

impl Builder {
    fn new() -> Self {
        Builder {
            blocks: Vec::new(),
            identities: Vec::new(),
            rows: Vec::new(),
            lambda_degree: 0,
        }
    }

    fn finish(self, coef_basis: Vec<Monomial>, coef_nvars: usize, objective: Vec<f64>) -> SosProgram {
        SosProgram {
            coef_basis,
            coef_nvars,
            blocks: self.blocks,
            identities: self.identities,
            rows: self.rows,
            objective,
            lambda_degree: self.lambda_degree,
        }
    }
}

impl Builder {
    fn block(&mut self, label: String, role: BlockRole, gram: GramParam) -> usize {
        self.blocks.push(SosBlock { label, role, gram });
        self.blocks.len() - 1
    }

    // Adds `data + sum c_k t_k - sum lambda_i h_i` is SOS, with one multiplier
    // per constraint over that constraint's own variables.
    fn positivstellensatz(
        &mut self,
        label: &str,
        nvars: usize,
        data: Polynomial,
        coef_terms: Vec<Polynomial>,
        constraints: &[(String, Polynomial)],
        deg_lambda: Option<u32>,
    ) -> Result<(), SosError> {
        let deg_expr = coef_terms
            .iter()
            .map(|t| t.degree())
            .chain(std::iter::once(data.degree()))
            .max()
            .unwrap_or(0);
        let hs: Vec<Polynomial> = constraints.iter().map(|c| c.1.clone()).collect();
        let dl = match deg_lambda {
            Some(d) if d % 2 != 0 => return Err(SosError::OddMultiplierDegree(d)),
            Some(d) => d,
            None => default_lambda_degree(deg_expr, &hs),
        };
        self.lambda_degree = self.lambda_degree.max(dl);
        let top = constraints
            .iter()
            .map(|c| dl + c.1.degree())
            .chain(std::iter::once(deg_expr))
            .max()
            .unwrap_or(0);
        let half = even_ceil(top as i64) / 2;
        let all: Vec<usize> = (0..nvars).collect();
        let main = self.block(format!("{label}: remainder"), BlockRole::Remainder, GramParam::over_vars(nvars, &all, half));
        let mut grams = vec![(main, Polynomial::constant(nvars, 1.0))];
        for (name, h) in constraints {
            let vars = h.support_vars();
            let b = self.block(
                format!("{label}: multiplier of {name}"),
                BlockRole::Multiplier,
                GramParam::over_vars(nvars, &vars, dl / 2),
            );
            grams.push((b, h.clone()));
        }
        self.identities.push(Identity {
            label: label.to_string(),
            data,
            coef_terms,
            grams,
        });
        Ok(())
    }

    // H = 0 (or H <= 0) on the goal. `h_at(z)` gives the coefficient row.
    fn goal(
        &mut self,
        goal: &GoalSpec,
        mode: GoalMode,
        n: usize,
        data: &Polynomial,
        coef_terms: &[Polynomial],
        deg_lambda: Option<u32>,
    ) -> Result<(), SosError> {
        let points = match goal {
            GoalSpec::Point { point } => vec![point.clone()],
            GoalSpec::Set { set } => goal_samples(set)?,
        };
        for (k, z) in points.iter().enumerate() {
            let coefs = coef_terms.iter().map(|t| t.eval(z)).collect::<Result<Vec<_>, _>>()?;
            let slack = match mode {
                GoalMode::Equality => None,
                GoalMode::NonPositive => Some(self.block(
                    format!("goal slack {k}"),
                    BlockRole::GoalSlack,
                    GramParam::over_vars(n, &[], 0),
                )),
            };
            self.rows.push(LinearRow {
                label: format!("goal point {k}"),
                coefs,
                slack,
                rhs: -data.eval(z)?,
            });
        }
        if let GoalSpec::Set { set } = goal {
            // -H - sum lambda h_goal is SOS
            let cons: Vec<(String, Polynomial)> = set
                .constraints()
                .iter()
                .enumerate()
                .map(|(k, h)| (format!("goal constraint {k}"), h.clone()))
                .collect();
            let neg: Vec<Polynomial> = coef_terms.iter().map(|t| -t).collect();
            self.positivstellensatz("goal", n, -data, neg, &cons, deg_lambda)?;
        }
        Ok(())
    }
}

// Grid of 3 points per axis over the goal set's bounds, kept if inside.
fn goal_samples(set: &SemialgebraicSet) -> Result<Vec<Vec<f64>>, SosError> {
    let b = set.bounds().ok_or(SosError::UnboundedGoalSet)?;
    let n = b.dim();
    let mut out = Vec::new();
    let total = 3usize.pow(n as u32);
    for idx in 0..total {
        let mut r = idx;
        let z: Vec<f64> = (0..n)
            .map(|i| {
                let k = r % 3;
                r /= 3;
                b.lo[i] + (b.hi[i] - b.lo[i]) * k as f64 / 2.0
            })
            .collect();
        if set.contains(&z)? {
            out.push(z);
        }
    }
    if out.is_empty() {
        return Err(SosError::UnboundedGoalSet);
    }
    Ok(out)
}

/// `<grad b, f>` for each basis monomial `b` of the heuristic, lifted to the
/// joint space.
fn lie_terms(basis: &[Monomial], f: &PolyVector, n: usize, joint: usize) -> Result<Vec<Polynomial>, SosError> {
    let smap: Vec<usize> = (0..n).collect();
    basis
        .iter()
        .map(|b| {
            let p = Polynomial::monomial(b.clone(), 1.0).embed(joint, &smap);
            let grad = PolyVector::new((0..n).map(|i| p.derivative(i)).collect())?;
            Ok(grad.dot(f)?)
        })
        .collect()
}

/// Builds the synthesis program: maximize `int H dm` subject to the HJB
/// subsolution inequality certified on `X_free x Omega` and the goal
/// condition.
pub fn build_heuristic_program(
    data: &ProgramData<'_>,
    measure: &Measure,
    deg_h: u32,
    opts: &ProgramOptions,
) -> Result<SosProgram, SosError> {
    data.check()?;
    let n = data.nstate();
    let joint = n + data.ncontrol();
    if measure.dim() != n {
        return Err(SosError::VariableSpace(format!(
            "measure has dimension {}, state space {n}",
            measure.dim()
        )));
    }
    let basis = monomials_up_to(n, deg_h);
    let objective = measure.objective_vector(&basis)?;
    let lie = lie_terms(&basis, data.f, n, joint)?;
    let mut b = Builder::new();
    b.positivstellensatz("hjb", joint, data.g.clone(), lie, &data.joint_constraints(), opts.deg_lambda)?;
    let values: Vec<Polynomial> = basis.iter().map(|m| Polynomial::monomial(m.clone(), 1.0)).collect();
    b.goal(data.goal, opts.goal_mode, n, &Polynomial::zero(n), &values, opts.deg_lambda)?;
    Ok(b.finish(basis, n, objective))
}

/// Feasibility program certifying a fixed `H`: the HJB inequality with
/// multipliers, plus `-H` nonnegative on a goal set.
pub fn build_certification_program(
    data: &ProgramData<'_>,
    h: &Polynomial,
    deg_lambda: Option<u32>,
) -> Result<SosProgram, SosError> {
    data.check()?;
    let n = data.nstate();
    let joint = n + data.ncontrol();
    if h.nvars() != n {
        return Err(SosError::VariableSpace(format!(
            "heuristic has {} variables, state space {n}",
            h.nvars()
        )));
    }
    let smap: Vec<usize> = (0..n).collect();
    let hj = h.embed(joint, &smap);
    let grad = PolyVector::new((0..n).map(|i| hj.derivative(i)).collect())?;
    let expr = &grad.dot(data.f)? + data.g;
    let mut b = Builder::new();
    b.positivstellensatz("hjb", joint, expr, Vec::new(), &data.joint_constraints(), deg_lambda)?;
    // Goal values of a fixed H are plain evaluations checked by the caller;
    // a goal set additionally needs -H >= 0 on it.
    if let GoalSpec::Set { set } = data.goal {
        let cons: Vec<(String, Polynomial)> = set
            .constraints()
            .iter()
            .enumerate()
            .map(|(k, h)| (format!("goal constraint {k}"), h.clone()))
            .collect();
        b.positivstellensatz("goal", n, -h, Vec::new(), &cons, deg_lambda)?;
    }
    Ok(b.finish(Vec::new(), n, Vec::new()))
}

impl SosProgram {
    /// Program asserting `p` is SOS over the full monomial basis.
    pub fn sos_membership(p: &Polynomial) -> Result<Self, SosError> {
        let d = p.degree();
        if !d.is_multiple_of(2) {
            return Err(SosError::OddDegree(d));
        }
        let n = p.nvars();
        let gram = gram_parameterize(n, d)?;
        let blocks = vec![SosBlock {
            label: "gram".into(),
            role: BlockRole::Remainder,
            gram,
        }];
        Ok(SosProgram {
            coef_basis: Vec::new(),
            coef_nvars: n,
            blocks,
            identities: vec![Identity {
                label: "sos".into(),
                data: p.clone(),
                coef_terms: Vec::new(),
                grams: vec![(0, Polynomial::constant(n, 1.0))],
            }],
            rows: Vec::new(),
            objective: Vec::new(),
            lambda_degree: 0,
        })
    }

    pub fn blocks(&self) -> &[SosBlock] {
        &self.blocks
    }

    pub fn coefficient_basis(&self) -> &[Monomial] {
        &self.coef_basis
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    /// Multiplier degree used by the builder.
    pub fn lambda_degree(&self) -> u32 {
        self.lambda_degree
    }

    /// Number of coefficient-matching rows (one per monomial per identity).
    pub fn num_matching_rows(&self) -> usize {
        self.identities.iter().map(|i| i.monomials(&self.blocks).len()).sum()
    }

    pub fn num_goal_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn to_sdp(&self) -> SdpProblem {
        let dims: Vec<usize> = self.blocks.iter().map(|b| b.gram.dim()).collect();
        let nfree = self.coef_basis.len();
        let mut p = SdpProblem::new(dims, nfree);
        for idn in &self.identities {
            let mut rows: BTreeMap<Monomial, Constraint> = idn
                .monomials(&self.blocks)
                .into_iter()
                .map(|m| {
                    let rhs = -idn.data.coefficient(&m);
                    (m, Constraint::new(rhs))
                })
                .collect();
            for (k, t) in idn.coef_terms.iter().enumerate() {
                for (m, c) in t.terms() {
                    rows.get_mut(m).expect("monomial collected").add_free(k, c);
                }
            }
            for (b, mult) in &idn.grams {
                let g = &self.blocks[*b].gram;
                for i in 0..g.dim() {
                    for j in i..g.dim() {
                        let prod = g.product(i, j);
                        for (t, c) in mult.terms() {
                            rows.get_mut(&prod.mul(t)).expect("monomial collected").add_entry(*b, i, j, -c);
                        }
                    }
                }
            }
            for (_, c) in rows {
                p.add_constraint(c).expect("builder emits valid rows");
            }
        }
        for r in &self.rows {
            let mut c = Constraint::new(r.rhs);
            for (k, v) in r.coefs.iter().enumerate() {
                c.add_free(k, *v);
            }
            if let Some(b) = r.slack {
                c.add_entry(b, 0, 0, 1.0);
            }
            p.add_constraint(c).expect("builder emits valid rows");
        }
        for (k, v) in self.objective.iter().enumerate() {
            p.set_objective_free(k, *v).expect("objective sized to the basis");
        }
        p
    }

    /// Labelled structure followed by the sparse SDP dump.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("coefficients {}\n", self.coef_basis.len()));
        for (k, b) in self.blocks.iter().enumerate() {
            s.push_str(&format!("block {k} dim {} {:?} {}\n", b.gram.dim(), b.role, b.label));
        }
        for idn in &self.identities {
            s.push_str(&format!("identity {} rows {}\n", idn.label, idn.monomials(&self.blocks).len()));
        }
        for r in &self.rows {
            s.push_str(&format!("linear {}\n", r.label));
        }
        s.push_str(&self.to_sdp().to_sparse_text());
        s
    }

    /// Heuristic polynomial from a coefficient vector.
    pub fn heuristic(&self, coefs: &[f64]) -> Polynomial {
        let mut h = Polynomial::zero(self.coef_nvars);
        for (m, c) in self.coef_basis.iter().zip(coefs) {
            h.add_term(m.clone(), *c);
        }
        h
    }

    /// Certificate recomputed from the Gram blocks and coefficients by
    /// polynomial arithmetic.
    pub fn certificate(&self, coefs: &[f64], grams: &[DMatrix<f64>]) -> SosCertificate {
        let blocks: Vec<CertifiedBlock> = self
            .blocks
            .iter()
            .zip(grams)
            .map(|(b, q)| {
                let q = (q + q.transpose()) * 0.5;
                CertifiedBlock {
                    label: b.label.clone(),
                    role: b.role,
                    basis: b.gram.basis().to_vec(),
                    min_eigenvalue: sdp::min_eigenvalue(&q),
                    gram: q,
                }
            })
            .collect();
        let qs: Vec<DMatrix<f64>> = blocks.iter().map(|b| b.gram.clone()).collect();
        let mut residual = 0.0f64;
        for idn in &self.identities {
            residual = residual.max(idn.residual(coefs, &qs, &self.blocks).max_abs_coefficient());
        }
        for r in &self.rows {
            let mut v: f64 = r.coefs.iter().zip(coefs).map(|(a, c)| a * c).sum();
            if let Some(b) = r.slack {
                v += qs[b][(0, 0)];
            }
            residual = residual.max((v - r.rhs).abs());
        }
        SosCertificate {
            blocks,
            max_residual: residual,
        }
    }

    /// Reads the heuristic and its certificate from a solver result.
    pub fn extract(&self, sol: &SdpSolution) -> Result<(Polynomial, SosCertificate), SosError> {
        match sol.status {
            s if s.is_solved() => {}
            SdpStatus::PrimalInfeasible => return Err(SosError::Infeasible(sol.status)),
            s => return Err(SosError::SolverFailure(s)),
        }
        let cert = self.certificate(&sol.free, &sol.x);
        Ok((self.heuristic(&sol.free), cert))
    }
}

/// Alias matching the pipeline vocabulary.
pub fn extract_heuristic(prog: &SosProgram, sol: &SdpSolution) -> Result<(Polynomial, SosCertificate), SosError> {
    prog.extract(sol)
}

pub fn to_sdp(prog: &SosProgram) -> SdpProblem {
    prog.to_sdp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifiedBlock {
    pub label: String,
    pub role: BlockRole,
    pub basis: Vec<Monomial>,
    #[serde(serialize_with = "ser_matrix")]
    pub gram: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in m.row_iter() {
        seq.serialize_element(&r.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SosCertificate {
    pub blocks: Vec<CertifiedBlock>,
    /// Largest absolute coefficient mismatch over all identities and rows.
    pub max_residual: f64,
}

impl SosCertificate {
    pub fn min_eigenvalue(&self) -> f64 {
        self.blocks.iter().map(|b| b.min_eigenvalue).fold(f64::INFINITY, f64::min)
    }

    pub fn is_valid(&self) -> bool {
        self.min_eigenvalue() >= EIGENVALUE_TOL && self.max_residual <= RESIDUAL_TOL
    }

    /// Multiplier polynomials `m' Q m`, by block label.
    pub fn multipliers(&self) -> Vec<(String, Polynomial)> {
        self.blocks
            .iter()
            .filter(|b| b.role == BlockRole::Multiplier)
            .map(|b| {
                let g = GramParam {
                    nvars: b.basis.first().map_or(0, |m| m.nvars()),
                    basis: b.basis.clone(),
                };
                (b.label.clone(), g.polynomial(&b.gram))
            })
            .collect()
    }
}

/// Decides whether `p` is a sum of squares.
pub fn check_sos(p: &Polynomial, settings: &SdpSettings) -> Result<SosCertificate, SosError> {
    let prog = SosProgram::sos_membership(p)?;
    let sol = sdp::solve(&prog.to_sdp(), settings);
    let (_, cert) = prog.extract(&sol)?;
    if !cert.is_valid() {
        return Err(SosError::Uncertified {
            min_eigenvalue: cert.min_eigenvalue(),
            residual: cert.max_residual,
        });
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly1(terms: &[(u32, f64)]) -> Polynomial {
        Polynomial::from_terms(1, terms.iter().map(|&(e, c)| (vec![e], c))).unwrap()
    }

    #[test]
    fn gram_shapes() {
        let g = gram_parameterize(1, 2).unwrap();
        assert_eq!(g.dim(), 2);
        let g = gram_parameterize(2, 2).unwrap();
        assert_eq!(g.dim(), 3);
        assert_eq!(g.product(1, 2), g.product(2, 1));
        assert_eq!(gram_parameterize(1, 10).unwrap().dim(), 6);
        assert_eq!(gram_parameterize(1, 3), Err(SosError::OddDegree(3)));
    }

    #[test]
    fn perfect_square_is_sos() {
        let p = poly1(&[(2, 1.0), (1, 2.0), (0, 1.0)]);
        let cert = check_sos(&p, &SdpSettings::default()).unwrap();
        let q = &cert.blocks[0].gram;
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            assert!((q[(i, j)] - 1.0).abs() < 1e-6);
        }
        assert!(cert.max_residual <= RESIDUAL_TOL);
    }

    #[test]
    fn refutations() {
        let s = SdpSettings::default();
        assert!(check_sos(&poly1(&[(1, 1.0)]), &s).unwrap_err().is_refutation());
        assert!(check_sos(&poly1(&[(2, -1.0)]), &s).unwrap_err().is_refutation());
        assert!(check_sos(&poly1(&[(3, 1.0)]), &s).unwrap_err().is_refutation());
    }

    #[test]
    fn membership_through_sdp_matches() {
        let p = poly1(&[(2, 1.0), (0, 1.0)]);
        let prog = SosProgram::sos_membership(&p).unwrap();
        let sdp = prog.to_sdp();
        assert_eq!(sdp.num_constraints(), 3);
        let cert = check_sos(&p, &SdpSettings::default()).unwrap();
        let sol = sdp::solve(&sdp, &SdpSettings::default());
        let (_, c2) = prog.extract(&sol).unwrap();
        assert!((cert.blocks[0].gram.clone() - c2.blocks[0].gram.clone()).norm() < 1e-9);
    }

    #[test]
    fn single_block_without_rows_is_trivially_feasible() {
        let mut p = SdpProblem::new(vec![2], 0);
        p.add_objective_entry(0, 0, 0, -1.0).unwrap();
        let sol = sdp::solve(&p, &SdpSettings::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.x[0][(0, 0)].abs() < 1e-6);
        assert!(sol.primal_objective.abs() < 1e-6);
    }

    #[test]
    fn default_lambda_degree_rule() {
        let h = poly1(&[(0, 1.0), (2, -1.0)]);
        assert_eq!(default_lambda_degree(4, std::slice::from_ref(&h)), 2);
        assert_eq!(default_lambda_degree(1, std::slice::from_ref(&h)), 0);
        assert_eq!(default_lambda_degree(9, &[h]), 8);
    }
}
