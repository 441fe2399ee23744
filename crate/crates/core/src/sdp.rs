//! Dense primal-dual interior-point solver for block-diagonal SDPs.
//!
//! Problem form (maximization, as the SOS programs are stated):
//!
//! ```text
//!   maximize    <C, X> + c_f' x_f
//!   subject to  <A_i, X> + a_i' x_f = b_i,   i = 1..m
//!               X = diag(X_1, ..., X_k),  X_j PSD,   x_f free
//! ```
//!
//! with dual `minimize b'y  s.t.  sum_i y_i A_i - C = Z PSD,  A_f' y = c_f`.
//!
//! Symmetric coefficient matrices are stored by their upper triangle: an
//! entry `(i, j, v)` with `i < j` stands for `v` at both `(i, j)` and
//! `(j, i)`, so it contributes `2 v X_ij` to `<A, X>`.
//!
//! The iteration is infeasible-start path following with Nesterov-Todd
//! scaling and a Mehrotra predictor-corrector. Free variables enter through
//! the augmented system `[M A_f; A_f' -δI]`, eliminated by a second Cholesky
//! on `A_f' M^-1 A_f + δI`. Infeasibility is declared heuristically, when a
//! normalized ray residual stays under tolerance for several consecutive
//! iterations.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("entry references block {block} but the problem has {nblocks} blocks")]
    BadBlock { block: usize, nblocks: usize },
    #[error("entry ({i}, {j}) out of range for block {block} of dimension {dim}")]
    BadIndex { block: usize, i: usize, j: usize, dim: usize },
    #[error("free variable {index} out of range ({nfree} free variables)")]
    BadFree { index: usize, nfree: usize },
    #[error("non-finite problem data")]
    NonFinite,
    #[error("solution shape does not match the problem")]
    ShapeMismatch,
    #[error("malformed sparse text at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// One linear equality `<A, X> + a' x_f = rhs`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub entries: Vec<BlockEntry>,
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(rhs: f64) -> Self {
        Constraint {
            entries: Vec::new(),
            free: Vec::new(),
            rhs,
        }
    }

    /// Adds `value` to the symmetric coefficient at `(i, j)` of `block`.
    pub fn add_entry(&mut self, block: usize, i: usize, j: usize, value: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.entries.push(BlockEntry { block, i, j, value });
    }

    pub fn add_free(&mut self, index: usize, value: f64) {
        self.free.push((index, value));
    }

    // Sums duplicate entries so every (block, i, j) appears once.
    fn normalize(&mut self) {
        self.entries
            .sort_by_key(|a| (a.block, a.i, a.j));
        let mut out: Vec<BlockEntry> = Vec::with_capacity(self.entries.len());
        for e in self.entries.drain(..) {
            match out.last_mut() {
                Some(l) if (l.block, l.i, l.j) == (e.block, e.i, e.j) => l.value += e.value,
                _ => out.push(e),
            }
        }
        out.retain(|e| e.value != 0.0);
        self.entries = out;
        self.free.sort_by_key(|f| f.0);
        let mut fout: Vec<(usize, f64)> = Vec::with_capacity(self.free.len());
        for f in self.free.drain(..) {
            match fout.last_mut() {
                Some(l) if l.0 == f.0 => l.1 += f.1,
                _ => fout.push(f),
            }
        }
        fout.retain(|f| f.1 != 0.0);
        self.free = fout;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    blocks: Vec<usize>,
    nfree: usize,
    objective: Vec<BlockEntry>,
    objective_free: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl SdpProblem {
    pub fn new(blocks: Vec<usize>, nfree: usize) -> Self {
        SdpProblem {
            blocks,
            nfree,
            objective: Vec::new(),
            objective_free: vec![0.0; nfree],
            constraints: Vec::new(),
        }
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn nfree(&self) -> usize {
        self.nfree
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective_free(&self) -> &[f64] {
        &self.objective_free
    }

    fn check_entry(&self, e: &BlockEntry) -> Result<(), SdpError> {
        let dim = *self.blocks.get(e.block).ok_or(SdpError::BadBlock {
            block: e.block,
            nblocks: self.blocks.len(),
        })?;
        if e.i >= dim || e.j >= dim {
            return Err(SdpError::BadIndex {
                block: e.block,
                i: e.i,
                j: e.j,
                dim,
            });
        }
        if !e.value.is_finite() {
            return Err(SdpError::NonFinite);
        }
        Ok(())
    }

    pub fn add_constraint(&mut self, mut c: Constraint) -> Result<usize, SdpError> {
        for e in &c.entries {
            self.check_entry(e)?;
        }
        for &(k, v) in &c.free {
            if k >= self.nfree {
                return Err(SdpError::BadFree {
                    index: k,
                    nfree: self.nfree,
                });
            }
            if !v.is_finite() {
                return Err(SdpError::NonFinite);
            }
        }
        if !c.rhs.is_finite() {
            return Err(SdpError::NonFinite);
        }
        c.normalize();
        self.constraints.push(c);
        Ok(self.constraints.len() - 1)
    }

    /// Adds `value` to the symmetric objective coefficient at `(i, j)`.
    pub fn add_objective_entry(&mut self, block: usize, i: usize, j: usize, value: f64) -> Result<(), SdpError> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let e = BlockEntry { block, i, j, value };
        self.check_entry(&e)?;
        self.objective.push(e);
        Ok(())
    }

    pub fn set_objective_free(&mut self, index: usize, value: f64) -> Result<(), SdpError> {
        if index >= self.nfree {
            return Err(SdpError::BadFree {
                index,
                nfree: self.nfree,
            });
        }
        if !value.is_finite() {
            return Err(SdpError::NonFinite);
        }
        self.objective_free[index] = value;
        Ok(())
    }

    /// Dense symmetric objective matrices, one per block.
    pub fn objective_blocks(&self) -> Vec<DMatrix<f64>> {
        let mut c: Vec<DMatrix<f64>> = self.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for e in &self.objective {
            add_sym(&mut c[e.block], e.i, e.j, e.value);
        }
        c
    }

    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(self.constraints.len(), self.constraints.iter().map(|c| c.rhs))
    }

    /// `<C, X> + c_f' x_f`.
    pub fn objective_value(&self, x: &[DMatrix<f64>], free: &[f64]) -> f64 {
        let c = self.objective_blocks();
        let mut v: f64 = c.iter().zip(x).map(|(c, x)| c.dot(x)).sum();
        v += self.objective_free.iter().zip(free).map(|(a, b)| a * b).sum::<f64>();
        v
    }

    /// `A(X) + A_f x_f`, one entry per constraint.
    pub fn apply(&self, x: &[DMatrix<f64>], free: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| constraint_dot(c, x, free)),
        )
    }

    /// `sum_i y_i A_i` per block, and `A_f' y`.
    pub fn adjoint(&self, y: &[f64]) -> (Vec<DMatrix<f64>>, Vec<f64>) {
        let mut blocks: Vec<DMatrix<f64>> = self.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        let mut free = vec![0.0; self.nfree];
        for (c, &yi) in self.constraints.iter().zip(y) {
            if yi == 0.0 {
                continue;
            }
            for e in &c.entries {
                add_sym(&mut blocks[e.block], e.i, e.j, yi * e.value);
            }
            for &(k, v) in &c.free {
                free[k] += yi * v;
            }
        }
        (blocks, free)
    }

    /// Sparse text dump: one equality row per line.
    ///
    /// ```text
    /// sdp-sparse v1
    /// blocks <n_1> <n_2> ...
    /// free <count>
    /// objective [b:<block>:<i>:<j>:<v>]... [f:<k>:<v>]...
    /// row <rhs> [b:<block>:<i>:<j>:<v>]... [f:<k>:<v>]...
    /// ```
    ///
    /// Block entries are upper-triangle (`i <= j`) with the symmetric
    /// convention of this module; numbers use 17 significant digits.
    pub fn to_sparse_text(&self) -> String {
        let mut s = String::from("sdp-sparse v1\nblocks");
        for b in &self.blocks {
            let _ = write!(s, " {b}");
        }
        let _ = writeln!(s, "\nfree {}", self.nfree);
        s.push_str("objective");
        for e in &self.objective {
            let _ = write!(s, " b:{}:{}:{}:{:.16e}", e.block, e.i, e.j, e.value);
        }
        for (k, v) in self.objective_free.iter().enumerate() {
            if *v != 0.0 {
                let _ = write!(s, " f:{k}:{v:.16e}");
            }
        }
        s.push('\n');
        for c in &self.constraints {
            let _ = write!(s, "row {:.16e}", c.rhs);
            for e in &c.entries {
                let _ = write!(s, " b:{}:{}:{}:{:.16e}", e.block, e.i, e.j, e.value);
            }
            for (k, v) in &c.free {
                let _ = write!(s, " f:{k}:{v:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_sparse_text(text: &str) -> Result<Self, SdpError> {
        let err = |line: usize, msg: &str| SdpError::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (n0, header) = lines.next().ok_or_else(|| err(1, "empty input"))?;
        if header.trim() != "sdp-sparse v1" {
            return Err(err(n0 + 1, "bad header"));
        }
        let (n1, bl) = lines.next().ok_or_else(|| err(2, "missing blocks line"))?;
        let mut it = bl.split_whitespace();
        if it.next() != Some("blocks") {
            return Err(err(n1 + 1, "expected 'blocks'"));
        }
        let blocks = it
            .map(|t| t.parse::<usize>().map_err(|_| err(n1 + 1, "bad block size")))
            .collect::<Result<Vec<_>, _>>()?;
        let (n2, fl) = lines.next().ok_or_else(|| err(3, "missing free line"))?;
        let nfree = fl
            .strip_prefix("free")
            .and_then(|t| t.trim().parse::<usize>().ok())
            .ok_or_else(|| err(n2 + 1, "bad free line"))?;
        let mut p = SdpProblem::new(blocks, nfree);
        for (n, line) in lines {
            let mut toks = line.split_whitespace();
            let kind = toks.next().unwrap_or_default();
            let mut row = match kind {
                "objective" => None,
                "row" => {
                    let rhs = toks
                        .next()
                        .and_then(|t| t.parse::<f64>().ok())
                        .ok_or_else(|| err(n + 1, "bad rhs"))?;
                    Some(Constraint::new(rhs))
                }
                _ => return Err(err(n + 1, "expected 'objective' or 'row'")),
            };
            for t in toks {
                let parts: Vec<&str> = t.split(':').collect();
                match (parts.first().copied(), parts.len()) {
                    (Some("b"), 5) => {
                        let idx = |s: &str| s.parse::<usize>().map_err(|_| err(n + 1, "bad index"));
                        let (b, i, j) = (idx(parts[1])?, idx(parts[2])?, idx(parts[3])?);
                        let v = parts[4].parse::<f64>().map_err(|_| err(n + 1, "bad value"))?;
                        match row.as_mut() {
                            Some(r) => r.add_entry(b, i, j, v),
                            None => p.add_objective_entry(b, i, j, v)?,
                        }
                    }
                    (Some("f"), 3) => {
                        let k = parts[1].parse::<usize>().map_err(|_| err(n + 1, "bad index"))?;
                        let v = parts[2].parse::<f64>().map_err(|_| err(n + 1, "bad value"))?;
                        match row.as_mut() {
                            Some(r) => r.add_free(k, v),
                            None => p.set_objective_free(k, v)?,
                        }
                    }
                    _ => return Err(err(n + 1, "bad token")),
                }
            }
            if let Some(r) = row {
                p.add_constraint(r)?;
            }
        }
        Ok(p)
    }
}

fn add_sym(m: &mut DMatrix<f64>, i: usize, j: usize, v: f64) {
    m[(i, j)] += v;
    if i != j {
        m[(j, i)] += v;
    }
}

fn constraint_dot(c: &Constraint, x: &[DMatrix<f64>], free: &[f64]) -> f64 {
    let mut s = 0.0;
    for e in &c.entries {
        let m = &x[e.block];
        s += if e.i == e.j {
            e.value * m[(e.i, e.i)]
        } else {
            e.value * (m[(e.i, e.j)] + m[(e.j, e.i)])
        };
    }
    for &(k, v) in &c.free {
        s += v * free[k];
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    /// Stopped early (stall, iteration cap or breakdown) at an iterate that
    /// meets the tolerances relaxed by [`SdpSettings::near_optimal_factor`].
    NearOptimal,
    PrimalInfeasible,
    /// Dual infeasible, i.e. the maximization is unbounded.
    DualInfeasible,
    IterationLimit,
    NumericalFailure,
}

impl SdpStatus {
    pub fn is_solved(self) -> bool {
        matches!(self, SdpStatus::Optimal | SdpStatus::NearOptimal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Normalized ray residual under which infeasibility counters advance.
    pub infeasibility_tol: f64,
    /// Consecutive iterations the ray test must hold.
    pub infeasibility_streak: usize,
    pub step_fraction: f64,
    /// Dependent-row threshold for the presolve, relative to the largest row.
    pub rank_tol: f64,
    pub near_optimal_factor: f64,
}

impl Default for SdpSettings {
    fn default() -> Self {
        SdpSettings {
            tol: 1e-8,
            max_iter: 200,
            infeasibility_tol: 1e-8,
            infeasibility_streak: 10,
            step_fraction: 0.98,
            rank_tol: 1e-10,
            near_optimal_factor: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `||b - A(X) - A_f x_f||_2`
    pub primal: f64,
    /// `||A*(y) - Z - C||_F + ||A_f' y - c_f||_2`
    pub dual: f64,
    /// `b'y - (<C, X> + c_f' x_f)`
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub mu: f64,
    pub step_primal: f64,
    pub step_dual: f64,
}

impl IterationLog {
    /// Relative gap plus relative residuals.
    pub fn merit(&self) -> f64 {
        self.relative_gap + self.primal_infeasibility + self.dual_infeasibility
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<DMatrix<f64>>,
    pub free: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<DMatrix<f64>>,
    /// `<C, X> + c_f' x_f` (the maximized value).
    pub primal_objective: f64,
    /// `b'y`.
    pub dual_objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    /// Constraint rows removed by the presolve as linearly dependent.
    pub dropped_rows: Vec<usize>,
    pub history: Vec<IterationLog>,
}

/// Absolute residuals of a candidate solution, recomputed from the data.
pub fn residuals(p: &SdpProblem, s: &SdpSolution) -> Result<Residuals, SdpError> {
    residuals_of(p, &s.x, &s.free, &s.y, &s.z)
}

pub fn residuals_of(
    p: &SdpProblem,
    x: &[DMatrix<f64>],
    free: &[f64],
    y: &[f64],
    z: &[DMatrix<f64>],
) -> Result<Residuals, SdpError> {
    if x.len() != p.blocks.len()
        || z.len() != p.blocks.len()
        || free.len() != p.nfree
        || y.len() != p.constraints.len()
        || x.iter().zip(&p.blocks).any(|(m, &n)| m.nrows() != n || m.ncols() != n)
        || z.iter().zip(&p.blocks).any(|(m, &n)| m.nrows() != n || m.ncols() != n)
    {
        return Err(SdpError::ShapeMismatch);
    }
    let rp = p.rhs() - p.apply(x, free);
    let (aty, atyf) = p.adjoint(y);
    let c = p.objective_blocks();
    let mut d2 = 0.0;
    for ((a, zb), cb) in aty.iter().zip(z).zip(&c) {
        d2 += (a - zb - cb).norm_squared();
    }
    let df: f64 = atyf
        .iter()
        .zip(&p.objective_free)
        .map(|(a, c)| (a - c).powi(2))
        .sum::<f64>()
        .sqrt();
    let pobj = p.objective_value(x, free);
    let dobj: f64 = p.constraints.iter().zip(y).map(|(c, yi)| c.rhs * yi).sum();
    Ok(Residuals {
        primal: rp.norm(),
        dual: d2.sqrt() + df,
        gap: dobj - pobj,
    })
}

// Per-block Nesterov-Todd scaling: W = G G', G^-1 X G^-T = G' Z G = diag(lambda).
struct NtScaling {
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Option<NtScaling> {
    let lx = x.clone().cholesky()?.l();
    let lz = z.clone().cholesky()?.l();
    let prod = lz.transpose() * &lx;
    let svd = prod.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let sigma = svd.singular_values;
    if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return None;
    }
    let inv_sqrt = sigma.map(|s| 1.0 / s.sqrt());
    let mut g = lx * vt.transpose();
    for (j, mut col) in g.column_iter_mut().enumerate() {
        col *= inv_sqrt[j];
    }
    let mut g_inv = u.transpose() * lz.transpose();
    for (i, mut row) in g_inv.row_iter_mut().enumerate() {
        row *= inv_sqrt[i];
    }
    let w = &g * g.transpose();
    Some(NtScaling {
        g,
        g_inv,
        w,
        lambda: sigma,
    })
}

// Largest alpha in (0, inf] with diag(lambda) + alpha * d PSD.
fn max_step(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let s = lambda.map(|l| 1.0 / l.sqrt());
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = 0.5 * (d[(i, j)] + d[(j, i)]) * s[i] * s[j];
        }
    }
    let min_eig = SymmetricEigen::new(m).eigenvalues.min();
    if min_eig < 0.0 {
        -1.0 / min_eig
    } else {
        f64::INFINITY
    }
}

fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

// Working copy of the problem after presolve, with per-block row indexes.
struct Reduced<'a> {
    p: &'a SdpProblem,
    rows: Vec<usize>,
    // by_block[b] = list of (reduced row index, entries of that row in b)
    by_block: Vec<Vec<(usize, Vec<BlockEntry>)>>,
    free_cols: DMatrix<f64>,
    b: DVector<f64>,
}

impl<'a> Reduced<'a> {
    fn new(p: &'a SdpProblem, rows: Vec<usize>) -> Self {
        let m = rows.len();
        let mut by_block: Vec<Vec<(usize, Vec<BlockEntry>)>> = vec![Vec::new(); p.blocks.len()];
        let mut free_cols = DMatrix::zeros(m, p.nfree);
        for (r, &orig) in rows.iter().enumerate() {
            let c = &p.constraints[orig];
            for (b, list) in by_block.iter_mut().enumerate() {
                let es: Vec<BlockEntry> = c.entries.iter().filter(|e| e.block == b).copied().collect();
                if !es.is_empty() {
                    list.push((r, es));
                }
            }
            for &(k, v) in &c.free {
                free_cols[(r, k)] += v;
            }
        }
        let b = DVector::from_iterator(m, rows.iter().map(|&r| p.constraints[r].rhs));
        Reduced {
            p,
            rows,
            by_block,
            free_cols,
            b,
        }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for (b, list) in self.by_block.iter().enumerate() {
            for (r, es) in list {
                let mut s = 0.0;
                for e in es {
                    s += if e.i == e.j {
                        e.value * x[b][(e.i, e.i)]
                    } else {
                        e.value * (x[b][(e.i, e.j)] + x[b][(e.j, e.i)])
                    };
                }
                out[*r] += s;
            }
        }
        out
    }

    fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self.p.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (b, list) in self.by_block.iter().enumerate() {
            for (r, es) in list {
                let yr = y[*r];
                if yr == 0.0 {
                    continue;
                }
                for e in es {
                    add_sym(&mut out[b], e.i, e.j, yr * e.value);
                }
            }
        }
        out
    }

    // Schur complement M_ij = sum_blocks <A_i, W A_j W>.
    fn schur(&self, scalings: &[NtScaling]) -> DMatrix<f64> {
        let m = self.m();
        let mut mat = DMatrix::zeros(m, m);
        for (b, list) in self.by_block.iter().enumerate() {
            let w = &scalings[b].w;
            let n = w.nrows();
            let mut wawt = DMatrix::zeros(n, n);
            for (jdx, (rj, ej)) in list.iter().enumerate() {
                wawt.fill(0.0);
                for e in ej {
                    let wp = w.column(e.i);
                    let wq = w.column(e.j);
                    if e.i == e.j {
                        wawt.ger(e.value, &wp, &wp, 1.0);
                    } else {
                        wawt.ger(e.value, &wp, &wq, 1.0);
                        wawt.ger(e.value, &wq, &wp, 1.0);
                    }
                }
                for (ri, ei) in list[jdx..].iter() {
                    let mut s = 0.0;
                    for e in ei {
                        s += if e.i == e.j {
                            e.value * wawt[(e.i, e.i)]
                        } else {
                            2.0 * e.value * wawt[(e.i, e.j)]
                        };
                    }
                    mat[(*ri, *rj)] += s;
                    if ri != rj {
                        mat[(*rj, *ri)] += s;
                    }
                }
            }
        }
        mat
    }
}

// Rows that own a column no other row touches cannot take part in a linear
// dependency; the remaining rows go through pivoted Gram-Schmidt.
fn independent_rows(p: &SdpProblem, rank_tol: f64) -> Vec<usize> {
    use std::collections::HashMap;
    let m = p.constraints.len();
    let mut col_count: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut free_count = vec![0usize; p.nfree];
    let row_norm: Vec<f64> = p
        .constraints
        .iter()
        .map(|c| {
            let s: f64 = c
                .entries
                .iter()
                .map(|e| if e.i == e.j { e.value * e.value } else { 2.0 * e.value * e.value })
                .sum::<f64>()
                + c.free.iter().map(|f| f.1 * f.1).sum::<f64>();
            s.sqrt()
        })
        .collect();
    let max_norm = row_norm.iter().cloned().fold(0.0, f64::max);
    if max_norm == 0.0 {
        return Vec::new();
    }
    let thresh = rank_tol * max_norm;
    for c in &p.constraints {
        for e in &c.entries {
            *col_count.entry((e.block, e.i, e.j)).or_default() += 1;
        }
        for f in &c.free {
            free_count[f.0] += 1;
        }
    }
    let mut keep = vec![false; m];
    let mut rest = Vec::new();
    for (r, c) in p.constraints.iter().enumerate() {
        let private = c
            .entries
            .iter()
            .any(|e| col_count[&(e.block, e.i, e.j)] == 1 && e.value.abs() > thresh)
            || c.free.iter().any(|f| free_count[f.0] == 1 && f.1.abs() > thresh);
        if private {
            keep[r] = true;
        } else if row_norm[r] > thresh {
            rest.push(r);
        }
    }
    if !rest.is_empty() {
        // Dense isometric coordinates over the columns touched by `rest`.
        let mut cols: HashMap<(usize, usize, usize), usize> = HashMap::new();
        let mut fcols: HashMap<usize, usize> = HashMap::new();
        for &r in &rest {
            for e in &p.constraints[r].entries {
                let n = cols.len() + fcols.len();
                cols.entry((e.block, e.i, e.j)).or_insert(n);
            }
            for f in &p.constraints[r].free {
                let n = cols.len() + fcols.len();
                fcols.entry(f.0).or_insert(n);
            }
        }
        let dim = cols.len() + fcols.len();
        let mut vecs: Vec<DVector<f64>> = rest
            .iter()
            .map(|&r| {
                let mut v = DVector::zeros(dim);
                for e in &p.constraints[r].entries {
                    let s = if e.i == e.j { 1.0 } else { std::f64::consts::SQRT_2 };
                    v[cols[&(e.block, e.i, e.j)]] += s * e.value;
                }
                for f in &p.constraints[r].free {
                    v[fcols[&f.0]] += f.1;
                }
                v
            })
            .collect();
        let mut active: Vec<usize> = (0..rest.len()).collect();
        while !active.is_empty() {
            let (pos, best) = active
                .iter()
                .enumerate()
                .map(|(pos, &k)| (pos, vecs[k].norm()))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= thresh {
                break;
            }
            let k = active.swap_remove(pos);
            keep[rest[k]] = true;
            let q = &vecs[k] / best;
            for &o in &active {
                let d = q.dot(&vecs[o]);
                vecs[o].axpy(-d, &q, 1.0);
                let d2 = q.dot(&vecs[o]);
                vecs[o].axpy(-d2, &q, 1.0);
            }
        }
    }
    (0..m).filter(|&r| keep[r]).collect()
}

fn cholesky_regularized(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let scale = m.diagonal().iter().fold(0.0f64, |a, &d| a.max(d.abs())).max(1e-300);
    let mut reg = 1e-14 * scale;
    for _ in 0..8 {
        let mut mm = m.clone();
        for i in 0..mm.nrows() {
            mm[(i, i)] += reg;
        }
        if let Some(c) = mm.cholesky() {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

// Newton system [M A_f; A_f' 0] [dy; dxf] = [h; rf]. Without free
// variables M alone is factored by Cholesky; with them the full saddle
// matrix goes through LU, since rows touching only free variables leave M
// singular.
enum Factor {
    Spd {
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
    Saddle {
        k: DMatrix<f64>,
        lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    },
}

impl Factor {
    fn new(m: DMatrix<f64>, free_cols: &DMatrix<f64>) -> Option<Factor> {
        let nf = free_cols.ncols();
        if nf == 0 {
            return cholesky_regularized(&m).map(|chol| Factor::Spd { chol });
        }
        let nm = m.nrows();
        let mut k = DMatrix::zeros(nm + nf, nm + nf);
        k.view_mut((0, 0), (nm, nm)).copy_from(&m);
        k.view_mut((0, nm), (nm, nf)).copy_from(free_cols);
        k.view_mut((nm, 0), (nf, nm)).copy_from(&free_cols.transpose());
        let lu = k.clone().lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Factor::Saddle { k, lu })
    }

    fn solve(&self, h: &DVector<f64>, rf: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        match self {
            Factor::Spd { chol } => Some((chol.solve(h), DVector::zeros(0))),
            Factor::Saddle { k, lu } => {
                let nm = h.len();
                let mut rhs = DVector::zeros(nm + rf.len());
                rhs.rows_mut(0, nm).copy_from(h);
                rhs.rows_mut(nm, rf.len()).copy_from(rf);
                let mut sol = lu.solve(&rhs)?;
                for _ in 0..2 {
                    let r = &rhs - k * &sol;
                    sol += lu.solve(&r)?;
                }
                Some((sol.rows(0, nm).into_owned(), sol.rows(nm, rf.len()).into_owned()))
            }
        }
    }
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    dxf: DVector<f64>,
    dx_scaled: Vec<DMatrix<f64>>,
    dz_scaled: Vec<DMatrix<f64>>,
}

pub fn solve(p: &SdpProblem, settings: &SdpSettings) -> SdpSolution {
    Solver::new(p, settings).run()
}

struct Solver<'a> {
    p: &'a SdpProblem,
    s: SdpSettings,
    red: Reduced<'a>,
    // minimization-form objective: -C, -c_f
    c: Vec<DMatrix<f64>>,
    cf: DVector<f64>,
    dropped: Vec<usize>,
}

struct Iterate {
    x: Vec<DMatrix<f64>>,
    z: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    xf: DVector<f64>,
}

impl<'a> Solver<'a> {
    fn new(p: &'a SdpProblem, settings: &SdpSettings) -> Self {
        let rows = independent_rows(p, settings.rank_tol);
        let dropped: Vec<usize> = (0..p.constraints.len()).filter(|r| !rows.contains(r)).collect();
        if !dropped.is_empty() {
            log::warn!("sdp presolve: dropped {} dependent equality rows", dropped.len());
        }
        let red = Reduced::new(p, rows);
        let c = p.objective_blocks().into_iter().map(|m| -m).collect();
        let cf = -DVector::from_column_slice(&p.objective_free);
        Solver {
            p,
            s: *settings,
            red,
            c,
            cf,
            dropped,
        }
    }

    fn nu(&self) -> f64 {
        self.p.blocks.iter().sum::<usize>() as f64
    }

    fn finish(&self, status: SdpStatus, it: &Iterate, iterations: usize, history: Vec<IterationLog>) -> SdpSolution {
        let mut y = vec![0.0; self.p.constraints.len()];
        for (k, &r) in self.red.rows.iter().enumerate() {
            // report the multipliers of the maximization form
            y[r] = -it.y[k];
        }
        let free: Vec<f64> = it.xf.iter().copied().collect();
        let residuals = residuals_of(self.p, &it.x, &free, &y, &it.z).expect("shapes are consistent");
        let primal_objective = self.p.objective_value(&it.x, &free);
        let dual_objective = self.p.constraints.iter().zip(&y).map(|(c, yi)| c.rhs * yi).sum();
        SdpSolution {
            status,
            x: it.x.clone(),
            free,
            y,
            z: it.z.clone(),
            primal_objective,
            dual_objective,
            iterations,
            residuals,
            dropped_rows: self.dropped.clone(),
            history,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        nt: &[NtScaling],
        factor: &Factor,
        rp: &DVector<f64>,
        rd: &[DMatrix<f64>],
        rf: &DVector<f64>,
        rc: &[DMatrix<f64>],
    ) -> Option<Direction> {
        let nb = self.p.blocks.len();
        let wrdw: Vec<DMatrix<f64>> = (0..nb).map(|b| &nt[b].w * &rd[b] * &nt[b].w).collect();
        let h = rp - self.red.apply(rc) + self.red.apply(&wrdw);
        let (mut dy, mut dxf) = factor.solve(&h, rf)?;
        // Refine against the exact operator dy -> A(W A*(dy) W), which the
        // formed Schur matrix only approximates once W is ill-conditioned.
        let op = |dy: &DVector<f64>| {
            let a = self.red.adjoint(dy);
            let wa: Vec<DMatrix<f64>> = (0..nb).map(|b| &nt[b].w * &a[b] * &nt[b].w).collect();
            self.red.apply(&wa)
        };
        let norm = |a: &DVector<f64>, b: &DVector<f64>| (a.norm_squared() + b.norm_squared()).sqrt();
        let mut r1 = &h - op(&dy) - &self.red.free_cols * &dxf;
        let mut r2 = rf - self.red.free_cols.transpose() * &dy;
        let mut rnorm = norm(&r1, &r2);
        for _ in 0..3 {
            if rnorm <= 1e-15 * (1.0 + norm(&h, rf)) {
                break;
            }
            let (cy, cf) = factor.solve(&r1, &r2)?;
            let ny = &dy + cy;
            let nf = &dxf + cf;
            let n1 = &h - op(&ny) - &self.red.free_cols * &nf;
            let n2 = rf - self.red.free_cols.transpose() * &ny;
            let nn = norm(&n1, &n2);
            if nn >= rnorm {
                break;
            }
            dy = ny;
            dxf = nf;
            r1 = n1;
            r2 = n2;
            rnorm = nn;
        }
        let atdy = self.red.adjoint(&dy);
        let mut dx = Vec::with_capacity(nb);
        let mut dz = Vec::with_capacity(nb);
        let mut dx_scaled = Vec::with_capacity(nb);
        let mut dz_scaled = Vec::with_capacity(nb);
        for b in 0..nb {
            let dzb = sym_part(&(&rd[b] - &atdy[b]));
            let dxb = sym_part(&(&rc[b] - &nt[b].w * &dzb * &nt[b].w));
            dx_scaled.push(&nt[b].g_inv * &dxb * nt[b].g_inv.transpose());
            dz_scaled.push(nt[b].g.transpose() * &dzb * &nt[b].g);
            dx.push(dxb);
            dz.push(dzb);
        }
        Some(Direction {
            dx,
            dz,
            dy,
            dxf,
            dx_scaled,
            dz_scaled,
        })
    }

    fn step_lengths(&self, nt: &[NtScaling], d: &Direction) -> (f64, f64) {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for b in 0..nt.len() {
            ap = ap.min(max_step(&nt[b].lambda, &d.dx_scaled[b]));
            ad = ad.min(max_step(&nt[b].lambda, &d.dz_scaled[b]));
        }
        (ap, ad)
    }

    fn run(&self) -> SdpSolution {
        let nb = self.p.blocks.len();
        let b = &self.red.b;
        let bnorm_inf = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cnorm_inf = self
            .c
            .iter()
            .map(|m| m.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .fold(self.cf.iter().fold(0.0f64, |a, v| a.max(v.abs())), f64::max);
        let rho = 1.0 + bnorm_inf + cnorm_inf;
        let mut it = Iterate {
            x: self.p.blocks.iter().map(|&n| DMatrix::identity(n, n) * rho).collect(),
            z: self.p.blocks.iter().map(|&n| DMatrix::identity(n, n) * rho).collect(),
            y: DVector::zeros(self.red.m()),
            xf: DVector::zeros(self.p.nfree),
        };
        let bnorm = b.norm();
        let cnorm = (self.c.iter().map(|m| m.norm_squared()).sum::<f64>() + self.cf.norm_squared()).sqrt();
        let nu = self.nu().max(1.0);
        let mut history: Vec<IterationLog> = Vec::new();
        let mut pinf_streak = 0usize;
        let mut dinf_streak = 0usize;
        let mut best: Option<(f64, Iterate, usize)> = None;
        let mut stall = 0usize;

        for iter in 0..=self.s.max_iter {
            // residuals in minimization form
            let ax = self.red.apply(&it.x);
            let rp = b - &ax - &self.red.free_cols * &it.xf;
            let aty = self.red.adjoint(&it.y);
            let rd: Vec<DMatrix<f64>> = (0..nb).map(|k| &self.c[k] - &aty[k] - &it.z[k]).collect();
            let rf = &self.cf - self.red.free_cols.transpose() * &it.y;
            let pobj: f64 = self.c.iter().zip(&it.x).map(|(c, x)| c.dot(x)).sum::<f64>() + self.cf.dot(&it.xf);
            let dobj = b.dot(&it.y);
            let xz: f64 = it.x.iter().zip(&it.z).map(|(x, z)| x.dot(z)).sum();
            let mu = xz / nu;
            let pres = rp.norm() / (1.0 + bnorm);
            let dres_abs = (rd.iter().map(|m| m.norm_squared()).sum::<f64>() + rf.norm_squared()).sqrt();
            let dres = dres_abs / (1.0 + cnorm);
            let rgap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            if ![pobj, dobj, pres, dres, mu].iter().all(|v| v.is_finite()) {
                return self.fallback(SdpStatus::NumericalFailure, best, iter, history);
            }
            let (sp, sd) = history.last().map_or((0.0, 0.0), |h| (h.step_primal, h.step_dual));
            history.push(IterationLog {
                iter,
                primal_objective: -pobj,
                dual_objective: -dobj,
                primal_infeasibility: pres,
                dual_infeasibility: dres,
                relative_gap: rgap,
                mu,
                step_primal: sp,
                step_dual: sd,
            });
            log::debug!(
                "sdp it {iter:3} pobj {:+.8e} dobj {:+.8e} pres {pres:.2e} dres {dres:.2e} gap {rgap:.2e} mu {mu:.2e}",
                -pobj,
                -dobj
            );
            let merit = pres.max(dres).max(rgap);
            if best.as_ref().is_none_or(|(m, _, _)| merit < *m) {
                best = Some((
                    merit,
                    Iterate {
                        x: it.x.clone(),
                        z: it.z.clone(),
                        y: it.y.clone(),
                        xf: it.xf.clone(),
                    },
                    iter,
                ));
            }
            if pres <= self.s.tol && dres <= self.s.tol && rgap <= self.s.tol {
                return self.finish(SdpStatus::Optimal, &it, iter, history);
            }

            // Ray tests. Dual ray (primal infeasible): b'y > 0 with
            // A*(y) + Z ~ 0 and A_f' y ~ 0. Primal ray (dual infeasible):
            // <C, X> + c_f' x_f < 0 with A(X) + A_f x_f ~ 0.
            if dobj > 0.0 {
                let ray: f64 = (aty
                    .iter()
                    .zip(&it.z)
                    .map(|(a, z)| (a + z).norm_squared())
                    .sum::<f64>()
                    + (self.red.free_cols.transpose() * &it.y).norm_squared())
                .sqrt();
                if ray <= self.s.infeasibility_tol * dobj {
                    pinf_streak += 1;
                } else {
                    pinf_streak = 0;
                }
            } else {
                pinf_streak = 0;
            }
            if pobj < 0.0 {
                let ray = (&ax + &self.red.free_cols * &it.xf).norm();
                if ray <= self.s.infeasibility_tol * (-pobj) {
                    dinf_streak += 1;
                } else {
                    dinf_streak = 0;
                }
            } else {
                dinf_streak = 0;
            }
            if pinf_streak >= self.s.infeasibility_streak {
                return self.finish(SdpStatus::PrimalInfeasible, &it, iter, history);
            }
            if dinf_streak >= self.s.infeasibility_streak {
                return self.finish(SdpStatus::DualInfeasible, &it, iter, history);
            }
            if iter == self.s.max_iter {
                return self.fallback(SdpStatus::IterationLimit, best, iter, history);
            }

            let nt: Vec<NtScaling> = match (0..nb).map(|k| nt_scaling(&it.x[k], &it.z[k])).collect::<Option<Vec<_>>>() {
                Some(v) => v,
                None => return self.fallback(SdpStatus::NumericalFailure, best, iter, history),
            };
            let m = self.red.schur(&nt);
            let factor = match Factor::new(m, &self.red.free_cols) {
                Some(f) => f,
                None => return self.fallback(SdpStatus::NumericalFailure, best, iter, history),
            };

            // predictor
            let rc_aff: Vec<DMatrix<f64>> = it.x.iter().map(|x| -x).collect();
            let Some(aff) = self.direction(&nt, &factor, &rp, &rd, &rf, &rc_aff) else {
                return self.fallback(SdpStatus::NumericalFailure, best, iter, history);
            };
            let (ap, ad) = self.step_lengths(&nt, &aff);
            let ap = ap.min(1.0);
            let ad = ad.min(1.0);
            let mut xz_aff = 0.0;
            for k in 0..nb {
                let xa = &it.x[k] + &aff.dx[k] * ap;
                let za = &it.z[k] + &aff.dz[k] * ad;
                xz_aff += xa.dot(&za);
            }
            let mu_aff = (xz_aff / nu).max(0.0);
            let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };

            // corrector
            let mut rc = Vec::with_capacity(nb);
            for k in 0..nb {
                let lam = &nt[k].lambda;
                let n = lam.len();
                let cross = sym_part(&(&aff.dx_scaled[k] * &aff.dz_scaled[k]));
                let mut r = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let mut rhs = -cross[(i, j)];
                        if i == j {
                            rhs += sigma * mu - lam[i] * lam[i];
                        }
                        r[(i, j)] = 2.0 * rhs / (lam[i] + lam[j]);
                    }
                }
                rc.push(&nt[k].g * r * nt[k].g.transpose());
            }
            let Some(dir) = self.direction(&nt, &factor, &rp, &rd, &rf, &rc) else {
                return self.fallback(SdpStatus::NumericalFailure, best, iter, history);
            };
            let (ap, ad) = self.step_lengths(&nt, &dir);
            let ap = (self.s.step_fraction * ap).min(1.0);
            let ad = (self.s.step_fraction * ad).min(1.0);
            if let Some(h) = history.last_mut() {
                h.step_primal = ap;
                h.step_dual = ad;
            }
            if ap < 1e-10 && ad < 1e-10 {
                stall += 1;
                if stall > 3 {
                    return self.fallback(SdpStatus::NumericalFailure, best, iter, history);
                }
            } else {
                stall = 0;
            }
            for k in 0..nb {
                it.x[k] += &dir.dx[k] * ap;
                it.z[k] += &dir.dz[k] * ad;
                it.x[k] = sym_part(&it.x[k]);
                it.z[k] = sym_part(&it.z[k]);
            }
            it.xf += &dir.dxf * ap;
            it.y += &dir.dy * ad;
        }
        unreachable!("loop returns at max_iter")
    }

    // On breakdown, hand back the best iterate seen, promoted to NearOptimal
    // if it meets the relaxed tolerances.
    fn fallback(
        &self,
        status: SdpStatus,
        best: Option<(f64, Iterate, usize)>,
        iter: usize,
        history: Vec<IterationLog>,
    ) -> SdpSolution {
        match best {
            Some((merit, b, _)) => {
                let st = if merit <= self.s.tol * self.s.near_optimal_factor {
                    SdpStatus::NearOptimal
                } else {
                    status
                };
                self.finish(st, &b, iter, history)
            }
            None => {
                let it = Iterate {
                    x: self.p.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
                    z: self.p.blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
                    y: DVector::zeros(self.red.m()),
                    xf: DVector::zeros(self.p.nfree),
                };
                self.finish(status, &it, iter, history)
            }
        }
    }
}

/// Minimum eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(sym_part(m)).eigenvalues.min()
}
