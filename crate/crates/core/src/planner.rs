//! Label-correcting kinodynamic search over a control lattice.
//!
//! Nodes are expanded in order of `cost + H`. The state space is partitioned
//! into uniform cells and each cell keeps a single best label; a new label
//! is pruned when its cell already holds one of lower or equal cost.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heuristic::Heuristic;
use crate::semialg::{Bounds, SetError};
use crate::verify::BlackBoxProblem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("heuristic returned {value} at {state:?}")]
    Heuristic { state: Vec<f64>, value: f64 },
    #[error("dynamics returned a non-finite value at {state:?}, control {control:?}")]
    Dynamics { state: Vec<f64>, control: Vec<f64> },
    #[error("world file: {0}")]
    World(String),
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannerConfig {
    pub controls: Vec<Vec<f64>>,
    /// Duration of every edge.
    pub dt: f64,
    /// RK4 steps per edge; every intermediate state is collision-checked.
    pub substeps: usize,
    /// Cell widths per state axis.
    pub resolution: Vec<f64>,
    pub max_iterations: usize,
    pub goal: Bounds,
}

impl PlannerConfig {
    fn validate(&self, p: &BlackBoxProblem) -> Result<(), PlanError> {
        let n = p.nstate();
        if self.controls.is_empty() || self.controls.iter().any(|c| c.len() != p.ncontrol()) {
            return Err(PlanError::Config(format!("need controls of dimension {}", p.ncontrol())));
        }
        if !(self.dt > 0.0) || self.substeps == 0 {
            return Err(PlanError::Config("edge duration and substeps must be positive".into()));
        }
        if self.resolution.len() != n || self.resolution.iter().any(|r| !(*r > 0.0)) {
            return Err(PlanError::Config(format!("need {n} positive cell widths")));
        }
        if self.max_iterations == 0 {
            return Err(PlanError::Config("iteration cap must be at least 1".into()));
        }
        if self.goal.dim() != n {
            return Err(PlanError::Config(format!("goal box must have {n} axes")));
        }
        Ok(())
    }

    /// Cost of the most expensive edge; path costs of different searches
    /// are compared up to this amount.
    pub fn cost_quantum(&self, p: &BlackBoxProblem) -> f64 {
        let b = p.xfree_bounds();
        let mid: Vec<f64> = b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect();
        self.controls
            .iter()
            .flat_map(|c| [p.cost(&b.lo, c), p.cost(&mid, c), p.cost(&b.hi, c)])
            .fold(0.0, f64::max)
            * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Solved,
    Exhausted,
    CapReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchNode {
    pub state: Vec<f64>,
    pub cost: f64,
    pub heuristic: f64,
    pub parent: Option<usize>,
    /// Index into the configured controls of the edge from the parent.
    pub control: Option<usize>,
    pub cell: Vec<i64>,
}

impl SearchNode {
    pub fn priority(&self) -> f64 {
        self.cost + self.heuristic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub status: SearchStatus,
    /// States from the start to the last node, one per edge endpoint.
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub durations: Vec<f64>,
    /// Priorities along the path.
    pub priorities: Vec<f64>,
    pub cost: f64,
    /// Nodes expanded.
    pub iterations: usize,
    pub generated: usize,
    /// Expanded states in expansion order.
    pub trace: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    priority: f64,
    cost: f64,
    index: usize,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

// Reversed so the max-heap pops the smallest (priority, cost, index).
impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        o.priority
            .total_cmp(&self.priority)
            .then_with(|| o.cost.total_cmp(&self.cost))
            .then_with(|| o.index.cmp(&self.index))
    }
}

fn cell_of(z: &[f64], origin: &[f64], res: &[f64]) -> Vec<i64> {
    z.iter()
        .zip(origin)
        .zip(res)
        .map(|((v, o), r)| ((v - o) / r).floor() as i64)
        .collect()
}

/// Integrates one edge with RK4; returns the end state and cost, or `None`
/// if an intermediate state leaves the free space.
pub fn integrate_edge(
    p: &BlackBoxProblem,
    z0: &[f64],
    c: &[f64],
    dt: f64,
    substeps: usize,
) -> Result<Option<(Vec<f64>, f64)>, PlanError> {
    let d = z0.len();
    let h = dt / substeps as f64;
    let rhs = |z: &[f64]| -> Result<Vec<f64>, PlanError> {
        let mut v = p.dynamics(z, c);
        v.push(p.cost(z, c));
        if v.iter().any(|x| !x.is_finite()) {
            return Err(PlanError::Dynamics {
                state: z.to_vec(),
                control: c.to_vec(),
            });
        }
        Ok(v)
    };
    let mut y: Vec<f64> = z0.iter().copied().chain([0.0]).collect();
    let shift = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> { y.iter().zip(k).map(|(u, v)| u + a * v).collect() };
    for _ in 0..substeps {
        let k1 = rhs(&y[..d])?;
        let k2 = rhs(&shift(&y, &k1, 0.5 * h)[..d])?;
        let k3 = rhs(&shift(&y, &k2, 0.5 * h)[..d])?;
        let k4 = rhs(&shift(&y, &k3, h)[..d])?;
        for i in 0..=d {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !p.in_xfree(&y[..d]) {
            return Ok(None);
        }
    }
    let cost = y.pop().expect("cost component");
    Ok(Some((y, cost)))
}

/// Best-first search from `start` to the goal box of `cfg`.
pub fn plan(p: &BlackBoxProblem, h: &Heuristic, start: &[f64], cfg: &PlannerConfig) -> Result<SearchResult, PlanError> {
    cfg.validate(p)?;
    if start.len() != p.nstate() || h.nvars() != p.nstate() {
        return Err(PlanError::Config("start and heuristic must match the state dimension".into()));
    }
    if !p.in_xfree(start) {
        return Err(PlanError::Config(format!("start {start:?} is not free")));
    }
    let hc = h.compile();
    let eval_h = |z: &[f64]| -> Result<f64, PlanError> {
        let v = hc.value(z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(PlanError::Heuristic {
                state: z.to_vec(),
                value: v,
            })
        }
    };
    let origin = p.xfree_bounds().lo.clone();
    let mut nodes = vec![SearchNode {
        state: start.to_vec(),
        cost: 0.0,
        heuristic: eval_h(start)?,
        parent: None,
        control: None,
        cell: cell_of(start, &origin, &cfg.resolution),
    }];
    let mut best: HashMap<Vec<i64>, usize> = HashMap::new();
    best.insert(nodes[0].cell.clone(), 0);
    let mut open = BinaryHeap::new();
    open.push(Entry {
        priority: nodes[0].priority(),
        cost: 0.0,
        index: 0,
    });
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut status = SearchStatus::Exhausted;
    let mut last = 0;
    while let Some(e) = open.pop() {
        // superseded labels are dropped without counting as expansions
        if best.get(&nodes[e.index].cell) != Some(&e.index) {
            continue;
        }
        if iterations >= cfg.max_iterations {
            status = SearchStatus::CapReached;
            break;
        }
        iterations += 1;
        let node = nodes[e.index].clone();
        trace.push(node.state.clone());
        last = e.index;
        if cfg.goal.contains(&node.state) {
            status = SearchStatus::Solved;
            break;
        }
        for (ci, c) in cfg.controls.iter().enumerate() {
            let Some((z, dc)) = integrate_edge(p, &node.state, c, cfg.dt, cfg.substeps)? else {
                continue;
            };
            let cost = node.cost + dc;
            let cell = cell_of(&z, &origin, &cfg.resolution);
            if let Some(&j) = best.get(&cell) {
                if nodes[j].cost <= cost {
                    continue;
                }
            }
            let child = SearchNode {
                heuristic: eval_h(&z)?,
                state: z,
                cost,
                parent: Some(e.index),
                control: Some(ci),
                cell: cell.clone(),
            };
            let idx = nodes.len();
            open.push(Entry {
                priority: child.priority(),
                cost,
                index: idx,
            });
            nodes.push(child);
            best.insert(cell, idx);
        }
    }
    let mut chain = vec![last];
    while let Some(par) = nodes[*chain.last().expect("nonempty")].parent {
        chain.push(par);
    }
    chain.reverse();
    let solved = status == SearchStatus::Solved;
    let path: Vec<&SearchNode> = if solved { chain.iter().map(|&i| &nodes[i]).collect() } else { Vec::new() };
    Ok(SearchResult {
        status,
        states: path.iter().map(|n| n.state.clone()).collect(),
        controls: path.iter().skip(1).map(|n| cfg.controls[n.control.expect("edge")].clone()).collect(),
        durations: vec![cfg.dt; path.len().saturating_sub(1)],
        priorities: path.iter().map(|n| n.priority()).collect(),
        cost: if solved { nodes[last].cost } else { f64::INFINITY },
        iterations,
        generated: nodes.len(),
        trace,
    })
}

/// Re-integrates a solved path from its controls and checks the free space
/// at every substep, control membership, the goal box, and the cost.
pub fn validate_path(p: &BlackBoxProblem, r: &SearchResult, cfg: &PlannerConfig) -> Result<(), String> {
    if r.status != SearchStatus::Solved {
        return Err(format!("status {:?}", r.status));
    }
    let mut z = r.states.first().ok_or("empty path")?.clone();
    let mut cost = 0.0;
    for (k, (c, &d)) in r.controls.iter().zip(&r.durations).enumerate() {
        if !p.in_omega(c) {
            return Err(format!("control {c:?} on edge {k} is not admissible"));
        }
        let (next, dc) = integrate_edge(p, &z, c, d, cfg.substeps)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("edge {k} leaves the free space"))?;
        let drift = next.iter().zip(&r.states[k + 1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if drift > 1e-9 {
            return Err(format!("edge {k} ends {drift:.3e} away from the recorded state"));
        }
        z = next;
        cost += dc;
    }
    if !cfg.goal.contains(&z) {
        return Err(format!("path ends at {z:?}, outside the goal box"));
    }
    if (cost - r.cost).abs() > 1e-6 {
        return Err(format!("re-integrated cost {cost} vs reported {}", r.cost));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupReport {
    pub informed_iters: usize,
    pub uninformed_iters: usize,
    pub informed_cost: f64,
    pub uninformed_cost: f64,
    /// `1 - informed / uninformed`.
    pub reduction_fraction: f64,
    pub cost_quantum: f64,
    /// Costs differ by more than one quantum.
    pub cost_mismatch: bool,
}

/// Runs the search with `h` and with the zero heuristic under the same
/// configuration.
pub fn admissible_speedup_report(
    p: &BlackBoxProblem,
    h: &Heuristic,
    start: &[f64],
    cfg: &PlannerConfig,
) -> Result<SpeedupReport, PlanError> {
    let informed = plan(p, h, start, cfg)?;
    let uninformed = plan(p, &Heuristic::zero(p.nstate()), start, cfg)?;
    let quantum = cfg.cost_quantum(p);
    Ok(SpeedupReport {
        informed_iters: informed.iterations,
        uninformed_iters: uninformed.iterations,
        informed_cost: informed.cost,
        uninformed_cost: uninformed.cost,
        reduction_fraction: 1.0 - informed.iterations as f64 / uninformed.iterations as f64,
        cost_quantum: quantum,
        cost_mismatch: !((informed.cost - uninformed.cost).abs() <= quantum),
    })
}

/// Expanded states as CSV, one row per expansion: `iteration,<coords>`.
pub fn trace_csv(r: &SearchResult) -> String {
    let dim = r.trace.first().map_or(0, |s| s.len());
    let mut out = String::from("iteration");
    for i in 0..dim {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for (k, s) in r.trace.iter().enumerate() {
        out.push_str(&k.to_string());
        for v in s {
            out.push(',');
            out.push_str(&crate::synth::fmt17(*v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldDynamics {
    /// `x' = u` in the plane with unit-norm controls.
    ShortestPath2d,
    /// `x' = cos θ, y' = sin θ, θ' = u`, `|u| <= 1`.
    Unicycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldPlanner {
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub resolution: Vec<f64>,
    /// Heading directions for the planar model, input samples for the
    /// unicycle.
    pub controls: usize,
    pub max_iterations: usize,
}

fn default_substeps() -> usize {
    4
}

/// Obstacle map with start and goal. Obstacles are boxes in the first two
/// state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub name: String,
    pub dynamics: WorldDynamics,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub obstacles: Vec<BoxSpec>,
    pub start: Vec<f64>,
    pub goal: BoxSpec,
    pub planner: WorldPlanner,
}

pub const FOREST_WORLD: &str = include_str!("../data/forest.json");
pub const CORRIDOR_WORLD: &str = include_str!("../data/corridor.json");

impl World {
    pub fn from_json(text: &str) -> Result<World, PlanError> {
        let w: World = serde_json::from_str(text).map_err(|e| PlanError::World(format!("line {}: {e}", e.line())))?;
        w.check()?;
        Ok(w)
    }

    /// A bundled world by name: `forest` or `corridor`.
    pub fn bundled(name: &str) -> Option<World> {
        match name {
            "forest" => World::from_json(FOREST_WORLD).ok(),
            "corridor" => World::from_json(CORRIDOR_WORLD).ok(),
            _ => None,
        }
    }

    fn dim(&self) -> usize {
        match self.dynamics {
            WorldDynamics::ShortestPath2d => 2,
            WorldDynamics::Unicycle => 3,
        }
    }

    fn check(&self) -> Result<(), PlanError> {
        let n = self.dim();
        let bad = |what: &str| Err(PlanError::World(format!("{what} must have {n} coordinates")));
        if self.lo.len() != n || self.hi.len() != n {
            return bad("bounds");
        }
        if self.start.len() != n {
            return bad("start");
        }
        if self.goal.lo.len() != n || self.goal.hi.len() != n {
            return bad("goal");
        }
        if self.planner.resolution.len() != n {
            return bad("resolution");
        }
        if self.obstacles.iter().any(|o| o.lo.len() != 2 || o.hi.len() != 2) {
            return Err(PlanError::World("obstacles are boxes in the first two coordinates".into()));
        }
        Bounds::new(self.lo.clone(), self.hi.clone())?;
        Bounds::new(self.goal.lo.clone(), self.goal.hi.clone())?;
        if self.planner.controls == 0 {
            return Err(PlanError::World("need at least one control sample".into()));
        }
        Ok(())
    }

    pub fn is_free(&self, z: &[f64]) -> bool {
        let inside = z.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| v >= l && v <= h);
        inside
            && !self
                .obstacles
                .iter()
                .any(|o| (0..2).all(|i| z[i] >= o.lo[i] && z[i] <= o.hi[i]))
    }

    pub fn problem(&self) -> BlackBoxProblem {
        let xb = Bounds::new(self.lo.clone(), self.hi.clone()).expect("checked bounds");
        let w = self.clone();
        let free = Arc::new(move |z: &[f64]| w.is_free(z));
        let gb = Bounds::new(self.goal.lo.clone(), self.goal.hi.clone()).expect("checked goal");
        let goal = Arc::new(move |z: &[f64]| gb.contains(z));
        match self.dynamics {
            WorldDynamics::ShortestPath2d => {
                let ob = Bounds::new(vec![-1.0; 2], vec![1.0; 2]).expect("unit box");
                BlackBoxProblem::new(
                    self.name.clone(),
                    xb,
                    ob,
                    Arc::new(|_: &[f64], c: &[f64]| c.to_vec()),
                    Arc::new(|_: &[f64], _: &[f64]| 1.0),
                )
                .with_omega(Arc::new(|c: &[f64]| c[0] * c[0] + c[1] * c[1] <= 1.0 + 1e-12))
                .with_xfree(free)
                .with_goal(goal, None)
            }
            WorldDynamics::Unicycle => {
                let ob = Bounds::new(vec![-1.0], vec![1.0]).expect("unit interval");
                BlackBoxProblem::new(
                    self.name.clone(),
                    xb,
                    ob,
                    Arc::new(|s: &[f64], c: &[f64]| vec![s[2].cos(), s[2].sin(), c[0]]),
                    Arc::new(|_: &[f64], _: &[f64]| 1.0),
                )
                .with_xfree(free)
                .with_goal(goal, None)
            }
        }
    }

    pub fn config(&self) -> PlannerConfig {
        let k = self.planner.controls;
        let controls = match self.dynamics {
            WorldDynamics::ShortestPath2d => (0..k)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / k as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
            WorldDynamics::Unicycle => (0..k)
                .map(|i| vec![if k == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (k - 1) as f64 }])
                .collect(),
        };
        PlannerConfig {
            controls,
            dt: self.planner.dt,
            substeps: self.planner.substeps,
            resolution: self.planner.resolution.clone(),
            max_iterations: self.planner.max_iterations,
            goal: Bounds::new(self.goal.lo.clone(), self.goal.hi.clone()).expect("checked goal"),
        }
    }

    /// Admissible heuristic for the goal box: planar distance to the box,
    /// and for the unicycle the larger of that and the heading distance.
    pub fn heuristic(&self) -> Heuristic {
        let planar = Heuristic::distance_to_box(self.dim(), vec![0, 1], self.goal.lo[..2].to_vec(), self.goal.hi[..2].to_vec());
        match self.dynamics {
            WorldDynamics::ShortestPath2d => planar,
            WorldDynamics::Unicycle => Heuristic::max(vec![
                planar,
                Heuristic::distance_to_box(3, vec![2], vec![self.goal.lo[2]], vec![self.goal.hi[2]]),
            ]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world() -> World {
        let mut w = World::bundled("forest").unwrap();
        w.obstacles.clear();
        w
    }

    #[test]
    fn start_in_goal_is_trivial() {
        let w = open_world();
        let p = w.problem();
        let cfg = w.config();
        let start: Vec<f64> = w.goal.lo.iter().zip(&w.goal.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let r = plan(&p, &Heuristic::zero(2), &start, &cfg).unwrap();
        assert_eq!(r.status, SearchStatus::Solved);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.cost, 0.0);
        assert!(r.controls.is_empty());
    }

    #[test]
    fn cap_is_reported() {
        let w = World::bundled("forest").unwrap();
        let mut cfg = w.config();
        cfg.max_iterations = 1;
        let r = plan(&w.problem(), &Heuristic::zero(2), &w.start, &cfg).unwrap();
        assert_eq!(r.status, SearchStatus::CapReached);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn walled_goal_is_exhausted() {
        let mut w = open_world();
        let (lo, hi) = (w.goal.lo.clone(), w.goal.hi.clone());
        w.obstacles = vec![
            BoxSpec { lo: vec![lo[0] - 1.0, lo[1] - 1.0], hi: vec![hi[0] + 1.0, lo[1] - 0.5] },
            BoxSpec { lo: vec![lo[0] - 1.0, hi[1] + 0.5], hi: vec![hi[0] + 1.0, hi[1] + 1.0] },
            BoxSpec { lo: vec![lo[0] - 1.0, lo[1] - 1.0], hi: vec![lo[0] - 0.5, hi[1] + 1.0] },
            BoxSpec { lo: vec![hi[0] + 0.5, lo[1] - 1.0], hi: vec![hi[0] + 1.0, hi[1] + 1.0] },
        ];
        let r = plan(&w.problem(), &w.heuristic(), &w.start, &w.config()).unwrap();
        assert_eq!(r.status, SearchStatus::Exhausted);
        assert!(r.cost.is_infinite());
    }

    #[test]
    fn open_plane_path_is_valid() {
        let w = open_world();
        let p = w.problem();
        let cfg = w.config();
        let r = plan(&p, &w.heuristic(), &w.start, &cfg).unwrap();
        validate_path(&p, &r, &cfg).unwrap();
        let straight = w.heuristic().value(&w.start);
        assert!(r.cost >= straight - 1e-9);
    }

    #[test]
    fn unknown_world_fields_rejected() {
        let text = FOREST_WORLD.replacen("\"name\"", "\"colour\": 1, \"name\"", 1);
        assert!(matches!(World::from_json(&text), Err(PlanError::World(_))));
    }
}
