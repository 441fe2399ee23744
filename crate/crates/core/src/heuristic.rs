//! Heuristic functions: synthesized polynomials and closed-form composites
//! built from distances and maxima.

use serde::{Deserialize, Serialize};

use crate::poly::{PolyVector, Polynomial};

/// Points closer than this to a non-smooth locus are treated as on it.
pub const KINK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Heuristic {
    Zero {
        nvars: usize,
    },
    Polynomial {
        poly: Polynomial,
    },
    /// Euclidean distance from the selected coordinates to the box
    /// `[lo, hi]` (a point when `lo == hi`).
    Distance {
        nvars: usize,
        coords: Vec<usize>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Max {
        parts: Vec<Heuristic>,
    },
    Scaled {
        factor: f64,
        inner: Box<Heuristic>,
    },
}

/// Gradient query result.
#[derive(Debug, Clone, PartialEq)]
pub enum Gradient {
    Smooth(Vec<f64>),
    /// Not differentiable here.
    Kink,
    /// Several branches of a maximum are active; their gradients are listed.
    Tie(Vec<Vec<f64>>),
}

impl Heuristic {
    pub fn zero(nvars: usize) -> Self {
        Heuristic::Zero { nvars }
    }

    /// `||z_coords||`.
    pub fn euclidean(nvars: usize, coords: Vec<usize>) -> Self {
        let k = coords.len();
        Heuristic::Distance {
            nvars,
            coords,
            lo: vec![0.0; k],
            hi: vec![0.0; k],
        }
    }

    /// `|z_coord|`.
    pub fn abs(nvars: usize, coord: usize) -> Self {
        Heuristic::euclidean(nvars, vec![coord])
    }

    pub fn distance_to_box(nvars: usize, coords: Vec<usize>, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Heuristic::Distance { nvars, coords, lo, hi }
    }

    pub fn max(parts: Vec<Heuristic>) -> Self {
        Heuristic::Max { parts }
    }

    pub fn scaled(factor: f64, inner: Heuristic) -> Self {
        Heuristic::Scaled {
            factor,
            inner: Box::new(inner),
        }
    }

    pub fn nvars(&self) -> usize {
        match self {
            Heuristic::Zero { nvars } | Heuristic::Distance { nvars, .. } => *nvars,
            Heuristic::Polynomial { poly } => poly.nvars(),
            Heuristic::Max { parts } => parts.first().map_or(0, |p| p.nvars()),
            Heuristic::Scaled { inner, .. } => inner.nvars(),
        }
    }

    /// Structural validity: consistent dimensions and coordinate indices.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Heuristic::Zero { .. } | Heuristic::Polynomial { .. } => Ok(()),
            Heuristic::Distance { nvars, coords, lo, hi } => {
                if coords.len() != lo.len() || coords.len() != hi.len() {
                    return Err("distance: coords, lo, hi lengths differ".into());
                }
                if coords.iter().any(|&c| c >= *nvars) {
                    return Err("distance: coordinate out of range".into());
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                    return Err("distance: lo must not exceed hi".into());
                }
                Ok(())
            }
            Heuristic::Max { parts } => {
                if parts.is_empty() {
                    return Err("max of no parts".into());
                }
                let n = parts[0].nvars();
                for p in parts {
                    p.validate()?;
                    if p.nvars() != n {
                        return Err("max: parts differ in dimension".into());
                    }
                }
                Ok(())
            }
            Heuristic::Scaled { factor, inner } => {
                if !factor.is_finite() {
                    return Err("scale factor must be finite".into());
                }
                inner.validate()
            }
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            Heuristic::Zero { .. } => 0.0,
            Heuristic::Polynomial { poly } => poly.eval_unchecked(z),
            Heuristic::Distance { coords, lo, hi, .. } => box_offset(z, coords, lo, hi).iter().map(|d| d * d).sum::<f64>().sqrt(),
            Heuristic::Max { parts } => parts.iter().map(|p| p.value(z)).fold(f64::NEG_INFINITY, f64::max),
            Heuristic::Scaled { factor, inner } => factor * inner.value(z),
        }
    }

    /// Precomputes polynomial gradients for repeated gradient queries.
    pub fn compile(&self) -> Compiled {
        match self {
            Heuristic::Zero { nvars } => Compiled::Zero(*nvars),
            Heuristic::Polynomial { poly } => Compiled::Poly(poly.clone(), poly.grad()),
            Heuristic::Distance { nvars, coords, lo, hi } => Compiled::Distance {
                nvars: *nvars,
                coords: coords.clone(),
                lo: lo.clone(),
                hi: hi.clone(),
            },
            Heuristic::Max { parts } => Compiled::Max(parts.iter().map(|p| p.compile()).collect()),
            Heuristic::Scaled { factor, inner } => Compiled::Scaled(*factor, Box::new(inner.compile())),
        }
    }
}

impl From<Polynomial> for Heuristic {
    fn from(poly: Polynomial) -> Self {
        Heuristic::Polynomial { poly }
    }
}

fn box_offset(z: &[f64], coords: &[usize], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    coords
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(&c, (&l, &h))| {
            let v = z[c];
            if v < l {
                v - l
            } else if v > h {
                v - h
            } else {
                0.0
            }
        })
        .collect()
}

/// A heuristic with cached derivative data.
#[derive(Debug, Clone)]
pub enum Compiled {
    Zero(usize),
    Poly(Polynomial, PolyVector),
    Distance {
        nvars: usize,
        coords: Vec<usize>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Max(Vec<Compiled>),
    Scaled(f64, Box<Compiled>),
}

impl Compiled {
    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            Compiled::Zero(_) => 0.0,
            Compiled::Poly(p, _) => p.eval_unchecked(z),
            Compiled::Distance { coords, lo, hi, .. } => box_offset(z, coords, lo, hi).iter().map(|d| d * d).sum::<f64>().sqrt(),
            Compiled::Max(parts) => parts.iter().map(|p| p.value(z)).fold(f64::NEG_INFINITY, f64::max),
            Compiled::Scaled(f, inner) => f * inner.value(z),
        }
    }

    pub fn gradient(&self, z: &[f64]) -> Gradient {
        match self {
            Compiled::Zero(n) => Gradient::Smooth(vec![0.0; *n]),
            Compiled::Poly(_, g) => Gradient::Smooth(g.components().iter().map(|c| c.eval_unchecked(z)).collect()),
            Compiled::Distance { nvars, coords, lo, hi } => {
                let off = box_offset(z, coords, lo, hi);
                let d = off.iter().map(|x| x * x).sum::<f64>().sqrt();
                let mut g = vec![0.0; *nvars];
                if d <= KINK_TOL {
                    // Strictly inside a box with nonempty interior the
                    // distance is locally zero; anywhere else it is a kink.
                    let interior = coords
                        .iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(&c, (&l, &h))| z[c] - l > KINK_TOL && h - z[c] > KINK_TOL);
                    return if interior { Gradient::Smooth(g) } else { Gradient::Kink };
                }
                for (&c, o) in coords.iter().zip(&off) {
                    g[c] += o / d;
                }
                Gradient::Smooth(g)
            }
            Compiled::Max(parts) => {
                let vals: Vec<f64> = parts.iter().map(|p| p.value(z)).collect();
                let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let tol = KINK_TOL * (1.0 + top.abs());
                let mut active = Vec::new();
                for (p, v) in parts.iter().zip(&vals) {
                    if top - v <= tol {
                        match p.gradient(z) {
                            Gradient::Smooth(g) => active.push(g),
                            Gradient::Kink => return Gradient::Kink,
                            Gradient::Tie(gs) => active.extend(gs),
                        }
                    }
                }
                let first = active[0].clone();
                if active.iter().all(|g| g.iter().zip(&first).all(|(a, b)| (a - b).abs() <= 1e-12)) {
                    Gradient::Smooth(first)
                } else {
                    Gradient::Tie(active)
                }
            }
            Compiled::Scaled(f, inner) => match inner.gradient(z) {
                Gradient::Smooth(g) => Gradient::Smooth(g.into_iter().map(|x| f * x).collect()),
                Gradient::Tie(gs) => Gradient::Tie(gs.into_iter().map(|g| g.into_iter().map(|x| f * x).collect()).collect()),
                Gradient::Kink => Gradient::Kink,
            },
        }
    }
}
