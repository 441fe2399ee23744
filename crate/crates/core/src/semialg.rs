//! Semialgebraic sets `{z : h_i(z) >= 0}`, measures, and goal descriptions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Monomial, PolyError, Polynomial};

/// Constraint values down to this are treated as satisfied.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetError {
    #[error("degenerate interval on axis {axis}: lo = {lo}, hi = {hi}")]
    DegenerateInterval { axis: usize, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("atom {0} has non-positive or non-finite weight")]
    BadWeight(usize),
    #[error("measure has no atoms")]
    EmptyMeasure,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Axis-aligned bounds carried along with sets built from boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, SetError> {
        if lo.len() != hi.len() {
            return Err(SetError::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        for (axis, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l < h) || !l.is_finite() || !h.is_finite() {
                return Err(SetError::DegenerateInterval { axis, lo: l, hi: h });
            }
        }
        Ok(Bounds { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    /// Largest absolute coordinate per axis.
    pub fn radius(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemialgebraicSet {
    nvars: usize,
    constraints: Vec<Polynomial>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<Bounds>,
}

impl SemialgebraicSet {
    /// All of `R^nvars`.
    pub fn whole_space(nvars: usize) -> Self {
        SemialgebraicSet {
            nvars,
            constraints: Vec::new(),
            bounds: None,
        }
    }

    pub fn new(nvars: usize, constraints: Vec<Polynomial>) -> Result<Self, SetError> {
        for c in &constraints {
            if c.nvars() != nvars {
                return Err(SetError::DimensionMismatch {
                    expected: nvars,
                    found: c.nvars(),
                });
            }
        }
        Ok(SemialgebraicSet {
            nvars,
            constraints,
            bounds: None,
        })
    }

    /// The box `lo <= z <= hi` as one quadratic constraint per axis,
    /// `(hi_i - z_i)(z_i - lo_i) >= 0`.
    pub fn boxed(lo: &[f64], hi: &[f64]) -> Result<Self, SetError> {
        let bounds = Bounds::new(lo.to_vec(), hi.to_vec())?;
        let n = lo.len();
        let constraints = (0..n)
            .map(|i| {
                let x = Polynomial::var(n, i);
                let upper = &Polynomial::constant(n, hi[i]) - &x;
                let lower = &x - &Polynomial::constant(n, lo[i]);
                &upper * &lower
            })
            .collect();
        Ok(SemialgebraicSet {
            nvars: n,
            constraints,
            bounds: Some(bounds),
        })
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Result<Self, SetError> {
        if bounds.dim() != self.nvars {
            return Err(SetError::DimensionMismatch {
                expected: self.nvars,
                found: bounds.dim(),
            });
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn constraints(&self) -> &[Polynomial] {
        &self.constraints
    }

    pub fn bounds(&self) -> Option<&Bounds> {
        self.bounds.as_ref()
    }

    pub fn is_whole_space(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn contains(&self, z: &[f64]) -> Result<bool, SetError> {
        if z.len() != self.nvars {
            return Err(SetError::DimensionMismatch {
                expected: self.nvars,
                found: z.len(),
            });
        }
        for c in &self.constraints {
            if c.eval(z)? < -MEMBERSHIP_TOL {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Measure {
    Discrete { atoms: Vec<Atom> },
    BoxLebesgue { lo: Vec<f64>, hi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub weight: f64,
}

impl Measure {
    pub fn discrete(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self, SetError> {
        let m = Measure::Discrete {
            atoms: atoms
                .into_iter()
                .map(|(point, weight)| Atom { point, weight })
                .collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn box_lebesgue(lo: &[f64], hi: &[f64]) -> Result<Self, SetError> {
        Bounds::new(lo.to_vec(), hi.to_vec())?;
        Ok(Measure::BoxLebesgue {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        })
    }

    pub fn validate(&self) -> Result<(), SetError> {
        match self {
            Measure::Discrete { atoms } => {
                let first = atoms.first().ok_or(SetError::EmptyMeasure)?;
                for (i, a) in atoms.iter().enumerate() {
                    if !(a.weight > 0.0) || !a.weight.is_finite() {
                        return Err(SetError::BadWeight(i));
                    }
                    if a.point.len() != first.point.len() {
                        return Err(SetError::DimensionMismatch {
                            expected: first.point.len(),
                            found: a.point.len(),
                        });
                    }
                }
                Ok(())
            }
            Measure::BoxLebesgue { lo, hi } => Bounds::new(lo.clone(), hi.clone()).map(|_| ()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Measure::Discrete { atoms } => atoms.first().map_or(0, |a| a.point.len()),
            Measure::BoxLebesgue { lo, .. } => lo.len(),
        }
    }

    /// Axis-aligned hull of the support.
    pub fn support_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Measure::Discrete { atoms } => {
                let n = self.dim();
                let mut lo = vec![f64::INFINITY; n];
                let mut hi = vec![f64::NEG_INFINITY; n];
                for a in atoms {
                    for i in 0..n {
                        lo[i] = lo[i].min(a.point[i]);
                        hi[i] = hi[i].max(a.point[i]);
                    }
                }
                (lo, hi)
            }
            Measure::BoxLebesgue { lo, hi } => (lo.clone(), hi.clone()),
        }
    }

    /// `∫ z^mono dm`.
    pub fn moment(&self, mono: &Monomial) -> Result<f64, SetError> {
        if mono.nvars() != self.dim() {
            return Err(SetError::DimensionMismatch {
                expected: self.dim(),
                found: mono.nvars(),
            });
        }
        Ok(match self {
            Measure::Discrete { atoms } => atoms.iter().map(|a| a.weight * mono.eval(&a.point)).sum(),
            Measure::BoxLebesgue { lo, hi } => mono
                .exponents()
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&e, (&l, &h))| {
                    let k = e as i32 + 1;
                    (h.powi(k) - l.powi(k)) / k as f64
                })
                .product(),
        })
    }

    /// Moments of every basis monomial; `∫ H dm` is the dot product of this
    /// vector with the coefficients of `H` over the same basis.
    pub fn objective_vector(&self, basis: &[Monomial]) -> Result<Vec<f64>, SetError> {
        basis.iter().map(|m| self.moment(m)).collect()
    }

    pub fn integrate(&self, p: &Polynomial) -> Result<f64, SetError> {
        p.terms()
            .map(|(m, c)| self.moment(m).map(|v| c * v))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalSpec {
    Point { point: Vec<f64> },
    Set { set: SemialgebraicSet },
}

impl GoalSpec {
    pub fn point(z: Vec<f64>) -> Self {
        GoalSpec::Point { point: z }
    }

    pub fn dim(&self) -> usize {
        match self {
            GoalSpec::Point { point } => point.len(),
            GoalSpec::Set { set } => set.nvars(),
        }
    }

    pub fn contains(&self, z: &[f64]) -> Result<bool, SetError> {
        match self {
            GoalSpec::Point { point } => {
                if point.len() != z.len() {
                    return Err(SetError::DimensionMismatch {
                        expected: point.len(),
                        found: z.len(),
                    });
                }
                Ok(point == z)
            }
            GoalSpec::Set { set } => set.contains(z),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_constraints_match_quadratic_form() {
        let s = SemialgebraicSet::boxed(&[-1.0], &[1.0]).unwrap();
        let expect = Polynomial::from_terms(1, [(vec![0], 1.0), (vec![2], -1.0)]).unwrap();
        assert_eq!(s.constraints(), &[expect]);

        let s = SemialgebraicSet::boxed(&[-3.0, -3.0], &[3.0, 3.0]).unwrap();
        let c0 = Polynomial::from_terms(2, [(vec![0, 0], 9.0), (vec![2, 0], -1.0)]).unwrap();
        let c1 = Polynomial::from_terms(2, [(vec![0, 0], 9.0), (vec![0, 2], -1.0)]).unwrap();
        assert_eq!(s.constraints(), &[c0, c1]);

        let s = SemialgebraicSet::boxed(&[0.0], &[2.0]).unwrap();
        assert!(s.contains(&[1.0]).unwrap());
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(matches!(
            SemialgebraicSet::boxed(&[0.0, 1.0], &[1.0, 1.0]),
            Err(SetError::DegenerateInterval { axis: 1, .. })
        ));
    }

    #[test]
    fn membership() {
        assert!(SemialgebraicSet::whole_space(2).contains(&[1e9, -3.0]).unwrap());
        let s = SemialgebraicSet::boxed(&[-1.0], &[1.0]).unwrap();
        assert!(!s.contains(&[2.0]).unwrap());
        assert!(s.contains(&[1.0]).unwrap());
        assert!(s.contains(&[-1.0]).unwrap());
        assert!(s.contains(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn moments() {
        let lebesgue = Measure::box_lebesgue(&[-1.0], &[1.0]).unwrap();
        let x2 = Monomial::new(vec![2]);
        assert!((lebesgue.moment(&x2).unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let boundary = Measure::discrete(vec![(vec![-1.0], 1.0), (vec![1.0], 1.0)]).unwrap();
        assert_eq!(boundary.moment(&Monomial::new(vec![1])).unwrap(), 0.0);
        assert_eq!(boundary.moment(&Monomial::new(vec![4])).unwrap(), 2.0);
        assert!(boundary.moment(&Monomial::new(vec![1, 1])).is_err());
    }

    #[test]
    fn objective_vectors() {
        let boundary = Measure::discrete(vec![(vec![-1.0], 1.0), (vec![1.0], 1.0)]).unwrap();
        let basis = crate::poly::monomials_up_to(1, 2);
        assert_eq!(boundary.objective_vector(&basis).unwrap(), vec![2.0, 0.0, 2.0]);

        let unit = Measure::box_lebesgue(&[0.0], &[1.0]).unwrap();
        let basis = crate::poly::monomials_up_to(1, 1);
        assert_eq!(unit.objective_vector(&basis).unwrap(), vec![1.0, 0.5]);
        assert!(unit.objective_vector(&[]).unwrap().is_empty());
    }

    #[test]
    fn bad_measures() {
        assert!(matches!(
            Measure::discrete(vec![(vec![0.0], 0.0)]),
            Err(SetError::BadWeight(0))
        ));
        assert!(Measure::discrete(vec![]).is_err());
        assert!(Measure::box_lebesgue(&[1.0], &[0.0]).is_err());
    }
}
