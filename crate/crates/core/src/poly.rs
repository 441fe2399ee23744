//! Sparse multivariate polynomials with `f64` coefficients.
//!
//! Monomials are ordered graded-lexicographically: lower total degree first,
//! and within one degree the exponent vectors descend lexicographically, so
//! for two variables the order is `1, x1, x2, x1^2, x1 x2, x2^2, ...`. Every
//! ordered collection in the crate (Gram bases, coefficient vectors, the
//! rows of a compiled SOS program) follows this order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected} variables, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite evaluation input at coordinate {0}")]
    NonFinite(usize),
    #[error("non-finite coefficient for monomial {0:?}")]
    NonFiniteCoefficient(Vec<u32>),
    #[error("empty polynomial vector")]
    EmptyVector,
}

/// Exponent vector of a monomial, one entry per ambient variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self / other` if `other` divides `self`.
    pub fn checked_div(&self, other: &Monomial) -> Option<Monomial> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(Monomial)
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .filter(|(e, _)| **e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    /// Re-indexes the monomial into a space with `nvars` variables, sending
    /// local variable `k` to `map[k]`.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Monomial {
        let mut e = vec![0; nvars];
        for (k, &exp) in self.0.iter().enumerate() {
            e[map[k]] += exp;
        }
        Monomial(e)
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials in `nvars` variables of total degree at most `degree`, in
/// graded-lex order. There are `C(nvars + degree, nvars)` of them.
pub fn monomials_up_to(nvars: usize, degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in 0..=degree {
        let mut cur = vec![0u32; nvars];
        monomials_of_degree(nvars, d, 0, &mut cur, &mut out);
    }
    out
}

// Emits exponent vectors of exact degree `remaining` in descending lex order.
fn monomials_of_degree(
    nvars: usize,
    remaining: u32,
    pos: usize,
    cur: &mut Vec<u32>,
    out: &mut Vec<Monomial>,
) {
    if nvars == 0 {
        if remaining == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if pos == nvars - 1 {
        cur[pos] = remaining;
        out.push(Monomial(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e;
        monomials_of_degree(nvars, remaining - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Sparse polynomial. No zero coefficients are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyRecord", into = "PolyRecord")]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Polynomial::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        Polynomial::monomial(Monomial::var(nvars, i), 1.0)
    }

    pub fn monomial(m: Monomial, c: f64) -> Self {
        let mut p = Polynomial::zero(m.nvars());
        p.add_term(m, c);
        p
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs; repeated
    /// monomials are summed.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Polynomial::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(PolyError::DimensionMismatch {
                    expected: nvars,
                    found: e.len(),
                });
            }
            if !c.is_finite() {
                return Err(PolyError::NonFiniteCoefficient(e));
            }
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Maximum total degree over the stored terms; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> + '_ {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    /// Adds `c * m` in place, dropping the entry if it cancels to exactly 0.
    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        if c == 0.0 {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn check_dims(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars != other.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                found: other.nvars,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -*c);
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dims(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn pow(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    pub fn eval(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.nvars {
            return Err(PolyError::DimensionMismatch {
                expected: self.nvars,
                found: point.len(),
            });
        }
        if let Some(i) = point.iter().position(|x| !x.is_finite()) {
            return Err(PolyError::NonFinite(i));
        }
        Ok(self.eval_unchecked(point))
    }

    /// Evaluation without dimension or finiteness checks, for hot loops.
    pub fn eval_unchecked(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(point)).sum()
    }

    /// Partial derivative with respect to variable `i`.
    pub fn derivative(&self, i: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m.0[i];
            if e == 0 {
                continue;
            }
            let mut d = m.0.clone();
            d[i] -= 1;
            out.add_term(Monomial(d), c * e as f64);
        }
        out
    }

    pub fn grad(&self) -> PolyVector {
        PolyVector {
            components: (0..self.nvars).map(|i| self.derivative(i)).collect(),
        }
    }

    /// Moves the polynomial into a space of `nvars` variables; local variable
    /// `k` becomes variable `map[k]`.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Polynomial {
        assert_eq!(map.len(), self.nvars, "embedding map length");
        let mut out = Polynomial::zero(nvars);
        for (m, c) in &self.terms {
            out.add_term(m.embed(nvars, map), *c);
        }
        out
    }

    /// Substitutes `x_i -> scale[i] * x_i`.
    pub fn scale_vars(&self, scale: &[f64]) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c * m.eval(scale));
        }
        out
    }

    /// Indices of variables that occur with a positive exponent.
    pub fn support_vars(&self) -> Vec<usize> {
        (0..self.nvars)
            .filter(|&i| self.terms.keys().any(|m| m.0[i] > 0))
            .collect()
    }

    /// Keeps only variables listed in `vars` (in that order); the polynomial
    /// must not depend on any other variable.
    pub fn restrict(&self, vars: &[usize]) -> Option<Polynomial> {
        let mut out = Polynomial::zero(vars.len());
        for (m, c) in &self.terms {
            for (i, &e) in m.0.iter().enumerate() {
                if e > 0 && !vars.contains(&i) {
                    return None;
                }
            }
            out.add_term(Monomial(vars.iter().map(|&v| m.0[v]).collect()), *c);
        }
        Some(out)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Formats with the given variable names, e.g. `2*x^2*u - 1`.
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> impl fmt::Display + 'a {
        DisplayPoly { p: self, names }
    }
}

struct DisplayPoly<'a> {
    p: &'a Polynomial,
    names: &'a [String],
}

impl fmt::Display for DisplayPoly<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.p.is_zero() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.p.terms.iter().enumerate() {
            let (sign, mag) = if *c < 0.0 { ("-", -c) } else { ("+", *c) };
            if k == 0 {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let mut factors = Vec::new();
            if mag != 1.0 || m.is_one() {
                factors.push(format!("{mag}"));
            }
            for (i, &e) in m.0.iter().enumerate() {
                let name = self.names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
                match e {
                    0 => {}
                    1 => factors.push(name),
                    _ => factors.push(format!("{name}^{e}")),
                }
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = (0..self.nvars).map(|i| format!("x{i}")).collect();
        let shown = self.display_with(&names).to_string();
        f.write_str(&shown)
    }
}

// The operator forms panic on mismatched variable counts; use the `try_*`
// methods where dimensions come from user input.
impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial add")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_sub(rhs).expect("polynomial sub")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial mul")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolyRecord {
    nvars: usize,
    terms: Vec<TermRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermRecord {
    exponents: Vec<u32>,
    coefficient: f64,
}

impl TryFrom<PolyRecord> for Polynomial {
    type Error = PolyError;
    fn try_from(r: PolyRecord) -> Result<Self, PolyError> {
        Polynomial::from_terms(r.nvars, r.terms.into_iter().map(|t| (t.exponents, t.coefficient)))
    }
}

impl From<Polynomial> for PolyRecord {
    fn from(p: Polynomial) -> Self {
        PolyRecord {
            nvars: p.nvars,
            terms: p
                .terms
                .into_iter()
                .map(|(m, c)| TermRecord {
                    exponents: m.0,
                    coefficient: c,
                })
                .collect(),
        }
    }
}

/// Ordered list of polynomials over a common variable space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Polynomial>", into = "Vec<Polynomial>")]
pub struct PolyVector {
    components: Vec<Polynomial>,
}

impl PolyVector {
    pub fn new(components: Vec<Polynomial>) -> Result<Self, PolyError> {
        let first = components.first().ok_or(PolyError::EmptyVector)?;
        let n = first.nvars;
        for c in &components {
            if c.nvars != n {
                return Err(PolyError::DimensionMismatch {
                    expected: n,
                    found: c.nvars,
                });
            }
        }
        Ok(PolyVector { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn nvars(&self) -> usize {
        self.components.first().map_or(0, |c| c.nvars)
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn get(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>, PolyError> {
        self.components.iter().map(|c| c.eval(point)).collect()
    }

    /// `sum_i self[i] * other[i]`.
    pub fn dot(&self, other: &PolyVector) -> Result<Polynomial, PolyError> {
        if self.len() != other.len() {
            return Err(PolyError::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        let mut acc = Polynomial::zero(self.nvars());
        for (a, b) in self.components.iter().zip(&other.components) {
            acc = acc.try_add(&a.try_mul(b)?)?;
        }
        Ok(acc)
    }
}

impl TryFrom<Vec<Polynomial>> for PolyVector {
    type Error = PolyError;
    fn try_from(v: Vec<Polynomial>) -> Result<Self, PolyError> {
        PolyVector::new(v)
    }
}

impl From<PolyVector> for Vec<Polynomial> {
    fn from(v: PolyVector) -> Self {
        v.components
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p1(terms: &[(u32, f64)]) -> Polynomial {
        Polynomial::from_terms(1, terms.iter().map(|&(e, c)| (vec![e], c))).unwrap()
    }

    #[test]
    fn add_cancels_and_prunes() {
        let a = p1(&[(2, 1.0), (0, 1.0)]);
        let b = p1(&[(2, -1.0), (1, 1.0)]);
        let s = &a + &b;
        assert_eq!(s, p1(&[(1, 1.0), (0, 1.0)]));
        assert_eq!(s.num_terms(), 2);
        assert_eq!(&a + &Polynomial::zero(1), a);
        assert_eq!(&p1(&[(1, 2.0)]) + &p1(&[(1, 3.0)]), p1(&[(1, 5.0)]));
    }

    #[test]
    fn mul_examples() {
        let a = p1(&[(1, 1.0), (0, 1.0)]);
        let b = p1(&[(1, 1.0), (0, -1.0)]);
        assert_eq!(&a * &b, p1(&[(2, 1.0), (0, -1.0)]));
        assert_eq!(&a * &Polynomial::constant(1, 1.0), a);
        let one_minus_u2 = p1(&[(0, 1.0), (2, -1.0)]);
        let u = p1(&[(1, 1.0)]);
        assert_eq!(&one_minus_u2 * &u, p1(&[(1, 1.0), (3, -1.0)]));
        assert_eq!((&a * &b).degree(), a.degree() + b.degree());
    }

    #[test]
    fn mismatch_errors() {
        let a = Polynomial::var(1, 0);
        let b = Polynomial::var(2, 0);
        assert!(matches!(
            a.try_add(&b),
            Err(PolyError::DimensionMismatch { expected: 1, found: 2 })
        ));
        assert!(a.try_mul(&b).is_err());
        assert!(a.eval(&[1.0, 2.0]).is_err());
        assert!(matches!(a.eval(&[f64::NAN]), Err(PolyError::NonFinite(0))));
    }

    #[test]
    fn eval_examples() {
        let p = Polynomial::from_terms(2, [(vec![2, 1], 1.0)]).unwrap();
        assert_eq!(p.eval(&[2.0, 3.0]).unwrap(), 12.0);
        assert_eq!(Polynomial::zero(3).eval(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(p1(&[(2, 1.0), (1, 2.0), (0, 1.0)]).eval(&[-1.0]).unwrap(), 0.0);
    }

    #[test]
    fn grad_examples() {
        let p = Polynomial::from_terms(2, [(vec![2, 1], 1.0)]).unwrap();
        let g = p.grad();
        assert_eq!(g.get(0), &Polynomial::from_terms(2, [(vec![1, 1], 2.0)]).unwrap());
        assert_eq!(g.get(1), &Polynomial::from_terms(2, [(vec![2, 0], 1.0)]).unwrap());
        let c = Polynomial::constant(2, 4.0).grad();
        assert!(c.components().iter().all(Polynomial::is_zero));
        let h = Polynomial::from_terms(2, [(vec![2, 0], 1.0), (vec![0, 2], 1.0)]).unwrap();
        let g = h.grad();
        assert_eq!(g.get(0), &Polynomial::from_terms(2, [(vec![1, 0], 2.0)]).unwrap());
        assert_eq!(g.get(1), &Polynomial::from_terms(2, [(vec![0, 1], 2.0)]).unwrap());
    }

    #[test]
    fn monomial_enumeration() {
        let b = monomials_up_to(1, 2);
        assert_eq!(b, vec![Monomial::new(vec![0]), Monomial::new(vec![1]), Monomial::new(vec![2])]);
        let b = monomials_up_to(2, 1);
        assert_eq!(
            b,
            vec![Monomial::new(vec![0, 0]), Monomial::new(vec![1, 0]), Monomial::new(vec![0, 1])]
        );
        let b = monomials_up_to(2, 2);
        assert_eq!(b.len(), 6);
        assert_eq!(b[3], Monomial::new(vec![2, 0]));
        assert_eq!(b[4], Monomial::new(vec![1, 1]));
        assert_eq!(b[5], Monomial::new(vec![0, 2]));
        // enumeration order agrees with Ord
        let mut sorted = b.clone();
        sorted.sort();
        assert_eq!(sorted, b);
    }

    #[test]
    fn serde_records() {
        let p = Polynomial::from_terms(2, [(vec![1, 0], 2.5), (vec![0, 0], -1.0)]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"exponents\":[1,0]"));
        let back: Polynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"nvars":2,"terms":[{"exponents":[1],"coefficient":1.0}]}"#;
        assert!(serde_json::from_str::<Polynomial>(bad).is_err());
    }

    #[test]
    fn restrict_and_embed() {
        let p = Polynomial::from_terms(3, [(vec![0, 0, 2], -1.0), (vec![0, 0, 0], 1.0)]).unwrap();
        assert_eq!(p.support_vars(), vec![2]);
        let r = p.restrict(&[2]).unwrap();
        assert_eq!(r.nvars(), 1);
        assert_eq!(r.embed(3, &[2]), p);
        assert!(p.restrict(&[0]).is_none());
    }
}
