//! Sparse polynomials over `Q(ε)` whose divisorial variables may carry
//! fractional exponents `a/p_i`, together with diagonal group actions and
//! chart substitutions.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num::{BigInt, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::abelian::{AbelianGroup, GroupElement};
use crate::cyclotomic::{fmt_q, lcm_u64, parse_q, qi, Cyclo, Q};
use crate::error::{domain, Error, Result};

pub use crate::split::{split_newton, verify_split, SplitOptions};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivVar {
    pub name: String,
    pub bound: u64,
}

/// Variables of a polynomial ring: divisorial ones (`w_i`, exponents in
/// `(1/p_i)·Z≥0`) followed by free ones (integer exponents).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarSpace {
    divisorial: Vec<DivVar>,
    free: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarRef {
    Div(usize),
    Free(usize),
}

impl VarSpace {
    pub fn new(divisorial: Vec<(String, u64)>, free: Vec<String>) -> Result<Self> {
        let sp = VarSpace {
            divisorial: divisorial
                .into_iter()
                .map(|(name, bound)| DivVar { name, bound })
                .collect(),
            free,
        };
        sp.validate()?;
        Ok(sp)
    }

    /// Build from string slices; panics on invalid input (tests and fixed layouts).
    pub fn of(divisorial: &[(&str, u64)], free: &[&str]) -> Arc<Self> {
        Arc::new(
            Self::new(
                divisorial.iter().map(|(n, b)| (n.to_string(), *b)).collect(),
                free.iter().map(|s| s.to_string()).collect(),
            )
            .expect("valid variable space"),
        )
    }

    fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.names();
        if names.iter().any(|n| n.is_empty()) {
            return domain("empty variable name");
        }
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return domain("variable names must be distinct");
        }
        if self.divisorial.iter().any(|d| d.bound == 0) {
            return domain("denominator bounds must be at least 1");
        }
        Ok(())
    }

    /// Parse `"w/2, x0, x1"`: entries with `/p` are divisorial with bound `p`.
    pub fn parse(s: &str) -> Result<Arc<Self>> {
        let mut div = Vec::new();
        let mut free = Vec::new();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match item.split_once('/') {
                Some((n, b)) => {
                    let b: u64 = b
                        .trim()
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad bound in `{item}`")))?;
                    div.push((n.trim().to_string(), b));
                }
                None => free.push(item.to_string()),
            }
        }
        Ok(Arc::new(Self::new(div, free)?))
    }

    pub fn divisorial(&self) -> &[DivVar] {
        &self.divisorial
    }

    pub fn free(&self) -> &[String] {
        &self.free
    }

    pub fn n_div(&self) -> usize {
        self.divisorial.len()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.divisorial
            .iter()
            .map(|d| d.name.as_str())
            .chain(self.free.iter().map(|s| s.as_str()))
            .collect()
    }

    pub fn lookup(&self, name: &str) -> Option<VarRef> {
        if let Some(i) = self.divisorial.iter().position(|d| d.name == name) {
            return Some(VarRef::Div(i));
        }
        self.free.iter().position(|f| f == name).map(VarRef::Free)
    }

    pub fn free_index(&self, name: &str) -> Result<usize> {
        match self.lookup(name) {
            Some(VarRef::Free(i)) => Ok(i),
            _ => domain(format!("`{name}` is not a free variable")),
        }
    }

    pub fn div_index(&self, name: &str) -> Result<usize> {
        match self.lookup(name) {
            Some(VarRef::Div(i)) => Ok(i),
            _ => domain(format!("`{name}` is not a divisorial variable")),
        }
    }

    /// Common denominator of all divisorial exponents.
    pub fn denominator(&self) -> u64 {
        self.divisorial.iter().fold(1, |a, d| lcm_u64(a, d.bound))
    }

    /// Union by name; divisorial bounds combine by lcm. Fails when a name is
    /// divisorial in one space and free in the other.
    pub fn merge(a: &VarSpace, b: &VarSpace) -> Result<VarSpace> {
        let mut out = a.clone();
        for d in &b.divisorial {
            match out.lookup(&d.name) {
                Some(VarRef::Div(i)) => out.divisorial[i].bound = lcm_u64(out.divisorial[i].bound, d.bound),
                Some(VarRef::Free(_)) => {
                    return Err(Error::IncompatibleSpaces(format!("`{}` has two kinds", d.name)))
                }
                None => out.divisorial.push(d.clone()),
            }
        }
        for f in &b.free {
            match out.lookup(f) {
                Some(VarRef::Free(_)) => {}
                Some(VarRef::Div(_)) => {
                    return Err(Error::IncompatibleSpaces(format!("`{f}` has two kinds")))
                }
                None => out.free.push(f.clone()),
            }
        }
        Ok(out)
    }

    /// Copy with extra free variables appended.
    pub fn with_free(&self, extra: &[&str]) -> Result<Arc<VarSpace>> {
        let mut s = self.clone();
        s.free.extend(extra.iter().map(|x| x.to_string()));
        s.validate()?;
        Ok(Arc::new(s))
    }
}

/// Exponent vector. `w` holds numerators over the declared bounds and `deg`
/// the total degree times the common denominator, so the derived order is
/// graded lexicographic.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub(crate) struct Mono {
    deg: i64,
    w: Vec<i64>,
    free: Vec<u32>,
}

impl Mono {
    fn one(sp: &VarSpace) -> Self {
        Mono {
            deg: 0,
            w: vec![0; sp.n_div()],
            free: vec![0; sp.n_free()],
        }
    }

    fn build(sp: &VarSpace, w: Vec<i64>, free: Vec<u32>) -> Self {
        let l = sp.denominator() as i64;
        let mut deg = 0i64;
        for (n, d) in w.iter().zip(&sp.divisorial) {
            deg += n * (l / d.bound as i64);
        }
        deg += l * free.iter().map(|&e| e as i64).sum::<i64>();
        Mono { deg, w, free }
    }

    fn from_q(sp: &VarSpace, w: &[Q], free: &[u32]) -> Result<Self> {
        if w.len() != sp.n_div() || free.len() != sp.n_free() {
            return domain("exponent vector has the wrong length");
        }
        let mut nums = Vec::with_capacity(w.len());
        for (e, d) in w.iter().zip(&sp.divisorial) {
            nums.push(div_numerator(e, d)?);
        }
        Ok(Mono::build(sp, nums, free.to_vec()))
    }

    fn mul(&self, o: &Mono) -> Mono {
        Mono {
            deg: self.deg + o.deg,
            w: self.w.iter().zip(&o.w).map(|(a, b)| a + b).collect(),
            free: self.free.iter().zip(&o.free).map(|(a, b)| a + b).collect(),
        }
    }

    fn divides(&self, o: &Mono) -> bool {
        self.w.iter().zip(&o.w).all(|(a, b)| a <= b) && self.free.iter().zip(&o.free).all(|(a, b)| a <= b)
    }

    fn quo(&self, d: &Mono) -> Mono {
        Mono {
            deg: self.deg - d.deg,
            w: self.w.iter().zip(&d.w).map(|(a, b)| a - b).collect(),
            free: self.free.iter().zip(&d.free).map(|(a, b)| a - b).collect(),
        }
    }

    fn w_q(&self, sp: &VarSpace) -> Vec<Q> {
        self.w
            .iter()
            .zip(&sp.divisorial)
            .map(|(&n, d)| Q::new(BigInt::from(n), BigInt::from(d.bound)))
            .collect()
    }

    fn exponent(&self, sp: &VarSpace, v: VarRef) -> Q {
        match v {
            VarRef::Div(i) => Q::new(BigInt::from(self.w[i]), BigInt::from(sp.divisorial[i].bound)),
            VarRef::Free(i) => qi(self.free[i] as i64),
        }
    }
}

fn div_numerator(e: &Q, d: &DivVar) -> Result<i64> {
    if e.is_negative() {
        return domain(format!("negative exponent {} on `{}`", fmt_q(e), d.name));
    }
    let n = e * qi(d.bound as i64);
    if !n.is_integer() {
        return domain(format!(
            "exponent {} on `{}` is not in (1/{})·Z",
            fmt_q(e),
            d.name,
            d.bound
        ));
    }
    n.to_integer()
        .to_i64()
        .ok_or_else(|| Error::Domain("exponent too large".into()))
}

/// One term in public form.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub w: Vec<Q>,
    pub free: Vec<u32>,
    pub coeff: Cyclo,
}

/// Polynomial with canonical sparse representation (no zero coefficients).
#[derive(Clone, Debug)]
pub struct FracPoly {
    space: Arc<VarSpace>,
    terms: BTreeMap<Mono, Cyclo>,
}

impl PartialEq for FracPoly {
    fn eq(&self, other: &Self) -> bool {
        if Arc::ptr_eq(&self.space, &other.space) || self.space == other.space {
            return self.terms == other.terms;
        }
        self.checked_sub(other).map(|d| d.is_zero()).unwrap_or(false)
    }
}

/// `e^{2πi·phase}` as a root of unity.
pub(crate) fn phase_root(phase: &Q) -> Cyclo {
    let r = phase - phase.floor();
    let den = r.denom().to_u64().expect("small denominator");
    let num = r.numer().to_i64().expect("small numerator");
    Cyclo::eps(den, num)
}

impl FracPoly {
    pub fn zero(space: &Arc<VarSpace>) -> Self {
        FracPoly {
            space: space.clone(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(space: &Arc<VarSpace>, c: Cyclo) -> Self {
        let mut p = Self::zero(space);
        if !c.is_zero() {
            p.terms.insert(Mono::one(space), c);
        }
        p
    }

    pub fn one(space: &Arc<VarSpace>) -> Self {
        Self::constant(space, Cyclo::one())
    }

    /// The variable called `name` (exponent 1).
    pub fn var(space: &Arc<VarSpace>, name: &str) -> Result<Self> {
        let v = space
            .lookup(name)
            .ok_or_else(|| Error::Domain(format!("unknown variable `{name}`")))?;
        Self::var_power(space, v, &qi(1))
    }

    pub fn var_power(space: &Arc<VarSpace>, v: VarRef, e: &Q) -> Result<Self> {
        let mut w = vec![qi(0); space.n_div()];
        let mut free = vec![0u32; space.n_free()];
        match v {
            VarRef::Div(i) => w[i] = e.clone(),
            VarRef::Free(i) => {
                if !e.is_integer() || e.is_negative() {
                    return domain("free variables take nonnegative integer exponents");
                }
                free[i] = e.to_integer().to_u32().ok_or_else(|| Error::Domain("exponent too large".into()))?;
            }
        }
        Self::monomial(space, &w, &free, Cyclo::one())
    }

    pub fn monomial(space: &Arc<VarSpace>, w: &[Q], free: &[u32], c: Cyclo) -> Result<Self> {
        let m = Mono::from_q(space, w, free)?;
        let mut p = Self::zero(space);
        if !c.is_zero() {
            p.terms.insert(m, c);
        }
        Ok(p)
    }

    /// Sum of terms; repeated exponents accumulate.
    pub fn from_terms(space: &Arc<VarSpace>, terms: impl IntoIterator<Item = Term>) -> Result<Self> {
        let mut p = Self::zero(space);
        for t in terms {
            let m = Mono::from_q(space, &t.w, &t.free)?;
            p.add_term(m, t.coeff);
        }
        Ok(p)
    }

    fn add_term(&mut self, m: Mono, c: Cyclo) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(x) => {
                let s = &*x + &c;
                if s.is_zero() {
                    self.terms.remove(&m);
                } else {
                    *x = s;
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn space(&self) -> &Arc<VarSpace> {
        &self.space
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms from the highest to the lowest in graded lexicographic order.
    pub fn terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .rev()
            .map(|(m, c)| Term {
                w: m.w_q(&self.space),
                free: m.free.clone(),
                coeff: c.clone(),
            })
            .collect()
    }

    /// The constant value, if the polynomial is constant.
    pub fn as_constant(&self) -> Option<Cyclo> {
        match self.terms.len() {
            0 => Some(Cyclo::zero()),
            1 => {
                let (m, c) = self.terms.iter().next().unwrap();
                (m.deg == 0).then(|| c.clone())
            }
            _ => None,
        }
    }

    pub fn is_monomial(&self) -> bool {
        self.terms.len() == 1
    }

    fn scaled_deg(&self, d: i64) -> Q {
        Q::new(BigInt::from(d), BigInt::from(self.space.denominator()))
    }

    /// Largest total degree (fractional exponents at face value).
    pub fn total_degree(&self) -> Option<Q> {
        self.terms.keys().next_back().map(|m| self.scaled_deg(m.deg))
    }

    /// Smallest total degree of a term.
    pub fn order(&self) -> Option<Q> {
        self.terms.keys().map(|m| m.deg).min().map(|d| self.scaled_deg(d))
    }

    /// Sum of the terms of total degree exactly `d`.
    pub fn homogeneous_part(&self, d: &Q) -> FracPoly {
        let mut p = Self::zero(&self.space);
        for (m, c) in &self.terms {
            if &self.scaled_deg(m.deg) == d {
                p.terms.insert(m.clone(), c.clone());
            }
        }
        p
    }

    fn var_ref(&self, name: &str) -> Result<VarRef> {
        self.space
            .lookup(name)
            .ok_or_else(|| Error::Domain(format!("unknown variable `{name}`")))
    }

    /// Maximal exponent of a variable (0 for the zero polynomial).
    pub fn degree_in(&self, name: &str) -> Result<Q> {
        let v = self.var_ref(name)?;
        Ok(self
            .terms
            .keys()
            .map(|m| m.exponent(&self.space, v))
            .max()
            .unwrap_or_else(|| qi(0)))
    }

    /// Minimal exponent of a variable over all terms.
    pub fn min_exponent(&self, name: &str) -> Result<Q> {
        let v = self.var_ref(name)?;
        Ok(self
            .terms
            .keys()
            .map(|m| m.exponent(&self.space, v))
            .min()
            .unwrap_or_else(|| qi(0)))
    }

    /// Total degree of each term with the listed free variables ignored; the
    /// minimum over all terms.
    pub fn order_excluding(&self, skip: &[usize]) -> Option<Q> {
        let l = self.space.denominator() as i64;
        self.terms
            .keys()
            .map(|m| m.deg - l * skip.iter().map(|&i| m.free[i] as i64).sum::<i64>())
            .min()
            .map(|d| self.scaled_deg(d))
    }

    /// Coefficients `c_0, …, c_n` of `f = Σ c_i v^i` for a free variable `v`.
    pub fn coefficients_in(&self, name: &str) -> Result<Vec<FracPoly>> {
        let i = self.space.free_index(name)?;
        let n = self.terms.keys().map(|m| m.free[i]).max().unwrap_or(0) as usize;
        let mut out = vec![Self::zero(&self.space); n + 1];
        for (m, c) in &self.terms {
            let e = m.free[i] as usize;
            let mut mm = m.clone();
            mm.free[i] = 0;
            mm.deg -= self.space.denominator() as i64 * e as i64;
            out[e].terms.insert(mm, c.clone());
        }
        Ok(out)
    }

    /// `Σ c_i v^i` from coefficients (inverse of [`FracPoly::coefficients_in`]).
    pub fn from_coefficients(space: &Arc<VarSpace>, name: &str, cs: &[FracPoly]) -> Result<Self> {
        let v = FracPoly::var(space, name)?;
        let mut acc = Self::zero(space);
        let mut pw = Self::one(space);
        for c in cs {
            acc = acc.checked_add(&c.checked_mul(&pw)?)?;
            pw = &pw * &v;
        }
        Ok(acc)
    }

    pub fn scale(&self, c: &Cyclo) -> FracPoly {
        let mut p = Self::zero(&self.space);
        if c.is_zero() {
            return p;
        }
        for (m, x) in &self.terms {
            p.terms.insert(m.clone(), x * c);
        }
        p
    }

    /// Bring both operands into one space (merging by name if needed).
    fn align(&self, other: &FracPoly) -> Result<(FracPoly, FracPoly)> {
        if Arc::ptr_eq(&self.space, &other.space) || self.space == other.space {
            return Ok((self.clone(), other.clone()));
        }
        let sp = Arc::new(VarSpace::merge(&self.space, &other.space)?);
        Ok((self.embed(&sp)?, other.embed(&sp)?))
    }

    pub fn checked_add(&self, other: &FracPoly) -> Result<FracPoly> {
        if !(Arc::ptr_eq(&self.space, &other.space) || self.space == other.space) {
            let (a, b) = self.align(other)?;
            return a.checked_add(&b);
        }
        let mut p = self.clone();
        for (m, c) in &other.terms {
            p.add_term(m.clone(), c.clone());
        }
        Ok(p)
    }

    pub fn checked_sub(&self, other: &FracPoly) -> Result<FracPoly> {
        self.checked_add(&-other)
    }

    pub fn checked_mul(&self, other: &FracPoly) -> Result<FracPoly> {
        if !(Arc::ptr_eq(&self.space, &other.space) || self.space == other.space) {
            let (a, b) = self.align(other)?;
            return a.checked_mul(&b);
        }
        let mut acc: BTreeMap<Mono, Cyclo> = BTreeMap::new();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let m = m1.mul(m2);
                let c = c1 * c2;
                match acc.get_mut(&m) {
                    Some(x) => *x = &*x + &c,
                    None => {
                        acc.insert(m, c);
                    }
                }
            }
        }
        acc.retain(|_, c| !c.is_zero());
        Ok(FracPoly {
            space: self.space.clone(),
            terms: acc,
        })
    }

    pub fn pow(&self, e: u32) -> FracPoly {
        let mut acc = Self::one(&self.space);
        let mut b = self.clone();
        let mut n = e;
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &b;
            }
            n >>= 1;
            if n > 0 {
                b = &b * &b;
            }
        }
        acc
    }

    /// Rational power; non-integral exponents need a monomial with coefficient 1.
    pub fn pow_q(&self, e: &Q) -> Result<FracPoly> {
        if e.is_negative() {
            return Err(Error::NonPolynomial(format!("negative power {}", fmt_q(e))));
        }
        if e.is_integer() {
            let n = e.to_integer().to_u32().ok_or_else(|| Error::Domain("exponent too large".into()))?;
            return Ok(self.pow(n));
        }
        if self.is_zero() {
            return Ok(self.clone());
        }
        let (m, c) = match (self.terms.len(), self.terms.iter().next()) {
            (1, Some((m, c))) if c.is_one() => (m, c),
            _ => {
                return Err(Error::NonPolynomial(format!(
                    "fractional power {} of a non-monomial",
                    fmt_q(e)
                )))
            }
        };
        let sp = &self.space;
        let mut w = Vec::new();
        for (x, d) in m.w_q(sp).iter().zip(&sp.divisorial) {
            w.push(div_numerator(&(x * e), d).map_err(|err| Error::NonPolynomial(err.to_string()))?);
        }
        let mut free = Vec::new();
        for &f in &m.free {
            let x = qi(f as i64) * e;
            if !x.is_integer() {
                return Err(Error::NonPolynomial(format!(
                    "fractional power {} of a free variable",
                    fmt_q(e)
                )));
            }
            free.push(x.to_integer().to_u32().unwrap());
        }
        let mut p = Self::zero(sp);
        p.terms.insert(Mono::build(sp, w, free), c.clone());
        Ok(p)
    }

    /// Re-express in another space, matching variables by name.
    pub fn embed(&self, target: &Arc<VarSpace>) -> Result<FracPoly> {
        if Arc::ptr_eq(&self.space, target) || *self.space == **target {
            return Ok(FracPoly {
                space: target.clone(),
                terms: self.terms.clone(),
            });
        }
        let map: Vec<Option<VarRef>> = self
            .space
            .names()
            .iter()
            .map(|n| target.lookup(n))
            .collect();
        let nd = self.space.n_div();
        let mut p = Self::zero(target);
        for (m, c) in &self.terms {
            let mut w = vec![qi(0); target.n_div()];
            let mut free = vec![0u32; target.n_free()];
            for (idx, dest) in map.iter().enumerate() {
                let v = if idx < nd { VarRef::Div(idx) } else { VarRef::Free(idx - nd) };
                let e = m.exponent(&self.space, v);
                if e.is_zero() {
                    continue;
                }
                match dest {
                    None => {
                        return Err(Error::IncompatibleSpaces(format!(
                            "variable `{}` missing from target",
                            self.space.names()[idx]
                        )))
                    }
                    Some(VarRef::Div(j)) => w[*j] = e,
                    Some(VarRef::Free(j)) => {
                        if !e.is_integer() {
                            return Err(Error::IncompatibleSpaces("fractional exponent on a free variable".into()));
                        }
                        free[*j] = e.to_integer().to_u32().unwrap();
                    }
                }
            }
            let mm = Mono::from_q(target, &w, &free).map_err(|e| Error::IncompatibleSpaces(e.to_string()))?;
            p.add_term(mm, c.clone());
        }
        Ok(p)
    }

    /// Multiply every term by `∏ ε_{p_i}^{g_i·α_i}`, i.e. `w_i ↦ ε_{p_i}^{g_i} w_i`,
    /// where `α_i` is the exponent of the i-th divisorial variable.
    pub fn rotate_divisorial(&self, g: &[i64], p: &[u64]) -> Result<FracPoly> {
        if g.len() != self.space.n_div() || p.len() != g.len() {
            return domain("rotation vector has the wrong length");
        }
        let mut out = Self::zero(&self.space);
        for (m, c) in &self.terms {
            let mut phase = qi(0);
            for (i, e) in m.w_q(&self.space).iter().enumerate() {
                phase += e * qi(g[i]) / qi(p[i] as i64);
            }
            out.terms.insert(m.clone(), c * &phase_root(&phase));
        }
        Ok(out)
    }

    /// Drop the terms of total degree above `d`.
    pub fn truncate(&self, d: &Q) -> FracPoly {
        let l = self.space.denominator() as i64;
        let cap = (d * qi(l)).floor().to_integer();
        let mut p = Self::zero(&self.space);
        for (m, c) in &self.terms {
            if BigInt::from(m.deg) <= cap {
                p.terms.insert(m.clone(), c.clone());
            }
        }
        p
    }

    /// Keep only terms whose degree in the non-skipped variables is at most `d`.
    pub fn truncate_excluding(&self, skip: &[usize], d: &Q) -> FracPoly {
        let l = self.space.denominator() as i64;
        let cap = (d * qi(l)).floor().to_integer();
        let mut p = Self::zero(&self.space);
        for (m, c) in &self.terms {
            let dm = m.deg - l * skip.iter().map(|&i| m.free[i] as i64).sum::<i64>();
            if BigInt::from(dm) <= cap {
                p.terms.insert(m.clone(), c.clone());
            }
        }
        p
    }

    /// Exact quotient `self / g`; fails if `g` does not divide `self`.
    pub fn div_exact(&self, g: &FracPoly) -> Result<FracPoly> {
        let (f, g) = self.align(g)?;
        let (lm, lc) = g.terms.iter().next_back().ok_or(Error::DivisionByZero)?;
        let lc_inv = lc.inverse()?;
        let mut r = f.clone();
        let mut qt = Self::zero(&f.space);
        while let Some((m, c)) = r.terms.iter().next_back() {
            if !lm.divides(m) {
                return Err(Error::NotExpressible("polynomial is not divisible".into()));
            }
            let qm = m.quo(lm);
            let qc = c * &lc_inv;
            for (gm, gc) in &g.terms {
                r.add_term(qm.mul(gm), -(&qc * gc));
            }
            qt.add_term(qm, qc);
        }
        Ok(qt)
    }

    /// Quotient by the maximal power of one variable, with that exponent.
    pub fn strict_transform(&self, name: &str) -> Result<(FracPoly, Q)> {
        if self.is_zero() {
            return domain("strict transform of the zero polynomial");
        }
        let v = self.var_ref(name)?;
        let e = self.min_exponent(name)?;
        let d = FracPoly::var_power(&self.space, v, &e)?;
        let qt = self.div_exact(&d)?;
        Ok((qt, e))
    }

    /// Replace `w_i` by `v_i^p` (the new variable keeps divisorial status with
    /// bound 1 and is named by swapping a leading `w` for `v`).
    pub fn substitute_power(&self, i: usize, p: u64) -> Result<FracPoly> {
        let name = self
            .space
            .divisorial
            .get(i)
            .ok_or_else(|| Error::Domain(format!("no divisorial variable {i}")))?
            .name
            .clone();
        let new = match name.strip_prefix('w') {
            Some(rest) => format!("v{rest}"),
            None => format!("{name}'"),
        };
        self.substitute_power_named(i, p, &new)
    }

    pub fn substitute_power_named(&self, i: usize, p: u64, new_name: &str) -> Result<FracPoly> {
        if p == 0 {
            return domain("power must be positive");
        }
        let sp = &self.space;
        let old = sp.divisorial[i].clone();
        for m in self.terms.keys() {
            if (m.w[i] * p as i64) % old.bound as i64 != 0 {
                return domain(format!(
                    "p = {p} does not clear the denominator of an exponent of `{}`",
                    old.name
                ));
            }
        }
        let mut nsp = (**sp).clone();
        nsp.divisorial[i] = DivVar {
            name: new_name.to_string(),
            bound: 1,
        };
        nsp.validate()?;
        let nsp = Arc::new(nsp);
        let mut out = Self::zero(&nsp);
        for (m, c) in &self.terms {
            let mut w = m.w.clone();
            w[i] = m.w[i] * p as i64 / old.bound as i64;
            out.terms.insert(Mono::build(&nsp, w, m.free.clone()), c.clone());
        }
        Ok(out)
    }

    /// Evaluate the ring homomorphism given by a chart.
    pub fn substitute(&self, chart: &ChartMap) -> Result<FracPoly> {
        if *self.space != *chart.source {
            let f = self.embed(&chart.source)?;
            return f.substitute(chart);
        }
        let sp = &self.space;
        let nd = sp.n_div();
        let mut cache: BTreeMap<(usize, Q), FracPoly> = BTreeMap::new();
        let mut out = Self::zero(&chart.target);
        for (m, c) in &self.terms {
            let mut t = Self::constant(&chart.target, c.clone());
            for idx in 0..nd + sp.n_free() {
                let v = if idx < nd { VarRef::Div(idx) } else { VarRef::Free(idx - nd) };
                let e = m.exponent(sp, v);
                if e.is_zero() {
                    continue;
                }
                let key = (idx, e.clone());
                if !cache.contains_key(&key) {
                    let img = chart.images[idx].pow_q(&e)?;
                    cache.insert(key.clone(), img);
                }
                t = &t * &cache[&key];
            }
            out = &out + &t;
        }
        Ok(out)
    }

    /// Substitute a polynomial for one free variable (same space).
    pub fn substitute_var(&self, name: &str, value: &FracPoly) -> Result<FracPoly> {
        let cs = self.coefficients_in(name)?;
        let value = value.embed(&self.space)?;
        // Horner.
        let mut acc = Self::zero(&self.space);
        for c in cs.iter().rev() {
            acc = &(&acc * &value) + c;
        }
        Ok(acc)
    }

    /// Apply a diagonal group element.
    pub fn apply_group(&self, action: &DiagonalAction, g: &GroupElement) -> Result<FracPoly> {
        if !action.group.contains(g) {
            return domain("element outside the acting group");
        }
        let cols = action.columns(&self.space)?;
        let mut out = Self::zero(&self.space);
        for (m, c) in &self.terms {
            let ph = action.phase(&self.space, &cols, m, g)?;
            out.terms.insert(m.clone(), c * &phase_root(&ph));
        }
        Ok(out)
    }

    /// Split into eigen-parts `f_0, …, f_{p_i−1}` for the i-th generator.
    pub fn semi_invariant_split(&self, action: &DiagonalAction, i: usize) -> Result<Vec<FracPoly>> {
        let p = *action
            .group
            .moduli()
            .get(i)
            .ok_or_else(|| Error::Domain(format!("no generator {i}")))?;
        let cols = action.columns(&self.space)?;
        let mut parts = vec![Self::zero(&self.space); p as usize];
        for (m, c) in &self.terms {
            let wt = action.weight(&self.space, &cols, m, i)?;
            let b = wt.rem_euclid(p as i64) as usize;
            parts[b].terms.insert(m.clone(), c.clone());
        }
        Ok(parts)
    }

    /// Map every coefficient through `f` (zero results are dropped).
    pub fn map_coeffs(&self, f: impl Fn(&Cyclo) -> Cyclo) -> FracPoly {
        let mut p = Self::zero(&self.space);
        for (m, c) in &self.terms {
            p.add_term(m.clone(), f(c));
        }
        p
    }

    /// Parse text such as `z^2 + (w^3 + x)*x^2` or `x0^2 - w^(1/2)*ε4*x1`.
    pub fn parse(space: &Arc<VarSpace>, s: &str) -> Result<FracPoly> {
        parse::parse(space, s)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

impl<'a> Add<&'a FracPoly> for &'a FracPoly {
    type Output = FracPoly;
    fn add(self, rhs: &FracPoly) -> FracPoly {
        self.checked_add(rhs).expect("compatible variable spaces")
    }
}

impl<'a> Sub<&'a FracPoly> for &'a FracPoly {
    type Output = FracPoly;
    fn sub(self, rhs: &FracPoly) -> FracPoly {
        self.checked_sub(rhs).expect("compatible variable spaces")
    }
}

impl<'a> Mul<&'a FracPoly> for &'a FracPoly {
    type Output = FracPoly;
    fn mul(self, rhs: &FracPoly) -> FracPoly {
        self.checked_mul(rhs).expect("compatible variable spaces")
    }
}

impl Neg for &FracPoly {
    type Output = FracPoly;
    fn neg(self) -> FracPoly {
        FracPoly {
            space: self.space.clone(),
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }
}

impl fmt::Display for FracPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let names = self.space.names();
        let nd = self.space.n_div();
        let mut first = true;
        for (m, c) in self.terms.iter().rev() {
            let mut factors: Vec<String> = Vec::new();
            for (idx, name) in names.iter().enumerate() {
                let v = if idx < nd { VarRef::Div(idx) } else { VarRef::Free(idx - nd) };
                let e = m.exponent(&self.space, v);
                if e.is_zero() {
                    continue;
                }
                if e.is_one() {
                    factors.push(name.to_string());
                } else if e.is_integer() {
                    factors.push(format!("{name}^{}", fmt_q(&e)));
                } else {
                    factors.push(format!("{name}^({})", fmt_q(&e)));
                }
            }
            let ct = c.to_text();
            let (neg, body) = match ct.strip_prefix('-') {
                Some(rest) if !rest.contains(' ') => (true, rest.to_string()),
                _ => (false, ct.clone()),
            };
            let body = if body.contains(' ') { format!("({body})") } else { body };
            let mono = factors.join("*");
            let text = if mono.is_empty() {
                body
            } else if body == "1" {
                mono
            } else {
                format!("{body}*{mono}")
            };
            if first {
                write!(f, "{}{}", if neg { "-" } else { "" }, text)?;
                first = false;
            } else {
                write!(f, " {} {}", if neg { "-" } else { "+" }, text)?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    w: Vec<String>,
    free: Vec<u32>,
    coeff: Cyclo,
}

#[derive(Serialize, Deserialize)]
struct PolyJson {
    space: VarSpace,
    terms: Vec<TermJson>,
}

impl Serialize for FracPoly {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyJson {
            space: (*self.space).clone(),
            terms: self
                .terms()
                .into_iter()
                .map(|t| TermJson {
                    w: t.w.iter().map(fmt_q).collect(),
                    free: t.free,
                    coeff: t.coeff,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FracPoly {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = PolyJson::deserialize(d)?;
        j.space.validate().map_err(D::Error::custom)?;
        let sp = Arc::new(j.space);
        let terms = j
            .terms
            .into_iter()
            .map(|t| {
                Ok(Term {
                    w: t.w.iter().map(|s| parse_q(s)).collect::<Result<_>>()?,
                    free: t.free,
                    coeff: t.coeff,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        FracPoly::from_terms(&sp, terms).map_err(D::Error::custom)
    }
}

/// Diagonal action of `G = Π μ_{p_i}`: generator `i` scales variable `j` by
/// `ε_{p_i}^{γ_{ij}}`. Variables are matched by name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagonalAction {
    pub group: AbelianGroup,
    pub vars: Vec<String>,
    pub weights: Vec<Vec<u64>>,
}

impl DiagonalAction {
    pub fn new(group: AbelianGroup, vars: Vec<String>, weights: Vec<Vec<u64>>) -> Result<Self> {
        if weights.len() != group.rank() {
            return domain("one weight row per generator is required");
        }
        for (row, &p) in weights.iter().zip(group.moduli()) {
            if row.len() != vars.len() {
                return domain("weight row length differs from the variable count");
            }
            if row.iter().any(|&g| g >= p) {
                return domain(format!("weights must lie in [0, {p})"));
            }
        }
        Ok(DiagonalAction { group, vars, weights })
    }

    /// Reduce weights modulo the orders before validating.
    pub fn new_reducing(group: AbelianGroup, vars: Vec<String>, weights: Vec<Vec<i64>>) -> Result<Self> {
        let w = weights
            .iter()
            .zip(group.moduli())
            .map(|(row, &p)| row.iter().map(|&g| g.rem_euclid(p as i64) as u64).collect())
            .collect();
        Self::new(group, vars, w)
    }

    /// Column of the weight matrix for each variable of the space (None if uncovered).
    fn columns(&self, sp: &VarSpace) -> Result<Vec<Option<usize>>> {
        Ok(sp
            .names()
            .iter()
            .map(|n| self.vars.iter().position(|v| v == n))
            .collect())
    }

    fn phase(&self, sp: &VarSpace, cols: &[Option<usize>], m: &Mono, g: &GroupElement) -> Result<Q> {
        let mut ph = qi(0);
        for (i, &p) in self.group.moduli().iter().enumerate() {
            if g.0[i] == 0 {
                continue;
            }
            let s = self.weight_q(sp, cols, m, i)?;
            ph += s * qi(g.0[i] as i64) / qi(p as i64);
        }
        Ok(ph)
    }

    fn weight_q(&self, sp: &VarSpace, cols: &[Option<usize>], m: &Mono, i: usize) -> Result<Q> {
        let nd = sp.n_div();
        let mut s = qi(0);
        for (idx, col) in cols.iter().enumerate() {
            let v = if idx < nd { VarRef::Div(idx) } else { VarRef::Free(idx - nd) };
            let e = m.exponent(sp, v);
            if e.is_zero() {
                continue;
            }
            let Some(j) = col else {
                return domain(format!("variable `{}` is not covered by the action", sp.names()[idx]));
            };
            s += e * qi(self.weights[i][*j] as i64);
        }
        Ok(s)
    }

    fn weight(&self, sp: &VarSpace, cols: &[Option<usize>], m: &Mono, i: usize) -> Result<i64> {
        let s = self.weight_q(sp, cols, m, i)?;
        if !s.is_integer() {
            return domain("term has a fractional weight");
        }
        Ok(s.to_integer().to_i64().unwrap())
    }

    /// Weight vector (mod `p_i`) of a monomial given by exponents on named variables.
    pub fn character_of(&self, exps: &[(String, u32)]) -> Result<Vec<u64>> {
        let mut out = vec![0u64; self.group.rank()];
        for (name, e) in exps {
            let j = self
                .vars
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| Error::Domain(format!("`{name}` is not covered by the action")))?;
            for (i, &p) in self.group.moduli().iter().enumerate() {
                out[i] = (out[i] + self.weights[i][j] * *e as u64) % p;
            }
        }
        Ok(out)
    }

    /// Scalar by which `g` multiplies variable `j`.
    pub fn scalar(&self, g: &GroupElement, j: usize) -> Cyclo {
        let mut ph = qi(0);
        for (i, &p) in self.group.moduli().iter().enumerate() {
            ph += qi((g.0[i] * self.weights[i][j]) as i64) / qi(p as i64);
        }
        phase_root(&ph)
    }
}

/// A substitution `v ↦ image(v)` from one variable space into another.
/// Images are listed divisorial variables first, then free ones.
#[derive(Clone, Debug)]
pub struct ChartMap {
    pub source: Arc<VarSpace>,
    pub target: Arc<VarSpace>,
    pub images: Vec<FracPoly>,
}

impl ChartMap {
    /// Variables not listed map to the same-named variable of the target.
    pub fn new(source: &Arc<VarSpace>, target: &Arc<VarSpace>, images: Vec<(&str, FracPoly)>) -> Result<Self> {
        let mut out = Vec::new();
        for name in source.names() {
            let img = match images.iter().find(|(n, _)| *n == name) {
                Some((_, p)) => p.embed(target)?,
                None => FracPoly::var(target, name).map_err(|_| {
                    Error::IncompatibleSpaces(format!("no image for `{name}`"))
                })?,
            };
            out.push(img);
        }
        for (n, _) in &images {
            if source.lookup(n).is_none() {
                return domain(format!("`{n}` is not a source variable"));
            }
        }
        Ok(ChartMap {
            source: source.clone(),
            target: target.clone(),
            images: out,
        })
    }

    /// Standard blow-up chart of the origin in the given centre variables:
    /// every centre variable other than `chart_var` is multiplied by it.
    pub fn standard(space: &Arc<VarSpace>, centre: &[&str], chart_var: &str) -> Result<Self> {
        let e = FracPoly::var(space, chart_var)?;
        let mut imgs = Vec::new();
        for &c in centre {
            if c != chart_var {
                imgs.push((c, &e * &FracPoly::var(space, c)?));
            }
        }
        ChartMap::new(space, space, imgs)
    }

    pub fn identity(space: &Arc<VarSpace>) -> Self {
        ChartMap::new(space, space, vec![]).expect("identity chart")
    }
}

/// Chart substitution `f ↦ f∘φ`.
pub fn blowup_substitute(f: &FracPoly, chart: &ChartMap) -> Result<FracPoly> {
    f.substitute(chart)
}

pub fn strict_transform(f: &FracPoly, exceptional_var: &str) -> Result<(FracPoly, Q)> {
    f.strict_transform(exceptional_var)
}

pub fn truncate(f: &FracPoly, d: &Q) -> FracPoly {
    f.truncate(d)
}

pub fn substitute_power(f: &FracPoly, i: usize, p: u64) -> Result<FracPoly> {
    f.substitute_power(i, p)
}

pub fn apply_group(f: &FracPoly, action: &DiagonalAction, g: &GroupElement) -> Result<FracPoly> {
    f.apply_group(action, g)
}

pub fn semi_invariant_split(f: &FracPoly, action: &DiagonalAction, i: usize) -> Result<Vec<FracPoly>> {
    f.semi_invariant_split(action, i)
}

mod parse {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    enum Tok {
        Num(BigInt),
        Ident(String),
        Op(char),
    }

    fn lex(s: &str) -> Result<Vec<Tok>> {
        let cs: Vec<char> = s.chars().collect();
        let mut i = 0;
        let mut out = Vec::new();
        while i < cs.len() {
            let c = cs[i];
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() {
                let st = i;
                while i < cs.len() && cs[i].is_ascii_digit() {
                    i += 1;
                }
                let t: String = cs[st..i].iter().collect();
                out.push(Tok::Num(t.parse().unwrap()));
            } else if c.is_alphabetic() || c == '_' {
                let st = i;
                i += 1;
                while i < cs.len() && (cs[i].is_alphanumeric() || cs[i] == '_' || cs[i] == '\'') {
                    i += 1;
                }
                out.push(Tok::Ident(cs[st..i].iter().collect()));
            } else if "+-*/^()·".contains(c) {
                out.push(Tok::Op(if c == '·' { '*' } else { c }));
                i += 1;
            } else if c == '−' {
                out.push(Tok::Op('-'));
                i += 1;
            } else {
                return Err(Error::Parse(format!("unexpected character `{c}`")));
            }
        }
        Ok(out)
    }

    struct P<'a> {
        toks: Vec<Tok>,
        pos: usize,
        sp: &'a Arc<VarSpace>,
    }

    fn root_token(id: &str) -> Option<u64> {
        let rest = id.strip_prefix('ε').or_else(|| id.strip_prefix("eps"))?;
        if rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        rest.parse().ok().filter(|&k| k > 0)
    }

    impl P<'_> {
        fn peek(&self) -> Option<&Tok> {
            self.toks.get(self.pos)
        }

        fn eat(&mut self, c: char) -> bool {
            if self.peek() == Some(&Tok::Op(c)) {
                self.pos += 1;
                true
            } else {
                false
            }
        }

        fn expr(&mut self) -> Result<FracPoly> {
            let mut acc = self.term()?;
            loop {
                if self.eat('+') {
                    acc = &acc + &self.term()?;
                } else if self.eat('-') {
                    acc = &acc - &self.term()?;
                } else {
                    return Ok(acc);
                }
            }
        }

        fn starts_factor(&self) -> bool {
            matches!(self.peek(), Some(Tok::Num(_)) | Some(Tok::Ident(_)) | Some(Tok::Op('(')))
        }

        fn term(&mut self) -> Result<FracPoly> {
            let mut acc = self.unary()?;
            loop {
                if self.eat('*') {
                    acc = &acc * &self.unary()?;
                } else if self.eat('/') {
                    let d = self.unary()?;
                    let c = d
                        .as_constant()
                        .ok_or_else(|| Error::Parse("division by a non-constant".into()))?;
                    acc = acc.scale(&c.inverse()?);
                } else if self.starts_factor() {
                    acc = &acc * &self.power()?;
                } else {
                    return Ok(acc);
                }
            }
        }

        fn unary(&mut self) -> Result<FracPoly> {
            if self.eat('-') {
                return Ok(-&self.unary()?);
            }
            if self.eat('+') {
                return self.unary();
            }
            self.power()
        }

        fn power(&mut self) -> Result<FracPoly> {
            let base = self.atom()?;
            if !self.eat('^') {
                return Ok(base);
            }
            let e = self.exponent()?;
            if e.is_negative() {
                let c = base
                    .as_constant()
                    .ok_or_else(|| Error::Parse("negative power of a non-constant".into()))?;
                let n = e.to_integer().to_i64().ok_or_else(|| Error::Parse("bad exponent".into()))?;
                return Ok(FracPoly::constant(self.sp, c.pow(n)?));
            }
            base.pow_q(&e).map_err(|x| Error::Parse(x.to_string()))
        }

        fn exponent(&mut self) -> Result<Q> {
            let neg = self.eat('-');
            let v = match self.peek().cloned() {
                Some(Tok::Num(n)) => {
                    self.pos += 1;
                    Q::from_integer(n)
                }
                Some(Tok::Op('(')) => {
                    self.pos += 1;
                    let neg2 = self.eat('-');
                    let a = self.num()?;
                    let b = if self.eat('/') { self.num()? } else { BigInt::one() };
                    if !self.eat(')') {
                        return Err(Error::Parse("expected `)` in exponent".into()));
                    }
                    if b.is_zero() {
                        return Err(Error::Parse("zero denominator in exponent".into()));
                    }
                    let r = Q::new(a, b);
                    if neg2 {
                        -r
                    } else {
                        r
                    }
                }
                _ => return Err(Error::Parse("expected an exponent".into())),
            };
            Ok(if neg { -v } else { v })
        }

        fn num(&mut self) -> Result<BigInt> {
            match self.peek().cloned() {
                Some(Tok::Num(n)) => {
                    self.pos += 1;
                    Ok(n)
                }
                _ => Err(Error::Parse("expected a number".into())),
            }
        }

        fn atom(&mut self) -> Result<FracPoly> {
            match self.peek().cloned() {
                Some(Tok::Num(n)) => {
                    self.pos += 1;
                    Ok(FracPoly::constant(self.sp, Cyclo::rational(Q::from_integer(n))))
                }
                Some(Tok::Ident(id)) => {
                    self.pos += 1;
                    if let Some(v) = self.sp.lookup(&id) {
                        return FracPoly::var_power(self.sp, v, &qi(1));
                    }
                    if let Some(k) = root_token(&id) {
                        return Ok(FracPoly::constant(self.sp, Cyclo::eps(k, 1)));
                    }
                    Err(Error::Parse(format!("unknown variable `{id}`")))
                }
                Some(Tok::Op('(')) => {
                    self.pos += 1;
                    let e = self.expr()?;
                    if !self.eat(')') {
                        return Err(Error::Parse("expected `)`".into()));
                    }
                    Ok(e)
                }
                other => Err(Error::Parse(format!("unexpected token {other:?}"))),
            }
        }
    }

    pub fn parse(sp: &Arc<VarSpace>, s: &str) -> Result<FracPoly> {
        let mut p = P {
            toks: lex(s)?,
            pos: 0,
            sp,
        };
        if p.toks.is_empty() {
            return Err(Error::Parse("empty polynomial".into()));
        }
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Parse(format!("trailing input at token {}", p.pos)));
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cyclotomic::q;

    fn sp_pinch() -> Arc<VarSpace> {
        VarSpace::of(&[("w", 2)], &["x0", "x1"])
    }

    fn p(sp: &Arc<VarSpace>, s: &str) -> FracPoly {
        FracPoly::parse(sp, s).unwrap()
    }

    #[test]
    fn pinch_point_product() {
        let sp = sp_pinch();
        let a = p(&sp, "x0 - w^(1/2)*x1");
        let b = p(&sp, "x0 + w^(1/2)*x1");
        assert_eq!(&a * &b, p(&sp, "x0^2 - w*x1^2"));
        assert_eq!(&a * &FracPoly::one(&sp), a);
    }

    #[test]
    fn binomial_cube() {
        let sp = VarSpace::of(&[], &["z", "x"]);
        assert_eq!(p(&sp, "(z+x)^3"), p(&sp, "z^3 + 3*z^2*x + 3*z*x^2 + x^3"));
    }

    #[test]
    fn fractional_exponent_rejected() {
        let sp = sp_pinch();
        assert!(FracPoly::monomial(&sp, &[q(1, 3)], &[0, 0], Cyclo::one()).is_err());
        assert!(FracPoly::parse(&sp, "w^(1/3)").is_err());
    }

    #[test]
    fn substitute_power_examples() {
        let sp = sp_pinch();
        let f = p(&sp, "x0^2 - w*x1^2");
        let g = f.substitute_power(0, 2).unwrap();
        let vs = VarSpace::of(&[("v", 1)], &["x0", "x1"]);
        assert_eq!(g, p(&vs, "x0^2 - v^2*x1^2"));
        let sp = VarSpace::of(&[("w", 1)], &["x", "z"]);
        let f = p(&sp, "z^2 + w^3*(1+x)*x^2");
        let vs = VarSpace::of(&[("v", 1)], &["x", "z"]);
        assert_eq!(f.substitute_power(0, 2).unwrap(), p(&vs, "z^2 + v^6*(1+x)*x^2"));
        let h = p(&sp_pinch(), "x0 + w^(1/2)");
        assert!(h.substitute_power(0, 1).is_err());
        assert_eq!(f.substitute_power_named(0, 1, "w").unwrap(), f);
    }

    #[test]
    fn group_action_examples() {
        let sp = VarSpace::of(&[], &["t", "x"]);
        let a = DiagonalAction::new(AbelianGroup::cyclic(2), vec!["t".into(), "x".into()], vec![vec![1, 1]]).unwrap();
        let f = p(&sp, "t*x");
        assert_eq!(f.apply_group(&a, &GroupElement(vec![1])).unwrap(), f);
        assert_eq!(f.apply_group(&a, &GroupElement(vec![0])).unwrap(), f);
        let sv = VarSpace::of(&[("v", 1)], &[]);
        let a4 = DiagonalAction::new(AbelianGroup::cyclic(4), vec!["v".into()], vec![vec![1]]).unwrap();
        let v2 = p(&sv, "v^2");
        assert_eq!(v2.apply_group(&a4, &GroupElement(vec![1])).unwrap(), -&v2);
    }

    #[test]
    fn semi_invariant_split_examples() {
        let sp = VarSpace::of(&[], &["x", "y"]);
        let a = DiagonalAction::new(AbelianGroup::cyclic(2), vec!["x".into(), "y".into()], vec![vec![0, 1]]).unwrap();
        let parts = p(&sp, "x + y").semi_invariant_split(&a, 0).unwrap();
        assert_eq!(parts, vec![p(&sp, "x"), p(&sp, "y")]);
        let parts = p(&sp, "y*x").semi_invariant_split(&a, 0).unwrap();
        assert!(parts[0].is_zero());
        let st = VarSpace::of(&[], &["t", "x"]);
        let a = DiagonalAction::new(AbelianGroup::cyclic(2), vec!["t".into(), "x".into()], vec![vec![1, 0]]).unwrap();
        let parts = p(&st, "(1+t)*(1+x)").semi_invariant_split(&a, 0).unwrap();
        assert_eq!(parts, vec![p(&st, "1+x"), p(&st, "t+t*x")]);
    }

    #[test]
    fn blowup_and_strict_transform() {
        let sp = VarSpace::of(&[("w", 1)], &["x", "z"]);
        let f = p(&sp, "z^2 + (w^3 + x)*x^2");
        let ch = ChartMap::standard(&sp, &["w", "x", "z"], "w").unwrap();
        let g = f.substitute(&ch).unwrap();
        assert_eq!(g, p(&sp, "w^2*(z^2 + w*(w^2 + x)*x^2)"));
        let (s, m) = g.strict_transform("w").unwrap();
        assert_eq!(s, p(&sp, "z^2 + w*(w^2 + x)*x^2"));
        assert_eq!(m, qi(2));
        assert_eq!(f.substitute(&ChartMap::identity(&sp)).unwrap(), f);
        let (s, m) = f.strict_transform("w").unwrap();
        assert_eq!((s, m), (f.clone(), qi(0)));
    }

    #[test]
    fn weighted_chart_pinch() {
        let src = sp_pinch();
        let tgt = VarSpace::of(&[], &["t", "y0", "y1"]);
        let ch = ChartMap::new(
            &src,
            &tgt,
            vec![("w", p(&tgt, "t^2")), ("x0", p(&tgt, "t^3*y0")), ("x1", p(&tgt, "t^2*y1"))],
        )
        .unwrap();
        let f = p(&src, "(x0 - w^(1/2)*x1)*(x0 + w^(1/2)*x1)");
        let g = blowup_substitute(&f, &ch).unwrap();
        assert_eq!(g, p(&tgt, "t^6*(y0^2 - y1^2)"));
        let (s, m) = strict_transform(&g, "t").unwrap();
        assert_eq!(s, p(&tgt, "y0^2 - y1^2"));
        assert_eq!(m, qi(6));
    }

    #[test]
    fn truncation() {
        let sp = VarSpace::of(&[("v", 1)], &["x", "z"]);
        assert_eq!(p(&sp, "1+x+x^2").truncate(&qi(1)), p(&sp, "1+x"));
        assert_eq!(p(&sp, "1+x+x^2").truncate(&qi(50)), p(&sp, "1+x+x^2"));
        assert_eq!(p(&sp, "z^2+v^6*x^2").truncate(&qi(3)), p(&sp, "z^2"));
        let sw = sp_pinch();
        assert_eq!(p(&sw, "w^(1/2) + x0").truncate(&q(1, 2)), p(&sw, "w^(1/2)"));
    }

    #[test]
    fn exact_division() {
        let sp = VarSpace::of(&[], &["x", "y"]);
        let a = p(&sp, "x^2 - y^2");
        assert_eq!(a.div_exact(&p(&sp, "x - y")).unwrap(), p(&sp, "x + y"));
        assert!(a.div_exact(&p(&sp, "x + 2*y")).is_err());
        assert!(a.div_exact(&FracPoly::zero(&sp)).is_err());
    }

    #[test]
    fn display_and_json_round_trip() {
        let sp = sp_pinch();
        let f = p(&sp, "x0^2 - ε4*w^(1/2)*x1 + (1 + ε3)*x1 + 1/2");
        let text = f.to_string();
        assert_eq!(FracPoly::parse(&sp, &text).unwrap(), f);
        let js = serde_json::to_string(&f).unwrap();
        let back: FracPoly = serde_json::from_str(&js).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn merging_spaces() {
        let a = p(&VarSpace::of(&[], &["x"]), "x");
        let b = p(&VarSpace::of(&[("w", 2)], &[]), "w^(1/2)");
        let s = &a + &b;
        assert_eq!(s.len(), 2);
        assert_eq!(s.space().n_div(), 1);
    }
}
