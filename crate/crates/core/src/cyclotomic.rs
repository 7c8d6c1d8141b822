//! Exact arithmetic in cyclotomic fields `Q(ε_k)`.
//!
//! An element of order `k` is stored as its remainder modulo the `k`-th
//! cyclotomic polynomial, so two elements of the same order are equal iff
//! their coefficient vectors agree. Mixed orders are promoted to the lcm.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, OnceLock, RwLock};

use num::{BigInt, BigRational, Integer, One, Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exact rational numbers.
pub type Q = BigRational;

/// Build a rational from two machine integers.
pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Build an integral rational.
pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Parse `"p/q"` or `"p"` into a rational.
pub fn parse_q(s: &str) -> Result<Q> {
    let s = s.trim();
    let bad = || Error::Parse(format!("bad rational `{s}`"));
    match s.split_once('/') {
        Some((a, b)) => {
            let n: BigInt = a.trim().parse().map_err(|_| bad())?;
            let d: BigInt = b.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(Q::new(n, d))
        }
        None => Ok(Q::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

/// Render a rational as `"p/q"` (or `"p"` when integral).
pub fn fmt_q(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

fn gcd_u64(a: u64, b: u64) -> u64 {
    a.gcd(&b)
}

pub fn lcm_u64(a: u64, b: u64) -> u64 {
    a.lcm(&b)
}

/// Euler's totient, which is the degree of the `k`-th cyclotomic polynomial.
pub fn totient(k: u64) -> usize {
    (1..=k).filter(|&i| gcd_u64(i, k) == 1).count()
}

struct CycloPoly {
    /// Monic, low degree first.
    coeffs: Vec<Q>,
}

fn cache() -> &'static RwLock<HashMap<u64, Arc<CycloPoly>>> {
    static CACHE: OnceLock<RwLock<HashMap<u64, Arc<CycloPoly>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Integer coefficients of `Φ_k`, low degree first.
pub fn cyclotomic_polynomial(k: u64) -> Vec<BigInt> {
    phi_poly(k).coeffs.iter().map(|c| c.to_integer()).collect()
}

fn phi_poly(k: u64) -> Arc<CycloPoly> {
    assert!(k >= 1, "cyclotomic order must be positive");
    if let Some(p) = cache().read().unwrap().get(&k) {
        return p.clone();
    }
    // x^k - 1 divided by every Φ_d with d a proper divisor of k.
    let mut num: Vec<BigInt> = vec![BigInt::zero(); k as usize + 1];
    num[0] = BigInt::from(-1);
    num[k as usize] = BigInt::one();
    for d in 1..k {
        if k % d == 0 {
            let den = cyclotomic_polynomial(d);
            num = div_monic_int(&num, &den);
        }
    }
    let p = Arc::new(CycloPoly {
        coeffs: num.into_iter().map(Q::from_integer).collect(),
    });
    cache().write().unwrap().insert(k, p.clone());
    p
}

fn div_monic_int(num: &[BigInt], den: &[BigInt]) -> Vec<BigInt> {
    let mut rem = num.to_vec();
    let dn = den.len() - 1;
    let qn = rem.len() - 1 - dn;
    let mut quo = vec![BigInt::zero(); qn + 1];
    for i in (0..=qn).rev() {
        let c = rem[i + dn].clone();
        if c.is_zero() {
            continue;
        }
        for (j, dj) in den.iter().enumerate() {
            rem[i + j] -= &c * dj;
        }
        quo[i] = c;
    }
    debug_assert!(rem.iter().all(|c| c.is_zero()));
    quo
}

/// Reduce an arbitrary coefficient vector modulo `Φ_k`.
fn reduce(k: u64, mut poly: Vec<Q>) -> Vec<Q> {
    let phi = phi_poly(k);
    let n = phi.coeffs.len() - 1;
    if poly.len() > n {
        for i in (n..poly.len()).rev() {
            if poly[i].is_zero() {
                continue;
            }
            let c = std::mem::replace(&mut poly[i], Q::zero());
            for j in 0..n {
                if !phi.coeffs[j].is_zero() {
                    let t = &c * &phi.coeffs[j];
                    poly[i - n + j] -= t;
                }
            }
        }
        poly.truncate(n);
    }
    poly.resize(n, Q::zero());
    poly
}

/// An exact element of `Q(ε_k)`.
#[derive(Clone, Debug)]
pub struct Cyclo {
    order: u64,
    coeffs: Vec<Q>,
}

impl Cyclo {
    /// Element `Σ c_i ε_k^i`; the vector may have any length.
    pub fn from_coeffs(order: u64, coeffs: Vec<Q>) -> Result<Self> {
        if order == 0 {
            return Err(Error::Domain("cyclotomic order must be positive".into()));
        }
        // Fold exponents modulo k first so long inputs stay cheap.
        let mut folded = vec![Q::zero(); order as usize];
        for (i, c) in coeffs.into_iter().enumerate() {
            folded[i % order as usize] += c;
        }
        Ok(Cyclo {
            order,
            coeffs: reduce(order, folded),
        })
    }

    pub fn rational(c: Q) -> Self {
        Cyclo {
            order: 1,
            coeffs: vec![c],
        }
    }

    pub fn int(n: i64) -> Self {
        Self::rational(qi(n))
    }

    pub fn zero() -> Self {
        Self::int(0)
    }

    pub fn one() -> Self {
        Self::int(1)
    }

    /// `ε_k^e`, with `e` taken modulo `k`.
    pub fn root_of_unity(k: u64, e: i64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("root of unity of order 0".into()));
        }
        let e = e.rem_euclid(k as i64) as usize;
        let mut v = vec![Q::zero(); k as usize];
        v[e] = Q::one();
        Self::from_coeffs(k, v)
    }

    /// Shorthand for [`Cyclo::root_of_unity`] with a positive order.
    pub fn eps(k: u64, e: i64) -> Self {
        Self::root_of_unity(k, e).expect("positive order")
    }

    pub fn order(&self) -> u64 {
        self.order
    }

    /// Canonical coefficients (length `φ(k)`).
    pub fn coeffs(&self) -> &[Q] {
        &self.coeffs
    }

    /// Image under `ε_m ↦ ε_k^{k/m}`.
    pub fn embed(&self, k: u64) -> Result<Self> {
        if k == 0 || k % self.order != 0 {
            return Err(Error::Domain(format!(
                "cannot embed order {} into order {}",
                self.order, k
            )));
        }
        if k == self.order {
            return Ok(self.clone());
        }
        let step = (k / self.order) as usize;
        let mut v = vec![Q::zero(); k as usize];
        for (i, c) in self.coeffs.iter().enumerate() {
            v[i * step] = c.clone();
        }
        Self::from_coeffs(k, v)
    }

    fn lift(&self, k: u64) -> Self {
        self.embed(k).expect("order divides lcm")
    }

    fn promote(a: &Self, b: &Self) -> (Self, Self) {
        let k = lcm_u64(a.order, b.order);
        (a.lift(k), b.lift(k))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn is_one(&self) -> bool {
        self.as_rational().map(|r| r.is_one()).unwrap_or(false)
    }

    /// The rational value, if the element lies in `Q`.
    pub fn as_rational(&self) -> Option<Q> {
        if self.coeffs[1..].iter().all(|c| c.is_zero()) {
            Some(self.coeffs[0].clone())
        } else {
            None
        }
    }

    /// Multiply by the rational `c`.
    pub fn scale(&self, c: &Q) -> Self {
        Cyclo {
            order: self.order,
            coeffs: self.coeffs.iter().map(|x| x * c).collect(),
        }
    }

    /// Integer power; negative exponents use the inverse.
    pub fn pow(&self, e: i64) -> Result<Self> {
        let base = if e < 0 { self.inverse()? } else { self.clone() };
        let mut acc = Cyclo::one();
        let mut b = base;
        let mut n = e.unsigned_abs();
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &b;
            }
            b = &b * &b;
            n >>= 1;
        }
        Ok(acc)
    }

    /// Multiplicative inverse via the extended Euclidean algorithm in `Q[x]`.
    pub fn inverse(&self) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::DivisionByZero);
        }
        let phi = phi_poly(self.order);
        let (g, s) = qpoly::ext_gcd_first(&self.coeffs, &phi.coeffs);
        // g is a nonzero constant because Φ_k is irreducible.
        debug_assert_eq!(qpoly::degree(&g), Some(0));
        let inv_g = g[0].recip();
        let s: Vec<Q> = s.into_iter().map(|c| c * &inv_g).collect();
        Self::from_coeffs(self.order, s)
    }

    /// The same element expressed in the smallest field `Q(ε_m)` containing it.
    pub fn minimal_order(&self) -> Self {
        let k = self.order;
        let mut divisors: Vec<u64> = (1..=k).filter(|d| k % d == 0).collect();
        divisors.sort();
        for m in divisors {
            if m == k {
                break;
            }
            if let Some(c) = self.descend(m) {
                return c;
            }
        }
        self.clone()
    }

    /// Try to write `self` as an element of `Q(ε_m)` for `m | k`.
    fn descend(&self, m: u64) -> Option<Self> {
        let k = self.order;
        let n = totient(m);
        // Columns: images of the basis ε_m^i, i < φ(m).
        let cols: Vec<Vec<Q>> = (0..n)
            .map(|i| Cyclo::eps(m, i as i64).lift(k).coeffs)
            .collect();
        let sol = qpoly::solve_columns(&cols, &self.coeffs)?;
        Some(Cyclo {
            order: m,
            coeffs: reduce(m, sol),
        })
    }

    /// `Some((m, e, sign))` when `self = sign·ε_m^e` with `m` minimal.
    pub fn as_signed_root(&self) -> Option<(u64, u64, i32)> {
        let k = self.order;
        for m in (1..=2 * k).filter(|m| (2 * k) % m == 0) {
            for e in 0..m {
                if gcd_u64(e, m) != 1 && !(m == 1 && e == 0) {
                    continue;
                }
                let r = Cyclo::eps(m, e as i64);
                if &r == self {
                    return Some((m, e, 1));
                }
                if (-&r) == *self {
                    return Some((m, e, -1));
                }
            }
        }
        None
    }

    /// Symbolic rendering, e.g. `-1/2 + 3/2·ε3`.
    pub fn to_text(&self) -> String {
        if let Some(r) = self.as_rational() {
            return fmt_q(&r);
        }
        if let Some((m, e, s)) = self.as_signed_root() {
            let sign = if s < 0 { "-" } else { "" };
            return format!("{sign}{}", eps_name(m, e));
        }
        let c = self.minimal_order();
        let mut parts: Vec<String> = Vec::new();
        for (i, a) in c.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            let mag = a.abs();
            let neg = a.is_negative();
            let body = if i == 0 {
                fmt_q(&mag)
            } else if mag.is_one() {
                eps_name(c.order, i as u64)
            } else {
                format!("{}·{}", fmt_q(&mag), eps_name(c.order, i as u64))
            };
            if parts.is_empty() {
                parts.push(if neg { format!("-{body}") } else { body });
            } else {
                parts.push(format!("{} {}", if neg { "-" } else { "+" }, body));
            }
        }
        parts.join(" ")
    }

    /// Complex value as `(re, im)` in double precision (display and diagnostics only).
    pub fn to_f64(&self) -> (f64, f64) {
        let k = self.order as f64;
        let mut re = 0.0;
        let mut im = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            let a = rat_to_f64(c);
            let th = 2.0 * std::f64::consts::PI * i as f64 / k;
            re += a * th.cos();
            im += a * th.sin();
        }
        (re, im)
    }
}

fn rat_to_f64(c: &Q) -> f64 {
    use num::ToPrimitive;
    c.to_f64().unwrap_or(f64::NAN)
}

fn eps_name(m: u64, e: u64) -> String {
    if e == 1 {
        format!("ε{m}")
    } else {
        format!("ε{m}^{e}")
    }
}

impl PartialEq for Cyclo {
    fn eq(&self, other: &Self) -> bool {
        if self.order == other.order {
            return self.coeffs == other.coeffs;
        }
        let (a, b) = Cyclo::promote(self, other);
        a.coeffs == b.coeffs
    }
}

impl Eq for Cyclo {}

impl fmt::Display for Cyclo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl From<Q> for Cyclo {
    fn from(c: Q) -> Self {
        Cyclo::rational(c)
    }
}

impl From<i64> for Cyclo {
    fn from(n: i64) -> Self {
        Cyclo::int(n)
    }
}

impl<'a> Add<&'a Cyclo> for &'a Cyclo {
    type Output = Cyclo;
    fn add(self, rhs: &Cyclo) -> Cyclo {
        if self.order == rhs.order {
            return Cyclo {
                order: self.order,
                coeffs: self
                    .coeffs
                    .iter()
                    .zip(&rhs.coeffs)
                    .map(|(a, b)| a + b)
                    .collect(),
            };
        }
        let (a, b) = Cyclo::promote(self, rhs);
        &a + &b
    }
}

impl<'a> Sub<&'a Cyclo> for &'a Cyclo {
    type Output = Cyclo;
    fn sub(self, rhs: &Cyclo) -> Cyclo {
        self + &(-rhs)
    }
}

impl Neg for &Cyclo {
    type Output = Cyclo;
    fn neg(self) -> Cyclo {
        Cyclo {
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }
}

impl Neg for Cyclo {
    type Output = Cyclo;
    fn neg(self) -> Cyclo {
        -&self
    }
}

impl<'a> Mul<&'a Cyclo> for &'a Cyclo {
    type Output = Cyclo;
    fn mul(self, rhs: &Cyclo) -> Cyclo {
        if self.order != rhs.order {
            let (a, b) = Cyclo::promote(self, rhs);
            return &a * &b;
        }
        if self.order == 1 {
            return Cyclo::rational(&self.coeffs[0] * &rhs.coeffs[0]);
        }
        let n = self.coeffs.len();
        let mut prod = vec![Q::zero(); 2 * n - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                if !b.is_zero() {
                    prod[i + j] += a * b;
                }
            }
        }
        Cyclo {
            order: self.order,
            coeffs: reduce(self.order, prod),
        }
    }
}

impl<'a> Div<&'a Cyclo> for &'a Cyclo {
    type Output = Result<Cyclo>;
    fn div(self, rhs: &Cyclo) -> Result<Cyclo> {
        Ok(self * &rhs.inverse()?)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr<Cyclo> for Cyclo {
            type Output = Cyclo;
            fn $m(self, rhs: Cyclo) -> Cyclo {
                (&self).$m(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

#[derive(Serialize, Deserialize)]
struct CycloJson {
    order: u64,
    coeffs: Vec<String>,
}

impl Serialize for Cyclo {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CycloJson {
            order: self.order,
            coeffs: self.coeffs.iter().map(fmt_q).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Cyclo {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = CycloJson::deserialize(d)?;
        let coeffs = j
            .coeffs
            .iter()
            .map(|s| parse_q(s))
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        Cyclo::from_coeffs(j.order, coeffs).map_err(serde::de::Error::custom)
    }
}

/// Dense polynomials over `Q` (low degree first), used for inversion and descent.
mod qpoly {
    use super::Q;
    use num::{One, Zero};

    pub fn degree(p: &[Q]) -> Option<usize> {
        p.iter().rposition(|c| !c.is_zero())
    }

    fn trim(mut p: Vec<Q>) -> Vec<Q> {
        while p.len() > 1 && p.last().map(|c| c.is_zero()).unwrap_or(false) {
            p.pop();
        }
        p
    }

    fn sub_mul(a: &[Q], b: &[Q], c: &[Q]) -> Vec<Q> {
        // a - b*c
        let mut out = a.to_vec();
        let need = b.len() + c.len() - 1;
        if out.len() < need {
            out.resize(need, Q::zero());
        }
        for (i, x) in b.iter().enumerate() {
            if x.is_zero() {
                continue;
            }
            for (j, y) in c.iter().enumerate() {
                out[i + j] -= x * y;
            }
        }
        trim(out)
    }

    fn divrem(a: &[Q], b: &[Q]) -> (Vec<Q>, Vec<Q>) {
        let db = degree(b).expect("nonzero divisor");
        let mut r = a.to_vec();
        let da = match degree(&r) {
            Some(d) if d >= db => d,
            _ => return (vec![Q::zero()], trim(r)),
        };
        let mut quo = vec![Q::zero(); da - db + 1];
        let lead = b[db].clone();
        for i in (0..=da - db).rev() {
            let c = &r[i + db] / &lead;
            if c.is_zero() {
                continue;
            }
            for j in 0..=db {
                let t = &c * &b[j];
                r[i + j] -= t;
            }
            quo[i] = c;
        }
        (trim(quo), trim(r))
    }

    /// Returns `(g, s)` with `s·a ≡ g (mod b)`.
    pub fn ext_gcd_first(a: &[Q], b: &[Q]) -> (Vec<Q>, Vec<Q>) {
        let mut r0 = trim(b.to_vec());
        let mut r1 = trim(a.to_vec());
        let mut s0 = vec![Q::zero()];
        let mut s1 = vec![Q::one()];
        while degree(&r1).is_some() {
            let (quo, rem) = divrem(&r0, &r1);
            let s2 = sub_mul(&s0, &quo, &s1);
            r0 = r1;
            r1 = rem;
            s0 = s1;
            s1 = s2;
        }
        (r0, s0)
    }

    /// Solve `Σ x_i · cols[i] = rhs` exactly, if a solution exists.
    pub fn solve_columns(cols: &[Vec<Q>], rhs: &[Q]) -> Option<Vec<Q>> {
        let rows = rhs.len();
        let n = cols.len();
        let mut m: Vec<Vec<Q>> = (0..rows)
            .map(|r| {
                let mut row: Vec<Q> = cols.iter().map(|c| c[r].clone()).collect();
                row.push(rhs[r].clone());
                row
            })
            .collect();
        let mut pivots = Vec::new();
        let mut pr = 0;
        for c in 0..n {
            let Some(p) = (pr..rows).find(|&r| !m[r][c].is_zero()) else {
                continue;
            };
            m.swap(pr, p);
            let inv = m[pr][c].recip();
            for x in m[pr].iter_mut() {
                *x = &*x * &inv;
            }
            for r in 0..rows {
                if r != pr && !m[r][c].is_zero() {
                    let f = m[r][c].clone();
                    for cc in 0..=n {
                        let t = &f * &m[pr][cc];
                        m[r][cc] -= t;
                    }
                }
            }
            pivots.push(c);
            pr += 1;
        }
        if m[pr..].iter().any(|row| !row[n].is_zero()) {
            return None;
        }
        let mut x = vec![Q::zero(); n];
        for (r, &c) in pivots.iter().enumerate() {
            x[c] = m[r][n].clone();
        }
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cyclotomic_polynomials() {
        let show = |k| {
            cyclotomic_polynomial(k)
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        assert_eq!(show(1), "-1,1");
        assert_eq!(show(2), "1,1");
        assert_eq!(show(3), "1,1,1");
        assert_eq!(show(4), "1,0,1");
        assert_eq!(show(6), "1,-1,1");
        assert_eq!(show(12), "1,0,-1,0,1");
    }

    #[test]
    fn roots_of_unity_examples() {
        assert_eq!(Cyclo::eps(2, 1), Cyclo::int(-1));
        assert_eq!(Cyclo::eps(4, 2), Cyclo::int(-1));
        assert_eq!(&Cyclo::eps(3, 1) + &Cyclo::eps(3, 2), Cyclo::int(-1));
        assert!(Cyclo::root_of_unity(0, 1).is_err());
    }

    #[test]
    fn embedding_examples() {
        assert_eq!(Cyclo::eps(2, 1).embed(4).unwrap(), Cyclo::eps(4, 2));
        assert_eq!(Cyclo::int(5).embed(7).unwrap(), Cyclo::int(5));
        let s = &Cyclo::eps(3, 1) + &Cyclo::eps(3, 2);
        assert_eq!(s.embed(6).unwrap(), Cyclo::int(-1));
        assert!(Cyclo::eps(3, 1).embed(4).is_err());
    }

    #[test]
    fn field_examples() {
        let i = Cyclo::eps(4, 1);
        let a = &Cyclo::one() + &i;
        let b = &Cyclo::one() - &i;
        assert_eq!(&a * &b, Cyclo::int(2));
        let c = &Cyclo::one() + &Cyclo::eps(3, 1);
        assert!((&c * &c.inverse().unwrap()).is_one());
        assert!((&c + &(-&c)).is_zero());
        assert!(Cyclo::zero().inverse().is_err());
    }

    #[test]
    fn minimal_order_descends() {
        let x = Cyclo::eps(2, 1).embed(12).unwrap();
        assert_eq!(x.minimal_order().order(), 1);
        let y = Cyclo::eps(4, 1).embed(8).unwrap();
        assert_eq!(y.minimal_order().order(), 4);
        assert_eq!(y.to_text(), "ε4");
    }

    #[test]
    fn text_rendering() {
        assert_eq!(Cyclo::int(-3).to_text(), "-3");
        assert_eq!((-Cyclo::eps(8, 3)).to_text(), "-ε8^3");
        let z = &Cyclo::int(2) + &Cyclo::eps(5, 2);
        assert_eq!(z.to_text(), "2 + ε5^2");
    }

    #[test]
    fn json_round_trip() {
        let z = &Cyclo::rational(q(1, 2)) + &Cyclo::eps(5, 3);
        let s = serde_json::to_string(&z).unwrap();
        let back: Cyclo = serde_json::from_str(&s).unwrap();
        assert_eq!(back, z);
    }
}
