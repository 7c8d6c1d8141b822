//! Desingularization invariants of (products of) cyclic circulant
//! singularities: closed forms for `inv` and `ATWinv`, the blow-up weights,
//! and a coefficient-ideal recursion on monomial marked ideals.

use std::fmt;

use num::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::cyclotomic::{fmt_q, lcm_u64, parse_q, qi, Q};
use crate::error::{domain, Error, Result};

/// `inv = (b_1, …, b_q)` with the maximal-contact parameter of each entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvSequence {
    pub entries: Vec<Q>,
    pub contacts: Vec<String>,
}

/// `ATWinv = (a_1, …, a_q)`, `a_j = b_1⋯b_j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtwSequence {
    pub entries: Vec<Q>,
    pub contacts: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SeqJson {
    entries: Vec<String>,
    contacts: Vec<String>,
}

macro_rules! seq_impls {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                SeqJson {
                    entries: self.entries.iter().map(fmt_q).collect(),
                    contacts: self.contacts.clone(),
                }
                .serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let j = SeqJson::deserialize(d)?;
                let entries = j
                    .entries
                    .iter()
                    .map(|s| parse_q(s))
                    .collect::<Result<Vec<_>>>()
                    .map_err(serde::de::Error::custom)?;
                Ok(Self {
                    entries,
                    contacts: j.contacts,
                })
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let e: Vec<String> = self.entries.iter().map(fmt_q).collect();
                write!(f, "({})", e.join(", "))
            }
        }
    };
}
seq_impls!(InvSequence);
seq_impls!(AtwSequence);

fn cpk_contacts(k: u64) -> Vec<String> {
    let mut c = vec!["x0".to_string(), "w".to_string()];
    c.extend((1..k).map(|j| format!("x{j}")));
    c
}

/// Name of `x_{ij}`; a single factor uses the plain `x_j`.
pub fn param_name(s: usize, i: usize, j: u64) -> String {
    if s == 1 {
        format!("x{j}")
    } else {
        format!("x{i}{j}")
    }
}

/// `inv` of `cp(k)`: `(k, (k+1)/k, 1, k/(k−1), …, 3/2)`.
pub fn inv_cpk(k: u64) -> Result<InvSequence> {
    if k < 2 {
        return domain("cp(k) needs k ≥ 2");
    }
    let k = k as i64;
    let mut e = vec![qi(k), Q::new((k + 1).into(), k.into()), qi(1)];
    for m in (2..k).rev() {
        e.push(Q::new((m + 1).into(), m.into()));
    }
    Ok(InvSequence {
        entries: e,
        contacts: cpk_contacts(k as u64),
    })
}

/// `ATWinv` of `cp(k)`: `(k, k+1, k+1, k(k+1)/(k−1), …, k(k+1)/2)`.
pub fn atwinv_cpk(k: u64) -> Result<AtwSequence> {
    if k < 2 {
        return domain("cp(k) needs k ≥ 2");
    }
    let k = k as i64;
    let mut e = vec![qi(k), qi(k + 1), qi(k + 1)];
    for m in (2..k).rev() {
        e.push(Q::new((k * (k + 1)).into(), m.into()));
    }
    Ok(AtwSequence {
        entries: e,
        contacts: cpk_contacts(k as u64),
    })
}

/// `ATWinv` of `cp(k_1) × ⋯ × cp(k_s)`.
pub fn atwinv_product(ks: &[u64]) -> Result<AtwSequence> {
    if ks.is_empty() {
        return domain("empty factor list");
    }
    if ks.iter().any(|&x| x < 2) {
        return domain("every factor needs k_i ≥ 2");
    }
    let s = ks.len();
    let k: i64 = ks.iter().sum::<u64>() as i64;
    let k1 = *ks.iter().max().unwrap() as i64;
    let mut entries = vec![qi(k); s];
    let mut contacts: Vec<String> = (1..=s).map(|i| param_name(s, i, 0)).collect();
    entries.push(Q::new((k * (k1 + 1)).into(), k1.into()));
    contacts.push("w".into());
    let mut rest: Vec<(Q, usize, u64)> = Vec::new();
    for (idx, &ki) in ks.iter().enumerate() {
        let ki = ki as i64;
        for j in 1..ki {
            let v = Q::new((k * ki * (k1 + 1)).into(), (k1 * (ki - j) + ki).into());
            rest.push((v, idx + 1, j as u64));
        }
    }
    rest.sort();
    for (v, i, j) in rest {
        entries.push(v);
        contacts.push(param_name(s, i, j));
    }
    Ok(AtwSequence { entries, contacts })
}

pub fn inv_to_atw(inv: &InvSequence) -> Result<AtwSequence> {
    let mut acc = qi(1);
    let mut out = Vec::new();
    for b in &inv.entries {
        if !b.is_positive() {
            return domain("inv entries must be positive");
        }
        acc = &acc * b;
        out.push(acc.clone());
    }
    Ok(AtwSequence {
        entries: out,
        contacts: inv.contacts.clone(),
    })
}

pub fn atw_to_inv(atw: &AtwSequence) -> Result<InvSequence> {
    let mut prev = qi(1);
    let mut out = Vec::new();
    for a in &atw.entries {
        if !a.is_positive() {
            return domain("ATW entries must be positive");
        }
        out.push(a / &prev);
        prev = a.clone();
    }
    Ok(InvSequence {
        entries: out,
        contacts: atw.contacts.clone(),
    })
}

/// Blow-up weights for the parameters `(w, x_{ij})`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightVector {
    pub params: Vec<String>,
    /// Reciprocals of the ATW entries.
    pub rational: Vec<Q>,
    pub integer: Vec<u64>,
    /// `integer = rational × multiplier`.
    pub multiplier: Q,
    /// `ℓ = lcm{k_i}`.
    pub ell: u64,
}

impl Serialize for WeightVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct J<'a> {
            params: &'a [String],
            rational: Vec<String>,
            integer: &'a [u64],
            multiplier: String,
            ell: u64,
        }
        J {
            params: &self.params,
            rational: self.rational.iter().map(fmt_q).collect(),
            integer: &self.integer,
            multiplier: fmt_q(&self.multiplier),
            ell: self.ell,
        }
        .serialize(s)
    }
}

impl WeightVector {
    /// Weight of a named parameter.
    pub fn integer_of(&self, name: &str) -> Option<u64> {
        self.params.iter().position(|p| p == name).map(|i| self.integer[i])
    }

    pub fn rational_of(&self, name: &str) -> Option<Q> {
        self.params.iter().position(|p| p == name).map(|i| self.rational[i].clone())
    }
}

/// Weights for `cp(k_1) × ⋯ × cp(k_s)`. Parts equal to 1 (a smooth factor
/// `x_{i0}`) are accepted.
pub fn weights(ks: &[u64]) -> Result<WeightVector> {
    if ks.is_empty() || ks.contains(&0) {
        return domain("factor orders must be positive");
    }
    let s = ks.len();
    let k: i64 = ks.iter().sum::<u64>() as i64;
    let k1 = *ks.iter().max().unwrap() as i64;
    let ell = ks.iter().fold(1, |a, &b| lcm_u64(a, b)) as i64;
    let mut params = vec!["w".to_string()];
    let mut rational = vec![Q::new(k1.into(), (k * (k1 + 1)).into())];
    let mut integer = vec![ell as u64];
    for (idx, &ki) in ks.iter().enumerate() {
        let ki = ki as i64;
        for j in 0..ki {
            params.push(param_name(s, idx + 1, j as u64));
            rational.push(Q::new((k1 * (ki - j) + ki).into(), (k * ki * (k1 + 1)).into()));
            integer.push((ell - (j * ell / ki - ell / k1)) as u64);
        }
    }
    let multiplier = Q::new((k * (k1 + 1) * ell).into(), k1.into());
    debug_assert!(rational
        .iter()
        .zip(&integer)
        .all(|(r, &n)| r * &multiplier == qi(n as i64)));
    Ok(WeightVector {
        params,
        rational,
        integer,
        multiplier,
        ell: ell as u64,
    })
}

/// A sum of marked monomial ideals `Σ ((m_1, …, m_t), d)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonomialMarkedIdeal {
    pub vars: Vec<String>,
    /// Index of the divisorial variable used as fallback contact.
    pub distinguished: usize,
    /// Each component: monomial exponent vectors and their common marking.
    pub components: Vec<(Vec<Vec<Q>>, Q)>,
}

impl MonomialMarkedIdeal {
    /// `((x_0^k, w x_1^k, …, w^{k−1} x_{k−1}^k), k)`.
    pub fn cpk(k: u64) -> Self {
        Self::product(&[k])
    }

    /// `Σ_i ((w^j x_{ij}^{k_i})_j, k_i)`.
    pub fn product(ks: &[u64]) -> Self {
        let s = ks.len();
        let mut vars = vec!["w".to_string()];
        for (idx, &ki) in ks.iter().enumerate() {
            for j in 0..ki {
                vars.push(param_name(s, idx + 1, j));
            }
        }
        let n = vars.len();
        let mut comps = Vec::new();
        let mut col = 1;
        for &ki in ks {
            let mut monos = Vec::new();
            for j in 0..ki {
                let mut e = vec![qi(0); n];
                e[0] = qi(j as i64);
                e[col] = qi(ki as i64);
                col += 1;
                monos.push(e);
            }
            comps.push((monos, qi(ki as i64)));
        }
        MonomialMarkedIdeal {
            vars,
            distinguished: 0,
            components: comps,
        }
    }
}

/// Coefficient-ideal recursion on normalised generators `m^{1/d}`.
pub fn inv_recursion(ideal: &MonomialMarkedIdeal) -> Result<InvSequence> {
    let n = ideal.vars.len();
    if ideal.distinguished >= n {
        return domain("distinguished variable out of range");
    }
    let mut gens: Vec<Vec<Q>> = Vec::new();
    let mut d0 = qi(0);
    for (monos, d) in &ideal.components {
        if !d.is_positive() {
            return domain("markings must be positive");
        }
        d0 += d;
        for m in monos {
            if m.len() != n || m.iter().any(|e| e.is_negative()) {
                return domain("monomial exponents must be nonnegative and match the variables");
            }
            if m.iter().all(|e| e.is_zero()) {
                return domain("unit generator");
            }
            gens.push(m.iter().map(|e| e / d).collect());
        }
    }
    if gens.is_empty() {
        return domain("empty marked ideal");
    }
    let deg = |g: &Vec<Q>| g.iter().fold(qi(0), |a, e| a + e);
    let mut entries = Vec::new();
    let mut contacts = Vec::new();
    let mut first = true;
    while !gens.is_empty() {
        let b = gens.iter().map(deg).min().unwrap();
        let minimal: Vec<&Vec<Q>> = gens.iter().filter(|g| deg(g) == b).collect();
        // Contact: smallest-index variable of a minimal pure power, else the divisor.
        let pure: Option<usize> = minimal
            .iter()
            .filter_map(|g| {
                let nz: Vec<usize> = (0..n).filter(|&v| !g[v].is_zero()).collect();
                (nz.len() == 1).then(|| nz[0])
            })
            .min();
        let c = match pure {
            Some(v) => v,
            None => {
                let w = ideal.distinguished;
                if minimal.iter().any(|g| g[w].is_zero()) {
                    return Err(Error::Domain(
                        "marked ideal outside the supported monomial shapes".into(),
                    ));
                }
                w
            }
        };
        entries.push(if first { &d0 * &b } else { b.clone() });
        first = false;
        contacts.push(ideal.vars[c].clone());
        let mut next = Vec::new();
        for g in &gens {
            let a = &g[c];
            if a >= &b {
                continue;
            }
            let scale = &b - a;
            let mut h: Vec<Q> = g.iter().map(|e| e / &scale).collect();
            h[c] = qi(0);
            if h.iter().all(|e| e.is_zero()) {
                return domain("coefficient ideal became the unit ideal");
            }
            next.push(h);
        }
        gens = next;
    }
    Ok(InvSequence { entries, contacts })
}

/// Parse a comma-separated list of positive integers such as `"3,2"`.
pub fn parse_parts(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse::<u64>()
                .map_err(|_| Error::Parse(format!("bad factor order `{x}`")))
        })
        .collect()
}

/// Render a sequence of rationals as `(a, b, …)`.
pub fn fmt_seq(v: &[Q]) -> String {
    let e: Vec<String> = v.iter().map(fmt_q).collect();
    format!("({})", e.join(", "))
}

/// Every weight is a positive integer and the rational vector is its scaling.
pub fn weights_consistent(w: &WeightVector) -> bool {
    w.rational
        .iter()
        .zip(&w.integer)
        .all(|(r, &n)| n > 0 && r * &w.multiplier == qi(n as i64))
        && w.multiplier.is_positive()
}

/// The ATW entry for each weight parameter, `1 / rational weight`.
pub fn reciprocal_entries(w: &WeightVector) -> Vec<Q> {
    w.rational.iter().map(|r| Q::one() / r).collect()
}

/// `q` as `u64` when it is a nonnegative integer.
pub fn as_u64(q: &Q) -> Option<u64> {
    q.is_integer().then(|| q.to_integer().to_u64()).flatten()
}
