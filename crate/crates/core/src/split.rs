//! Newton–Puiseux style search for a splitting `f(v^p, u, x, z) ≡ ∏ (z + b_i)`
//! modulo a degree bound in the non-`z` variables.
//!
//! Roots are built one homogeneous degree at a time from the Newton polygon of
//! `f` in `z`: each edge of integral slope `s` gives an initial equation whose
//! homogeneous solutions of degree `s` are tried, after which `z ↦ z + ρ` and
//! the search continues on the edges of larger slope.

use std::sync::Arc;

use num::{BigInt, Signed, ToPrimitive};
use num::traits::Pow;

use crate::cyclotomic::{qi, Cyclo, Q};
use crate::error::{Error, Result};
use crate::polyring::{FracPoly, VarSpace};

/// Environment variable overriding the default degree bound.
pub const DEGREE_ENV: &str = "CIRCFORGE_DEGREE_BOUND";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitOptions {
    /// Roots are correct modulo terms of degree `> degree_bound`.
    pub degree_bound: u32,
    /// Maximal number of branch points (initial forms with several distinct roots).
    pub branch_cap: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        let degree_bound = std::env::var(DEGREE_ENV)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(12);
        SplitOptions {
            degree_bound,
            branch_cap: 64,
        }
    }
}

impl SplitOptions {
    pub fn with_degree(d: u32) -> Self {
        SplitOptions {
            degree_bound: d,
            ..Self::default()
        }
    }
}

/// Outcome of a successful split.
#[derive(Clone, Debug)]
pub struct Split {
    /// `f` after `w_i ↦ v_i^{p_i}`.
    pub substituted: FracPoly,
    /// `b_1, …, b_k` with `substituted ≡ ∏ (z + b_i)`.
    pub b: Vec<FracPoly>,
    pub degree_bound: u32,
}

pub(crate) fn substitute_all(f: &FracPoly, p: &[u64]) -> Result<FracPoly> {
    if p.len() != f.space().n_div() {
        return Err(Error::Domain(format!(
            "{} powers given for {} divisorial variables",
            p.len(),
            f.space().n_div()
        )));
    }
    let mut g = f.clone();
    for (i, &pi) in p.iter().enumerate() {
        g = g.substitute_power(i, pi)?;
    }
    Ok(g)
}

/// Split `f` (monic in `z`) after `w_i ↦ v_i^{p_i}`.
pub fn split_newton(f: &FracPoly, z: &str, p: &[u64], opts: &SplitOptions) -> Result<Split> {
    let g = substitute_all(f, p)?;
    let zi = g.space().free_index(z)?;
    let cs = g.coefficients_in(z)?;
    let k = cs.len() - 1;
    if k == 0 {
        return Err(Error::Domain("polynomial has degree 0 in z".into()));
    }
    if !cs[k].as_constant().map(|c| c.is_one()).unwrap_or(false) {
        return Err(Error::Domain("polynomial is not monic in z".into()));
    }
    let d = opts.degree_bound as i64;
    let work = d * (k as i64) + d;
    let mut eng = Engine {
        space: g.space().clone(),
        z: z.to_string(),
        zi,
        work: qi(work),
        branches: 0,
        cap: opts.branch_cap,
    };
    let g_t = g.truncate_excluding(&[zi], &qi(work));
    let roots = eng.roots(&g_t, None)?;
    debug_assert_eq!(roots.len(), k);
    let dq = qi(d);
    let b: Vec<FracPoly> = roots.iter().map(|r| (-r).truncate(&dq)).collect();
    if !check_product(&g, z, &b, opts.degree_bound)? {
        return Err(Error::NoSplit {
            degree: d,
            reason: "series roots lost precision before the degree bound".into(),
        });
    }
    Ok(Split {
        substituted: g,
        b,
        degree_bound: opts.degree_bound,
    })
}

/// True iff `f(v^p, …) − ∏ (z + b_i)` has only terms of degree `> d` in the
/// non-`z` variables.
pub fn verify_split(f: &FracPoly, z: &str, p: &[u64], b: &[FracPoly], d: u32) -> Result<bool> {
    let g = substitute_all(f, p)?;
    if g.degree_in(z)? != qi(b.len() as i64) {
        return Ok(false);
    }
    check_product(&g, z, b, d)
}

fn check_product(g: &FracPoly, z: &str, b: &[FracPoly], d: u32) -> Result<bool> {
    let zi = g.space().free_index(z)?;
    let dq = qi(d as i64);
    let zv = FracPoly::var(g.space(), z)?;
    let mut prod = FracPoly::one(g.space());
    for bi in b {
        let bi = bi.embed(g.space())?;
        prod = (&prod * &(&zv + &bi)).truncate_excluding(&[zi], &dq);
    }
    Ok((g - &prod).truncate_excluding(&[zi], &dq).is_zero())
}

struct Engine {
    space: Arc<VarSpace>,
    z: String,
    zi: usize,
    work: Q,
    branches: usize,
    cap: usize,
}

fn no_split(degree: &Q, reason: impl Into<String>) -> Error {
    Error::NoSplit {
        degree: degree.ceil().to_integer().to_i64().unwrap_or(i64::MAX),
        reason: reason.into(),
    }
}

impl Engine {
    fn zero(&self) -> FracPoly {
        FracPoly::zero(&self.space)
    }

    /// Roots of `g` of order strictly greater than `above` (all roots if None).
    fn roots(&mut self, g: &FracPoly, above: Option<&Q>) -> Result<Vec<FracPoly>> {
        let cs = g.coefficients_in(&self.z)?;
        let k = cs.len() - 1;
        let ords: Vec<Option<Q>> = cs.iter().map(|c| c.order()).collect();
        let i0 = ords.iter().position(|o| o.is_some()).expect("monic");
        // Roots of order beyond the working precision are zero.
        let mut out = vec![self.zero(); i0];
        let mut a = i0;
        while a < k {
            let oa = ords[a].clone().unwrap();
            let mut best: Option<(Q, usize)> = None;
            for (b, ob) in ords.iter().enumerate().skip(a + 1) {
                let Some(ob) = ob else { continue };
                let s = (&oa - ob) / qi((b - a) as i64);
                if best.as_ref().map(|(bs, _)| &s >= bs).unwrap_or(true) {
                    best = Some((s, b));
                }
            }
            let (s, b) = best.expect("leading coefficient present");
            if let Some(t) = above {
                if &s <= t {
                    break;
                }
            }
            if s > self.work {
                out.extend((a..b).map(|_| self.zero()));
            } else {
                out.extend(self.edge_roots(&cs, &ords, a, b, &s)?);
            }
            a = b;
        }
        Ok(out)
    }

    fn edge_roots(&mut self, cs: &[FracPoly], ords: &[Option<Q>], a: usize, b: usize, s: &Q) -> Result<Vec<FracPoly>> {
        if !s.is_integer() {
            return Err(no_split(s, format!("Newton polygon edge of non-integral slope {s}")));
        }
        let base = ords[a].clone().unwrap() + qi(a as i64) * s;
        let mut j = vec![self.zero(); b - a + 1];
        for i in a..=b {
            if let Some(o) = &ords[i] {
                if o + qi(i as i64) * s == base {
                    j[i - a] = cs[i].homogeneous_part(o);
                }
            }
        }
        let cands = self.initial_roots(&j, s)?;
        if cands.len() > 1 {
            self.branches += 1;
            if self.branches > self.cap {
                return Err(Error::Ambiguous { cap: self.cap });
            }
        }
        let mut out = Vec::new();
        for (rho, mult) in cands {
            let shifted = self.shift(cs, &rho)?;
            let tail = self.roots(&shifted, Some(s))?;
            if tail.len() != mult {
                return Err(no_split(s, "root multiplicity does not match the Newton polygon"));
            }
            out.extend(tail.into_iter().map(|t| &t + &rho));
        }
        Ok(out)
    }

    /// `g(z + ρ)` truncated to the working precision.
    fn shift(&self, cs: &[FracPoly], rho: &FracPoly) -> Result<FracPoly> {
        let zv = FracPoly::var(&self.space, &self.z)?;
        let lin = &zv + rho;
        let mut acc = self.zero();
        for c in cs.iter().rev() {
            acc = (&(&acc * &lin) + c).truncate_excluding(&[self.zi], &self.work);
        }
        Ok(acc)
    }

    /// Homogeneous roots of degree `s` of `J(z) = Σ j_i z^i`, with multiplicities.
    fn initial_roots(&self, j: &[FracPoly], s: &Q) -> Result<Vec<(FracPoly, usize)>> {
        let l = j.len() - 1;
        let lead = &j[l];
        let nonzero: Vec<usize> = (0..=l).filter(|&i| !j[i].is_zero()).collect();
        if l == 1 {
            let r = (-&j[0]).div_exact(lead).map_err(|_| no_split(s, "linear initial form has no polynomial root"))?;
            return Ok(vec![(r, 1)]);
        }
        if l == 2 {
            // ρ = (−j1 ± √(j1² − 4 j0 j2)) / (2 j2)
            let disc = &(&j[1] * &j[1]) - &(&j[0] * &j[2]).scale(&Cyclo::int(4));
            let two = lead.scale(&Cyclo::int(2));
            if disc.is_zero() {
                let r = (-&j[1]).div_exact(&two).map_err(|_| no_split(s, "double root is not polynomial"))?;
                return Ok(vec![(r, 2)]);
            }
            let sq = sqrt_term(&disc, 2).ok_or_else(|| no_split(s, "discriminant of the initial form is not a square"))?;
            let mut out = Vec::new();
            for sgn in [1i64, -1] {
                let num = &(-&j[1]) + &sq.scale(&Cyclo::int(sgn));
                let r = num.div_exact(&two).map_err(|_| no_split(s, "quadratic root is not polynomial"))?;
                out.push((r, 1));
            }
            return Ok(out);
        }
        if nonzero == vec![0, l] {
            let r = (-&j[0]).div_exact(lead).map_err(|_| no_split(s, "binomial initial form is not solvable"))?;
            let base = sqrt_term(&r, l as u32).ok_or_else(|| no_split(s, format!("initial form needs an {l}-th root")))?;
            return Ok((0..l)
                .map(|t| (base.scale(&Cyclo::eps(l as u64, t as i64)), 1))
                .collect());
        }
        // Repeated root ρ = −j_{L−1} / (L j_L), accepted only if J = j_L (z − ρ)^L.
        let r = (-&j[l - 1])
            .div_exact(&lead.scale(&Cyclo::int(l as i64)))
            .map_err(|_| no_split(s, "initial form has no recognisable roots"))?;
        let zv = FracPoly::var(&self.space, &self.z)?;
        let target = lead * &(&zv - &r).pow(l as u32);
        let jz = FracPoly::from_coefficients(&self.space, &self.z, j)?;
        if jz == target {
            return Ok(vec![(r, l)]);
        }
        Err(no_split(s, "initial form has no recognisable roots"))
    }
}

/// An `n`-th root of a single term `c·M` (one choice), if it exists in the ring.
pub(crate) fn sqrt_term(t: &FracPoly, n: u32) -> Option<FracPoly> {
    if !t.is_monomial() {
        return None;
    }
    let term = &t.terms()[0];
    let mut w = Vec::new();
    for e in &term.w {
        let x = e / qi(n as i64);
        if !x.is_integer() {
            return None;
        }
        w.push(x);
    }
    let mut free = Vec::new();
    for &e in &term.free {
        if e % n != 0 {
            return None;
        }
        free.push(e / n);
    }
    let c = const_root(&term.coeff, n)?;
    FracPoly::monomial(t.space(), &w, &free, c).ok()
}

/// An `n`-th root of `r·ζ` (`r` rational, `ζ` a root of unity) when `|r|` is
/// an exact `n`-th power.
pub fn const_root(c: &Cyclo, n: u32) -> Option<Cyclo> {
    if c.is_zero() {
        return Some(Cyclo::zero());
    }
    let m = c.order() * 2;
    let big = c.pow(m as i64).ok()?.as_rational()?;
    // |r|^{m} = |big|
    let abs_r = rational_root(&big.abs(), m as u32)?;
    let zeta = (c / &Cyclo::rational(abs_r.clone())).ok()?;
    let (ord, e, sgn) = zeta.as_signed_root()?;
    // ζ = ε_{2·ord}^{2e + ord·[sgn<0]}
    let big_ord = 2 * ord;
    let exp = 2 * e + if sgn < 0 { ord } else { 0 };
    let mag = rational_root(&abs_r, n)?;
    Some(&Cyclo::rational(mag) * &Cyclo::eps(big_ord * n as u64, exp as i64))
}

fn rational_root(x: &Q, n: u32) -> Option<Q> {
    if x.is_negative() {
        return None;
    }
    let a = int_root(x.numer(), n)?;
    let b = int_root(x.denom(), n)?;
    Some(Q::new(a, b))
}

fn int_root(x: &BigInt, n: u32) -> Option<BigInt> {
    let r = x.nth_root(n);
    (Pow::pow(&r, n) == *x).then_some(r)
}

/// Origin blow-ups in the `w`-chart followed by a split of the final strict transform.
#[derive(Clone, Debug)]
pub struct ChainReplay {
    /// Input followed by the strict transform after each blow-up.
    pub polys: Vec<FracPoly>,
    /// Exceptional multiplicity removed at each blow-up.
    pub multiplicities: Vec<Q>,
    pub split: Split,
    pub verified: bool,
}

/// Strict transform of `f` in the `w`-chart of the blow-up of the origin.
pub fn origin_w_chart(f: &FracPoly, w: &str) -> Result<(FracPoly, Q)> {
    let sp = f.space().clone();
    let names: Vec<&str> = sp.names().into_iter().collect();
    let chart = crate::polyring::ChartMap::standard(&sp, &names, w)?;
    f.substitute(&chart)?.strict_transform(w)
}

/// `z² + (w³ + x)x²` blown up `blowups` times, then split with `w = v²`.
pub fn example_basic(blowups: usize, opts: &SplitOptions) -> Result<ChainReplay> {
    let sp = VarSpace::of(&[("w", 1)], &["x", "z"]);
    let mut f = FracPoly::parse(&sp, "z^2 + (w^3 + x)*x^2")?;
    let mut polys = vec![f.clone()];
    let mut multiplicities = Vec::new();
    for _ in 0..blowups {
        let (g, m) = origin_w_chart(&f, "w")?;
        f = g;
        polys.push(f.clone());
        multiplicities.push(m);
    }
    let split = split_newton(&f, "z", &[2], opts)?;
    let verified = verify_split(&f, "z", &[2], &split.b, opts.degree_bound)?;
    Ok(ChainReplay {
        polys,
        multiplicities,
        split,
        verified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cyclotomic::q;

    fn sp() -> Arc<VarSpace> {
        VarSpace::of(&[("w", 1)], &["x", "z"])
    }

    #[test]
    fn difference_of_squares() {
        let s = sp();
        let f = FracPoly::parse(&s, "z^2 - w^2*x^2").unwrap();
        let r = split_newton(&f, "z", &[1], &SplitOptions::with_degree(6)).unwrap();
        let vs = r.substituted.space().clone();
        let mut b: Vec<String> = r.b.iter().map(|x| x.to_string()).collect();
        b.sort();
        assert_eq!(b, vec!["-v*x".to_string(), "v*x".to_string()]);
        assert!(verify_split(&f, "z", &[1], &r.b, 6).unwrap());
        assert_eq!(r.b[0].space(), &vs);
    }

    #[test]
    fn pinch_no_split() {
        let s = sp();
        let f = FracPoly::parse(&s, "z^2 + w*x").unwrap();
        match split_newton(&f, "z", &[2], &SplitOptions::with_degree(6)) {
            Err(Error::NoSplit { degree, .. }) => assert_eq!(degree, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn basic_example_splits() {
        let s = sp();
        let f = FracPoly::parse(&s, "z^2 + w^3*(1+x)*x^2").unwrap();
        let r = split_newton(&f, "z", &[2], &SplitOptions::with_degree(8)).unwrap();
        assert!(verify_split(&f, "z", &[2], &r.b, 8).unwrap());
        // Binomial series of (1+x)^{1/2}, computed independently.
        let vs = r.substituted.space().clone();
        let mut series = FracPoly::zero(&vs);
        let mut coef = qi(1);
        for n in 0..5i64 {
            let term = FracPoly::parse(&vs, &format!("v^3*x^{}", n + 1)).unwrap();
            series = &series + &term.scale(&Cyclo::rational(coef.clone()));
            coef = coef * (q(1, 2) - qi(n)) / qi(n + 1);
        }
        let i4 = series.scale(&Cyclo::eps(4, 1));
        let got: Vec<FracPoly> = r.b.iter().map(|x| x.truncate(&qi(8))).collect();
        assert!(got.contains(&i4) || got.contains(&-&i4));
        assert!(got.contains(&-&got[0]));
        // Permuted and corrupted roots.
        let rev: Vec<FracPoly> = r.b.iter().rev().cloned().collect();
        assert!(verify_split(&f, "z", &[2], &rev, 8).unwrap());
        let mut bad = r.b.clone();
        bad[0] = &bad[0] + &FracPoly::parse(&vs, "x^3").unwrap();
        assert!(!verify_split(&f, "z", &[2], &bad, 8).unwrap());
    }

    #[test]
    fn chain_replay() {
        let r = example_basic(3, &SplitOptions::with_degree(6)).unwrap();
        let sp = r.polys[0].space().clone();
        let want = ["z^2 + w*(w^2 + x)*x^2", "z^2 + w^2*(w + x)*x^2", "z^2 + w^3*(1 + x)*x^2"];
        for (got, w) in r.polys[1..].iter().zip(want) {
            assert_eq!(*got, FracPoly::parse(&sp, w).unwrap());
        }
        assert_eq!(r.multiplicities, vec![qi(2); 3]);
        assert!(r.verified);
        assert!(example_basic(0, &SplitOptions::with_degree(4)).is_err());
    }

    #[test]
    fn branch_cap() {
        let s = sp();
        let f = FracPoly::parse(&s, "z^2 - w^2*x^2").unwrap();
        let opts = SplitOptions {
            degree_bound: 4,
            branch_cap: 0,
        };
        assert!(matches!(split_newton(&f, "z", &[1], &opts), Err(Error::Ambiguous { cap: 0 })));
    }

    #[test]
    fn cube_roots() {
        let s = VarSpace::of(&[("w", 3)], &["x", "z"]);
        let f = FracPoly::parse(&s, "z^3 - w*x^3").unwrap();
        let r = split_newton(&f, "z", &[3], &SplitOptions::with_degree(5)).unwrap();
        assert_eq!(r.b.len(), 3);
        assert!(verify_split(&f, "z", &[3], &r.b, 5).unwrap());
    }

    #[test]
    fn constant_roots() {
        assert_eq!(const_root(&Cyclo::int(-4), 2), Some(&Cyclo::int(2) * &Cyclo::eps(4, 1)));
        let r = const_root(&Cyclo::eps(3, 1), 2).unwrap();
        assert_eq!(r.pow(2).unwrap(), Cyclo::eps(3, 1));
        assert!(const_root(&Cyclo::int(2), 2).is_none());
    }
}
