//! Finite abelian groups `Z_{p_1} × … × Z_{p_r}`, their subgroups and quotients,
//! and the weighted scalar product `⟨j,ℓ⟩ = Σ (k/p_i) j_i ℓ_i mod k`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cyclotomic::{lcm_u64, Cyclo};
use crate::error::{domain, Error, Result};
use crate::linalg::{hermite_rows, smith_diagonal};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AbelianGroup {
    moduli: Vec<u64>,
}

/// Residue vector, reduced componentwise. Ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupElement(pub Vec<u64>);

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl AbelianGroup {
    pub fn new(moduli: Vec<u64>) -> Result<Self> {
        if moduli.iter().any(|&p| p == 0) {
            return domain("every modulus must be at least 1");
        }
        Ok(AbelianGroup { moduli })
    }

    pub fn cyclic(k: u64) -> Self {
        AbelianGroup::new(vec![k]).expect("positive modulus")
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    pub fn rank(&self) -> usize {
        self.moduli.len()
    }

    pub fn order(&self) -> u64 {
        self.moduli.iter().product()
    }

    pub fn lcm(&self) -> u64 {
        self.moduli.iter().fold(1, |a, &b| lcm_u64(a, b))
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement(vec![0; self.rank()])
    }

    /// Reduce an integer vector into the group.
    pub fn element(&self, v: &[i64]) -> Result<GroupElement> {
        if v.len() != self.rank() {
            return domain(format!(
                "element {:?} has length {}, group has rank {}",
                v,
                v.len(),
                self.rank()
            ));
        }
        Ok(GroupElement(
            v.iter()
                .zip(&self.moduli)
                .map(|(&x, &p)| x.rem_euclid(p as i64) as u64)
                .collect(),
        ))
    }

    pub fn contains(&self, g: &GroupElement) -> bool {
        g.0.len() == self.rank() && g.0.iter().zip(&self.moduli).all(|(x, p)| x < p)
    }

    pub fn add(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        GroupElement(
            a.0.iter()
                .zip(&b.0)
                .zip(&self.moduli)
                .map(|((x, y), p)| (x + y) % p)
                .collect(),
        )
    }

    pub fn neg(&self, a: &GroupElement) -> GroupElement {
        GroupElement(
            a.0.iter()
                .zip(&self.moduli)
                .map(|(x, p)| (p - x) % p)
                .collect(),
        )
    }

    pub fn sub(&self, a: &GroupElement, b: &GroupElement) -> GroupElement {
        self.add(a, &self.neg(b))
    }

    pub fn scale(&self, a: &GroupElement, n: i64) -> GroupElement {
        GroupElement(
            a.0.iter()
                .zip(&self.moduli)
                .map(|(&x, &p)| ((x as i64 * n).rem_euclid(p as i64)) as u64)
                .collect(),
        )
    }

    /// Order of an element.
    pub fn element_order(&self, a: &GroupElement) -> u64 {
        a.0.iter()
            .zip(&self.moduli)
            .map(|(&x, &p)| p / num::integer::gcd(x, p))
            .fold(1, lcm_u64)
    }

    /// All elements in lexicographic order (identity first).
    pub fn elements(&self) -> Vec<GroupElement> {
        let mut out = vec![self.identity()];
        let n = self.order();
        let mut cur = self.identity();
        for _ in 1..n {
            for i in (0..self.rank()).rev() {
                cur.0[i] += 1;
                if cur.0[i] == self.moduli[i] {
                    cur.0[i] = 0;
                } else {
                    break;
                }
            }
            out.push(cur.clone());
        }
        out
    }

    /// Standard generator `e_i`.
    pub fn basis_element(&self, i: usize) -> GroupElement {
        let mut v = vec![0; self.rank()];
        if self.moduli[i] > 1 {
            v[i] = 1;
        }
        GroupElement(v)
    }
}

impl fmt::Display for AbelianGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.moduli.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.moduli.iter().map(|p| format!("Z{p}")).collect();
        write!(f, "{}", parts.join("×"))
    }
}

/// A subgroup stored as its explicit element set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subgroup {
    parent: AbelianGroup,
    elements: BTreeSet<GroupElement>,
}

impl Subgroup {
    pub fn trivial(g: &AbelianGroup) -> Self {
        Subgroup {
            parent: g.clone(),
            elements: [g.identity()].into_iter().collect(),
        }
    }

    pub fn whole(g: &AbelianGroup) -> Self {
        Subgroup {
            parent: g.clone(),
            elements: g.elements().into_iter().collect(),
        }
    }

    /// Validate an explicit element set.
    pub fn from_elements(g: &AbelianGroup, elems: impl IntoIterator<Item = GroupElement>) -> Result<Self> {
        let elements: BTreeSet<GroupElement> = elems.into_iter().collect();
        if elements.iter().any(|e| !g.contains(e)) {
            return domain("element outside the group");
        }
        if !elements.contains(&g.identity()) {
            return domain("subgroup must contain the identity");
        }
        for a in &elements {
            if !elements.contains(&g.neg(a)) {
                return domain("subgroup not closed under negation");
            }
            for b in &elements {
                if !elements.contains(&g.add(a, b)) {
                    return domain("subgroup not closed under addition");
                }
            }
        }
        Ok(Subgroup {
            parent: g.clone(),
            elements,
        })
    }

    pub fn parent(&self) -> &AbelianGroup {
        &self.parent
    }

    pub fn order(&self) -> u64 {
        self.elements.len() as u64
    }

    pub fn contains(&self, g: &GroupElement) -> bool {
        self.elements.contains(g)
    }

    /// Elements in lexicographic order.
    pub fn elements(&self) -> Vec<GroupElement> {
        self.elements.iter().cloned().collect()
    }

    /// A small generating set, chosen greedily in lexicographic order.
    pub fn generators(&self) -> Vec<GroupElement> {
        let g = &self.parent;
        let mut gens = Vec::new();
        let mut span = Subgroup::trivial(g);
        for e in &self.elements {
            if !span.contains(e) {
                gens.push(e.clone());
                span = subgroup_from_generators(g, &gens).expect("elements of parent");
            }
        }
        gens
    }

    /// Sum `H + K` of two subgroups of the same group.
    pub fn join(&self, other: &Subgroup) -> Subgroup {
        let mut gens = self.generators();
        gens.extend(other.generators());
        subgroup_from_generators(&self.parent, &gens).expect("same parent")
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.elements.iter().map(|e| e.to_string()).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// The modulus `k` of the pairing; any common multiple of the moduli.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairingContext {
    k: u64,
}

impl PairingContext {
    pub fn new(g: &AbelianGroup, k: u64) -> Result<Self> {
        if k == 0 || g.moduli().iter().any(|p| k % p != 0) {
            return domain(format!("k = {k} is not a common multiple of {:?}", g.moduli()));
        }
        Ok(PairingContext { k })
    }

    /// Default context with `k = lcm(p_1, …, p_r)`.
    pub fn lcm(g: &AbelianGroup) -> Self {
        PairingContext { k: g.lcm() }
    }

    pub fn k(&self) -> u64 {
        self.k
    }
}

/// `⟨j, ℓ⟩ = Σ (k/p_i) j_i ℓ_i mod k`.
pub fn pairing(ctx: &PairingContext, g: &AbelianGroup, j: &GroupElement, l: &GroupElement) -> Result<u64> {
    if !g.contains(j) || !g.contains(l) {
        return domain("pairing arguments must be elements of the group");
    }
    if g.moduli().iter().any(|p| ctx.k % p != 0) {
        return domain("pairing modulus is not a common multiple of the moduli");
    }
    Ok(pairing_unchecked(ctx.k, g, j, l))
}

pub(crate) fn pairing_unchecked(k: u64, g: &AbelianGroup, j: &GroupElement, l: &GroupElement) -> u64 {
    let mut s: u128 = 0;
    for ((a, b), p) in j.0.iter().zip(&l.0).zip(g.moduli()) {
        s += (k / p) as u128 * (*a as u128) * (*b as u128);
    }
    (s % k as u128) as u64
}

/// `H⊥ = {ℓ : ⟨ℓ,h⟩ ≡ 0 for all h ∈ H}`.
pub fn perp(ctx: &PairingContext, h: &Subgroup) -> Subgroup {
    let g = h.parent();
    let gens = h.generators();
    let elems = g
        .elements()
        .into_iter()
        .filter(|l| gens.iter().all(|x| pairing_unchecked(ctx.k, g, l, x) == 0));
    Subgroup {
        parent: g.clone(),
        elements: elems.collect(),
    }
}

/// `ξ_ℓ = Σ_{h∈H} ε_k^{−⟨ℓ,h⟩}`.
pub fn xi(ctx: &PairingContext, h: &Subgroup, l: &GroupElement) -> Result<Cyclo> {
    let g = h.parent();
    if !g.contains(l) {
        return domain("ℓ is not an element of the group");
    }
    let mut coeffs = vec![0i64; ctx.k as usize];
    for x in h.elements.iter() {
        let e = pairing_unchecked(ctx.k, g, l, x);
        coeffs[((ctx.k - e) % ctx.k) as usize] += 1;
    }
    Cyclo::from_coeffs(ctx.k, coeffs.into_iter().map(crate::cyclotomic::qi).collect())
}

/// Coset representatives for `G/H`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CosetSystem {
    pub subgroup: Subgroup,
    pub representatives: Vec<GroupElement>,
}

impl CosetSystem {
    /// Index of the coset containing `g`.
    pub fn coset_of(&self, g: &GroupElement) -> usize {
        let grp = self.subgroup.parent();
        self.representatives
            .iter()
            .position(|r| self.subgroup.contains(&grp.sub(g, r)))
            .expect("cosets cover the group")
    }
}

/// Lexicographically least member of each coset, identity first.
pub fn quotient(g: &AbelianGroup, h: &Subgroup) -> Result<CosetSystem> {
    if h.parent() != g {
        return domain("subgroup of a different group");
    }
    let mut seen: BTreeSet<GroupElement> = BTreeSet::new();
    let mut reps = Vec::new();
    for x in g.elements() {
        if seen.contains(&x) {
            continue;
        }
        for y in h.elements.iter() {
            seen.insert(g.add(&x, y));
        }
        reps.push(x);
    }
    Ok(CosetSystem {
        subgroup: h.clone(),
        representatives: reps,
    })
}

/// Smallest subgroup containing the generators.
pub fn subgroup_from_generators(g: &AbelianGroup, gens: &[GroupElement]) -> Result<Subgroup> {
    if gens.iter().any(|x| !g.contains(x)) {
        return domain("generator outside the group");
    }
    let mut elements: BTreeSet<GroupElement> = [g.identity()].into_iter().collect();
    let mut frontier = vec![g.identity()];
    while let Some(x) = frontier.pop() {
        for s in gens {
            let y = g.add(&x, s);
            if elements.insert(y.clone()) {
                frontier.push(y);
            }
        }
    }
    Ok(Subgroup {
        parent: g.clone(),
        elements,
    })
}

fn lattice_rows(h: &Subgroup) -> Vec<Vec<i128>> {
    let g = h.parent();
    let r = g.rank();
    let mut rows: Vec<Vec<i128>> = h
        .generators()
        .iter()
        .map(|x| x.0.iter().map(|&v| v as i128).collect())
        .collect();
    for i in 0..r {
        let mut v = vec![0i128; r];
        v[i] = g.moduli()[i] as i128;
        rows.push(v);
    }
    rows
}

/// Invariant factors `d_1 | d_2 | …` (all > 1) of the subgroup `H`.
///
/// With `Λ` the preimage of `H` in `Z^r` and `P = diag(p_i)`, `H ≅ Λ/PZ^r`;
/// writing `P = M·B` for a basis `B` of `Λ`, the factors are the Smith
/// invariants of `M`.
pub fn invariant_factors(h: &Subgroup) -> Vec<u64> {
    let g = h.parent();
    let r = g.rank();
    if r == 0 {
        return vec![];
    }
    let b = hermite_rows(&lattice_rows(h));
    debug_assert_eq!(b.len(), r);
    // Solve M·B = P row by row; B is upper triangular with positive pivots.
    let mut m: Vec<Vec<i128>> = Vec::with_capacity(r);
    for i in 0..r {
        let mut target = vec![0i128; r];
        target[i] = g.moduli()[i] as i128;
        let mut coef = vec![0i128; r];
        for c in 0..r {
            let mut acc = target[c];
            for t in 0..c {
                acc -= coef[t] * b[t][c];
            }
            debug_assert_eq!(acc % b[c][c], 0);
            coef[c] = acc / b[c][c];
        }
        m.push(coef);
    }
    finish_factors(smith_diagonal(&m))
}

/// Invariant factors of the quotient group `G/H` (Smith form of the lattice `Λ`).
pub fn quotient_invariant_factors(h: &Subgroup) -> Vec<u64> {
    if h.parent().rank() == 0 {
        return vec![];
    }
    finish_factors(smith_diagonal(&lattice_rows(h)))
}

/// Invariant factors of the whole group.
pub fn group_invariant_factors(g: &AbelianGroup) -> Vec<u64> {
    invariant_factors(&Subgroup::whole(g))
}

fn finish_factors(d: Vec<i128>) -> Vec<u64> {
    let mut out: Vec<u64> = d.into_iter().filter(|&x| x > 1).map(|x| x as u64).collect();
    out.sort();
    out
}

/// Every subgroup of `G`, sorted by order then by element list.
pub fn all_subgroups(g: &AbelianGroup) -> Vec<Subgroup> {
    let mut found: BTreeSet<Vec<GroupElement>> = BTreeSet::new();
    let mut stack = vec![Subgroup::trivial(g)];
    found.insert(stack[0].elements());
    let elems = g.elements();
    while let Some(s) = stack.pop() {
        for x in &elems {
            if s.contains(x) {
                continue;
            }
            let mut gens = s.generators();
            gens.push(x.clone());
            let t = subgroup_from_generators(g, &gens).expect("elements of g");
            if found.insert(t.elements()) {
                stack.push(t);
            }
        }
    }
    let mut out: Vec<Subgroup> = found
        .into_iter()
        .map(|e| Subgroup {
            parent: g.clone(),
            elements: e.into_iter().collect(),
        })
        .collect();
    out.sort_by_key(|s| (s.order(), s.elements()));
    out
}

/// Parse `"2,4"`, `"Z3"`, `"Z2xZ4"` or `"Z2×Z4"` into a group.
pub fn parse_group(s: &str) -> Result<AbelianGroup> {
    let t = s.trim().replace('×', "x").replace('X', "x");
    let parts: Vec<&str> = if t.contains('x') && t.contains('Z') {
        t.split('x').collect()
    } else {
        t.split(',').collect()
    };
    let mut moduli = Vec::new();
    for p in parts {
        let p = p.trim().trim_start_matches('Z');
        if p.is_empty() {
            continue;
        }
        moduli.push(
            p.parse::<u64>()
                .map_err(|_| Error::Parse(format!("bad group `{s}`")))?,
        );
    }
    AbelianGroup::new(moduli)
}

/// Parse `"(1,2)"` or `"1,2"` into an element; several may be separated by `;`
/// or written as consecutive parenthesised tuples.
pub fn parse_elements(g: &AbelianGroup, s: &str) -> Result<Vec<GroupElement>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(vec![]);
    }
    let chunks: Vec<String> = if s.contains('(') {
        s.split('(')
            .filter_map(|c| {
                let c = c.split(')').next().unwrap_or("").trim();
                (!c.is_empty()).then(|| c.to_string())
            })
            .collect()
    } else {
        s.split(';').map(|c| c.trim().to_string()).collect()
    };
    chunks
        .iter()
        .map(|c| {
            let v: Vec<i64> = c
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<i64>()
                        .map_err(|_| Error::Parse(format!("bad element `{c}`")))
                })
                .collect::<Result<_>>()?;
            g.element(&v)
        })
        .collect()
}
