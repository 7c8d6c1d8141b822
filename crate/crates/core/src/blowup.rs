//! Weighted blow-ups of affine space: orbifold chart atlases, transitions,
//! invariant Hilbert bases and binomial relations, quotient images, and the
//! multi-step pipeline for group-circulant normal forms.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use num::{Integer, ToPrimitive, Zero};
use serde::Serialize;
use serde_json::{json, Value};

use crate::abelian::AbelianGroup;
use crate::cyclotomic::{q, qi, Cyclo, Q};
use crate::error::{domain, Error, Result};
use crate::gcirc::{character, delta_k, normal_form_poly, ProductNormalFormSpec};
use crate::linalg::{int_rank, left_kernel, rank as crank, CMat};
use crate::polyring::{ChartMap, DiagonalAction, FracPoly, VarRef, VarSpace};
use crate::resinv::weights as inv_weights;

fn fresh(taken: &BTreeSet<String>, base: &str) -> String {
    let mut n = base.to_string();
    while taken.contains(&n) {
        n.push('\'');
    }
    n
}

/// Chart `i` of a weighted blow-up: `x_i = t^{ω_i}`, `x_j = t^{ω_j}·x_j'`.
#[derive(Clone, Debug)]
pub struct WeightedChart {
    pub index: usize,
    pub chart_var: String,
    pub exceptional: String,
    /// `(x_j, x_j')` for `j ≠ i`.
    pub renamed: Vec<(String, String)>,
    pub map: ChartMap,
    /// `μ_{ω_i}`: `t ↦ ξt`, `x_j' ↦ ξ^{−ω_j}x_j'`.
    pub action: DiagonalAction,
}

impl WeightedChart {
    pub fn to_json(&self) -> Value {
        let subs: Vec<Value> = self
            .map
            .source
            .names()
            .iter()
            .zip(&self.map.images)
            .map(|(n, img)| json!({"var": n, "image": img.to_string()}))
            .collect();
        json!({
            "index": self.index,
            "chart_var": self.chart_var,
            "exceptional": self.exceptional,
            "substitutions": subs,
            "action": self.action,
            "free_off_exceptional": free_off(&self.action, &[self.exceptional.as_str()]),
        })
    }
}

/// Weighted blow-up of `A^m × A^n` with centre `A^m × {0}`.
#[derive(Clone, Debug)]
pub struct ChartAtlas {
    pub ambient: Arc<VarSpace>,
    pub centre: Vec<String>,
    pub weights: Vec<u64>,
    pub charts: Vec<WeightedChart>,
}

impl ChartAtlas {
    pub fn to_json(&self) -> Value {
        json!({
            "ambient": &*self.ambient,
            "centre": self.centre,
            "weights": self.weights,
            "charts": self.charts.iter().map(|c| c.to_json()).collect::<Vec<_>>(),
        })
    }

    pub fn chart_of(&self, var: &str) -> Result<&WeightedChart> {
        self.charts
            .iter()
            .find(|c| c.chart_var == var)
            .ok_or_else(|| Error::Domain(format!("`{var}` is not a centre variable")))
    }
}

/// Build the atlas. Centre variables may be divisorial (with integral
/// exponents) or free; every other variable of `ambient` is left untouched.
pub fn charts(ambient: &Arc<VarSpace>, centre: &[&str], weights: &[u64]) -> Result<ChartAtlas> {
    if centre.is_empty() || centre.len() != weights.len() {
        return domain("one weight per centre variable is required");
    }
    if weights.contains(&0) {
        return domain("weights must be positive");
    }
    for c in centre {
        if ambient.lookup(c).is_none() {
            return domain(format!("`{c}` is not a variable"));
        }
    }
    let names: BTreeSet<String> = ambient.names().iter().map(|s| s.to_string()).collect();
    let untouched_div: Vec<(String, u64)> = ambient
        .divisorial()
        .iter()
        .filter(|d| !centre.contains(&d.name.as_str()))
        .map(|d| (d.name.clone(), d.bound))
        .collect();
    let untouched_free: Vec<String> = ambient
        .free()
        .iter()
        .filter(|n| !centre.contains(&n.as_str()))
        .cloned()
        .collect();
    let mut out = Vec::new();
    for (i, &ci) in centre.iter().enumerate() {
        let mut taken = names.clone();
        let t = fresh(&taken, "t");
        taken.insert(t.clone());
        let mut renamed = Vec::new();
        for (j, &cj) in centre.iter().enumerate() {
            if j != i {
                let n = fresh(&taken, &format!("{cj}'"));
                taken.insert(n.clone());
                renamed.push((cj.to_string(), n));
            }
        }
        let mut free = vec![t.clone()];
        free.extend(renamed.iter().map(|(_, n)| n.clone()));
        free.extend(untouched_free.iter().cloned());
        let target = Arc::new(VarSpace::new(untouched_div.clone(), free)?);
        let tv = FracPoly::var(&target, &t)?;
        let mut imgs: Vec<(&str, FracPoly)> = vec![(ci, tv.pow(weights[i] as u32))];
        for (j, &cj) in centre.iter().enumerate() {
            if j != i {
                let n = &renamed.iter().find(|(a, _)| a == cj).unwrap().1;
                imgs.push((cj, &tv.pow(weights[j] as u32) * &FracPoly::var(&target, n)?));
            }
        }
        let map = ChartMap::new(ambient, &target, imgs)?;
        let wi = weights[i] as i64;
        let mut vars = vec![t.clone()];
        let mut wts = vec![1i64];
        for (j, (_, n)) in centre.iter().enumerate().filter(|(j, _)| *j != i).map(|(j, c)| (j, renamed.iter().find(|(a, _)| a == c).unwrap())) {
            vars.push(n.clone());
            wts.push(-(weights[j] as i64));
        }
        for n in untouched_div.iter().map(|d| d.0.clone()).chain(untouched_free.iter().cloned()) {
            vars.push(n);
            wts.push(0);
        }
        let action = DiagonalAction::new_reducing(AbelianGroup::cyclic(wi as u64), vars, vec![wts])?;
        out.push(WeightedChart {
            index: i,
            chart_var: ci.to_string(),
            exceptional: t,
            renamed,
            map,
            action,
        });
    }
    Ok(ChartAtlas {
        ambient: ambient.clone(),
        centre: centre.iter().map(|s| s.to_string()).collect(),
        weights: weights.to_vec(),
        charts: out,
    })
}

/// True iff only the identity fixes every point with the listed coordinates nonzero.
pub fn free_off(action: &DiagonalAction, nonzero: &[&str]) -> bool {
    let cols: Vec<usize> = nonzero
        .iter()
        .filter_map(|n| action.vars.iter().position(|v| v == n))
        .collect();
    action.group.elements().into_iter().all(|g| {
        g == action.group.identity() || cols.iter().any(|&j| !action.scalar(&g, j).is_one())
    })
}

/// `f∘φ_i`.
pub fn pullback(f: &FracPoly, atlas: &ChartAtlas, i: usize) -> Result<FracPoly> {
    let c = atlas
        .charts
        .get(i)
        .ok_or_else(|| Error::Domain(format!("no chart {i}")))?;
    f.substitute(&c.map)
}

/// Pullback followed by removal of the exceptional factor: `(strict, multiplicity)`.
pub fn pullback_strict(f: &FracPoly, atlas: &ChartAtlas, i: usize) -> Result<(FracPoly, Q)> {
    let p = pullback(f, atlas, i)?;
    p.strict_transform(&atlas.charts[i].exceptional)
}

/// The `cp(k)` data: ambient `(w, x_0, …, x_{k−1})` with weights `(k, k−j+1)`.
pub fn cpk_atlas(k: u64) -> Result<ChartAtlas> {
    let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
    let sp = Arc::new(VarSpace::new(vec![("w".into(), 1)], names.clone())?);
    let mut centre = vec!["w"];
    centre.extend(names.iter().map(|s| s.as_str()));
    let mut wts = vec![k];
    wts.extend((0..k).map(|j| k - j + 1));
    charts(&sp, &centre, &wts)
}

/// Laurent monomial `∏ v^{e_v}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Laurent {
    pub exps: BTreeMap<String, i64>,
}

impl Laurent {
    pub fn var(n: &str) -> Self {
        Laurent {
            exps: [(n.to_string(), 1)].into_iter().collect(),
        }
    }

    pub fn pow(&self, e: i64) -> Self {
        Laurent {
            exps: self.exps.iter().map(|(k, v)| (k.clone(), v * e)).filter(|(_, v)| *v != 0).collect(),
        }
    }

    pub fn mul(&self, o: &Laurent) -> Self {
        let mut exps = self.exps.clone();
        for (k, v) in &o.exps {
            *exps.entry(k.clone()).or_insert(0) += v;
        }
        exps.retain(|_, v| *v != 0);
        Laurent { exps }
    }

    /// Substitute a Laurent monomial for every variable (missing ones stay).
    pub fn subst(&self, m: &BTreeMap<String, Laurent>) -> Laurent {
        let mut out = Laurent { exps: BTreeMap::new() };
        for (k, &e) in &self.exps {
            let img = m.get(k).cloned().unwrap_or_else(|| Laurent::var(k));
            out = out.mul(&img.pow(e));
        }
        out
    }

    /// Exponent of `ε` under a diagonal action given by integer weights.
    pub fn weight(&self, w: &BTreeMap<String, i64>) -> i64 {
        self.exps.iter().map(|(k, e)| e * w.get(k).copied().unwrap_or(0)).sum()
    }
}

impl std::fmt::Display for Laurent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.exps.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .exps
            .iter()
            .map(|(k, &e)| if e == 1 { k.clone() } else { format!("{k}^({e})") })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

type LMap = BTreeMap<String, Laurent>;
type Weights = BTreeMap<String, i64>;

/// Overlap presentations `W̃_ji` (coordinates `s, u_j, y_m`) and `W̃_ij`
/// (coordinates `t, u_i, z_m`) with their actions and comparison maps.
#[derive(Clone, Debug, Serialize)]
pub struct TransitionChart {
    pub i: usize,
    pub j: usize,
    pub weights: Vec<u64>,
    pub coords_ji: Vec<String>,
    pub coords_ij: Vec<String>,
    /// `W̃_ij → W̃_ji` on coordinates of `W̃_ji`.
    pub iso: LMap,
    pub iso_inverse: LMap,
    /// `W̃_ji → W_i` and `W̃_ij → W_j`.
    pub etale_i: LMap,
    pub etale_j: LMap,
    /// Weights of `(ε_i, ε_j)` on each presentation.
    pub action_ji: [Weights; 2],
    pub action_ij: [Weights; 2],
    pub isomorphism_ok: bool,
    pub equivariant: bool,
    pub etale_equivariant: bool,
    pub projections_commute: bool,
}

fn same_char(a: i64, b: i64, m: u64) -> bool {
    (a - b).rem_euclid(m as i64) == 0
}

/// Transition between charts `i` and `j` (0-based) of the weighted blow-up of
/// `A^n` with weights `ω`.
pub fn transition(weights: &[u64], i: usize, j: usize) -> Result<TransitionChart> {
    let n = weights.len();
    if i == j || i >= n || j >= n {
        return domain("need two distinct chart indices");
    }
    if weights.contains(&0) {
        return domain("weights must be positive");
    }
    let om: Vec<i64> = weights.iter().map(|&w| w as i64).collect();
    let (wi, wj) = (weights[i], weights[j]);
    let others: Vec<usize> = (0..n).filter(|&m| m != i && m != j).collect();
    let y = |m: usize| format!("y{}", m + 1);
    let z = |m: usize| format!("z{}", m + 1);
    let ui = format!("u{}", i + 1);
    let uj = format!("u{}", j + 1);
    let mut coords_ji = vec!["s".to_string(), uj.clone()];
    coords_ji.extend(others.iter().map(|&m| y(m)));
    let mut coords_ij = vec!["t".to_string(), ui.clone()];
    coords_ij.extend(others.iter().map(|&m| z(m)));

    let mut iso = LMap::new();
    iso.insert("s".into(), Laurent::var("t").mul(&Laurent::var(&ui)));
    iso.insert(uj.clone(), Laurent::var(&ui).pow(-1));
    for &m in &others {
        iso.insert(y(m), Laurent::var(&ui).pow(-om[m]).mul(&Laurent::var(&z(m))));
    }
    let mut inv = LMap::new();
    inv.insert("t".into(), Laurent::var("s").mul(&Laurent::var(&uj)));
    inv.insert(ui.clone(), Laurent::var(&uj).pow(-1));
    for &m in &others {
        inv.insert(z(m), Laurent::var(&uj).pow(-om[m]).mul(&Laurent::var(&y(m))));
    }
    let isomorphism_ok = coords_ji.iter().all(|c| iso[c].subst(&inv) == Laurent::var(c))
        && coords_ij.iter().all(|c| inv[c].subst(&iso) == Laurent::var(c));

    // Actions of (ε_i, ε_j).
    let mut a_ji: [Weights; 2] = [Weights::new(), Weights::new()];
    a_ji[0].insert("s".into(), 1);
    a_ji[0].insert(uj.clone(), -1);
    a_ji[1].insert(uj.clone(), 1);
    for &m in &others {
        a_ji[0].insert(y(m), -om[m]);
    }
    let mut a_ij: [Weights; 2] = [Weights::new(), Weights::new()];
    a_ij[0].insert(ui.clone(), 1);
    a_ij[1].insert("t".into(), 1);
    a_ij[1].insert(ui.clone(), -1);
    for &m in &others {
        a_ij[1].insert(z(m), -om[m]);
    }
    let orders = [wi, wj];
    let equivariant = (0..2).all(|g| {
        coords_ji
            .iter()
            .all(|c| same_char(Laurent::var(c).weight(&a_ji[g]), iso[c].weight(&a_ij[g]), orders[g]))
    });

    // Étale maps to the original charts.
    let mut et_i = LMap::new();
    et_i.insert(y(i), Laurent::var("s"));
    et_i.insert(y(j), Laurent::var(&uj).pow(om[j]));
    for &m in &others {
        et_i.insert(y(m), Laurent::var(&y(m)));
    }
    let mut et_j = LMap::new();
    et_j.insert(z(j), Laurent::var("t"));
    et_j.insert(z(i), Laurent::var(&ui).pow(om[i]));
    for &m in &others {
        et_j.insert(z(m), Laurent::var(&z(m)));
    }
    // Chart actions: W_i has μ_{ω_i} with y_i ↦ ξ y_i, y_m ↦ ξ^{−ω_m} y_m.
    let chart_w = |own: usize, name: &dyn Fn(usize) -> String| -> Weights {
        (0..n).map(|m| (name(m), if m == own { 1 } else { -om[m] })).collect()
    };
    let wi_act = chart_w(i, &y);
    let wj_act = chart_w(j, &z);
    let etale_equivariant = (0..n).all(|m| {
        let ci = &et_i[&y(m)];
        let cj = &et_j[&z(m)];
        same_char(ci.weight(&a_ji[0]), wi_act[&y(m)], wi)
            && same_char(ci.weight(&a_ji[1]), 0, wj)
            && same_char(cj.weight(&a_ij[1]), wj_act[&z(m)], wj)
            && same_char(cj.weight(&a_ij[0]), 0, wi)
    });
    // x-coordinates through either chart, pulled back to W̃_ij.
    let projections_commute = (0..n).all(|m| {
        let via_i = if m == i {
            Laurent::var(&y(i)).pow(om[i])
        } else {
            Laurent::var(&y(i)).pow(om[m]).mul(&Laurent::var(&y(m)))
        };
        let via_j = if m == j {
            Laurent::var(&z(j)).pow(om[j])
        } else {
            Laurent::var(&z(j)).pow(om[m]).mul(&Laurent::var(&z(m)))
        };
        via_i.subst(&et_i).subst(&iso) == via_j.subst(&et_j)
    });
    Ok(TransitionChart {
        i,
        j,
        weights: weights.to_vec(),
        coords_ji,
        coords_ij,
        iso,
        iso_inverse: inv,
        etale_i: et_i,
        etale_j: et_j,
        action_ji: a_ji,
        action_ij: a_ij,
        isomorphism_ok,
        equivariant,
        etale_equivariant,
        projections_commute,
    })
}

/// Minimal generating invariant monomials of a diagonal action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertBasis {
    pub action: DiagonalAction,
    /// Exponent vectors over `action.vars`, by degree then lexicographically.
    pub generators: Vec<Vec<u32>>,
    pub names: Vec<String>,
    pub degree_bound: u32,
}

fn is_invariant(action: &DiagonalAction, e: &[u32]) -> bool {
    action.group.moduli().iter().enumerate().all(|(i, &p)| {
        e.iter()
            .zip(&action.weights[i])
            .map(|(&a, &w)| a as u64 * w)
            .sum::<u64>()
            % p
            == 0
    })
}

/// All exponent vectors of total degree `d` in `n` variables (lexicographically descending).
pub fn monomials_of_degree(n: usize, d: u32) -> Vec<Vec<u32>> {
    if n == 0 {
        return if d == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for a in (0..=d).rev() {
        for mut rest in monomials_of_degree(n - 1, d - a) {
            rest.insert(0, a);
            out.push(rest);
        }
    }
    out
}

fn divides(a: &[u32], b: &[u32]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

fn monomial_text(vars: &[String], e: &[u32]) -> String {
    let parts: Vec<String> = vars
        .iter()
        .zip(e)
        .filter(|(_, &a)| a > 0)
        .map(|(v, &a)| if a == 1 { v.clone() } else { format!("{v}^{a}") })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

/// Enumerate invariant monomials up to degree `|G|` and keep the indecomposable ones.
pub fn hilbert_basis(action: &DiagonalAction) -> HilbertBasis {
    let bound = action.group.order() as u32;
    let n = action.vars.len();
    let mut gens: Vec<Vec<u32>> = Vec::new();
    for d in 1..=bound {
        for m in monomials_of_degree(n, d) {
            if is_invariant(action, &m) && !gens.iter().any(|g| divides(g, &m)) {
                gens.push(m);
            }
        }
    }
    let names = (0..gens.len()).map(|i| format!("g{i}")).collect();
    HilbertBasis {
        action: action.clone(),
        generators: gens,
        names,
        degree_bound: bound,
    }
}

impl HilbertBasis {
    pub fn generator_text(&self, i: usize) -> String {
        monomial_text(&self.action.vars, &self.generators[i])
    }

    pub fn index_of(&self, e: &[u32]) -> Option<usize> {
        self.generators.iter().position(|g| g == e)
    }

    /// Name generators `W = t^k`, `X_j = t^a·v_j` (least `a`), and the rest `S0, S1, …`,
    /// with `t` the variable of weight 1 in position 0.
    pub fn name_chart(&mut self) {
        let n = self.action.vars.len();
        let mut s = 0;
        for (idx, g) in self.generators.iter().enumerate() {
            let others: Vec<usize> = (1..n).filter(|&j| g[j] > 0).collect();
            self.names[idx] = if others.is_empty() {
                "W".into()
            } else if others.len() == 1 && g[others[0]] == 1 {
                let j = others[0];
                let v = &self.action.vars[j];
                let digits: String = v.chars().filter(|c| c.is_ascii_digit()).collect();
                format!("X{}", if digits.is_empty() { j.to_string() } else { digits })
            } else {
                s += 1;
                format!("S{}", s - 1)
            };
        }
    }

    /// Space with one free variable per generator.
    pub fn symbol_space(&self) -> Result<Arc<VarSpace>> {
        Ok(Arc::new(VarSpace::new(vec![], self.names.clone())?))
    }

    /// Generator monomials in the given ambient space (variables by name).
    pub fn definitions(&self, ambient: &Arc<VarSpace>) -> Result<Vec<FracPoly>> {
        self.generators
            .iter()
            .map(|g| {
                let mut p = FracPoly::one(ambient);
                for (v, &e) in self.action.vars.iter().zip(g) {
                    if e > 0 {
                        p = &p * &FracPoly::var(ambient, v)?.pow(e);
                    }
                }
                Ok(p)
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let gens: Vec<Value> = (0..self.generators.len())
            .map(|i| json!({"name": self.names[i], "monomial": self.generator_text(i), "exponents": self.generators[i]}))
            .collect();
        json!({"action": self.action, "degree_bound": self.degree_bound, "generators": gens})
    }
}

/// Binomial relation `∏ g^{lhs} = ∏ g^{rhs}` among generator symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Relation {
    pub lhs: Vec<u32>,
    pub rhs: Vec<u32>,
}

impl Relation {
    fn ambient(basis: &HilbertBasis, side: &[u32]) -> Vec<u64> {
        let n = basis.action.vars.len();
        let mut out = vec![0u64; n];
        for (g, &e) in basis.generators.iter().zip(side) {
            for j in 0..n {
                out[j] += g[j] as u64 * e as u64;
            }
        }
        out
    }

    /// Both sides expand to the same ambient monomial.
    pub fn holds(&self, basis: &HilbertBasis) -> bool {
        Self::ambient(basis, &self.lhs) == Self::ambient(basis, &self.rhs)
    }

    pub fn to_text(&self, basis: &HilbertBasis) -> String {
        format!(
            "{} = {}",
            monomial_text(&basis.names, &self.lhs),
            monomial_text(&basis.names, &self.rhs)
        )
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RelationSet {
    /// Basis of the syzygy lattice.
    pub lattice: Vec<Relation>,
    pub kernel_rank: usize,
    pub exponent_rank: usize,
    /// `∏X_j^{λ_j} = W^{Σλ−ν}·S` for each generator `S` (up to the degree bound).
    pub family: Vec<FamilyRelation>,
}

/// A member of the family `∏X_j^{λ_j} = W^{m}·S` with `m = Σλ − ν`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FamilyRelation {
    pub s: String,
    pub lambda: BTreeMap<String, u32>,
    pub w_power: u32,
    pub nu: u32,
    pub relation: Relation,
}

fn chart_structure(basis: &HilbertBasis) -> Option<(usize, BTreeMap<usize, usize>)> {
    let n = basis.action.vars.len();
    let w = basis
        .generators
        .iter()
        .position(|g| g[0] > 0 && (1..n).all(|j| g[j] == 0))?;
    let mut xs = BTreeMap::new();
    for (idx, g) in basis.generators.iter().enumerate() {
        let nz: Vec<usize> = (1..n).filter(|&j| g[j] > 0).collect();
        if nz.len() == 1 && g[nz[0]] == 1 {
            xs.insert(nz[0], idx);
        }
    }
    Some((w, xs))
}

/// Syzygy lattice and the `W`/`X`/`S` family (when the basis has that shape).
pub fn relations(basis: &HilbertBasis, degree_bound: u32) -> Result<RelationSet> {
    let e: Vec<Vec<i128>> = basis
        .generators
        .iter()
        .map(|g| g.iter().map(|&x| x as i128).collect())
        .collect();
    let ker = left_kernel(&e);
    let mut lattice = Vec::new();
    for v in &ker {
        let mut lhs = vec![0u32; v.len()];
        let mut rhs = vec![0u32; v.len()];
        for (i, &c) in v.iter().enumerate() {
            if c > 0 {
                lhs[i] = c as u32;
            } else if c < 0 {
                rhs[i] = (-c) as u32;
            }
        }
        let r = Relation { lhs, rhs };
        if !r.holds(basis) {
            return domain("lattice relation failed to verify");
        }
        lattice.push(r);
    }
    let exponent_rank = int_rank(&e);
    let mut family = Vec::new();
    if let Some((w, xs)) = chart_structure(basis) {
        let k = basis.generators[w][0];
        let ng = basis.generators.len();
        for (sidx, g) in basis.generators.iter().enumerate() {
            let deg: u32 = g.iter().sum();
            if sidx == w || deg > degree_bound {
                continue;
            }
            let n = g.len();
            if (1..n).any(|j| g[j] > 0 && !xs.contains_key(&j)) {
                continue;
            }
            // t-exponent of ∏X_j^{λ_j} minus μ.
            let mut lhs = vec![0u32; ng];
            let mut t_total = 0u32;
            let mut lambda = BTreeMap::new();
            let mut sum = 0u32;
            for j in 1..n {
                if g[j] > 0 {
                    let x = xs[&j];
                    lhs[x] += g[j];
                    t_total += basis.generators[x][0] * g[j];
                    lambda.insert(basis.names[x].clone(), g[j]);
                    sum += g[j];
                }
            }
            if t_total < g[0] || (t_total - g[0]) % k != 0 {
                continue;
            }
            let m = (t_total - g[0]) / k;
            let mut rhs = vec![0u32; ng];
            rhs[w] = m;
            rhs[sidx] += 1;
            let relation = Relation { lhs, rhs };
            if !relation.holds(basis) {
                return domain("family relation failed to verify");
            }
            if relation.lhs == relation.rhs {
                continue;
            }
            family.push(FamilyRelation {
                s: basis.names[sidx].clone(),
                lambda,
                w_power: m,
                nu: sum.saturating_sub(m),
                relation,
            });
        }
    }
    Ok(RelationSet {
        kernel_rank: ker.len(),
        exponent_rank,
        lattice,
        family,
    })
}

fn term_exponents(f: &FracPoly, vars: &[String]) -> Result<Vec<(Vec<u32>, Cyclo)>> {
    let sp = f.space();
    let nd = sp.n_div();
    let names = sp.names();
    let cols: Vec<Option<usize>> = names.iter().map(|n| vars.iter().position(|v| v == n)).collect();
    let mut out = Vec::new();
    for t in f.terms() {
        let mut e = vec![0u32; vars.len()];
        for (idx, col) in cols.iter().enumerate() {
            let x: Q = if idx < nd { t.w[idx].clone() } else { qi(t.free[idx - nd] as i64) };
            if x.is_zero() {
                continue;
            }
            let Some(c) = col else {
                return domain(format!("`{}` is not covered by the action", names[idx]));
            };
            if !x.is_integer() {
                return Err(Error::NotExpressible("fractional exponent".into()));
            }
            e[*c] = x.to_integer().to_u32().unwrap();
        }
        out.push((e, t.coeff));
    }
    Ok(out)
}

fn decompose(m: &[u32], gens: &[Vec<u32>], order: &[usize], failed: &mut HashSet<Vec<u32>>) -> Option<Vec<u32>> {
    if m.iter().all(|&x| x == 0) {
        return Some(vec![0; gens.len()]);
    }
    if failed.contains(m) {
        return None;
    }
    for &g in order {
        if divides(&gens[g], m) {
            let rest: Vec<u32> = m.iter().zip(&gens[g]).map(|(a, b)| a - b).collect();
            if let Some(mut c) = decompose(&rest, gens, order, failed) {
                c[g] += 1;
                return Some(c);
            }
        }
    }
    failed.insert(m.to_vec());
    None
}

/// Rewrite an invariant polynomial in the generator symbols; the result is
/// verified by re-expansion.
pub fn quotient_image(f: &FracPoly, basis: &HilbertBasis) -> Result<FracPoly> {
    let terms = term_exponents(f, &basis.action.vars)?;
    let sym = basis.symbol_space()?;
    let mut order: Vec<usize> = (0..basis.generators.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(basis.generators[i].iter().sum::<u32>()));
    let mut failed = HashSet::new();
    let mut out = FracPoly::zero(&sym);
    for (e, c) in terms {
        if !is_invariant(&basis.action, &e) {
            return Err(Error::NotExpressible(format!(
                "term {} is not invariant",
                monomial_text(&basis.action.vars, &e)
            )));
        }
        let counts = decompose(&e, &basis.generators, &order, &mut failed).ok_or_else(|| {
            Error::NotExpressible(format!("{} is not a product of generators", monomial_text(&basis.action.vars, &e)))
        })?;
        out = &out + &FracPoly::monomial(&sym, &[], &counts, c)?;
    }
    if expand_image(&out, basis, f.space())? != *f {
        return domain("re-expansion of the quotient image differs from the input");
    }
    Ok(out)
}

/// Substitute the generator definitions back into a polynomial in the symbols.
pub fn expand_image(p: &FracPoly, basis: &HilbertBasis, ambient: &Arc<VarSpace>) -> Result<FracPoly> {
    let defs = basis.definitions(ambient)?;
    let imgs: Vec<(&str, FracPoly)> = basis.names.iter().map(|s| s.as_str()).zip(defs).collect();
    p.substitute(&ChartMap::new(p.space(), ambient, imgs)?)
}

/// `W^{−2}Δ_k(WX_0, W^{1+1/k}X_1, W^{j/k}X_j)` in `(W, X_0, …, X_{k−1})`.
pub fn orbifold_circulant(k: u64) -> Result<FracPoly> {
    let names: Vec<String> = (0..k).map(|j| format!("X{j}")).collect();
    let fsp = Arc::new(VarSpace::new(vec![("W".into(), k)], names.clone())?);
    let wp = |e: Q| FracPoly::var_power(&fsp, VarRef::Div(0), &e);
    let mut vals = Vec::new();
    for j in 0..k {
        let x = FracPoly::var(&fsp, &format!("X{j}"))?;
        let e = match j {
            0 => qi(1),
            1 => qi(1) + q(1, k as i64),
            _ => q(j as i64, k as i64),
        };
        vals.push(&wp(e)? * &x);
    }
    let d = delta_k(&vals)?;
    let isp = Arc::new(VarSpace::new(vec![("W".into(), 1)], names)?);
    let d = d.embed(&isp).map_err(|_| Error::NonPolynomial("fractional W exponents remain".into()))?;
    d.div_exact(&FracPoly::var(&isp, "W")?.pow(2))
}

/// Transform of `∏X_j^{λ_j} = W^{m}S` by the `W`-chart of the blow-up of
/// `(W, X_j, S)`: `S' = W^{ν−1}∏X_j'^{λ_j}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransformedRelation {
    pub s: String,
    pub lambda: BTreeMap<String, u32>,
    pub w_exponent: u32,
    /// The transformed relation `S' − W^{ν−1}∏X'^λ` (strict transform).
    pub polynomial: String,
    pub graph_form: bool,
    pub trivial: bool,
}

pub fn toric_relation_transform(rel: &FamilyRelation) -> Result<TransformedRelation> {
    let sum: u32 = rel.lambda.values().sum();
    if rel.w_power >= sum || rel.lambda.is_empty() {
        return Err(Error::Domain("relation outside the family (ν < 1)".into()));
    }
    let nu = sum - rel.w_power;
    let mut names: Vec<String> = vec!["W".into(), rel.s.clone()];
    names.extend(rel.lambda.keys().cloned());
    let sp = Arc::new(VarSpace::new(vec![], names.clone())?);
    let w = FracPoly::var(&sp, "W")?;
    let mut lhs = FracPoly::one(&sp);
    for (x, &l) in &rel.lambda {
        lhs = &lhs * &FracPoly::var(&sp, x)?.pow(l);
    }
    let rhs = &w.pow(rel.w_power) * &FracPoly::var(&sp, &rel.s)?;
    let f = &rhs - &lhs;
    // W-chart: X_j = W X_j', S = W S' (primed names reuse the same slots).
    let imgs: Vec<(&str, FracPoly)> = names[1..].iter().map(|n| (n.as_str(), &w * &FracPoly::var(&sp, n).unwrap())).collect();
    let g = f.substitute(&ChartMap::new(&sp, &sp, imgs)?)?;
    let (st, _) = g.strict_transform("W")?;
    let mut expect = FracPoly::one(&sp);
    for (x, &l) in &rel.lambda {
        expect = &expect * &FracPoly::var(&sp, x)?.pow(l);
    }
    let expect = &FracPoly::var(&sp, &rel.s)? - &(&w.pow(nu - 1) * &expect);
    if st != expect {
        return domain("transformed relation differs from S' = W^(ν−1)∏X'^λ");
    }
    let text = st.to_string().replace(&rel.s, &format!("{}'", rel.s));
    let text = rel.lambda.keys().fold(text, |t, x| t.replace(x, &format!("{x}'")));
    Ok(TransformedRelation {
        s: rel.s.clone(),
        lambda: rel.lambda.clone(),
        w_exponent: nu - 1,
        polynomial: text,
        graph_form: true,
        trivial: nu == 1 && sum == 1,
    })
}

/// One weighted blow-up of the pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineStep {
    pub divisor: String,
    pub exceptional: String,
    pub parts: Vec<u64>,
    pub ell: u64,
    pub weights: Vec<(String, u64)>,
    pub multiplicity: String,
    pub expected_multiplicity: u64,
    pub strict_transform: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub divisor_order: Vec<String>,
    pub steps: Vec<PipelineStep>,
    pub group_moduli: Vec<u64>,
    pub final_action: DiagonalAction,
    #[serde(serialize_with = "ser_poly")]
    pub strict_transform: FracPoly,
    #[serde(serialize_with = "ser_polys")]
    pub linear_factors: Vec<FracPoly>,
    pub normal_crossings: bool,
    pub invariant: bool,
    pub free_off_exceptional: bool,
    pub group_order: u64,
    pub order_bound: u64,
    pub bound_ok: bool,
}

fn ser_poly<S: serde::Serializer>(p: &FracPoly, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&p.to_string())
}

fn ser_polys<S: serde::Serializer>(p: &[FracPoly], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(p.iter().map(|x| x.to_string()))
}

/// `r` successive weighted blow-ups with centres `{w_i = x = 0}` (declared
/// order), tracked in the `w_1⋯w_r`-chart.
pub fn gcirc_blowup_sequence(spec: &ProductNormalFormSpec) -> Result<PipelineReport> {
    if spec.factors.is_empty() {
        return Err(Error::InvalidSpec("empty product".into()));
    }
    for f in &spec.factors {
        let rep = crate::gcirc::validate_normal_form(f);
        if !rep.valid {
            return Err(Error::InvalidSpec(rep.messages.join("; ")));
        }
    }
    // Divisors in order of first appearance; the modulus of w_i in each factor.
    let mut divisors: Vec<String> = Vec::new();
    for f in &spec.factors {
        for w in &f.wvars {
            if !divisors.contains(w) {
                divisors.push(w.clone());
            }
        }
    }
    let mut xnames: Vec<String> = Vec::new();
    for f in &spec.factors {
        for v in &f.vars {
            if xnames.contains(v) || divisors.contains(v) {
                return Err(Error::InvalidSpec(format!("variable `{v}` is repeated")));
            }
            xnames.push(v.clone());
        }
    }
    let mut taken: BTreeSet<String> = divisors.iter().chain(&xnames).cloned().collect();
    let tnames: Vec<String> = (0..divisors.len())
        .map(|i| {
            let n = fresh(&taken, &format!("t{}", i + 1));
            taken.insert(n.clone());
            n
        })
        .collect();
    let start = product_normal_form_poly_named(spec, &divisors, &xnames)?;
    let mut cur = start;
    let mut steps = Vec::new();
    let mut group_moduli = Vec::new();
    let mut all_weights: Vec<BTreeMap<String, u64>> = Vec::new();
    let k_total = spec.order();
    for (i, wname) in divisors.iter().enumerate() {
        // Codimension-one data at T_i.
        let mut parts = Vec::new();
        let mut slot: Vec<(String, u64, u64)> = Vec::new(); // (x, part size, position)
        for f in &spec.factors {
            match f.wvars.iter().position(|w| w == wname) {
                Some(ii) => {
                    let p = f.moduli[ii];
                    parts.extend(std::iter::repeat(p).take((f.k / p) as usize));
                    for (j, v) in f.vars.iter().enumerate() {
                        let qv = (f.gamma_row(j)[ii].clone() * qi(p as i64)).to_integer().to_u64().unwrap();
                        slot.push((v.clone(), p, qv));
                    }
                }
                None => {
                    parts.extend(std::iter::repeat(1).take(f.k as usize));
                    for v in &f.vars {
                        slot.push((v.clone(), 1, 0));
                    }
                }
            }
        }
        let wv = inv_weights(&parts)?;
        let ell = wv.ell;
        let k1 = *parts.iter().max().unwrap();
        let mut wmap = BTreeMap::new();
        for (x, p, qv) in &slot {
            wmap.insert(x.clone(), (ell as i64 - ((qv * ell / p) as i64 - (ell / k1) as i64)) as u64);
        }
        // Substitute w_i = t^ℓ, x = t^ω x in the current chart.
        let sp = cur.space().clone();
        let div: Vec<(String, u64)> = sp
            .divisorial()
            .iter()
            .filter(|d| &d.name != wname)
            .map(|d| (d.name.clone(), d.bound))
            .collect();
        let mut free: Vec<String> = sp.free().to_vec();
        free.push(tnames[i].clone());
        let target = Arc::new(VarSpace::new(div, free)?);
        let t = FracPoly::var(&target, &tnames[i])?;
        let mut imgs: Vec<(&str, FracPoly)> = vec![(wname.as_str(), t.pow(ell as u32))];
        for x in &xnames {
            imgs.push((x.as_str(), &t.pow(wmap[x] as u32) * &FracPoly::var(&target, x)?));
        }
        let pulled = cur.substitute(&ChartMap::new(&sp, &target, imgs)?)?;
        let (st, mult) = pulled.strict_transform(&tnames[i])?;
        let expected = k_total * (ell + ell / k1);
        steps.push(PipelineStep {
            divisor: wname.clone(),
            exceptional: tnames[i].clone(),
            parts,
            ell,
            weights: std::iter::once((wname.clone(), ell))
                .chain(xnames.iter().map(|x| (x.clone(), wmap[x])))
                .collect(),
            multiplicity: crate::cyclotomic::fmt_q(&mult),
            expected_multiplicity: expected,
            strict_transform: st.to_string(),
        });
        group_moduli.push(ell);
        all_weights.push(wmap);
        cur = st;
    }
    // Final action of μ_{ℓ_1} × ⋯ × μ_{ℓ_r}.
    let mut vars = tnames.clone();
    vars.extend(xnames.iter().cloned());
    let rows: Vec<Vec<i64>> = (0..divisors.len())
        .map(|i| {
            let mut r: Vec<i64> = (0..divisors.len()).map(|h| (h == i) as i64).collect();
            r.extend(xnames.iter().map(|x| -(all_weights[i][x] as i64)));
            r
        })
        .collect();
    let group = AbelianGroup::new(group_moduli.clone())?;
    let final_action = DiagonalAction::new_reducing(group.clone(), vars, rows)?;
    let invariant = group
        .elements()
        .iter()
        .all(|g| cur.apply_group(&final_action, g).map(|h| h == cur).unwrap_or(false));
    let tref: Vec<&str> = tnames.iter().map(|s| s.as_str()).collect();
    let free_off_exceptional = free_off(&final_action, &tref);
    // Linear factors: the eigenvalue forms of each factor with w = 1.
    let sp = cur.space().clone();
    let mut linear = Vec::new();
    let mut coeff_rows: CMat = Vec::new();
    for f in &spec.factors {
        let ctx = crate::abelian::PairingContext::lcm(&f.quotient);
        for a in f.quotient.elements() {
            let mut form = FracPoly::zero(&sp);
            let mut row = vec![Cyclo::zero(); xnames.len()];
            for (j, v) in f.vars.iter().enumerate() {
                let c = character(&ctx, &f.quotient, &a, &f.labels[j]);
                form = &form + &FracPoly::var(&sp, v)?.scale(&c);
                row[xnames.iter().position(|x| x == v).unwrap()] = c;
            }
            linear.push(form);
            coeff_rows.push(row);
        }
    }
    let mut prod = FracPoly::one(&sp);
    for l in &linear {
        prod = &prod * l;
    }
    let normal_crossings = prod == cur && crank(&coeff_rows) == linear.len();
    let group_order = group.order();
    let order_bound = group_moduli.iter().sum::<u64>() + 1;
    Ok(PipelineReport {
        divisor_order: divisors,
        steps,
        group_moduli,
        final_action,
        strict_transform: cur,
        linear_factors: linear,
        normal_crossings,
        invariant,
        free_off_exceptional,
        group_order,
        order_bound,
        bound_ok: group_order <= order_bound,
    })
}

fn product_normal_form_poly_named(spec: &ProductNormalFormSpec, divisors: &[String], xnames: &[String]) -> Result<FracPoly> {
    let sp = Arc::new(VarSpace::new(
        divisors.iter().map(|d| (d.clone(), 1)).collect(),
        xnames.to_vec(),
    )?);
    let mut acc = FracPoly::one(&sp);
    for f in &spec.factors {
        acc = &acc * &normal_form_poly(f)?.embed(&sp)?;
    }
    Ok(acc)
}

/// Least common multiple of a weight list.
pub fn lcm_of(v: &[u64]) -> u64 {
    v.iter().fold(1, |a, &b| a.lcm(&b))
}
