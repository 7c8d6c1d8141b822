//! Invariant normal-crossings ideals under a diagonal finite abelian action:
//! semi-invariant generators, adapted coordinates and the nested normal form.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::abelian::{subgroup_from_generators, AbelianGroup, GroupElement, Subgroup};
use crate::cyclotomic::{q, qi, Cyclo};
use crate::error::{domain, Error, Result};
use crate::linalg::{det as cdet, inverse as cinverse, rank as crank, CMat};
use crate::polyring::{ChartMap, DiagonalAction, FracPoly, VarSpace};
use crate::split::SplitOptions;

/// Space with one free variable per acted-on variable.
pub fn action_space(action: &DiagonalAction) -> Result<Arc<VarSpace>> {
    Ok(Arc::new(VarSpace::new(vec![], action.vars.clone())?))
}

/// Coefficients of the linear part, one per action variable.
pub fn linear_row(f: &FracPoly, vars: &[String]) -> Vec<Cyclo> {
    let sp = f.space();
    let lin = f.homogeneous_part(&qi(1));
    let mut row = vec![Cyclo::zero(); vars.len()];
    let nd = sp.n_div();
    let names = sp.names();
    for t in lin.terms() {
        let idx = t
            .free
            .iter()
            .position(|&e| e == 1)
            .map(|i| i + nd)
            .or_else(|| t.w.iter().position(|e| *e == qi(1)));
        if let Some(idx) = idx {
            if let Some(c) = vars.iter().position(|v| v == names[idx]) {
                row[c] = t.coeff.clone();
            }
        }
    }
    row
}

fn constant_term(f: &FracPoly) -> Cyclo {
    f.homogeneous_part(&qi(0)).as_constant().unwrap_or_else(Cyclo::zero)
}

/// `u` with `a = u·b` and `u(0) ≠ 0`, when one divides the other polynomially.
pub fn unit_ratio(a: &FracPoly, b: &FracPoly) -> Option<FracPoly> {
    if a.is_zero() || b.is_zero() {
        return None;
    }
    if let Ok(u) = a.div_exact(b) {
        if !constant_term(&u).is_zero() {
            return Some(u);
        }
    }
    if let Ok(v) = b.div_exact(a) {
        if let Some(c) = v.as_constant() {
            if !c.is_zero() {
                return Some(FracPoly::constant(a.space(), c.inverse().ok()?));
            }
        }
    }
    None
}

/// Split `f` into `G`-semi-invariant parts (iterating over the generators).
pub fn full_split(f: &FracPoly, action: &DiagonalAction) -> Result<Vec<FracPoly>> {
    let mut parts = vec![f.clone()];
    for i in 0..action.group.rank() {
        let mut next = Vec::new();
        for p in &parts {
            next.extend(p.semi_invariant_split(action, i)?.into_iter().filter(|x| !x.is_zero()));
        }
        parts = next;
    }
    Ok(parts)
}

fn pivots(rows: &CMat) -> Vec<usize> {
    let mut m = rows.clone();
    let n = m.first().map(|r| r.len()).unwrap_or(0);
    let mut piv = Vec::new();
    let mut r = 0;
    for c in 0..n {
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].inverse().unwrap();
        for i in 0..m.len() {
            if i != r && !m[i][c].is_zero() {
                let f = &m[i][c] * &inv;
                for j in 0..n {
                    let d = &f * &m[r][j];
                    m[i][j] = &m[i][j] - &d;
                }
            }
        }
        piv.push(c);
        r += 1;
        if r == m.len() {
            break;
        }
    }
    piv
}

/// `p ∈ (gens)` in the local ring, for generators with independent linear
/// parts: `p` must vanish on the smooth germ `{gens = 0}`, checked through
/// degree `degree` of a series parametrisation.
pub fn in_smooth_ideal(p: &FracPoly, gens: &[FracPoly], vars: &[String], degree: u32) -> Result<bool> {
    if gens.is_empty() {
        return Ok(p.is_zero());
    }
    let rows: CMat = gens.iter().map(|g| linear_row(g, vars)).collect();
    if crank(&rows) != gens.len() {
        return Err(Error::DegenerateInput("generators have dependent linear parts".into()));
    }
    let piv = pivots(&rows);
    let a: CMat = rows.iter().map(|r| piv.iter().map(|&c| r[c].clone()).collect()).collect();
    let ainv = cinverse(&a)?;
    let sp = p.space().clone();
    let d = qi(degree as i64);
    let mut xp: Vec<FracPoly> = piv.iter().map(|&c| FracPoly::var(&sp, &vars[c])).collect::<Result<_>>()?;
    for _ in 0..=degree {
        let chart = ChartMap::new(
            &sp,
            &sp,
            piv.iter().map(|&c| vars[c].as_str()).zip(xp.iter().cloned()).collect(),
        )?;
        let gv: Vec<FracPoly> = gens.iter().map(|g| g.substitute(&chart).map(|x| x.truncate(&d))).collect::<Result<_>>()?;
        let mut changed = false;
        let mut next = Vec::new();
        for (i, x) in xp.iter().enumerate() {
            let mut corr = FracPoly::zero(&sp);
            for (j, g) in gv.iter().enumerate() {
                corr = &corr + &g.scale(&ainv[i][j]);
            }
            if !corr.is_zero() {
                changed = true;
            }
            next.push((x - &corr).truncate(&d));
        }
        xp = next;
        if !changed {
            break;
        }
    }
    let chart = ChartMap::new(&sp, &sp, piv.iter().map(|&c| vars[c].as_str()).zip(xp).collect())?;
    Ok(p.substitute(&chart)?.truncate(&d).is_zero())
}

fn default_degree() -> u32 {
    SplitOptions::default().degree_bound
}

/// Output of [`semi_invariant_generators`].
#[derive(Clone, Debug)]
pub struct SemiInvariantGenerators {
    pub generators: Vec<FracPoly>,
    /// Input generator each output came from.
    pub sources: Vec<usize>,
    /// Whether every output was checked to lie in the input ideal.
    pub membership_checked: bool,
}

impl SemiInvariantGenerators {
    pub fn to_json(&self) -> Value {
        json!({
            "generators": self.generators.iter().map(|g| g.to_string()).collect::<Vec<_>>(),
            "sources": self.sources,
            "membership_checked": self.membership_checked,
        })
    }
}

fn scalar_multiple(a: &FracPoly, b: &FracPoly) -> bool {
    match (a.terms().first(), b.terms().first()) {
        (Some(ta), Some(tb)) => {
            let c = match &ta.coeff / &tb.coeff {
                Ok(c) => c,
                Err(_) => return false,
            };
            *a == b.scale(&c)
        }
        _ => false,
    }
}

/// Bucket each generator by character; each input is the sum of its buckets.
/// Membership of the buckets in the ideal is verified when the inputs have
/// independent linear parts.
pub fn semi_invariant_generators(gens: &[FracPoly], action: &DiagonalAction) -> Result<SemiInvariantGenerators> {
    let mut out: Vec<FracPoly> = Vec::new();
    let mut sources = Vec::new();
    for (i, f) in gens.iter().enumerate() {
        let parts = full_split(f, action)?;
        let mut sum = FracPoly::zero(f.space());
        for p in &parts {
            sum = &sum + p;
        }
        if sum != *f {
            return domain("buckets do not sum to the input");
        }
        for p in parts {
            if !out.iter().any(|o| scalar_multiple(&p, o)) {
                out.push(p);
                sources.push(i);
            }
        }
    }
    let rows: CMat = gens.iter().map(|g| linear_row(g, &action.vars)).collect();
    let checkable = !gens.is_empty() && crank(&rows) == gens.len();
    if checkable {
        for p in &out {
            if !in_smooth_ideal(p, gens, &action.vars, default_degree())? {
                return domain(format!("`{p}` is not in the ideal: the ideal is not G-invariant"));
            }
        }
    }
    Ok(SemiInvariantGenerators {
        generators: out,
        sources,
        membership_checked: checkable,
    })
}

/// Semi-invariant generator of a principal ideal with nonzero linear part:
/// the character component containing the linear part.
pub fn semi_invariant_principal(f: &FracPoly, action: &DiagonalAction) -> Result<FracPoly> {
    let lin = linear_row(f, &action.vars);
    if lin.iter().all(|c| c.is_zero()) {
        return Err(Error::DegenerateInput(format!("`{f}` has zero linear part")));
    }
    let parts = full_split(f, action)?;
    let with_lin: Vec<&FracPoly> = parts
        .iter()
        .filter(|p| linear_row(p, &action.vars).iter().any(|c| !c.is_zero()))
        .collect();
    if with_lin.len() != 1 {
        return domain(format!("linear part of `{f}` is not semi-invariant: the ideal is not invariant"));
    }
    Ok(with_lin[0].clone())
}

/// A `G`-diagonal coordinate system adapted to divisors and a smooth `S`.
#[derive(Clone, Debug)]
pub struct AdaptedCoordinates {
    pub coords: Vec<(String, FracPoly)>,
    pub divisor_coords: Vec<usize>,
    pub s_coords: Vec<usize>,
    /// Divisors containing `S` (handled by the two-step reduction).
    pub containing_s: Vec<usize>,
}

impl AdaptedCoordinates {
    pub fn to_json(&self) -> Value {
        json!({
            "coordinates": self.coords.iter().map(|(n, p)| json!({"name": n, "value": p.to_string()})).collect::<Vec<_>>(),
            "divisor_coords": self.divisor_coords,
            "s_coords": self.s_coords,
            "divisors_containing_s": self.containing_s,
        })
    }
}

fn check_invariant_principal(f: &FracPoly, action: &DiagonalAction) -> Result<()> {
    for i in 0..action.group.rank() {
        let g = action.group.basis_element(i);
        let h = f.apply_group(action, &g)?;
        if unit_ratio(&h, f).is_none() {
            return domain(format!("ideal ({f}) is not invariant"));
        }
    }
    Ok(())
}

pub fn adapted_coordinates(action: &DiagonalAction, divisor_gens: &[FracPoly], s_gens: &[FracPoly]) -> Result<AdaptedCoordinates> {
    let vars = &action.vars;
    let sp = action_space(action)?;
    let deg = default_degree();
    let mut divs = Vec::new();
    for d in divisor_gens {
        let d = d.embed(&sp)?;
        check_invariant_principal(&d, action)?;
        let h = semi_invariant_principal(&d, action)?;
        if unit_ratio(&h, &d).is_none() {
            return domain(format!("semi-invariant part of ({d}) does not generate the same ideal"));
        }
        divs.push(h);
    }
    let s: Vec<FracPoly> = s_gens.iter().map(|x| x.embed(&sp)).collect::<Result<_>>()?;
    let srows: CMat = s.iter().map(|g| linear_row(g, vars)).collect();
    let beta = crank(&srows);
    if !s.is_empty() && beta != s.len() {
        return Err(Error::DegenerateInput("S generators have dependent linear parts".into()));
    }
    for g in &s {
        for i in 0..action.group.rank() {
            let h = g.apply_group(action, &action.group.basis_element(i))?;
            if !in_smooth_ideal(&h, &s, vars, deg)? {
                return domain("the ideal of S is not invariant");
            }
        }
    }
    let mut containing = Vec::new();
    for (j, d) in divs.iter().enumerate() {
        if !s.is_empty() && in_smooth_ideal(d, &s, vars, deg)? {
            containing.push(j);
        }
    }
    // S coordinates: E'' generators first, then semi-invariant buckets.
    let mut s_chosen: Vec<FracPoly> = containing.iter().map(|&j| divs[j].clone()).collect();
    let mut rows: CMat = s_chosen.iter().map(|g| linear_row(g, vars)).collect();
    if crank(&rows) != rows.len() {
        return Err(Error::DegenerateInput("divisors containing S are not transverse".into()));
    }
    let buckets = semi_invariant_generators(&s, action)?;
    for b in &buckets.generators {
        if rows.len() == beta {
            break;
        }
        let mut trial = rows.clone();
        trial.push(linear_row(b, vars));
        if crank(&trial) == trial.len() {
            rows = trial;
            s_chosen.push(b.clone());
        }
    }
    if rows.len() != beta {
        return Err(Error::DegenerateInput("semi-invariant parts do not span the ideal of S".into()));
    }
    let mut coords: Vec<(String, FracPoly)> = Vec::new();
    let mut divisor_coords = vec![usize::MAX; divs.len()];
    for (j, d) in divs.iter().enumerate() {
        if !containing.contains(&j) {
            divisor_coords[j] = coords.len();
            coords.push((format!("e{}", j + 1), d.clone()));
        }
    }
    let mut s_coords = Vec::new();
    for (m, g) in s_chosen.iter().enumerate() {
        if m < containing.len() {
            divisor_coords[containing[m]] = coords.len();
            s_coords.push(coords.len());
            coords.push((format!("e{}", containing[m] + 1), g.clone()));
        } else {
            s_coords.push(coords.len());
            coords.push((format!("s{}", m + 1 - containing.len()), g.clone()));
        }
    }
    let mut all: CMat = coords.iter().map(|(_, g)| linear_row(g, vars)).collect();
    if crank(&all) != all.len() {
        return Err(Error::DegenerateInput("E and S are not transverse".into()));
    }
    for (c, v) in vars.iter().enumerate() {
        if all.len() == vars.len() {
            break;
        }
        let mut e = vec![Cyclo::zero(); vars.len()];
        e[c] = Cyclo::one();
        let mut trial = all.clone();
        trial.push(e);
        if crank(&trial) == trial.len() {
            all = trial;
            coords.push((v.clone(), FracPoly::var(&sp, v)?));
        }
    }
    Ok(AdaptedCoordinates {
        coords,
        divisor_coords,
        s_coords,
        containing_s: containing,
    })
}

/// `I = (f_1⋯f_k)` with a diagonal action; factors are polynomials in the action variables.
#[derive(Clone, Debug)]
pub struct InvariantNCInput {
    pub action: DiagonalAction,
    pub factors: Vec<FracPoly>,
    /// Optional boundary divisor generators.
    pub divisors: Vec<FracPoly>,
}

impl InvariantNCInput {
    pub fn new(action: DiagonalAction, factors: Vec<FracPoly>) -> Result<Self> {
        let sp = action_space(&action)?;
        let factors: Vec<FracPoly> = factors.iter().map(|f| f.embed(&sp)).collect::<Result<_>>()?;
        if factors.is_empty() {
            return domain("at least one factor is required");
        }
        let rows: CMat = factors.iter().map(|f| linear_row(f, &action.vars)).collect();
        if crank(&rows) != factors.len() {
            return Err(Error::DegenerateInput("linear parts of the factors are dependent".into()));
        }
        Ok(InvariantNCInput {
            action,
            factors,
            divisors: vec![],
        })
    }

    pub fn with_divisors(mut self, divisors: Vec<FracPoly>) -> Result<Self> {
        let sp = action_space(&self.action)?;
        self.divisors = divisors.iter().map(|f| f.embed(&sp)).collect::<Result<_>>()?;
        Ok(self)
    }

    /// Factors from the orbit of the ideal `(f_1)`.
    pub fn from_orbit(action: DiagonalAction, f1: &FracPoly) -> Result<Self> {
        let sp = action_space(&action)?;
        let f1 = f1.embed(&sp)?;
        let mut factors: Vec<FracPoly> = Vec::new();
        for g in action.group.elements() {
            let h = f1.apply_group(&action, &g)?;
            if !factors.iter().any(|e| unit_ratio(&h, e).is_some()) {
                factors.push(h);
            }
        }
        Self::new(action, factors)
    }

    /// JSON `{"action": …, "factors": [..]}` or `{"action": …, "generator": ".."}`.
    pub fn from_json(v: &Value) -> Result<Self> {
        let action: DiagonalAction = serde_json::from_value(v.get("action").cloned().ok_or_else(|| Error::Parse("missing `action`".into()))?)
            .map_err(|e| Error::Parse(e.to_string()))?;
        let action = DiagonalAction::new(action.group, action.vars, action.weights)?;
        let sp = action_space(&action)?;
        let polys = |key: &str| -> Result<Vec<FracPoly>> {
            match v.get(key) {
                None => Ok(vec![]),
                Some(Value::Array(fs)) => fs
                    .iter()
                    .map(|s| {
                        s.as_str()
                            .ok_or_else(|| Error::Parse(format!("`{key}` entries must be strings")))
                            .and_then(|s| FracPoly::parse(&sp, s))
                    })
                    .collect(),
                Some(_) => Err(Error::Parse(format!("`{key}` must be an array"))),
            }
        };
        let divisors = polys("divisors")?;
        let base = if v.get("factors").is_some() {
            Self::new(action, polys("factors")?)?
        } else if let Some(g) = v.get("generator").and_then(|x| x.as_str()) {
            Self::from_orbit(action, &FracPoly::parse(&sp, g)?)?
        } else {
            return Err(Error::Parse("need `factors` or `generator`".into()));
        };
        base.with_divisors(divisors)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "action": self.action,
            "factors": self.factors.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
            "divisors": self.divisors.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
        })
    }

    pub fn product(&self) -> FracPoly {
        let mut p = FracPoly::one(self.factors[0].space());
        for f in &self.factors {
            p = &p * f;
        }
        p
    }
}

/// One nesting level: generator `e_i` with quotient order `q` and the
/// residues `γ` of the parts it splits.
#[derive(Clone, Debug)]
pub struct NestLevel {
    pub generator: usize,
    pub p: u64,
    pub q: u64,
    /// `γ(ℓ_1, …, ℓ_{m−1})` in `[0, p/q)`.
    pub gamma: BTreeMap<Vec<u64>, u64>,
}

/// Output of [`invariant_nc_normal_form`].
#[derive(Clone, Debug)]
pub struct NestedNormalForm {
    pub k: usize,
    pub stabilizer: Vec<GroupElement>,
    pub levels: Vec<NestLevel>,
    /// Semi-invariant replacement of `f_1`.
    pub f1: FracPoly,
    /// `h_{ℓ_1…ℓ_s}` in lexicographic order of `ℓ`.
    pub coords: Vec<(Vec<u64>, FracPoly)>,
    /// Row `m` holds the coefficients of `g_m · f_1` in the `h_ℓ`.
    pub matrix: CMat,
    pub det: Cyclo,
    pub formula_agrees: bool,
    /// `g_m · f_1 = Σ_ℓ C[m][ℓ] h_ℓ`.
    pub factors: Vec<FracPoly>,
    /// `input product = unit · ∏ factors`.
    pub unit: FracPoly,
    /// Original variables completing the `h_ℓ` to a coordinate system.
    pub completion: Vec<String>,
    /// With boundary divisors: adapted coordinates computed first, then
    /// whether the `h_ℓ` stay compatible with them.
    pub adapted: Option<AdaptedCoordinates>,
    pub divisor_adapted: Option<bool>,
}

impl NestedNormalForm {
    pub fn chain(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.q).collect()
    }

    /// Product of the recombined factors.
    pub fn product(&self) -> FracPoly {
        let mut p = FracPoly::one(self.f1.space());
        for f in &self.factors {
            p = &p * f;
        }
        p
    }

    /// Rows scaled so that the coefficient of `h_0` is 1.
    pub fn normalized_matrix(&self) -> CMat {
        self.matrix
            .iter()
            .map(|r| {
                let inv = r[0].inverse().unwrap();
                r.iter().map(|c| c * &inv).collect()
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let text = |m: &CMat| -> Vec<Vec<String>> { m.iter().map(|r| r.iter().map(|c| c.to_text()).collect()).collect() };
        json!({
            "k": self.k,
            "chain": self.chain(),
            "generators_used": self.levels.iter().map(|l| l.generator).collect::<Vec<_>>(),
            "gamma": self.levels.iter().map(|l| l.gamma.iter().map(|(pre, g)| json!({"prefix": pre, "gamma": g})).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "stabilizer": self.stabilizer,
            "f1": self.f1.to_string(),
            "coords": self.coords.iter().map(|(l, h)| json!({"index": l, "h": h.to_string()})).collect::<Vec<_>>(),
            "matrix": text(&self.matrix),
            "normalized_matrix": text(&self.normalized_matrix()),
            "det": self.det.to_text(),
            "formula_agrees": self.formula_agrees,
            "factors": self.factors.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
            "unit": self.unit.to_string(),
            "completion": self.completion,
            "adapted_coordinates": self.adapted.as_ref().map(|a| a.to_json()),
            "divisor_adapted": self.divisor_adapted,
        })
    }
}

/// Scalar `c` with `g·h = c·h`, if `h` is `g`-semi-invariant.
fn eigen_scalar(h: &FracPoly, action: &DiagonalAction, g: &GroupElement) -> Result<Option<Cyclo>> {
    let gh = h.apply_group(action, g)?;
    let (Some(a), Some(b)) = (gh.terms().first().cloned(), h.terms().first().cloned()) else {
        return Ok(None);
    };
    let c = (&a.coeff / &b.coeff)?;
    Ok(if gh == h.scale(&c) { Some(c) } else { None })
}

/// Factor permutation of each group element (`perm[g][j]`), with the units.
fn factor_action(input: &InvariantNCInput) -> Result<(Vec<GroupElement>, Vec<Vec<usize>>, Vec<FracPoly>)> {
    let elems = input.action.group.elements();
    let mut perms = Vec::new();
    let mut units0 = Vec::new();
    for g in &elems {
        let mut perm = Vec::new();
        for (j, f) in input.factors.iter().enumerate() {
            let h = f.apply_group(&input.action, g)?;
            let m = input
                .factors
                .iter()
                .position(|e| unit_ratio(&h, e).is_some())
                .ok_or_else(|| Error::Domain(format!("g = {g} sends ({f}) outside the factor ideals: I is not invariant")))?;
            if j == 0 {
                units0.push(unit_ratio(&h, &input.factors[m]).unwrap());
            }
            perm.push(m);
        }
        perms.push(perm);
    }
    Ok((elems, perms, units0))
}

fn orbit_partition(perms: &[Vec<usize>], k: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; k];
    let mut out = Vec::new();
    for s in 0..k {
        if seen[s] {
            continue;
        }
        let mut orbit: Vec<usize> = perms.iter().map(|p| p[s]).collect();
        orbit.push(s);
        orbit.sort();
        orbit.dedup();
        for &x in &orbit {
            seen[x] = true;
        }
        out.push(orbit);
    }
    out
}

/// Nested normal form of an invariant nc ideal that does not split.
pub fn invariant_nc_normal_form(input: &InvariantNCInput) -> Result<NestedNormalForm> {
    let action = &input.action;
    let g = &action.group;
    let k = input.factors.len();
    let vars = &action.vars;
    let adapted = if input.divisors.is_empty() {
        None
    } else {
        Some(adapted_coordinates(action, &input.divisors, &input.factors)?)
    };
    let (elems, perms, units0) = factor_action(input)?;
    let part = orbit_partition(&perms, k);
    if part.len() > 1 {
        return Err(Error::SplitsInvariantly { partition: part });
    }
    // H: stabilizer of (f_1).
    let h_idx: Vec<usize> = (0..elems.len()).filter(|&i| perms[i][0] == 0).collect();
    let stab: Vec<GroupElement> = h_idx.iter().map(|&i| elems[i].clone()).collect();
    let h = Subgroup::from_elements(g, stab.clone())?;
    if (g.order() / h.order()) as usize != k {
        return domain("|G/H| differs from the number of factors");
    }
    // Make f_1 H-semi-invariant: average with the character of its linear part.
    let f1 = &input.factors[0];
    let lin = linear_row(f1, vars);
    let sp = f1.space().clone();
    let n_h = Cyclo::rational(q(1, h.order() as i64));
    let mut avg = FracPoly::zero(&sp);
    let mut a = FracPoly::zero(&sp);
    for &i in &h_idx {
        let e = &elems[i];
        let chi = lin
            .iter()
            .enumerate()
            .find(|(_, c)| !c.is_zero())
            .map(|(j, _)| action.scalar(e, j))
            .unwrap();
        for (j, c) in lin.iter().enumerate() {
            if !c.is_zero() && action.scalar(e, j) != chi {
                return domain("linear part of f_1 is not H-semi-invariant");
            }
        }
        let cinv = chi.inverse()?;
        avg = &avg + &f1.apply_group(action, e)?.scale(&cinv);
        a = &a + &units0[i].scale(&cinv);
    }
    let f1p = avg.scale(&n_h);
    let a = a.scale(&n_h);
    if f1p != &a * f1 || constant_term(&a).is_zero() {
        return domain("averaged generator does not generate (f_1)");
    }
    // Nested levels.
    let mut hcur = h.clone();
    let mut levels: Vec<NestLevel> = Vec::new();
    let mut parts: Vec<(Vec<u64>, FracPoly)> = vec![(vec![], f1p.clone())];
    let mut prod_q = 1u64;
    for i in 0..g.rank() {
        if prod_q as usize == k {
            break;
        }
        let p = g.moduli()[i];
        let e = g.basis_element(i);
        let qv = (1..=p).find(|&qq| hcur.contains(&g.scale(&e, qq as i64))).unwrap();
        hcur = hcur.join(&subgroup_from_generators(g, &[e.clone()])?);
        if qv == 1 {
            continue;
        }
        let step = p / qv;
        let mut gamma = BTreeMap::new();
        let mut next = Vec::new();
        for (pre, hpart) in &parts {
            let comps = hpart.semi_invariant_split(action, i)?;
            let residues: Vec<u64> = (0..p).filter(|&c| !comps[c as usize].is_zero()).map(|c| c % step).collect();
            let r0 = *residues
                .first()
                .ok_or_else(|| Error::DegenerateInput("a nested part vanishes".into()))?;
            if residues.iter().any(|&r| r != r0) {
                return domain("a part is not semi-invariant for the kernel: I is not invariant");
            }
            gamma.insert(pre.clone(), r0);
            for l in 0..qv {
                let mut idx = pre.clone();
                idx.push(l);
                next.push((idx, comps[(r0 + l * step) as usize].clone()));
            }
        }
        parts = next;
        prod_q *= qv;
        levels.push(NestLevel {
            generator: i,
            p,
            q: qv,
            gamma,
        });
    }
    if prod_q as usize != k {
        return domain("the chain of quotient orders does not reach k");
    }
    let hrows: CMat = parts.iter().map(|(_, h)| linear_row(h, vars)).collect();
    if crank(&hrows) != k {
        return Err(Error::DegenerateInput("nested parts have dependent linear parts".into()));
    }
    // Coefficient matrix, directly and from the closed formula.
    let ms: Vec<Vec<u64>> = parts.iter().map(|(l, _)| l.clone()).collect();
    let g_of = |m: &[u64]| -> GroupElement {
        let mut x = g.identity();
        for (lv, &mi) in levels.iter().zip(m) {
            x = g.add(&x, &g.scale(&g.basis_element(lv.generator), mi as i64));
        }
        x
    };
    let mut matrix: CMat = Vec::new();
    let mut formula: CMat = Vec::new();
    for m in &ms {
        let gm = g_of(m);
        let mut row = Vec::new();
        let mut frow = Vec::new();
        for (l, hpart) in &parts {
            let c = eigen_scalar(hpart, action, &gm)?
                .ok_or_else(|| Error::Domain("nested part is not semi-invariant".into()))?;
            row.push(c);
            let mut f = Cyclo::one();
            for (lvl, lv) in levels.iter().enumerate() {
                let gam = lv.gamma[&l[..lvl].to_vec()];
                f = &f * &Cyclo::eps(lv.p, (m[lvl] * gam) as i64);
                f = &f * &Cyclo::eps(lv.q, (m[lvl] * l[lvl]) as i64);
            }
            frow.push(f);
        }
        matrix.push(row);
        formula.push(frow);
    }
    let formula_agrees = matrix == formula;
    let det = cdet(&matrix);
    if det.is_zero() {
        return Err(Error::DegenerateInput("coefficient matrix is singular".into()));
    }
    let mut factors = Vec::new();
    for (m, row) in ms.iter().zip(&matrix) {
        let mut fm = FracPoly::zero(&sp);
        for ((_, hpart), c) in parts.iter().zip(row) {
            fm = &fm + &hpart.scale(c);
        }
        if fm != f1p.apply_group(action, &g_of(m))? {
            return domain("recombined factor differs from the translate of f_1");
        }
        factors.push(fm);
    }
    let mut prod = FracPoly::one(&sp);
    for f in &factors {
        prod = &prod * f;
    }
    let unit = unit_ratio(&input.product(), &prod)
        .ok_or_else(|| Error::Domain("product of the recombined factors does not generate I".into()))?;
    // Complete the h's with original variables.
    let mut all = hrows.clone();
    let mut completion = Vec::new();
    for (c, v) in vars.iter().enumerate() {
        let mut e = vec![Cyclo::zero(); vars.len()];
        e[c] = Cyclo::one();
        let mut trial = all.clone();
        trial.push(e);
        if crank(&trial) == trial.len() {
            all = trial;
            completion.push(v.clone());
        }
    }
    let divisor_adapted = adapted.as_ref().map(|a| divisor_compatible(a, &parts, vars));
    Ok(NestedNormalForm {
        k,
        stabilizer: stab,
        levels,
        f1: f1p,
        coords: parts,
        matrix,
        det,
        formula_agrees,
        factors,
        unit,
        completion,
        adapted,
        divisor_adapted,
    })
}

/// Divisors containing `S` must be one of the `h_ℓ` up to a scalar; the
/// others must stay transverse to all of them.
fn divisor_compatible(a: &AdaptedCoordinates, parts: &[(Vec<u64>, FracPoly)], vars: &[String]) -> bool {
    let mut rows: CMat = parts.iter().map(|(_, h)| linear_row(h, vars)).collect();
    for (j, &c) in a.divisor_coords.iter().enumerate() {
        let d = &a.coords[c].1;
        if a.containing_s.contains(&j) {
            if !parts.iter().any(|(_, h)| scalar_multiple(d, h)) {
                return false;
            }
        } else {
            rows.push(linear_row(d, vars));
        }
    }
    crank(&rows) == rows.len()
}

/// Random-instance helper: the ideal orbit of `f_1` when it is nc.
pub fn orbit_instance(action: &DiagonalAction, f1: &FracPoly) -> Option<InvariantNCInput> {
    InvariantNCInput::from_orbit(action.clone(), f1).ok()
}

/// Group `Z_{p_1} × ⋯` with weights given row-wise; convenience for tests and the CLI.
pub fn diagonal_action(moduli: &[u64], vars: &[&str], weights: Vec<Vec<u64>>) -> Result<DiagonalAction> {
    DiagonalAction::new(
        AbelianGroup::new(moduli.to_vec())?,
        vars.iter().map(|s| s.to_string()).collect(),
        weights,
    )
}
