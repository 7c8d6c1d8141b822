//! Group-circulant matrices and determinants, circulant normal forms and the
//! combinatorics around them (validation, codimension-one factorization,
//! merging of products, exponent cleaning, averaging of roots).

use std::collections::BTreeMap;
use std::sync::Arc;

use num::{Integer, Signed, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::abelian::{
    group_invariant_factors, pairing_unchecked, perp, quotient, quotient_invariant_factors, AbelianGroup,
    GroupElement, PairingContext, Subgroup,
};
use crate::cyclotomic::{fmt_q, parse_q, q, qi, Cyclo, Q};
use crate::error::{domain, Error, Result};
use crate::linalg::{det as cdet, CMat};
use crate::polyring::{ChartMap, FracPoly, VarSpace};

/// `C_Γ`: entry `(i, j)` is the index of `g_j − g_i` in the ordering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CirculantMatrix {
    pub group: AbelianGroup,
    pub ordering: Vec<GroupElement>,
    pub entries: Vec<Vec<usize>>,
}

fn check_ordering(g: &AbelianGroup, ordering: &[GroupElement]) -> Result<()> {
    if ordering.len() as u64 != g.order() {
        return domain(format!("ordering has {} elements, group has {}", ordering.len(), g.order()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for e in ordering {
        if !g.contains(e) || !seen.insert(e.clone()) {
            return domain("ordering is not a bijection onto the group");
        }
    }
    Ok(())
}

pub fn circulant_matrix(g: &AbelianGroup, ordering: &[GroupElement]) -> Result<CirculantMatrix> {
    check_ordering(g, ordering)?;
    let index: BTreeMap<&GroupElement, usize> = ordering.iter().enumerate().map(|(i, e)| (e, i)).collect();
    let entries = ordering
        .iter()
        .map(|gi| ordering.iter().map(|gj| index[&g.sub(gj, gi)]).collect())
        .collect();
    Ok(CirculantMatrix {
        group: g.clone(),
        ordering: ordering.to_vec(),
        entries,
    })
}

impl CirculantMatrix {
    /// Render with symbols `X0, X1, …` (indices into the ordering).
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|row| {
                let r: Vec<String> = row.iter().map(|i| format!("X{i}")).collect();
                format!("[{}]", r.join(", "))
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// The matrix with a value substituted for each symbol.
    pub fn instantiate(&self, values: &[FracPoly]) -> Vec<Vec<FracPoly>> {
        self.entries
            .iter()
            .map(|row| row.iter().map(|&i| values[i].clone()).collect())
            .collect()
    }
}

/// `χ_a(ℓ) = ε_{k}^{⟨a,ℓ⟩}` for the pairing modulus `k` of the context.
pub fn character(ctx: &PairingContext, g: &AbelianGroup, a: &GroupElement, l: &GroupElement) -> Cyclo {
    Cyclo::eps(ctx.k(), pairing_unchecked(ctx.k(), g, a, l) as i64)
}

/// One eigenpair: `Ψ = (χ_a(g_i))_i` and `Y = Σ_i coeffs[i]·X_{g_i}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenPair {
    pub label: GroupElement,
    pub vector: Vec<Cyclo>,
    pub coeffs: Vec<Cyclo>,
}

/// Eigenpairs of `C_Γ` for the given ordering, labelled by the characters of Γ.
pub fn eigen_system(g: &AbelianGroup, ordering: &[GroupElement], ctx: &PairingContext) -> Result<Vec<EigenPair>> {
    check_ordering(g, ordering)?;
    if g.moduli().iter().any(|p| ctx.k() % p != 0) {
        return domain("pairing modulus is not a common multiple of the moduli");
    }
    let pairs: Vec<EigenPair> = g
        .elements()
        .into_iter()
        .map(|a| {
            let v: Vec<Cyclo> = ordering.iter().map(|l| character(ctx, g, &a, l)).collect();
            EigenPair {
                label: a,
                vector: v.clone(),
                coeffs: v,
            }
        })
        .collect();
    let m: CMat = pairs.iter().map(|p| p.coeffs.clone()).collect();
    if cdet(&m).is_zero() {
        return Err(Error::DegenerateInput("pairing is degenerate on the group".into()));
    }
    Ok(pairs)
}

/// Eigenvalue forms of `Γ ≅ G/H` realised inside `G`: labels run over coset
/// representatives `j̄` and coefficients over `ℓ ∈ H⊥` (in lexicographic order).
pub fn eigen_system_ambient(g: &AbelianGroup, h: &Subgroup, ctx: &PairingContext) -> Result<(Vec<GroupElement>, Vec<EigenPair>)> {
    let hp = perp(ctx, h).elements();
    let reps = quotient(g, h)?.representatives;
    let pairs: Vec<EigenPair> = reps
        .iter()
        .map(|j| {
            let v: Vec<Cyclo> = hp.iter().map(|l| character(ctx, g, j, l)).collect();
            EigenPair {
                label: j.clone(),
                vector: v.clone(),
                coeffs: v,
            }
        })
        .collect();
    let m: CMat = pairs.iter().map(|p| p.coeffs.clone()).collect();
    if m.len() != hp.len() || cdet(&m).is_zero() {
        return Err(Error::DegenerateInput("pairing is degenerate on H⊥ × G/H".into()));
    }
    Ok((hp, pairs))
}

fn symbol_space(t: usize) -> Arc<VarSpace> {
    let names: Vec<String> = (0..t).map(|i| format!("X{i}")).collect();
    Arc::new(VarSpace::new(vec![], names).expect("distinct symbols"))
}

/// Check `C·Ψ = Y·Ψ` with independent symbols `X_i`.
pub fn verify_eigenpair(mat: &CirculantMatrix, pair: &EigenPair) -> bool {
    let t = mat.ordering.len();
    let sp = symbol_space(t);
    let xs: Vec<FracPoly> = (0..t).map(|i| FracPoly::var(&sp, &format!("X{i}")).unwrap()).collect();
    let y = linear_form(&sp, &pair.coeffs, &xs);
    (0..t).all(|i| {
        let mut lhs = FracPoly::zero(&sp);
        for j in 0..t {
            lhs = &lhs + &xs[mat.entries[i][j]].scale(&pair.vector[j]);
        }
        lhs == y.scale(&pair.vector[i])
    })
}

fn linear_form(sp: &Arc<VarSpace>, coeffs: &[Cyclo], values: &[FracPoly]) -> FracPoly {
    let mut acc = FracPoly::zero(sp);
    for (c, v) in coeffs.iter().zip(values) {
        acc = &acc + &v.scale(c);
    }
    acc
}

/// Determinant by cofactor-free permutation expansion.
pub fn leibniz_det(m: &[Vec<FracPoly>]) -> Result<FracPoly> {
    let n = m.len();
    let sp = m.first().and_then(|r| r.first()).map(|p| p.space().clone());
    let Some(sp) = sp else {
        return domain("empty matrix");
    };
    let mut acc = FracPoly::zero(&sp);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut sign = 1i64;
    let push = |perm: &[usize], sign: i64, acc: &mut FracPoly| -> Result<()> {
        let mut t = FracPoly::constant(&sp, Cyclo::int(sign));
        for (i, &j) in perm.iter().enumerate() {
            t = t.checked_mul(&m[i][j])?;
            if t.is_zero() {
                break;
            }
        }
        *acc = acc.checked_add(&t)?;
        Ok(())
    };
    push(&perm, sign, &mut acc)?;
    // Heap's algorithm; each swap flips the sign.
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            sign = -sign;
            push(&perm, sign, &mut acc)?;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(acc)
}

/// `Δ_Γ(values)` as the product of the eigenvalue forms. `values[i]` is the
/// value of the symbol `X_{ordering[i]}`.
pub fn gcirc_det(g: &AbelianGroup, ordering: &[GroupElement], values: &[FracPoly]) -> Result<FracPoly> {
    if values.len() as u64 != g.order() {
        return domain(format!("{} values for a group of order {}", values.len(), g.order()));
    }
    let ctx = PairingContext::lcm(g);
    let pairs = eigen_system(g, ordering, &ctx)?;
    let sp = merged_space(values)?;
    let vals: Vec<FracPoly> = values.iter().map(|v| v.embed(&sp)).collect::<Result<_>>()?;
    let mut prod = FracPoly::one(&sp);
    for p in &pairs {
        prod = &prod * &linear_form(&sp, &p.coeffs, &vals);
    }
    if g.order() <= 4 {
        let mat = circulant_matrix(g, ordering)?;
        let l = leibniz_det(&mat.instantiate(&vals))?;
        if l != prod {
            return domain("eigenvalue product disagrees with the permutation expansion");
        }
    }
    Ok(prod)
}

fn merged_space(values: &[FracPoly]) -> Result<Arc<VarSpace>> {
    let mut sp = (**values
        .first()
        .ok_or_else(|| Error::Domain("no values".into()))?
        .space())
    .clone();
    for v in &values[1..] {
        if **v.space() != sp {
            sp = VarSpace::merge(&sp, v.space())?;
        }
    }
    Ok(Arc::new(sp))
}

/// Standard cyclic circulant `Δ_k` on the given values.
pub fn delta_k(values: &[FracPoly]) -> Result<FracPoly> {
    let g = AbelianGroup::cyclic(values.len() as u64);
    gcirc_det(&g, &g.elements(), values)
}

/// Exponents and labels of a `Γ`-circulant normal form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormalFormSpec {
    pub moduli: Vec<u64>,
    pub k: u64,
    /// Row `j−1` holds `(γ_{j1}, …, γ_{jr})` for `j = 1, …, k−1`.
    pub gamma: Vec<Vec<Q>>,
    pub quotient: AbelianGroup,
    /// `ℓ_0 = 0, ℓ_1, …, ℓ_{k−1}`.
    pub labels: Vec<GroupElement>,
    /// Names of `x_0, …, x_{k−1}`.
    pub vars: Vec<String>,
    /// Names of `w_1, …, w_r`.
    pub wvars: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SpecJson {
    moduli: Vec<u64>,
    k: u64,
    gamma: Vec<Vec<String>>,
    quotient: AbelianGroup,
    labels: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vars: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wvars: Option<Vec<String>>,
}

impl Serialize for NormalFormSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SpecJson {
            moduli: self.moduli.clone(),
            k: self.k,
            gamma: self.gamma.iter().map(|r| r.iter().map(fmt_q).collect()).collect(),
            quotient: self.quotient.clone(),
            labels: self.labels.iter().map(|l| l.0.clone()).collect(),
            vars: Some(self.vars.clone()),
            wvars: Some(self.wvars.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NormalFormSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = SpecJson::deserialize(d)?;
        let gamma = j
            .gamma
            .iter()
            .map(|r| r.iter().map(|s| parse_q(s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        NormalFormSpec::new(
            j.moduli,
            j.k,
            gamma,
            j.quotient,
            j.labels.into_iter().map(GroupElement).collect(),
            j.vars,
            j.wvars,
        )
        .map_err(D::Error::custom)
    }
}

pub fn default_vars(k: u64) -> Vec<String> {
    (0..k).map(|j| format!("x{j}")).collect()
}

pub fn default_wvars(r: usize) -> Vec<String> {
    if r == 1 {
        vec!["w".into()]
    } else {
        (1..=r).map(|i| format!("w{i}")).collect()
    }
}

impl NormalFormSpec {
    /// Shape checks only; the defining conditions are checked by
    /// [`validate_normal_form`].
    pub fn new(
        moduli: Vec<u64>,
        k: u64,
        gamma: Vec<Vec<Q>>,
        quotient: AbelianGroup,
        labels: Vec<GroupElement>,
        vars: Option<Vec<String>>,
        wvars: Option<Vec<String>>,
    ) -> Result<Self> {
        let r = moduli.len();
        if k == 0 || moduli.iter().any(|&p| p == 0) {
            return Err(Error::InvalidSpec("orders must be positive".into()));
        }
        if gamma.len() as u64 != k - 1 || gamma.iter().any(|row| row.len() != r) {
            return Err(Error::InvalidSpec(format!("gamma must be a {}×{} matrix", k - 1, r)));
        }
        if labels.len() as u64 != k {
            return Err(Error::InvalidSpec("one label per variable is required".into()));
        }
        if labels.iter().any(|l| !quotient.contains(l)) {
            return Err(Error::InvalidSpec("label outside the quotient group".into()));
        }
        let vars = vars.unwrap_or_else(|| default_vars(k));
        let wvars = wvars.unwrap_or_else(|| default_wvars(r));
        if vars.len() as u64 != k || wvars.len() != r {
            return Err(Error::InvalidSpec("wrong number of variable names".into()));
        }
        Ok(NormalFormSpec {
            moduli,
            k,
            gamma,
            quotient,
            labels,
            vars,
            wvars,
        })
    }

    /// `cp(k)`: `Δ_k(x_0, w^{1/k}x_1, …, w^{(k−1)/k}x_{k−1})`.
    pub fn cpk(k: u64) -> Self {
        let gamma = (1..k).map(|j| vec![q(j as i64, k as i64)]).collect();
        let g = AbelianGroup::cyclic(k);
        let labels = g.elements();
        NormalFormSpec::new(vec![k], k, gamma, g, labels, None, None).expect("cp(k) spec")
    }

    /// Like [`NormalFormSpec::cpk`] with the conventional names
    /// (`z, x` for k = 2 and `z, y, x` for k = 3).
    pub fn cpk_named(k: u64) -> Self {
        let mut s = Self::cpk(k);
        s.vars = match k {
            2 => vec!["z".into(), "x".into()],
            3 => vec!["z".into(), "y".into(), "x".into()],
            _ => default_vars(k),
        };
        s
    }

    /// The Klein-four example: `Δ_{Z2×Z2}(x_0, w_1^{1/2}x_1, w_2^{1/2}x_2, (w_1w_2)^{1/2}x_3)`.
    pub fn klein() -> Self {
        let g = AbelianGroup::new(vec![2, 2]).unwrap();
        let gamma = vec![vec![q(1, 2), qi(0)], vec![qi(0), q(1, 2)], vec![q(1, 2), q(1, 2)]];
        let labels = vec![
            GroupElement(vec![0, 0]),
            GroupElement(vec![1, 0]),
            GroupElement(vec![0, 1]),
            GroupElement(vec![1, 1]),
        ];
        NormalFormSpec::new(vec![2, 2], 4, gamma, g, labels, None, None).unwrap()
    }

    /// `Δ_4(z, w_1^{1/2}w_2^{1/4}x_1, w_2^{1/2}x_2, w_1^{1/2}w_2^{3/4}x_3)`.
    pub fn z2z4() -> Self {
        let g = AbelianGroup::cyclic(4);
        let gamma = vec![vec![q(1, 2), q(1, 4)], vec![qi(0), q(1, 2)], vec![q(1, 2), q(3, 4)]];
        let mut vars = default_vars(4);
        vars[0] = "z".into();
        NormalFormSpec::new(vec![2, 4], 4, gamma, g.clone(), g.elements(), Some(vars), None).unwrap()
    }

    pub fn r(&self) -> usize {
        self.moduli.len()
    }

    /// `γ_j` with `γ_0 = 0`.
    pub fn gamma_row(&self, j: usize) -> Vec<Q> {
        if j == 0 {
            vec![qi(0); self.r()]
        } else {
            self.gamma[j - 1].clone()
        }
    }

    pub fn group(&self) -> AbelianGroup {
        AbelianGroup::new(self.moduli.clone()).expect("positive moduli")
    }

    /// Space with `w_i` of bound `p_i` and the `x_j`.
    pub fn frac_space(&self) -> Result<Arc<VarSpace>> {
        Ok(Arc::new(VarSpace::new(
            self.wvars.iter().cloned().zip(self.moduli.iter().cloned()).collect(),
            self.vars.clone(),
        )?))
    }

    /// Space with integral `w_i`.
    pub fn int_space(&self) -> Result<Arc<VarSpace>> {
        Ok(Arc::new(VarSpace::new(
            self.wvars.iter().map(|w| (w.clone(), 1)).collect(),
            self.vars.clone(),
        )?))
    }

    /// `X_{ℓ_j} = w^{γ_j} x_j`.
    pub fn values(&self) -> Result<Vec<FracPoly>> {
        let sp = self.frac_space()?;
        (0..self.k as usize)
            .map(|j| {
                let mut free = vec![0u32; self.k as usize];
                free[j] = 1;
                FracPoly::monomial(&sp, &self.gamma_row(j), &free, Cyclo::one())
                    .map_err(|e| Error::InvalidSpec(e.to_string()))
            })
            .collect()
    }
}

/// `P(w,x) = Δ_Γ(X_{ℓ_0}, …, X_{ℓ_{k−1}})` with integral `w` exponents.
pub fn normal_form_poly(spec: &NormalFormSpec) -> Result<FracPoly> {
    let p = normal_form_frac(spec)?;
    p.embed(&spec.int_space()?)
        .map_err(|_| Error::NonPolynomial("fractional w-exponents survive in Δ_Γ".into()))
}

/// `Δ_Γ` in the space with fractional `w` exponents (no integrality check).
pub fn normal_form_frac(spec: &NormalFormSpec) -> Result<FracPoly> {
    let vals = spec.values()?;
    gcirc_det(&spec.quotient, &spec.labels, &vals)
        .map_err(|e| if spec.labels.first() != Some(&spec.quotient.identity()) {
            Error::InvalidSpec("labels must start with the identity".into())
        } else {
            e
        })
}

/// A product of circulant normal forms; `w` variables are shared by name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductNormalFormSpec {
    pub factors: Vec<NormalFormSpec>,
}

impl ProductNormalFormSpec {
    pub fn order(&self) -> u64 {
        self.factors.iter().map(|f| f.k).sum()
    }

    /// `cp(k_1) × ⋯ × cp(k_s)` with a common `w` and variables `x{i}{j}`.
    pub fn cp_product(ks: &[u64]) -> Self {
        let factors = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut s = NormalFormSpec::cpk(k);
                s.vars = (0..k).map(|j| crate::resinv::param_name(ks.len(), i + 1, j)).collect();
                s
            })
            .collect();
        ProductNormalFormSpec { factors }
    }
}

pub fn product_normal_form_poly(spec: &ProductNormalFormSpec) -> Result<FracPoly> {
    let mut acc: Option<FracPoly> = None;
    for f in &spec.factors {
        let p = normal_form_poly(f)?;
        acc = Some(match acc {
            None => p,
            Some(a) => a.checked_mul(&p)?,
        });
    }
    acc.ok_or_else(|| Error::InvalidSpec("empty product".into()))
}

/// Findings of [`validate_normal_form`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub exponent_ranges_ok: bool,
    pub denominators_realized: bool,
    pub labels_ok: bool,
    /// Every `g ∈ G` permutes the eigenvalue factors.
    pub action_ok: bool,
    /// Image of each generator `e_i` in `Γ` (when the action is well defined).
    pub generator_images: Vec<GroupElement>,
    pub transitive: bool,
    pub stabilizer: Vec<GroupElement>,
    pub quotient_factors: Vec<u64>,
    pub gamma_factors: Vec<u64>,
    pub quotient_matches: bool,
    pub multiset_ok: bool,
    pub valid: bool,
    pub messages: Vec<String>,
}

/// For `g ∈ G`, the element `c ∈ Γ` with `g·Y_a = Y_{a+c}`, if any.
fn action_image(spec: &NormalFormSpec, g: &GroupElement) -> Option<GroupElement> {
    let gam = &spec.quotient;
    let ctx = PairingContext::lcm(gam);
    let phases: Vec<Q> = (0..spec.k as usize)
        .map(|j| {
            let row = spec.gamma_row(j);
            let mut ph = qi(0);
            for (i, e) in row.iter().enumerate() {
                ph += e * qi(g.0[i] as i64);
            }
            ph.clone() - ph.floor()
        })
        .collect();
    gam.elements().into_iter().find(|c| {
        spec.labels.iter().zip(&phases).all(|(l, ph)| {
            let e = pairing_unchecked(ctx.k(), gam, c, l);
            &q(e as i64, ctx.k() as i64) == ph
        })
    })
}

/// Check the defining conditions of a normal form; failures are reported, not raised.
pub fn validate_normal_form(spec: &NormalFormSpec) -> ValidationReport {
    let mut msgs = Vec::new();
    let r = spec.r();
    let mut ranges = true;
    for row in &spec.gamma {
        for (e, &p) in row.iter().zip(&spec.moduli) {
            let n = e * qi(p as i64);
            if e.is_negative() || !n.is_integer() || n >= qi(p as i64) {
                ranges = false;
            }
        }
    }
    if !ranges {
        msgs.push("some γ_ji is not in (1/p_i){0,…,p_i−1}".into());
    }
    let realized = (0..r).all(|i| {
        spec.gamma
            .iter()
            .any(|row| row[i].denom().to_u64() == Some(spec.moduli[i]))
    });
    if !realized {
        msgs.push("some p_i is not the exact denominator of any γ_ji".into());
    }
    let mut labels_ok = spec.quotient.order() == spec.k && spec.labels.first() == Some(&spec.quotient.identity());
    {
        let mut s = spec.labels.clone();
        s.sort();
        s.dedup();
        labels_ok &= s.len() as u64 == spec.k;
    }
    if !labels_ok {
        msgs.push("labels do not enumerate Γ starting at 0, or |Γ| ≠ k".into());
    }
    let g = spec.group();
    let mut action_ok = ranges && labels_ok;
    let mut images = Vec::new();
    let mut transitive = false;
    let mut stabilizer = Vec::new();
    let mut qf = Vec::new();
    let gf = group_invariant_factors(&spec.quotient);
    let mut qm = false;
    if action_ok {
        let mut image_set = std::collections::BTreeSet::new();
        for x in g.elements() {
            match action_image(spec, &x) {
                Some(c) => {
                    if c == spec.quotient.identity() {
                        stabilizer.push(x.clone());
                    }
                    image_set.insert(c);
                }
                None => {
                    action_ok = false;
                    msgs.push(format!("g = {x} does not permute the eigenvalues"));
                    break;
                }
            }
        }
        if action_ok {
            images = (0..r).map(|i| action_image(spec, &g.basis_element(i)).unwrap()).collect();
            transitive = image_set.len() as u64 == spec.k;
            if !transitive {
                msgs.push("G is not transitive on the eigenvalues (P is reducible)".into());
            }
            let h = Subgroup::from_elements(&g, stabilizer.clone()).expect("kernel is a subgroup");
            qf = quotient_invariant_factors(&h);
            qm = qf == gf;
            if !qm {
                msgs.push(format!("G/H has invariant factors {qf:?}, Γ has {gf:?}"));
            }
        }
    }
    let mut multiset = ranges;
    if ranges {
        for (i, &p) in spec.moduli.iter().enumerate() {
            if spec.k % p != 0 {
                multiset = false;
                continue;
            }
            let mut counts = vec![0u64; p as usize];
            for j in 0..spec.k as usize {
                let n = (spec.gamma_row(j)[i].clone() * qi(p as i64)).to_integer().to_usize().unwrap();
                counts[n] += 1;
            }
            if counts.iter().any(|&c| c != spec.k / p) {
                multiset = false;
            }
        }
        if !multiset {
            msgs.push("some {γ_ji}_j is not k/p_i copies of each q/p_i".into());
        }
    }
    let valid = ranges && realized && labels_ok && action_ok && transitive && qm && multiset;
    ValidationReport {
        exponent_ranges_ok: ranges,
        denominators_realized: realized,
        labels_ok,
        action_ok,
        generator_images: images,
        transitive,
        stabilizer,
        quotient_factors: qf,
        gamma_factors: gf,
        quotient_matches: qm,
        multiset_ok: multiset,
        valid,
        messages: msgs,
    }
}

/// `f = Δ_k(w^{h_0/k}x_0, …)` is irreducible iff `h` is a permutation of `0..k`.
pub fn irreducible_exponents(k: u64, h: &[u64]) -> bool {
    if h.len() as u64 != k {
        return false;
    }
    let mut s = h.to_vec();
    s.sort();
    s.iter().enumerate().all(|(i, &x)| x == i as u64)
}

/// Number of orbits of the monodromy `w^{1/k} ↦ ε_k w^{1/k}` on the factors
/// `Y_ℓ = Σ_j ε_k^{jℓ} w^{h_j/k} x_j`; fails if it does not permute them.
pub fn eigenvalue_orbits(k: u64, h: &[u64]) -> Result<usize> {
    if h.len() as u64 != k || h.iter().any(|&x| x >= k) {
        return domain("need k residues in 0..k");
    }
    let names = default_vars(k);
    let sp = Arc::new(VarSpace::new(vec![("w".into(), k)], names)?);
    let ys: Vec<FracPoly> = (0..k)
        .map(|l| {
            let mut acc = FracPoly::zero(&sp);
            for j in 0..k as usize {
                let mut free = vec![0u32; k as usize];
                free[j] = 1;
                let m = FracPoly::monomial(&sp, &[q(h[j] as i64, k as i64)], &free, Cyclo::eps(k, (j as u64 * l) as i64))
                    .unwrap();
                acc = &acc + &m;
            }
            acc
        })
        .collect();
    let mut next = Vec::new();
    for y in &ys {
        let r = y.rotate_divisorial(&[1], &[1])?;
        let idx = ys
            .iter()
            .position(|z| *z == r)
            .ok_or_else(|| Error::Domain("monodromy does not permute the factors".into()))?;
        next.push(idx);
    }
    let mut seen = vec![false; k as usize];
    let mut orbits = 0;
    for s in 0..k as usize {
        if seen[s] {
            continue;
        }
        orbits += 1;
        let mut c = s;
        while !seen[c] {
            seen[c] = true;
            c = next[c];
        }
    }
    Ok(orbits)
}

/// For a permutation `h` of `1..k` (with `h_0 = 0`), the substitution
/// `x_j = y_{h_j}`; verified to turn `Δ_k(z, w^{h_j/k}x_j)` into `Δ_k(z, w^{j/k}y_j)`.
pub fn permute_to_standard(h: &[u64]) -> Result<Vec<u64>> {
    let k = h.len() as u64 + 1;
    let mut full = vec![0u64];
    full.extend_from_slice(h);
    if !irreducible_exponents(k, &full) {
        return domain("h is not a permutation of 1..k−1");
    }
    let mut names: Vec<String> = vec!["z".into()];
    names.extend((1..k).map(|j| format!("x{j}")));
    names.extend((1..k).map(|j| format!("y{j}")));
    let sp = Arc::new(VarSpace::new(vec![("w".into(), k)], names)?);
    let mono = |e: u64, name: &str| -> Result<FracPoly> {
        let v = FracPoly::var(&sp, name)?;
        Ok(&FracPoly::var_power(&sp, crate::polyring::VarRef::Div(0), &q(e as i64, k as i64))? * &v)
    };
    let mut lhs_vals = vec![FracPoly::var(&sp, "z")?];
    let mut std_vals = vec![FracPoly::var(&sp, "z")?];
    for j in 1..k {
        lhs_vals.push(mono(full[j as usize], &format!("y{}", full[j as usize]))?);
        std_vals.push(mono(j, &format!("y{j}"))?);
    }
    let lhs = delta_k(&lhs_vals)?;
    let rhs = delta_k(&std_vals)?;
    if lhs != rhs {
        return domain("the substitution does not give the standard form (h is not μ·j mod k)");
    }
    Ok(full[1..].to_vec())
}

/// Data of the merge identity `∏_i Δ_k(x_{i•}) = Δ_{rk}(x_•)`.
#[derive(Clone, Debug)]
pub struct MergeResult {
    pub k: u64,
    pub r: u64,
    /// `x_{ij}` as linear forms in `x_0, …, x_{rk−1}`.
    pub substitution: Vec<((u64, u64), FracPoly)>,
    pub lhs: FracPoly,
    pub rhs: FracPoly,
}

pub fn product_merge(k: u64, r: u64) -> Result<MergeResult> {
    if k < 2 || r < 1 {
        return domain("need k ≥ 2 and r ≥ 1");
    }
    let n = r * k;
    let sp = Arc::new(VarSpace::new(vec![("w".into(), k)], default_vars(n))?);
    let x = |m: u64| FracPoly::var(&sp, &format!("x{m}")).unwrap();
    let wpow = |j: u64| FracPoly::var_power(&sp, crate::polyring::VarRef::Div(0), &q(j as i64, k as i64)).unwrap();
    let mut subst = Vec::new();
    let mut lhs = FracPoly::one(&sp);
    for i in 0..r {
        let mut vals = Vec::new();
        for j in 0..k {
            let mut form = FracPoly::zero(&sp);
            for s in 0..r {
                form = &form + &x(s * k + j).scale(&Cyclo::eps(r, (s * i) as i64));
            }
            let form = form.scale(&Cyclo::eps(n, (i * j) as i64));
            vals.push(&wpow(j) * &form);
            subst.push(((i, j), form));
        }
        lhs = &lhs * &delta_k(&vals)?;
    }
    let rvals: Vec<FracPoly> = (0..n).map(|m| &wpow(m % k) * &x(m)).collect();
    let rhs = delta_k(&rvals)?;
    if lhs != rhs {
        return domain("merge identity failed");
    }
    Ok(MergeResult {
        k,
        r,
        substitution: subst,
        lhs,
        rhs,
    })
}

/// Averaged coordinates of a `G`-stable family of factors `Y_j = z + b_j`.
#[derive(Clone, Debug)]
pub struct Coords {
    pub group: AbelianGroup,
    pub k: u64,
    /// `(ℓ, X_ℓ)` for every `ℓ ∈ G`.
    pub coords: Vec<(GroupElement, FracPoly)>,
    pub stabilizer: Subgroup,
}

/// `X_ℓ = (1/|G|) Σ_j ε^{−⟨ℓ,j⟩} Y_j`, where `Y_j` is the rotation of
/// `Y_0 = z + b_0` by `v_i ↦ ε_{p_i}^{j_i} v_i`.
pub fn roots_to_coords(z: &FracPoly, b: &[FracPoly], g: &AbelianGroup, ctx: &PairingContext) -> Result<Coords> {
    let b0 = b.first().ok_or_else(|| Error::Domain("no roots".into()))?;
    let y0 = z.checked_add(b0)?;
    let sp = y0.space().clone();
    if sp.n_div() != g.rank() {
        return domain("one divisorial variable per cyclic factor is required");
    }
    let ys_given: Vec<FracPoly> = b.iter().map(|x| z.checked_add(x)).collect::<Result<_>>()?;
    let elems = g.elements();
    let mut ys = Vec::new();
    for j in &elems {
        let gv: Vec<i64> = j.0.iter().map(|&x| x as i64).collect();
        let yj = y0.rotate_divisorial(&gv, g.moduli())?;
        if !ys_given.contains(&yj) {
            return domain(format!("roots are not stable under the rotation {j}"));
        }
        ys.push(yj);
    }
    if ys_given.iter().any(|y| !ys.contains(y)) {
        return domain("roots form more than one orbit");
    }
    let stab: Vec<GroupElement> = elems.iter().zip(&ys).filter(|(_, y)| **y == ys[0]).map(|(e, _)| e.clone()).collect();
    let stabilizer = Subgroup::from_elements(g, stab)?;
    let inv_n = Cyclo::rational(q(1, g.order() as i64));
    let mut coords = Vec::new();
    for l in &elems {
        let mut acc = FracPoly::zero(&sp);
        for (j, y) in elems.iter().zip(&ys) {
            let e = pairing_unchecked(ctx.k(), g, l, j) as i64;
            acc = &acc + &y.scale(&Cyclo::eps(ctx.k(), -e));
        }
        coords.push((l.clone(), acc.scale(&inv_n)));
    }
    Ok(Coords {
        group: g.clone(),
        k: ctx.k(),
        coords,
        stabilizer,
    })
}

/// Inverse of [`roots_to_coords`]: one `b_j = Y_j − z` per coset of `H`.
pub fn coords_to_roots(c: &Coords, z: &FracPoly) -> Result<Vec<FracPoly>> {
    let g = &c.group;
    let reps = quotient(g, &c.stabilizer)?.representatives;
    let mut out = Vec::new();
    for j in &reps {
        let mut acc = FracPoly::zero(c.coords[0].1.space());
        for (l, x) in &c.coords {
            let e = pairing_unchecked(c.k, g, j, l) as i64;
            acc = &acc + &x.scale(&Cyclo::eps(c.k, e));
        }
        out.push(acc.checked_sub(z)?);
    }
    Ok(out)
}

/// Result of rewriting a normal form at a codimension-one stratum `T_i`.
#[derive(Clone, Debug)]
pub struct Codim1 {
    pub i: usize,
    /// New variables `y_{r,q}` as linear forms in the `x_j`.
    pub change: Vec<(String, FracPoly)>,
    /// Determinant of the change of variables.
    pub det: Cyclo,
    /// Standard `Δ_{p_i}(y_{r,0}, w_i^{1/p_i} y_{r,1}, …)`, one per orbit.
    pub factors: Vec<FracPoly>,
    /// The `w_h = 1` (h ≠ i) specialization of the normal form.
    pub specialized: FracPoly,
}

/// Rewrite at `T_i` as `cp(p_i) × ⋯ × cp(p_i)` (`k/p_i` factors).
pub fn codim1_factor(spec: &NormalFormSpec, i: usize) -> Result<Codim1> {
    let rep = validate_normal_form(spec);
    if !rep.valid {
        if rep.exponent_ranges_ok && !rep.multiset_ok {
            return Err(Error::InvalidSpec("multiset condition violated".into()));
        }
        return Err(Error::InvalidSpec(rep.messages.join("; ")));
    }
    if i >= spec.r() {
        return domain(format!("no divisorial index {i}"));
    }
    let p = spec.moduli[i];
    let gam = &spec.quotient;
    let ctx = PairingContext::lcm(gam);
    let b = rep.generator_images[i].clone();
    let k = spec.k as usize;
    // Orbits of translation by b.
    let mut reps: Vec<GroupElement> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for a in gam.elements() {
        if seen.contains(&a) {
            continue;
        }
        let mut c = a.clone();
        let mut len = 0;
        while seen.insert(c.clone()) {
            c = gam.add(&c, &b);
            len += 1;
        }
        if len != p {
            return domain("orbit size differs from p_i");
        }
        reps.push(a);
    }
    let xsp = spec.int_space()?;
    let xs: Vec<FracPoly> = spec.vars.iter().map(|v| FracPoly::var(&xsp, v)).collect::<Result<_>>()?;
    let qs: Vec<usize> = (0..k)
        .map(|j| (spec.gamma_row(j)[i].clone() * qi(p as i64)).to_integer().to_usize().unwrap())
        .collect();
    let mut ynames = Vec::new();
    let mut change = Vec::new();
    let mut rows: CMat = Vec::new();
    for (ri, a) in reps.iter().enumerate() {
        for qv in 0..p as usize {
            let mut form = FracPoly::zero(&xsp);
            let mut row = vec![Cyclo::zero(); k];
            for j in 0..k {
                if qs[j] == qv {
                    let c = character(&ctx, gam, a, &spec.labels[j]);
                    form = &form + &xs[j].scale(&c);
                    row[j] = c;
                }
            }
            let name = format!("y{ri}_{qv}");
            ynames.push(name.clone());
            change.push((name, form));
            rows.push(row);
        }
    }
    let det = cdet(&rows);
    if det.is_zero() {
        return Err(Error::DegenerateInput("change of variables is singular".into()));
    }
    let wname = spec.wvars[i].clone();
    let ysp = Arc::new(VarSpace::new(vec![(wname.clone(), p)], ynames.clone())?);
    let mut factors = Vec::new();
    for ri in 0..reps.len() {
        let vals: Vec<FracPoly> = (0..p)
            .map(|qv| {
                let y = FracPoly::var(&ysp, &format!("y{ri}_{qv}")).unwrap();
                let wq = FracPoly::var_power(&ysp, crate::polyring::VarRef::Div(0), &q(qv as i64, p as i64)).unwrap();
                &wq * &y
            })
            .collect();
        let f = delta_k(&vals)?;
        let f = f
            .embed(&Arc::new(VarSpace::new(vec![(wname.clone(), 1)], ynames.clone())?))
            .map_err(|_| Error::NonPolynomial("codimension-one factor is not polynomial".into()))?;
        factors.push(f);
    }
    // Specialize w_h = 1 for h ≠ i in P, and pull the factors back to x.
    let full = normal_form_poly(spec)?;
    let spsp = Arc::new(VarSpace::new(vec![(wname.clone(), 1)], spec.vars.clone())?);
    let imgs: Vec<(&str, FracPoly)> = spec
        .wvars
        .iter()
        .enumerate()
        .filter(|(h, _)| *h != i)
        .map(|(_, w)| (w.as_str(), FracPoly::one(&spsp)))
        .collect();
    let specialized = full.substitute(&ChartMap::new(&xsp, &spsp, imgs)?)?;
    let fsp = factors[0].space().clone();
    let back = ChartMap::new(
        &fsp,
        &spsp,
        change.iter().map(|(n, f)| (n.as_str(), f.embed(&spsp).unwrap())).collect(),
    )?;
    let mut prod = FracPoly::one(&spsp);
    for f in &factors {
        prod = &prod * &f.substitute(&back)?;
    }
    if prod != specialized {
        return domain("codimension-one factorization does not reproduce the specialization");
    }
    Ok(Codim1 {
        i,
        change,
        det,
        factors,
        specialized,
    })
}

/// Output of [`clean_exponents`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cleaned {
    /// Row indices `ℓ^1, …, ℓ^{k−1}` (0-based into the input).
    pub order: Vec<usize>,
    pub delta: Vec<Vec<Q>>,
    pub beta: Vec<Vec<i64>>,
}

impl Serialize for Cleaned {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct J<'a> {
            order: &'a [usize],
            delta: Vec<Vec<String>>,
            beta: &'a [Vec<i64>],
        }
        J {
            order: &self.order,
            delta: self.delta.iter().map(|r| r.iter().map(fmt_q).collect()).collect(),
            beta: &self.beta,
        }
        .serialize(s)
    }
}

/// Successive termwise minima of the raw exponent rows, with each increment
/// split into an integer part `β_j` and a fractional part `δ_j`.
pub fn clean_exponents(raw: &[Vec<Q>], moduli: &[u64]) -> Result<Cleaned> {
    let r = moduli.len();
    for row in raw {
        if row.len() != r {
            return domain("row length differs from the number of moduli");
        }
        for (e, &p) in row.iter().zip(moduli) {
            if e.is_negative() || !(e * qi(p as i64)).is_integer() {
                return domain(format!("exponent {} is not in (1/{p})·Z≥0", fmt_q(e)));
            }
        }
    }
    let mut left: Vec<usize> = (0..raw.len()).collect();
    let mut prev = vec![qi(0); r];
    let mut out = Cleaned {
        order: vec![],
        delta: vec![],
        beta: vec![],
    };
    while !left.is_empty() {
        let pick = left
            .iter()
            .copied()
            .find(|&a| left.iter().all(|&b| (0..r).all(|i| raw[a][i] <= raw[b][i])))
            .ok_or_else(|| {
                Error::Domain("no termwise-minimal row: input is not of invariant-compatible shape".into())
            })?;
        left.retain(|&x| x != pick);
        let inc: Vec<Q> = (0..r).map(|i| &raw[pick][i] - &prev[i]).collect();
        out.beta.push(inc.iter().map(|x| x.floor().to_integer().to_i64().unwrap()).collect());
        out.delta.push(inc.iter().map(|x| x - x.floor()).collect());
        out.order.push(pick);
        prev = raw[pick].clone();
    }
    Ok(out)
}

/// `lcm` helper for callers assembling pairing moduli.
pub fn lcm_all(v: &[u64]) -> u64 {
    v.iter().fold(1u64, |a, &b| a.lcm(&b))
}
