use std::collections::BTreeSet;
use std::sync::Arc;

use circforge::abelian::{
    all_subgroups, invariant_factors, pairing, perp, quotient_invariant_factors, subgroup_from_generators, xi, AbelianGroup,
    GroupElement, PairingContext,
};
use circforge::blowup::{charts, cpk_atlas, free_off, hilbert_basis, quotient_image, relations, transition, HilbertBasis};
use circforge::cyclotomic::{cyclotomic_polynomial, q, qi, Cyclo, Q};
use circforge::gcirc::{
    circulant_matrix, codim1_factor, coords_to_roots, eigen_system, gcirc_det, leibniz_det, normal_form_poly, roots_to_coords,
    validate_normal_form, verify_eigenpair, NormalFormSpec,
};
use circforge::linalg::int_rank;
use circforge::polyring::{ChartMap, DiagonalAction, FracPoly, VarSpace};
use circforge::quotient_nc::{invariant_nc_normal_form, semi_invariant_generators, InvariantNCInput};
use circforge::resinv::{atwinv_cpk, atwinv_product, inv_cpk, inv_to_atw, weights};
use circforge::split::{split_newton, SplitOptions};
use num::{BigInt, Signed, Zero};
use proptest::prelude::*;

fn small_groups(max_order: u64) -> Vec<AbelianGroup> {
    let mut out = Vec::new();
    let mut stack: Vec<Vec<u64>> = vec![vec![]];
    while let Some(m) = stack.pop() {
        let ord: u64 = m.iter().product();
        out.push(AbelianGroup::new(m.clone()).unwrap());
        for p in 2..=max_order {
            if ord * p <= max_order && m.len() < 4 {
                let mut n = m.clone();
                n.push(p);
                stack.push(n);
            }
        }
    }
    out
}

fn group_strategy(max_order: u64) -> impl Strategy<Value = AbelianGroup> {
    let gs = small_groups(max_order);
    (0..gs.len()).prop_map(move |i| gs[i].clone())
}

fn poly_from(sp: &Arc<VarSpace>, terms: &[(i64, Vec<u32>)]) -> FracPoly {
    let nd = sp.n_div();
    let mut p = FracPoly::zero(sp);
    for (c, e) in terms {
        let w: Vec<Q> = e[..nd].iter().map(|&x| qi(x as i64)).collect();
        p = &p + &FracPoly::monomial(sp, &w, &e[nd..], Cyclo::int(*c)).unwrap();
    }
    p
}

fn terms_strategy(nvars: usize, max_exp: u32, max_terms: usize) -> impl Strategy<Value = Vec<(i64, Vec<u32>)>> {
    prop::collection::vec((-3i64..=3, prop::collection::vec(0..=max_exp, nvars)), 1..=max_terms)
}

// Independent pairing: Σ (k/p_i) a_i b_i mod k.
fn pair(k: u64, g: &AbelianGroup, a: &GroupElement, b: &GroupElement) -> u64 {
    g.moduli().iter().enumerate().map(|(i, &p)| (k / p) * a.0[i] * b.0[i]).sum::<u64>() % k
}

// ---------- abelian ----------

#[test]
fn duality_exhaustive() {
    for g in small_groups(16) {
        let ctx = PairingContext::lcm(&g);
        let ctx2 = PairingContext::new(&g, 2 * ctx.k()).unwrap();
        for h in all_subgroups(&g) {
            let hp = perp(&ctx, &h);
            assert_eq!(hp.order() * h.order(), g.order());
            assert_eq!(perp(&ctx, &hp).elements(), h.elements());
            assert_eq!(invariant_factors(&hp), quotient_invariant_factors(&h));
            assert_eq!(perp(&ctx2, &h).elements(), hp.elements());
            let brute: Vec<GroupElement> = g
                .elements()
                .into_iter()
                .filter(|l| h.elements().iter().all(|x| pair(ctx.k(), &g, x, l) == 0))
                .collect();
            assert_eq!(hp.elements(), brute);
            for l in g.elements() {
                let want = if hp.contains(&l) { h.order() as i64 } else { 0 };
                assert_eq!(xi(&ctx, &h, &l).unwrap(), Cyclo::int(want));
            }
        }
    }
}

// ---------- cyclotomic ----------

// Φ_k from x^k − 1 = ∏_{d|k} Φ_d, by integer long division.
fn phi_oracle(k: u64) -> Vec<BigInt> {
    let mut num = vec![BigInt::zero(); k as usize + 1];
    num[0] = BigInt::from(-1);
    num[k as usize] = BigInt::from(1);
    for d in 1..k {
        if k % d == 0 {
            num = divide_exact(&num, &phi_oracle(d));
        }
    }
    num
}

fn divide_exact(a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
    let mut r = a.to_vec();
    let n = b.len() - 1;
    let mut quo = vec![BigInt::zero(); a.len() - n];
    for i in (0..quo.len()).rev() {
        let c = r[i + n].clone();
        quo[i] = c.clone();
        for j in 0..=n {
            r[i + j] -= &c * &b[j];
        }
    }
    assert!(r.iter().all(|x| x.is_zero()));
    quo
}

fn rem_is_zero(a: &[BigInt], b: &[BigInt]) -> bool {
    let mut r = a.to_vec();
    let n = b.len() - 1;
    while r.len() > n {
        let c = r.pop().unwrap();
        let i = r.len() - n;
        for j in 0..n {
            r[i + j] -= &c * &b[j];
        }
    }
    r.iter().all(|x| x.is_zero())
}

#[test]
fn phi_matches_oracle() {
    for k in 1..=24 {
        assert_eq!(cyclotomic_polynomial(k), phi_oracle(k), "k = {k}");
    }
}

proptest! {
    #[test]
    fn zero_iff_divisible(k in 1u64..=24, raw in prop::collection::vec(-4i64..=4, 1..30), mult in any::<bool>()) {
        let phi = phi_oracle(k);
        let mut ints: Vec<BigInt> = raw.iter().map(|&c| BigInt::from(c)).collect();
        if mult {
            // Force a multiple of Φ_k half the time.
            let mut prod = vec![BigInt::zero(); ints.len() + phi.len() - 1];
            for (i, a) in ints.iter().enumerate() {
                for (j, b) in phi.iter().enumerate() {
                    prod[i + j] += a * b;
                }
            }
            ints = prod;
        }
        let c = Cyclo::from_coeffs(k, ints.iter().map(|x| Q::from_integer(x.clone())).collect()).unwrap();
        prop_assert_eq!(c.is_zero(), rem_is_zero(&ints, &phi));
        let (re, im) = c.to_f64();
        let mag: f64 = ints.iter().map(|x| x.abs().to_string().parse::<f64>().unwrap()).sum();
        if c.is_zero() {
            prop_assert!(re.abs() + im.abs() <= 1e-9 * (1.0 + mag));
        }
    }

    #[test]
    fn embed_is_multiplicative(m in 1u64..=12, f in 1u64..=2, a in prop::collection::vec(-3i64..=3, 1..12), b in prop::collection::vec(-3i64..=3, 1..12)) {
        let k = m * f;
        let ca = Cyclo::from_coeffs(m, a.iter().map(|&x| qi(x)).collect()).unwrap();
        let cb = Cyclo::from_coeffs(m, b.iter().map(|&x| qi(x)).collect()).unwrap();
        let prod = &ca * &cb;
        prop_assert_eq!(prod.embed(k).unwrap(), &ca.embed(k).unwrap() * &cb.embed(k).unwrap());
    }
}

#[test]
fn geometric_sums() {
    for k in 1..=12u64 {
        for m in 0..=24u64 {
            let mut s = Cyclo::zero();
            for j in 0..k {
                s = &s + &Cyclo::eps(k, (j * m) as i64);
            }
            let want = if m % k == 0 { k as i64 } else { 0 };
            assert_eq!(s, Cyclo::int(want), "k={k} m={m}");
        }
    }
}

// ---------- polyring ----------

proptest! {
    #[test]
    fn chart_substitution_is_homomorphism(a in terms_strategy(3, 3, 4), b in terms_strategy(3, 3, 4), cv in 0usize..3) {
        let sp = VarSpace::of(&[], &["x", "y", "z"]);
        let (f, g) = (poly_from(&sp, &a), poly_from(&sp, &b));
        let names = ["x", "y", "z"];
        let chart = ChartMap::standard(&sp, &names, names[cv]).unwrap();
        let lhs = (&f * &g).substitute(&chart).unwrap();
        let rhs = &f.substitute(&chart).unwrap() * &g.substitute(&chart).unwrap();
        prop_assert_eq!(lhs, rhs);
        let sum = (&f + &g).substitute(&chart).unwrap();
        prop_assert_eq!(sum, &f.substitute(&chart).unwrap() + &g.substitute(&chart).unwrap());
    }

    #[test]
    fn strict_transform_shift(a in terms_strategy(3, 3, 4), m in 0u32..4) {
        let sp = VarSpace::of(&[("w", 1)], &["x", "y"]);
        let f = poly_from(&sp, &a);
        prop_assume!(!f.is_zero());
        let wm = FracPoly::monomial(&sp, &[qi(m as i64)], &[0, 0], Cyclo::one()).unwrap();
        let (s0, e0) = f.strict_transform("w").unwrap();
        let (s1, e1) = (&f * &wm).strict_transform("w").unwrap();
        prop_assert_eq!(s1, s0);
        prop_assert_eq!(e1, e0 + qi(m as i64));
    }

    #[test]
    fn semi_invariant_parts(g in group_strategy(12), a in terms_strategy(3, 3, 6), seed in prop::collection::vec(0u64..12, 6)) {
        let sp = VarSpace::of(&[], &["x", "y", "z"]);
        let f = poly_from(&sp, &a);
        let weights: Vec<Vec<u64>> = g.moduli().iter().enumerate().map(|(i, &p)| (0..3).map(|j| seed[(2 * i + j) % 6] % p).collect()).collect();
        let act = DiagonalAction::new(g.clone(), vec!["x".into(), "y".into(), "z".into()], weights).unwrap();
        for i in 0..g.rank() {
            let parts = f.semi_invariant_split(&act, i).unwrap();
            let mut sum = FracPoly::zero(&sp);
            let e = g.basis_element(i);
            for (c, part) in parts.iter().enumerate() {
                sum = &sum + part;
                let want = part.scale(&Cyclo::eps(g.moduli()[i], c as i64));
                prop_assert_eq!(part.apply_group(&act, &e).unwrap(), want);
            }
            prop_assert_eq!(sum, f.clone());
        }
        // Group action axiom on random pairs.
        let els = g.elements();
        let (x, y) = (&els[seed[0] as usize % els.len()], &els[seed[1] as usize % els.len()]);
        let lhs = f.apply_group(&act, &g.add(x, y)).unwrap();
        let rhs = f.apply_group(&act, y).unwrap().apply_group(&act, x).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn split_roots_rotation_stable(p in 2u64..=3, c in -3i64..=3, d in 1u32..=2) {
        let sp = VarSpace::of(&[("w", 1)], &["x", "z"]);
        let f = FracPoly::parse(&sp, &format!("z^{p} - w^{d}*x^{p}*(1 + ({c})*x)")).unwrap();
        let deg = 5;
        let s = split_newton(&f, "z", &[p], &SplitOptions::with_degree(deg)).unwrap();
        let set: BTreeSet<String> = s.b.iter().map(|b| b.to_string()).collect();
        for b in &s.b {
            let rot = rotate_v(b, p);
            prop_assert!(set.contains(&rot.truncate(&qi(deg as i64)).to_string()));
        }
    }
}

// v ↦ ε_p v on the substituted space (v is free of fractional exponents).
fn rotate_v(b: &FracPoly, p: u64) -> FracPoly {
    let sp = b.space().clone();
    let v = sp.divisorial()[0].name.clone();
    let img = FracPoly::var(&sp, &v).unwrap().scale(&Cyclo::eps(p, 1));
    b.substitute(&ChartMap::new(&sp, &sp, vec![(v.as_str(), img)]).unwrap()).unwrap()
}

// ---------- gcirc ----------

fn shuffled(g: &AbelianGroup, perm_seed: &[usize]) -> Vec<GroupElement> {
    let mut rest: Vec<GroupElement> = g.elements()[1..].to_vec();
    let mut out = vec![g.identity()];
    for s in perm_seed {
        if rest.is_empty() {
            break;
        }
        out.push(rest.remove(s % rest.len()));
    }
    out.extend(rest);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn det_ordering_independent(g in group_strategy(8), seed in prop::collection::vec(0usize..16, 8)) {
        let std = g.elements();
        let names: Vec<String> = (0..std.len()).map(|i| format!("X{i}")).collect();
        let sp = Arc::new(VarSpace::new(vec![], names.clone()).unwrap());
        let val = |e: &GroupElement| FracPoly::var(&sp, &names[std.iter().position(|x| x == e).unwrap()]).unwrap();
        let base = gcirc_det(&g, &std, &std.iter().map(val).collect::<Vec<_>>()).unwrap();
        let ord = shuffled(&g, &seed);
        let d = gcirc_det(&g, &ord, &ord.iter().map(val).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(&d, &base);
        let mat = circulant_matrix(&g, &ord).unwrap();
        let ctx = PairingContext::lcm(&g);
        for pr in eigen_system(&g, &ord, &ctx).unwrap() {
            prop_assert!(verify_eigenpair(&mat, &pr));
        }
        if g.order() <= 4 {
            let vals: Vec<FracPoly> = ord.iter().map(val).collect();
            prop_assert_eq!(leibniz_det(&mat.instantiate(&vals)).unwrap(), base);
        }
    }
}

fn presets() -> Vec<NormalFormSpec> {
    let mut v: Vec<NormalFormSpec> = (2..=5).map(NormalFormSpec::cpk).collect();
    v.push(NormalFormSpec::klein());
    v.push(NormalFormSpec::z2z4());
    v
}

#[test]
fn normal_forms_integral_and_fixed() {
    for spec in presets() {
        assert!(validate_normal_form(&spec).valid);
        let f = normal_form_poly(&spec).unwrap();
        // Integral w-exponents.
        for t in f.terms() {
            assert!(t.w.iter().all(|e| e.is_integer()));
        }
        let mut g = f.clone();
        for (i, &p) in spec.moduli.iter().enumerate() {
            g = g.substitute_power(i, p).unwrap();
        }
        let sp = g.space().clone();
        for i in 0..spec.r() {
            let v = sp.divisorial()[i].name.clone();
            let img = FracPoly::var(&sp, &v).unwrap().scale(&Cyclo::eps(spec.moduli[i], 1));
            let rot = g.substitute(&ChartMap::new(&sp, &sp, vec![(v.as_str(), img)]).unwrap()).unwrap();
            assert_eq!(rot, g);
        }
        for i in 0..spec.r() {
            let c = codim1_factor(&spec, i).unwrap();
            assert_eq!(c.factors.len() as u64, spec.k / spec.moduli[i]);
        }
    }
}

// Orbit of the eigenvalue factors under v-rotations, by explicit polynomials.
fn transitive_oracle(spec: &NormalFormSpec) -> bool {
    let r = spec.r();
    let divs: Vec<(String, u64)> = (0..r).map(|i| (format!("v{i}"), 1)).collect();
    let xs: Vec<String> = (0..spec.k).map(|j| format!("x{j}")).collect();
    let sp = Arc::new(VarSpace::new(divs, xs.clone()).unwrap());
    let gam = &spec.quotient;
    let kk = gam.lcm();
    let ys: Vec<FracPoly> = gam
        .elements()
        .iter()
        .map(|c| {
            let mut y = FracPoly::zero(&sp);
            for (j, l) in spec.labels.iter().enumerate() {
                let row = spec.gamma_row(j);
                let w: Vec<Q> = row.iter().zip(&spec.moduli).map(|(e, &p)| e * qi(p as i64)).collect();
                let mut fr = vec![0u32; spec.k as usize];
                fr[j] = 1;
                y = &y + &FracPoly::monomial(&sp, &w, &fr, Cyclo::eps(kk, pair(kk, gam, c, l) as i64)).unwrap();
            }
            y
        })
        .collect();
    let same_line = |a: &FracPoly, b: &FracPoly| {
        let (ta, tb) = (a.terms(), b.terms());
        if ta.is_empty() || ta.len() != tb.len() {
            return false;
        }
        let c = (&ta[0].coeff / &tb[0].coeff).unwrap();
        *a == b.scale(&c)
    };
    let mut orbit = vec![0usize];
    let mut i = 0;
    while i < orbit.len() {
        let y = ys[orbit[i]].clone();
        for gi in 0..r {
            let v = format!("v{gi}");
            let img = FracPoly::var(&sp, &v).unwrap().scale(&Cyclo::eps(spec.moduli[gi], 1));
            let rot = y.substitute(&ChartMap::new(&sp, &sp, vec![(v.as_str(), img)]).unwrap()).unwrap();
            match ys.iter().position(|z| same_line(&rot, z)) {
                Some(t) if !orbit.contains(&t) => orbit.push(t),
                Some(_) => {}
                None => return false,
            }
        }
        i += 1;
    }
    orbit.len() as u64 == spec.k
}

fn for_each_gamma(k: usize, moduli: &[u64], f: &mut impl FnMut(Vec<Vec<Q>>)) {
    let cells = (k - 1) * moduli.len();
    let total: u64 = (0..cells).map(|c| moduli[c % moduli.len()]).product();
    for mut n in 0..total {
        let mut rows = vec![vec![qi(0); moduli.len()]; k - 1];
        for c in 0..cells {
            let p = moduli[c % moduli.len()];
            rows[c / moduli.len()][c % moduli.len()] = q((n % p) as i64, p as i64);
            n /= p;
        }
        f(rows);
    }
}

#[test]
fn transitivity_matches_orbits() {
    let gammas = [vec![2u64], vec![3], vec![4], vec![2, 2]];
    let mut checked = 0;
    for gm in &gammas {
        let gam = AbelianGroup::new(gm.clone()).unwrap();
        let k = gam.order() as usize;
        let labels = gam.elements();
        let mut moduli_sets: Vec<Vec<u64>> = (2..=4).map(|p| vec![p]).collect();
        for a in 2..=4 {
            for b in 2..=4 {
                moduli_sets.push(vec![a, b]);
            }
        }
        for moduli in moduli_sets {
            for_each_gamma(k, &moduli, &mut |rows| {
                let spec = NormalFormSpec::new(moduli.clone(), k as u64, rows, gam.clone(), labels.clone(), None, None).unwrap();
                let rep = validate_normal_form(&spec);
                assert_eq!(rep.transitive, transitive_oracle(&spec), "{spec:?}");
                checked += 1;
            });
        }
    }
    assert!(checked > 10_000);
}

proptest! {
    #[test]
    fn roots_coords_round_trip(g in group_strategy(6), a in terms_strategy(3, 3, 4)) {
        prop_assume!(g.rank() >= 1 && g.rank() <= 2);
        let divs: Vec<(String, u64)> = (0..g.rank()).map(|i| (format!("v{i}"), 1)).collect();
        let sp = Arc::new(VarSpace::new(divs, vec!["x".into(), "z".into()]).unwrap());
        let mut terms = a.clone();
        for t in &mut terms {
            t.1.truncate(g.rank() + 1);
            while t.1.len() < g.rank() + 2 {
                t.1.push(0);
            }
            let n = t.1.len();
            t.1[n - 1] = 0;
        }
        let b0 = poly_from(&sp, &terms);
        let z = FracPoly::var(&sp, "z").unwrap();
        let mut orbit: Vec<FracPoly> = Vec::new();
        for e in g.elements() {
            let gv: Vec<i64> = e.0.iter().map(|&x| x as i64).collect();
            let y = (&z + &b0).rotate_divisorial(&gv, g.moduli()).unwrap();
            let b = &y - &z;
            if !orbit.contains(&b) {
                orbit.push(b);
            }
        }
        let c = roots_to_coords(&z, &orbit, &g, &PairingContext::lcm(&g)).unwrap();
        let back = coords_to_roots(&c, &z).unwrap();
        let s1: BTreeSet<String> = orbit.iter().map(|p| p.to_string()).collect();
        let s2: BTreeSet<String> = back.iter().map(|p| p.to_string()).collect();
        prop_assert_eq!(s1, s2);
        prop_assert_eq!(back.len(), orbit.len());
    }
}

// ---------- resinv ----------

#[test]
fn resinv_closed_forms() {
    for k in 2..=6 {
        assert_eq!(inv_to_atw(&inv_cpk(k).unwrap()).unwrap(), atwinv_cpk(k).unwrap());
        assert_eq!(atwinv_product(&[k]).unwrap(), atwinv_cpk(k).unwrap());
    }
    for ks in [vec![2], vec![3], vec![2, 2], vec![2, 3], vec![3, 3], vec![2, 2, 2], vec![4, 2]] {
        let w = weights(&ks).unwrap();
        let atw = atwinv_product(&ks).unwrap();
        // rational = c / atw for one scalar c, matched through the contact parameters.
        let c = w.rational_of(&atw.contacts[0]).unwrap() * &atw.entries[0];
        for (name, a) in atw.contacts.iter().zip(&atw.entries) {
            assert_eq!(w.rational_of(name).unwrap() * a, c);
        }
        assert_eq!(atw.contacts.len(), w.params.len());
        for (r, i) in w.rational.iter().zip(&w.integer) {
            assert_eq!(r * &w.multiplier, qi(*i as i64));
        }
    }
}

// ---------- blowup ----------

fn invariant(act: &DiagonalAction, e: &[u32]) -> bool {
    act.weights
        .iter()
        .zip(act.group.moduli())
        .all(|(row, &p)| row.iter().zip(e).map(|(&w, &x)| w * x as u64).sum::<u64>() % p == 0)
}

fn all_monomials(n: usize, d: u32) -> Vec<Vec<u32>> {
    if n == 0 {
        return if d == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for a in 0..=d {
        for mut rest in all_monomials(n - 1, d - a) {
            rest.insert(0, a);
            out.push(rest);
        }
    }
    out
}

fn basis_oracle(hb: &HilbertBasis) {
    let act = &hb.action;
    let n = act.vars.len();
    for (i, g) in hb.generators.iter().enumerate() {
        assert!(invariant(act, g));
        for (j, h) in hb.generators.iter().enumerate() {
            if i != j {
                assert!(!h.iter().zip(g).all(|(a, b)| a <= b), "generator {h:?} divides {g:?}");
            }
        }
    }
    for d in 1..=act.group.order() as u32 {
        for m in all_monomials(n, d) {
            if invariant(act, &m) {
                assert!(hb.generators.iter().any(|g| g.iter().zip(&m).all(|(a, b)| a <= b)), "{m:?} not generated");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn hilbert_complete_minimal(g in group_strategy(6), n in 1usize..=3, seed in prop::collection::vec(0u64..6, 6)) {
        let weights: Vec<Vec<u64>> = g.moduli().iter().enumerate().map(|(i, &p)| (0..n).map(|j| seed[(3 * i + j) % 6] % p).collect()).collect();
        let vars: Vec<String> = (0..n).map(|j| format!("a{j}")).collect();
        let act = DiagonalAction::new(g, vars, weights).unwrap();
        let hb = hilbert_basis(&act);
        basis_oracle(&hb);
        let rs = relations(&hb, 2 * hb.degree_bound).unwrap();
        let e: Vec<Vec<i128>> = hb.generators.iter().map(|g| g.iter().map(|&x| x as i128).collect()).collect();
        prop_assert_eq!(rs.kernel_rank, hb.generators.len() - int_rank(&e));
        for r in &rs.lattice {
            prop_assert!(r.holds(&hb));
            let l: Vec<u32> = (0..n).map(|v| r.lhs.iter().zip(&hb.generators).map(|(c, g)| c * g[v]).sum()).collect();
            let rr: Vec<u32> = (0..n).map(|v| r.rhs.iter().zip(&hb.generators).map(|(c, g)| c * g[v]).sum()).collect();
            prop_assert_eq!(l, rr);
        }
        // Products of generators are recovered by quotient_image.
        let sp = Arc::new(VarSpace::new(vec![], act.vars.clone()).unwrap());
        let mut f = FracPoly::zero(&sp);
        for (i, g) in hb.generators.iter().enumerate().take(3) {
            let m = FracPoly::monomial(&sp, &[], g, Cyclo::int(i as i64 + 1)).unwrap();
            f = &f + &(&m * &m);
        }
        if !f.is_zero() {
            prop_assert!(quotient_image(&f, &hb).is_ok());
        }
    }

    #[test]
    fn transitions_commute(w in prop::collection::vec(1u64..=4, 2..=3), i in 0usize..3, j in 0usize..3) {
        prop_assume!(i < w.len() && j < w.len() && i != j);
        let t = transition(&w, i, j).unwrap();
        prop_assert!(t.isomorphism_ok && t.equivariant && t.etale_equivariant && t.projections_commute);
    }
}

#[test]
fn chart_actions_free_off_exceptional() {
    for k in 2..=4 {
        let a = cpk_atlas(k).unwrap();
        for c in &a.charts {
            assert!(free_off(&c.action, &[c.exceptional.as_str()]));
        }
        basis_oracle(&hilbert_basis(&a.charts[0].action));
    }
    let sp = VarSpace::of(&[], &["x", "y", "z"]);
    let a = charts(&sp, &["x", "y", "z"], &[2, 3, 4]).unwrap();
    for c in &a.charts {
        assert!(free_off(&c.action, &[c.exceptional.as_str()]));
    }
}

// ---------- quotient_nc ----------

fn random_instance(g: &AbelianGroup, n: usize, seed: &[i64]) -> Option<(DiagonalAction, FracPoly)> {
    let weights: Vec<Vec<u64>> = g
        .moduli()
        .iter()
        .enumerate()
        .map(|(i, &p)| (0..n).map(|j| (seed[(5 * i + j) % seed.len()].unsigned_abs()) % p).collect())
        .collect();
    let vars: Vec<String> = (0..n).map(|j| format!("y{j}")).collect();
    let act = DiagonalAction::new(g.clone(), vars.clone(), weights).ok()?;
    let sp = Arc::new(VarSpace::new(vec![], vars.clone()).unwrap());
    let mut f = FracPoly::zero(&sp);
    for (j, v) in vars.iter().enumerate() {
        let c = seed[(j + 3) % seed.len()];
        f = &f + &FracPoly::var(&sp, v).unwrap().scale(&Cyclo::int(if c == 0 { 1 } else { c }));
    }
    let (a, b) = (seed[1].unsigned_abs() as usize % n, seed[2].unsigned_abs() as usize % n);
    let quad = &FracPoly::var(&sp, &vars[a]).unwrap() * &FracPoly::var(&sp, &vars[b]).unwrap();
    f = &f + &quad.scale(&Cyclo::int(seed[4]));
    Some((act, f))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn nc_round_trip(g in group_strategy(16), n in 2usize..=8, seed in prop::collection::vec(-3i64..=3, 12)) {
        let (act, f1) = random_instance(&g, n, &seed).unwrap();
        let Ok(inp) = InvariantNCInput::from_orbit(act.clone(), &f1) else {
            return Ok(());
        };
        let nf = invariant_nc_normal_form(&inp).unwrap();
        prop_assert_eq!(nf.chain().iter().product::<u64>() as usize, nf.k);
        prop_assert_eq!(nf.k, inp.factors.len());
        prop_assert!(!nf.det.is_zero());
        prop_assert!(nf.formula_agrees);
        let prod = nf.product();
        let u = inp.product().div_exact(&prod).unwrap();
        prop_assert!(u.as_constant().map(|c| !c.is_zero()).unwrap_or(false) || !u.homogeneous_part(&qi(0)).is_zero());
        // Weights of the h's predicted by γ and ℓ.
        for (l, h) in &nf.coords {
            for (m, lv) in nf.levels.iter().enumerate() {
                let gam = lv.gamma[&l[..m].to_vec()];
                let e = g.basis_element(lv.generator);
                let want = h.scale(&Cyclo::eps(lv.p, (gam + l[m] * (lv.p / lv.q)) as i64));
                prop_assert_eq!(h.apply_group(&act, &e).unwrap(), want);
            }
        }
        let si = semi_invariant_generators(&inp.factors, &act).unwrap();
        prop_assert!(si.membership_checked);
    }
}

// ---------- serialization ----------

proptest! {
    #[test]
    fn json_round_trips(a in terms_strategy(3, 3, 5), g in group_strategy(8)) {
        let sp = VarSpace::of(&[("w", 2)], &["x", "y"]);
        let f = poly_from(&sp, &a);
        let s = serde_json::to_string(&f).unwrap();
        let back: FracPoly = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(back, f.clone());
        prop_assert_eq!(FracPoly::parse(&sp, &f.to_string()).unwrap(), f);
        let act = DiagonalAction::new(g.clone(), vec!["x".into()], g.moduli().iter().map(|_| vec![0]).collect()).unwrap();
        let s = serde_json::to_string(&act).unwrap();
        prop_assert_eq!(serde_json::from_str::<DiagonalAction>(&s).unwrap(), act);
        let h = subgroup_from_generators(&g, &g.elements()[..1.min(g.elements().len())]).unwrap();
        let ctx = PairingContext::lcm(&g);
        for x in g.elements() {
            for y in g.elements() {
                prop_assert_eq!(pairing(&ctx, &g, &x, &y).unwrap(), pair(ctx.k(), &g, &x, &y));
            }
        }
        prop_assert_eq!(h.order(), 1);
    }
}

#[test]
fn spec_json_round_trip() {
    for spec in presets() {
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<NormalFormSpec>(&s).unwrap(), spec);
    }
}
