//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//! Criteria listed in `KNOWN_RED` are expected to fail; the reason is printed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use circforge::abelian::{
    all_subgroups, invariant_factors, perp, quotient_invariant_factors, xi, AbelianGroup, GroupElement, PairingContext,
};
use circforge::blowup::{cpk_atlas, expand_image, gcirc_blowup_sequence, hilbert_basis, orbifold_circulant, pullback, pullback_strict, quotient_image, relations};
use circforge::cli::run;
use circforge::cyclotomic::{q, qi, Cyclo, Q};
use circforge::gcirc::{
    circulant_matrix, codim1_factor, eigen_system, eigenvalue_orbits, gcirc_det, irreducible_exponents, leibniz_det, normal_form_poly,
    product_merge, validate_normal_form, NormalFormSpec, ProductNormalFormSpec,
};
use circforge::polyring::{ChartMap, DiagonalAction, FracPoly, VarRef, VarSpace};
use circforge::quotient_nc::{invariant_nc_normal_form, InvariantNCInput};
use circforge::resinv::{atw_to_inv, atwinv_cpk, atwinv_product, inv_cpk, inv_recursion, inv_to_atw, weights, MonomialMarkedIdeal};
use circforge::split::{example_basic, SplitOptions};
use num::Zero;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

const KNOWN_RED: [u32; 2] = [6, 13];

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($c:expr, $($m:tt)*) => {
        if !$c {
            return Err(format!($($m)*));
        }
    };
}

// ---------- shared oracles ----------

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

fn pair(k: u64, g: &AbelianGroup, a: &GroupElement, b: &GroupElement) -> u64 {
    g.moduli().iter().enumerate().map(|(i, &p)| (k / p) * a.0[i] * b.0[i]).sum::<u64>() % k
}

/// `∏_m Σ_j ε_k^{jm} v_j`.
fn delta(vals: &[FracPoly]) -> FracPoly {
    let k = vals.len() as u64;
    let sp = vals[0].space().clone();
    let mut p = FracPoly::one(&sp);
    for m in 0..k {
        let mut y = FracPoly::zero(&sp);
        for (j, v) in vals.iter().enumerate() {
            y = &y + &v.scale(&Cyclo::eps(k, (j as u64 * m) as i64));
        }
        p = &p * &y;
    }
    p
}

fn wpow(sp: &Arc<VarSpace>, i: usize, e: Q) -> FracPoly {
    FracPoly::var_power(sp, VarRef::Div(i), &e).unwrap()
}

fn var(sp: &Arc<VarSpace>, n: &str) -> FracPoly {
    FracPoly::var(sp, n).unwrap()
}

fn parse(sp: &Arc<VarSpace>, s: &str) -> FracPoly {
    FracPoly::parse(sp, s).unwrap()
}

/// Determinant by permutation expansion.
fn perm_det(m: &[Vec<FracPoly>]) -> FracPoly {
    let n = m.len();
    let sp = m[0][0].space().clone();
    let mut acc = FracPoly::zero(&sp);
    let mut perm: Vec<usize> = (0..n).collect();
    permutations(&mut perm, 0, &mut |p| {
        let inv = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| p[i] > p[j]).count();
        let mut t = FracPoly::one(&sp);
        for (i, &j) in p.iter().enumerate() {
            t = &t * &m[i][j];
        }
        acc = if inv % 2 == 0 { &acc + &t } else { &acc - &t };
    });
    acc
}

fn permutations(p: &mut Vec<usize>, i: usize, f: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permutations(p, i + 1, f);
        p.swap(i, j);
    }
}

/// Rank over the cyclotomic field by elimination.
fn rank(rows: &[Vec<Cyclo>]) -> usize {
    let mut m: Vec<Vec<Cyclo>> = rows.to_vec();
    let cols = m.first().map(|r| r.len()).unwrap_or(0);
    let mut r = 0;
    for c in 0..cols {
        let Some(piv) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, piv);
        for i in 0..m.len() {
            if i != r && !m[i][c].is_zero() {
                let f = (&m[i][c] / &m[r][c]).unwrap();
                let pr = m[r].clone();
                for (a, b) in m[i].iter_mut().zip(&pr) {
                    *a = &*a - &(&f * b);
                }
            }
        }
        r += 1;
    }
    r
}

fn linear_coeffs(f: &FracPoly, vars: &[String]) -> Vec<Cyclo> {
    let sp = f.space().clone();
    vars.iter()
        .map(|v| {
            let i = sp.free_index(v).unwrap();
            f.terms()
                .into_iter()
                .find(|t| t.w.iter().all(|e| e.is_zero()) && t.free.iter().enumerate().all(|(j, &a)| a == u32::from(j == i)))
                .map(|t| t.coeff)
                .unwrap_or_else(Cyclo::zero)
        })
        .collect()
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut argv = vec!["circforge"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut "".as_bytes(), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap())
}

// ---------- criteria ----------

fn c1() -> Outcome {
    let (code, out) = cli(&["gcirc", "det", "--group", "Z2", "--cpk"]);
    ensure!(code == 0, "gcirc det Z2 exited {code}");
    let sp2 = VarSpace::of(&[("w", 1)], &["z", "x"]);
    ensure!(parse(&sp2, out.trim()) == parse(&sp2, "z^2 - w*x^2"), "cp(2) is {out}");
    let (code, out) = cli(&["gcirc", "det", "--group", "Z3", "--cpk"]);
    ensure!(code == 0, "gcirc det Z3 exited {code}");
    let sp3 = VarSpace::of(&[("w", 1)], &["z", "y", "x"]);
    let want3 = parse(&sp3, "z^3 + w*y^3 + w^2*x^3 - 3*w*x*y*z");
    ensure!(parse(&sp3, out.trim()) == want3, "cp(3) is {out}");
    ensure!(normal_form_poly(&NormalFormSpec::cpk_named(3)).unwrap() == want3, "library cp(3) differs");
    Ok("z^2 - w*x^2 and z^3 + w*y^3 + w^2*x^3 - 3*w*x*y*z".into())
}

fn c2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let groups: Vec<Vec<u64>> = vec![vec![2], vec![3], vec![4], vec![2, 2], vec![6], vec![2, 3], vec![8], vec![2, 4], vec![2, 2, 2]];
    for m in &groups {
        let g = AbelianGroup::new(m.clone()).unwrap();
        let elems = g.elements();
        let names: Vec<String> = (0..elems.len()).map(|i| format!("a{i}")).collect();
        let sp = Arc::new(VarSpace::new(vec![], names.clone()).unwrap());
        // Oracle: product over characters of Σ χ(g) a_g.
        let kk = g.lcm();
        let mut want = FracPoly::one(&sp);
        for c in &elems {
            let mut y = FracPoly::zero(&sp);
            for (i, e) in elems.iter().enumerate() {
                y = &y + &var(&sp, &names[i]).scale(&Cyclo::eps(kk, pair(kk, &g, c, e) as i64));
            }
            want = &want * &y;
        }
        for _ in 0..20 {
            let mut idx: Vec<usize> = (0..elems.len()).collect();
            idx.shuffle(&mut rng);
            let ordering: Vec<GroupElement> = idx.iter().map(|&i| elems[i].clone()).collect();
            let vals: Vec<FracPoly> = idx.iter().map(|&i| var(&sp, &names[i])).collect();
            let d = gcirc_det(&g, &ordering, &vals).map_err(|e| e.to_string())?;
            ensure!(d == want, "Δ differs for {m:?} with ordering {idx:?}");
        }
    }
    Ok(format!("{} groups × 20 orderings", groups.len()))
}

fn c3() -> Outcome {
    let mut n = 0;
    for g in small_groups(8) {
        let ord = g.elements();
        let mat = circulant_matrix(&g, &ord).map_err(|e| e.to_string())?;
        let index: BTreeMap<&GroupElement, usize> = ord.iter().enumerate().map(|(i, e)| (e, i)).collect();
        for (i, gi) in ord.iter().enumerate() {
            for (j, gj) in ord.iter().enumerate() {
                ensure!(mat.entries[i][j] == index[&g.sub(gj, gi)], "C entry ({i},{j}) for {:?}", g.moduli());
            }
        }
        let ctx = PairingContext::lcm(&g);
        for p in eigen_system(&g, &ord, &ctx).map_err(|e| e.to_string())? {
            // Coefficient of X_s in row i of C·Ψ must equal Ψ_i · (coefficient of X_s in Y).
            for i in 0..ord.len() {
                let mut lhs = vec![Cyclo::zero(); ord.len()];
                for j in 0..ord.len() {
                    let s = mat.entries[i][j];
                    lhs[s] = &lhs[s] + &p.vector[j];
                }
                for s in 0..ord.len() {
                    ensure!(lhs[s] == &p.vector[i] * &p.coeffs[s], "eigen identity fails for {:?}", g.moduli());
                }
            }
            n += 1;
        }
    }
    Ok(format!("{n} eigenpairs"))
}

fn c4() -> Outcome {
    let mut count = 0;
    for g in small_groups(16) {
        let ctx = PairingContext::lcm(&g);
        for h in all_subgroups(&g) {
            let hp = perp(&ctx, &h);
            ensure!(hp.order() * h.order() == g.order(), "|H⊥||H| ≠ |G|");
            ensure!(perp(&ctx, &hp).elements() == h.elements(), "perp∘perp ≠ id");
            ensure!(invariant_factors(&hp) == quotient_invariant_factors(&h), "H⊥ ≇ G/H");
            let brute: Vec<GroupElement> = g
                .elements()
                .into_iter()
                .filter(|l| h.elements().iter().all(|x| pair(ctx.k(), &g, x, l) == 0))
                .collect();
            ensure!(hp.elements() == brute, "H⊥ differs from brute force");
            for l in g.elements() {
                let want = if brute.contains(&l) { h.order() as i64 } else { 0 };
                ensure!(xi(&ctx, &h, &l).unwrap() == Cyclo::int(want), "ξ branch formula fails");
            }
            count += 1;
        }
    }
    Ok(format!("{count} subgroups"))
}

fn c5() -> Outcome {
    let spec = NormalFormSpec::klein();
    let mat = circulant_matrix(&spec.quotient, &spec.labels).map_err(|e| e.to_string())?;
    let shown = vec![vec![0, 1, 2, 3], vec![1, 0, 3, 2], vec![2, 3, 0, 1], vec![3, 2, 1, 0]];
    ensure!(mat.entries == shown, "matrix form {:?}", mat.entries);
    let fsp = VarSpace::of(&[("w1", 2), ("w2", 2)], &["x0", "x1", "x2", "x3"]);
    let h = q(1, 2);
    let vals = vec![
        var(&fsp, "x0"),
        &wpow(&fsp, 0, h.clone()) * &var(&fsp, "x1"),
        &wpow(&fsp, 1, h.clone()) * &var(&fsp, "x2"),
        &(&wpow(&fsp, 0, h.clone()) * &wpow(&fsp, 1, h)) * &var(&fsp, "x3"),
    ];
    let m: Vec<Vec<FracPoly>> = shown.iter().map(|r| r.iter().map(|&i| vals[i].clone()).collect()).collect();
    let oracle = perm_det(&m);
    let isp = VarSpace::of(&[("w1", 1), ("w2", 1)], &["x0", "x1", "x2", "x3"]);
    let oracle = oracle.embed(&isp).map_err(|_| "oracle has fractional exponents".to_string())?;
    let p = normal_form_poly(&spec).map_err(|e| e.to_string())?;
    ensure!(p == oracle, "Δ_G expansion differs from the permutation expansion");
    ensure!(leibniz_det(&m).unwrap().embed(&isp).unwrap() == oracle, "library Leibniz differs");
    Ok(format!("{} terms", p.len()))
}

fn c6() -> Outcome {
    let spec = NormalFormSpec::z2z4();
    let rep = validate_normal_form(&spec);
    ensure!(rep.valid && rep.quotient_factors == vec![4], "validation {:?}", rep.messages);
    let c = codim1_factor(&spec, 0).map_err(|e| e.to_string())?;
    ensure!(c.factors.len() == 2, "{} factors at T1", c.factors.len());
    for (ri, f) in c.factors.iter().enumerate() {
        let want = parse(f.space(), &format!("y{ri}_0^2 - w1*y{ri}_1^2"));
        ensure!(*f == want, "factor {ri} is {f}, not cp(2)");
    }
    // Δ_4(z, w1^{1/2}y1, y2, w1^{1/2}y3) from the independent oracle (w2 = 1, y = x).
    let fsp = VarSpace::of(&[("w1", 2)], &["z", "x1", "x2", "x3"]);
    let h = wpow(&fsp, 0, q(1, 2));
    let d = delta(&[var(&fsp, "z"), &h * &var(&fsp, "x1"), var(&fsp, "x2"), &h * &var(&fsp, "x3")]);
    let isp = VarSpace::of(&[("w1", 1)], &["z", "x1", "x2", "x3"]);
    let d = d.embed(&isp).unwrap();
    ensure!(c.specialized == d, "specialization differs from Δ_4 at w2 = 1");
    let corrected = parse(&isp, "((z + x2)^2 - w1*(x1 + x3)^2)*((z - x2)^2 + w1*(x1 - x3)^2)");
    ensure!(d == corrected, "corrected factorization does not match");
    let shown = parse(&isp, "((z + x2)^2 - w1*(x1 + x3)^2)*((z - x2)^2 - w1*(x1 - x3)^2)");
    ensure!(
        d == shown,
        "G/H ≅ Z4 and cp(2)×cp(2) verified, but the displayed factorization has −w1(y1−y3)² in its second factor; \
         the expansion gives +w1(y1−y3)² since ε4² = −1"
    );
    Ok("displayed factorization reproduced".into())
}

fn c7() -> Outcome {
    let mut checked = 0;
    // Every tuple for k ≤ 4 whose Δ is a polynomial; the μ·j sweep for k = 5, 6.
    for k in 2..=6u64 {
        let tuples: Vec<Vec<u64>> = if k <= 4 {
            (0..k.pow(k as u32))
                .map(|mut n| {
                    (0..k)
                        .map(|_| {
                            let d = n % k;
                            n /= k;
                            d
                        })
                        .collect()
                })
                .collect()
        } else {
            (0..k).map(|mu| (0..k).map(|j| mu * j % k).collect()).collect()
        };
        let fsp = Arc::new(VarSpace::new(vec![("v".into(), 1)], (0..k).map(|j| format!("x{j}")).collect()).unwrap());
        let wsp = Arc::new(VarSpace::new(vec![("w".into(), k)], (0..k).map(|j| format!("x{j}")).collect()).unwrap());
        let isp = Arc::new(VarSpace::new(vec![("w".into(), 1)], (0..k).map(|j| format!("x{j}")).collect()).unwrap());
        for h in tuples {
            let vals: Vec<FracPoly> = (0..k as usize).map(|j| &wpow(&wsp, 0, q(h[j] as i64, k as i64)) * &var(&wsp, &format!("x{j}"))).collect();
            if delta(&vals).embed(&isp).is_err() {
                continue;
            }
            // Factor lines in v = w^{1/k}, orbit of factor 0 under v ↦ ε v.
            let ys: Vec<FracPoly> = (0..k)
                .map(|l| {
                    let mut y = FracPoly::zero(&fsp);
                    for j in 0..k as usize {
                        let mut fr = vec![0u32; k as usize];
                        fr[j] = 1;
                        y = &y + &FracPoly::monomial(&fsp, &[qi(h[j] as i64)], &fr, Cyclo::eps(k, (j as u64 * l) as i64)).unwrap();
                    }
                    y
                })
                .collect();
            let same_line = |a: &FracPoly, b: &FracPoly| {
                let (ta, tb) = (a.terms(), b.terms());
                !ta.is_empty() && ta.len() == tb.len() && *a == b.scale(&(&ta[0].coeff / &tb[0].coeff).unwrap())
            };
            let rot = ChartMap::new(&fsp, &fsp, vec![("v", var(&fsp, "v").scale(&Cyclo::eps(k, 1)))]).unwrap();
            let mut orbit = vec![0usize];
            let mut cur = ys[0].clone();
            loop {
                cur = cur.substitute(&rot).unwrap();
                let t = ys.iter().position(|y| same_line(&cur, y)).ok_or("rotation leaves the factor set")?;
                if orbit.contains(&t) {
                    break;
                }
                orbit.push(t);
            }
            let transitive = orbit.len() as u64 == k;
            ensure!(transitive == irreducible_exponents(k, &h), "k = {k}, h = {h:?}: brute force says {transitive}");
            if h[0] == 0 {
                let orbits = eigenvalue_orbits(k, &h).map_err(|e| e.to_string())?;
                ensure!((orbits == 1) == transitive, "eigenvalue_orbits disagrees for {h:?}");
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} exponent tuples"))
}

fn c8() -> Outcome {
    for (k, r) in [(2u64, 2u64), (2, 3), (3, 2)] {
        let res = product_merge(k, r).map_err(|e| e.to_string())?;
        let n = r * k;
        let sp = Arc::new(VarSpace::new(vec![("w".into(), k)], (0..n).map(|m| format!("x{m}")).collect()).unwrap());
        let x = |m: u64| var(&sp, &format!("x{m}"));
        let mut lhs = FracPoly::one(&sp);
        for i in 0..r {
            let vals: Vec<FracPoly> = (0..k)
                .map(|j| {
                    let mut s = FracPoly::zero(&sp);
                    for t in 0..r {
                        s = &s + &x(t * k + j).scale(&Cyclo::eps(r, (t * i) as i64));
                    }
                    &wpow(&sp, 0, q(j as i64, k as i64)) * &s.scale(&Cyclo::eps(n, (i * j) as i64))
                })
                .collect();
            lhs = &lhs * &delta(&vals);
        }
        let rvals: Vec<FracPoly> = (0..n).map(|m| &wpow(&sp, 0, q((m % k) as i64, k as i64)) * &x(m)).collect();
        let rhs = delta(&rvals);
        ensure!(lhs == rhs, "identity fails for (k, r) = ({k}, {r})");
        ensure!(res.lhs == lhs && res.rhs == rhs, "library sides differ for ({k}, {r})");
    }
    Ok("(2,2), (2,3), (3,2)".into())
}

/// Sorted ATW entries of `cp(k_1) × ⋯`, with the `w` entry only when some `k_i ≥ 2`.
fn atw_oracle(ks: &[u64]) -> Vec<Q> {
    let k: i64 = ks.iter().sum::<u64>() as i64;
    let k1 = *ks.iter().max().unwrap() as i64;
    let mut v = Vec::new();
    if k1 >= 2 {
        v.push(q(k * (k1 + 1), k1));
    }
    for &ki in ks {
        let ki = ki as i64;
        for j in 0..ki {
            v.push(q(k * ki * (k1 + 1), k1 * (ki - j) + ki));
        }
    }
    v.sort();
    v
}

fn ratios(a: &[Q]) -> Vec<Q> {
    let mut prev = qi(1);
    a.iter()
        .map(|x| {
            let r = x / &prev;
            prev = x.clone();
            r
        })
        .collect()
}

fn c9() -> Outcome {
    for k in 2..=5u64 {
        let ki = k as i64;
        let mut inv = vec![qi(ki), q(ki + 1, ki), qi(1)];
        inv.extend((2..ki).rev().map(|m| q(m + 1, m)));
        let mut atw = vec![qi(ki), qi(ki + 1), qi(ki + 1)];
        atw.extend((2..ki).rev().map(|m| q(ki * (ki + 1), m)));
        let rec = inv_recursion(&MonomialMarkedIdeal::cpk(k)).map_err(|e| e.to_string())?;
        ensure!(rec.entries == inv, "recursion for cp({k}) gives {rec}");
        ensure!(inv_cpk(k).unwrap().entries == inv, "inv_cpk({k})");
        ensure!(atwinv_cpk(k).unwrap().entries == atw, "atwinv_cpk({k})");
        ensure!(inv_to_atw(&rec).unwrap().entries == atw, "inv → ATW for cp({k})");
        ensure!(atw_to_inv(&atwinv_cpk(k).unwrap()).unwrap() == inv_cpk(k).unwrap(), "ATW → inv for cp({k})");
        let w = weights(&[k]).map_err(|e| e.to_string())?;
        ensure!(w.integer_of("w") == Some(k), "w weight for [{k}]");
        for j in 0..k {
            ensure!(w.integer_of(&format!("x{j}")) == Some(k - j + 1), "x{j} weight for [{k}]");
        }
        for m in 2..=3usize {
            let eq = weights(&vec![k; m]).unwrap();
            ensure!(eq.integer_of("w") == Some(k), "w weight for {m}×[{k}]");
            for i in 1..=m {
                for j in 0..k {
                    ensure!(eq.integer_of(&format!("x{i}{j}")) == Some(k - j + 1), "x{i}{j} weight for {m}×[{k}]");
                }
            }
        }
    }
    let parts: Vec<Vec<u64>> = vec![
        vec![3, 1],
        vec![2, 2],
        vec![2, 1, 1],
        vec![1, 1, 1, 1],
        vec![4, 1],
        vec![3, 2],
        vec![3, 1, 1],
        vec![2, 2, 1],
        vec![2, 1, 1, 1],
        vec![1, 1, 1, 1, 1],
    ];
    for ks in &parts {
        let want_atw = atw_oracle(ks);
        let rec = inv_recursion(&MonomialMarkedIdeal::product(ks)).map_err(|e| e.to_string())?;
        ensure!(rec.entries == ratios(&want_atw), "recursion for {ks:?} gives {rec}");
        let atw = inv_to_atw(&rec).unwrap();
        ensure!(atw.entries == want_atw, "ATW for {ks:?}");
        ensure!(atw_to_inv(&atw).unwrap() == rec, "round trip for {ks:?}");
        if ks.iter().all(|&x| x >= 2) {
            ensure!(atwinv_product(ks).unwrap().entries == want_atw, "atwinv_product({ks:?})");
        }
    }
    Ok(format!("cp(k) for k ≤ 5 and {} partitions", parts.len()))
}

fn chart_space(k: u64) -> Arc<VarSpace> {
    let mut n = vec!["t".to_string()];
    n.extend((0..k).map(|j| format!("x{j}'")));
    Arc::new(VarSpace::new(vec![], n).unwrap())
}

fn c10() -> Outcome {
    for k in 2..=4u64 {
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let fsp = Arc::new(VarSpace::new(vec![("w".into(), k)], names.clone()).unwrap());
        let isp = Arc::new(VarSpace::new(vec![("w".into(), 1)], names.clone()).unwrap());
        let vals: Vec<FracPoly> = (0..k).map(|j| &wpow(&fsp, 0, q(j as i64, k as i64)) * &var(&fsp, &names[j as usize])).collect();
        let f = delta(&vals).embed(&isp).unwrap();
        let csp = chart_space(k);
        let t = var(&csp, "t");
        let mut imgs = vec![("w", t.pow(k as u32))];
        for j in 0..k {
            imgs.push((names[j as usize].as_str(), &t.pow((k - j + 1) as u32) * &var(&csp, &format!("x{j}'"))));
        }
        let pulled = f.substitute(&ChartMap::new(&isp, &csp, imgs).unwrap()).unwrap();
        let dx: Vec<FracPoly> = (0..k).map(|j| var(&csp, &format!("x{j}'"))).collect();
        let dx = delta(&dx);
        ensure!(pulled == &t.pow((k * (k + 1)) as u32) * &dx, "pullback ≠ t^(k(k+1))Δ(ẋ) for k = {k}");
        let atlas = cpk_atlas(k).unwrap();
        ensure!(pullback(&f, &atlas, 0).unwrap() == pulled, "library w-chart pullback differs for k = {k}");
        let (st, m) = pullback_strict(&f, &atlas, 0).unwrap();
        ensure!(m == qi((k * (k + 1)) as i64), "multiplicity {m} for k = {k}");
        ensure!(st == dx, "strict transform ≠ Δ(ẋ) for k = {k}");
    }
    Ok("k = 2, 3, 4".into())
}

fn exps_weight(k: u64, e: &[u32]) -> u64 {
    // t has weight 1, ẋ_j has weight j − 1 (mod k).
    let mut s = e[0] as u64;
    for j in 0..k as usize {
        s += e[j + 1] as u64 * ((j as u64 + k - 1) % k);
    }
    s % k
}

fn monos(n: usize, d: u32) -> Vec<Vec<u32>> {
    if n == 0 {
        return if d == 0 { vec![vec![]] } else { vec![] };
    }
    (0..=d)
        .flat_map(|a| {
            monos(n - 1, d - a).into_iter().map(move |mut r| {
                r.insert(0, a);
                r
            })
        })
        .collect()
}

fn divides(a: &[u32], b: &[u32]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

fn minimal(set: &[Vec<u32>]) -> BTreeSet<Vec<u32>> {
    set.iter().filter(|m| !set.iter().any(|g| g != *m && divides(g, m))).cloned().collect()
}

fn c11() -> Outcome {
    let mut notes = Vec::new();
    for k in 2..=3u64 {
        let atlas = cpk_atlas(k).unwrap();
        let act = &atlas.charts[0].action;
        let n = k as usize + 1;
        let mut wvars = vec!["t".to_string()];
        wvars.extend((0..k).map(|j| format!("x{j}'")));
        ensure!(act.vars == wvars, "chart variables {:?}", act.vars);
        let mine: Vec<u64> = (0..n).map(|i| {
            let mut e = vec![0u32; n];
            e[i] = 1;
            exps_weight(k, &e)
        }).collect();
        ensure!(act.weights == vec![mine.clone()] && act.group.moduli() == [k], "chart action {:?}", act.weights);
        let invariants: Vec<Vec<u32>> = (1..=k as u32).flat_map(|d| monos(n, d)).filter(|e| exps_weight(k, e) == 0).collect();
        let brute = minimal(&invariants);
        let mut hb = hilbert_basis(act);
        hb.name_chart();
        let got: BTreeSet<Vec<u32>> = hb.generators.iter().cloned().collect();
        ensure!(got == brute, "Hilbert basis for k = {k}: {:?} vs brute force {:?}", got, brute);
        // Displayed family: W, X_0, X_1, X_j = t^{k−j+1}ẋ_j, S_{μ,λ} with λ_1 = 0, weight νk, ν ≥ 1.
        let unit = |i: usize, a: u32, t: u32| {
            let mut e = vec![0u32; n];
            e[0] = t;
            if i < n {
                e[i] += a;
            }
            e
        };
        let mut family: Vec<Vec<u32>> = vec![unit(n, 0, k as u32), unit(1, 1, 1), unit(2, 1, 0)];
        for j in 2..k as usize {
            family.push(unit(j + 1, 1, (k as usize - j + 1) as u32));
        }
        for e in &invariants {
            if e[2] == 0 {
                family.push(e.clone());
            }
        }
        ensure!(family.iter().all(|e| exps_weight(k, e) == 0), "family member not invariant");
        ensure!(minimal(&family) == brute, "family does not give the basis for k = {k}");
        let named: BTreeMap<&str, &Vec<u32>> = hb.names.iter().map(|s| s.as_str()).zip(&hb.generators).collect();
        ensure!(named.get("W") == Some(&&family[0]) && named.get("X0") == Some(&&family[1]) && named.get("X1") == Some(&&family[2]), "W, X0, X1 names");
        for j in 2..k as usize {
            ensure!(named.get(format!("X{j}").as_str()) == Some(&&family[1 + j]), "X{j} name");
            let literal = unit(j + 1, 1, (k as usize).saturating_sub(j + 1) as u32);
            if exps_weight(k, &literal) != 0 {
                notes.push(format!("t^(k−(j+1))ẋ_j is not invariant for (k, j) = ({k}, {j}); t^(k−j+1)ẋ_j used"));
            }
        }
        // Relations: every one an exact monomial identity; the X_0 and X_j power relations occur.
        let rs = relations(&hb, 2 * hb.degree_bound).map_err(|e| e.to_string())?;
        let amb = |side: &[u32]| -> Vec<u32> { (0..n).map(|v| side.iter().zip(&hb.generators).map(|(c, g)| c * g[v]).sum()).collect() };
        for r in rs.lattice.iter().chain(rs.family.iter().map(|f| &f.relation)) {
            ensure!(amb(&r.lhs) == amb(&r.rhs), "relation {:?} = {:?} is not an identity", r.lhs, r.rhs);
        }
        let power = |j: usize| {
            // λ_j with λ_j·w(ẋ_j) ≡ 0, i.e. ν_j k = λ_j (k − 1) (j = 0) or λ_j (j − 1).
            let c = if j == 0 { k - 1 } else { j as u64 - 1 };
            let lam = (1..=k).find(|l| l * c % k == 0).unwrap();
            (lam as u32, (lam * c / k) as u32)
        };
        let mut wanted = vec![0usize];
        wanted.extend(2..k as usize);
        for j in wanted {
            let (lam, nu) = power(j);
            let x = format!("X{j}");
            let s_exp = unit(j + 1, lam, 0);
            let found = rs.family.iter().any(|f| {
                f.lambda.len() == 1
                    && f.lambda.get(&x) == Some(&lam)
                    && f.w_power == lam - nu
                    && named.get(f.s.as_str()) == Some(&&s_exp)
            });
            ensure!(found, "missing {x}^{lam} = W^{} S for k = {k}", lam - nu);
        }
    }
    notes.sort();
    notes.dedup();
    Ok(if notes.is_empty() { "cp(2), cp(3)".into() } else { format!("cp(2), cp(3); note: {}", notes.join("; ")) })
}

fn c12() -> Outcome {
    for k in 2..=3u64 {
        let atlas = cpk_atlas(k).unwrap();
        let mut hb = hilbert_basis(&atlas.charts[0].action);
        hb.name_chart();
        let f = normal_form_poly(&NormalFormSpec::cpk(k)).unwrap();
        let (st, _) = pullback_strict(&f, &atlas, 0).unwrap();
        let qimg = quotient_image(&st, &hb).map_err(|e| e.to_string())?;
        let csp = st.space().clone();
        ensure!(expand_image(&qimg, &hb, &csp).unwrap() == st, "quotient image does not re-expand for k = {k}");
        let qg = orbifold_circulant(k).map_err(|e| e.to_string())?;
        // Standard form after the permutation X_{k−1}, X_0, X_1, … ↦ positions 0, 1, 2, ….
        let names: Vec<String> = (0..k).map(|j| format!("X{j}")).collect();
        let ssp = Arc::new(VarSpace::new(vec![("W".into(), k)], names.clone()).unwrap());
        let order: Vec<usize> = if k == 2 { vec![0, 1] } else { vec![2, 0, 1] };
        let vals: Vec<FracPoly> = order
            .iter()
            .enumerate()
            .map(|(pos, &j)| &wpow(&ssp, 0, q(pos as i64, k as i64)) * &var(&ssp, &names[j]))
            .collect();
        let isp = Arc::new(VarSpace::new(vec![("W".into(), 1)], names.clone()).unwrap());
        let std = delta(&vals).embed(&isp).unwrap();
        ensure!(qg == std, "W^-2 Δ(WX0, W^(1+1/k)X1, …) is not cp({k}) after the permutation");
        // quotgen and the quotient image agree off the exceptional divisor: expanded,
        // quotgen = W^{k−1} · (expanded image).
        let t = var(&csp, "t");
        let mut imgs = vec![("W", t.pow(k as u32))];
        for j in 0..k {
            let e = match j {
                0 => 1,
                1 => 0,
                _ => (k - j + 1) as u32,
            };
            imgs.push((names[j as usize].as_str(), &t.pow(e) * &var(&csp, &format!("x{j}'"))));
        }
        let qexp = qg.substitute(&ChartMap::new(&isp, &csp, imgs).unwrap()).unwrap();
        ensure!(qexp == &t.pow((k * (k - 1)) as u32) * &st, "quotgen ≠ W^(k−1)·image for k = {k}");
    }
    Ok("quotgen is cp(k) after permuting (X0, …); equals W^(k−1)·quotient_image in the chart ring".into())
}

fn c13() -> Outcome {
    let mut msgs = Vec::new();
    for (name, spec) in [("Klein", NormalFormSpec::klein()), ("Z2×Z4", NormalFormSpec::z2z4())] {
        let r = gcirc_blowup_sequence(&ProductNormalFormSpec { factors: vec![spec.clone()] }).map_err(|e| e.to_string())?;
        ensure!(r.steps.len() == spec.r(), "{name}: {} steps", r.steps.len());
        ensure!(r.linear_factors.len() == 4, "{name}: {} factors", r.linear_factors.len());
        let mut prod = FracPoly::one(r.strict_transform.space());
        for f in &r.linear_factors {
            prod = &prod * f;
        }
        ensure!(prod == r.strict_transform, "{name}: factors do not multiply to the strict transform");
        let rows: Vec<Vec<Cyclo>> = r.linear_factors.iter().map(|f| linear_coeffs(f, &spec.vars)).collect();
        ensure!(rank(&rows) == 4, "{name}: strict transform is not nc(4)");
        let order: u64 = r.group_moduli.iter().product();
        let bound: u64 = spec.moduli.iter().sum::<u64>() + 1;
        ensure!(r.group_moduli == spec.moduli, "{name}: group {:?}", r.group_moduli);
        if order > bound {
            msgs.push(format!("{name}: group μ{:?} has order {order} > p1+…+pr+1 = {bound}", r.group_moduli));
        }
    }
    ensure!(msgs.is_empty(), "nc(4) reached for both; {}", msgs.join("; "));
    Ok("nc(4), bounds hold".into())
}

fn c14() -> Outcome {
    let rep = example_basic(3, &SplitOptions::with_degree(12)).map_err(|e| e.to_string())?;
    let sp = VarSpace::of(&[("w", 1)], &["x", "z"]);
    let shown = ["z^2 + w*(w^2 + x)*x^2", "z^2 + w^2*(w + x)*x^2", "z^2 + w^3*(1 + x)*x^2"];
    ensure!(rep.polys.len() == 4, "{} polynomials", rep.polys.len());
    for (i, s) in shown.iter().enumerate() {
        ensure!(rep.polys[i + 1] == parse(&sp, s), "step {} is {}", i + 1, rep.polys[i + 1]);
    }
    ensure!(rep.verified, "library verification failed");
    // Independent check: substituted − ∏(z + b_i) has no term of (v, x)-degree ≤ 12.
    let g = &rep.split.substituted;
    let zv = var(g.space(), "z");
    let mut prod = FracPoly::one(g.space());
    for b in &rep.split.b {
        prod = &prod * &(&zv + &b.embed(g.space()).unwrap());
    }
    let zi = g.space().free_index("z").unwrap();
    let diff = g - &prod;
    for t in diff.terms() {
        let deg: Q = t.w.iter().sum::<Q>() + qi(t.free.iter().enumerate().filter(|(i, _)| *i != zi).map(|(_, &a)| a as i64).sum());
        ensure!(deg > qi(12), "residual term of degree {deg}");
    }
    Ok("three displayed polynomials; split verified to degree 12".into())
}

fn c15() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0015);
    let groups = small_groups(16);
    let (mut done, mut tries, mut nontrivial) = (0, 0, 0);
    while done < 100 {
        tries += 1;
        ensure!(tries < 20_000, "could not draw 100 valid instances");
        let g = groups[rng.gen_range(0..groups.len())].clone();
        let n = rng.gen_range(2..=8usize);
        let w: Vec<Vec<u64>> = g.moduli().iter().map(|&p| (0..n).map(|_| rng.gen_range(0..p)).collect()).collect();
        let vars: Vec<String> = (0..n).map(|j| format!("y{j}")).collect();
        let act = DiagonalAction::new(g.clone(), vars.clone(), w).unwrap();
        let sp = Arc::new(VarSpace::new(vec![], vars.clone()).unwrap());
        let mut f1 = FracPoly::zero(&sp);
        for v in &vars {
            if rng.gen_bool(0.7) {
                f1 = &f1 + &var(&sp, v).scale(&Cyclo::int(rng.gen_range(1..=3)));
            }
        }
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        f1 = &f1 + &(&var(&sp, &vars[a]) * &var(&sp, &vars[b])).scale(&Cyclo::int(rng.gen_range(-2..=2)));
        let Ok(inp) = InvariantNCInput::from_orbit(act.clone(), &f1) else {
            continue;
        };
        if inp.factors.len() > 8 {
            continue;
        }
        let nf = invariant_nc_normal_form(&inp).map_err(|e| format!("{:?} {f1}: {e}", g.moduli()))?;
        ensure!(nf.k == inp.factors.len(), "k mismatch");
        // Recombination: factor m = Σ_ℓ C[m][ℓ] h_ℓ, and each is a G-translate of f1'.
        for (m, f) in nf.factors.iter().enumerate() {
            let mut s = FracPoly::zero(f.space());
            for (c, (_, h)) in nf.matrix[m].iter().zip(&nf.coords) {
                s = &s + &h.scale(c);
            }
            ensure!(s == *f, "row {m} does not recombine");
            ensure!(
                g.elements().iter().any(|e| nf.f1.apply_group(&act, e).unwrap() == *f),
                "factor {m} is not a translate of f1'"
            );
        }
        ensure!(inp.product() == &nf.unit * &nf.product(), "input ≠ unit · ∏ factors");
        let u0 = nf.unit.homogeneous_part(&qi(0));
        ensure!(!u0.is_zero(), "unit vanishes at the origin");
        ensure!(rank(&nf.matrix) == nf.k && !nf.det.is_zero(), "coefficient matrix is singular");
        if nf.k > 1 {
            nontrivial += 1;
        }
        done += 1;
    }
    ensure!(nontrivial >= 20, "only {nontrivial} instances with k > 1");
    Ok(format!("100 instances ({nontrivial} with k > 1, {tries} draws)"))
}

#[test]
fn acceptance() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "pinch point and cp(3)", c1),
        (2, "determinant ordering independence", c2),
        (3, "eigen identity", c3),
        (4, "duality suite", c4),
        (5, "Klein example", c5),
        (6, "Z2×Z4 example", c6),
        (7, "irreducibility criterion", c7),
        (8, "product-merge identity", c8),
        (9, "invariants and weights", c9),
        (10, "cp(k) w-chart blow-up", c10),
        (11, "Hilbert bases and relations", c11),
        (12, "quotient equation", c12),
        (13, "blow-up pipeline", c13),
        (14, "splitting chain", c14),
        (15, "invariant nc round trip", c15),
    ];
    let mut unexpected = Vec::new();
    for (n, name, f) in criteria {
        let start = std::time::Instant::now();
        let res = f();
        let secs = start.elapsed().as_secs_f64();
        let red = KNOWN_RED.contains(&n);
        match &res {
            Ok(d) => println!("PASS {n:>2} {name} ({secs:.1}s): {d}"),
            Err(e) if red => println!("FAIL {n:>2} {name} ({secs:.1}s) [known]: {e}"),
            Err(e) => println!("FAIL {n:>2} {name} ({secs:.1}s): {e}"),
        }
        if res.is_ok() == red {
            unexpected.push(n);
        }
    }
    assert!(unexpected.is_empty(), "criteria with unexpected status: {unexpected:?}");
}
