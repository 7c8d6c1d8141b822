//! Command-line front end. `run` returns the process exit code:
//! 0 on success, 1 on a domain error, 2 on a usage error.

use std::io::{Read, Write};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::abelian::{
    invariant_factors, parse_elements, parse_group, perp, quotient, quotient_invariant_factors, subgroup_from_generators, xi,
    AbelianGroup, GroupElement, PairingContext, Subgroup,
};
use crate::blowup::{
    charts, cpk_atlas, gcirc_blowup_sequence, hilbert_basis, pullback_strict, quotient_image, relations, toric_relation_transform,
    transition,
};
use crate::cyclotomic::{fmt_q, parse_q};
use crate::error::{Error, Result};
use crate::gcirc::{
    circulant_matrix, clean_exponents, codim1_factor, gcirc_det, normal_form_poly, product_merge, product_normal_form_poly,
    validate_normal_form, NormalFormSpec, ProductNormalFormSpec,
};
use crate::polyring::{DiagonalAction, FracPoly, VarSpace};
use crate::quotient_nc::{adapted_coordinates, invariant_nc_normal_form, semi_invariant_generators, InvariantNCInput};
use crate::resinv::{atwinv_product, fmt_seq, inv_recursion, inv_to_atw, parse_parts, weights, MonomialMarkedIdeal};
use crate::split::{example_basic, split_newton, verify_split, SplitOptions};

#[derive(Parser, Debug)]
#[command(name = "circforge", version, about = "Exact computations for group-circulant singularities")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    pub format: Format,
    /// On a domain error, print a JSON error object to stdout.
    #[arg(long, global = true)]
    pub error_json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Finite abelian group duality.
    #[command(subcommand)]
    Abelian(AbelianCmd),
    /// Group-circulant matrices and normal forms.
    #[command(subcommand)]
    Gcirc(GcircCmd),
    /// Resolution invariants and blow-up weights.
    #[command(subcommand)]
    Resinv(ResinvCmd),
    /// Weighted blow-up charts and invariants.
    #[command(subcommand)]
    Blowup(BlowupCmd),
    /// Splitting after extracting roots of divisorial variables.
    #[command(subcommand)]
    Split(SplitCmd),
    /// Invariant normal-crossings ideals.
    #[command(subcommand)]
    Ncquot(NcquotCmd),
}

#[derive(Args, Debug)]
pub struct GroupSub {
    /// Group, e.g. `2,4` or `Z2xZ4`.
    #[arg(long)]
    pub group: String,
    /// Subgroup generators, e.g. `(1,2);(0,1)`.
    #[arg(long, default_value = "")]
    pub sub: String,
    /// Pairing modulus (defaults to the exponent of the group).
    #[arg(long)]
    pub k: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum AbelianCmd {
    /// Orthogonal complement of a subgroup.
    Perp(GroupSub),
    /// `ξ_ℓ = Σ_{h∈H} ε^{⟨h,ℓ⟩}`.
    Xi {
        #[command(flatten)]
        gs: GroupSub,
        #[arg(long)]
        ell: String,
    },
    /// Coset representatives of `G/H`.
    Quotient(GroupSub),
    /// Invariant factors of `H` and `G/H`.
    Factors(GroupSub),
}

#[derive(Args, Debug)]
pub struct SpecSource {
    /// Preset: `cp<k>`, `klein` or `z2z4`.
    #[arg(long)]
    pub preset: Option<String>,
    /// Normal-form JSON file, or `-` for stdin.
    #[arg(long)]
    pub input: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum GcircCmd {
    /// The circulant matrix for an ordering.
    Matrix {
        #[arg(long)]
        group: String,
        /// Ordering of the elements.
        #[arg(long)]
        ordering: Option<String>,
    },
    /// Generic determinant, or a normal form with `--cpk`, `--preset`, `--input`.
    Det {
        /// Group moduli, e.g. `Z2`, `4` or `2,4`.
        #[arg(long)]
        group: Option<String>,
        /// Ordering of the elements, e.g. `(0,0);(1,0);(0,1);(1,1)`.
        #[arg(long)]
        ordering: Option<String>,
        /// Standard `cp(|G|)` for a cyclic group.
        #[arg(long)]
        cpk: bool,
        #[command(flatten)]
        src: SpecSource,
    },
    /// Normal-form data and polynomial.
    NormalForm(SpecSource),
    /// Check the defining conditions of a normal form.
    Validate(SpecSource),
    /// Factor at a codimension-one stratum `T_i` (1-based).
    Codim1 {
        #[command(flatten)]
        src: SpecSource,
        #[arg(long)]
        index: usize,
    },
    /// Product-merge identity.
    Merge {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        r: u64,
    },
    /// Clean raw exponent rows, e.g. `--rows "1/2,0;0,3/4"`.
    Clean {
        #[arg(long)]
        rows: String,
        #[arg(long)]
        moduli: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum ResinvCmd {
    /// Closed-form invariant `inv`.
    Inv {
        #[arg(long)]
        parts: String,
    },
    /// `ATWinv` sequence.
    Atw {
        #[arg(long)]
        parts: String,
    },
    /// Blow-up weights.
    Weights {
        #[arg(long)]
        parts: String,
    },
    /// Coefficient-ideal recursion on the marked monomial ideal.
    Recursion {
        #[arg(long)]
        parts: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum BlowupCmd {
    /// Charts of a weighted blow-up (`--k` for cp(k), or explicit data).
    Charts {
        #[arg(long)]
        k: Option<u64>,
        /// Ambient variables.
        #[arg(long)]
        vars: Option<String>,
        /// Centre variables.
        #[arg(long)]
        centre: Option<String>,
        #[arg(long)]
        weights: Option<String>,
    },
    /// Transition between charts `i` and `j` (0-based).
    Transition {
        #[arg(long)]
        weights: String,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
    },
    /// Strict transform of cp(k) in a chart (0 is the `w`-chart).
    Pullback {
        #[arg(long)]
        k: u64,
        #[arg(long, default_value_t = 0)]
        chart: usize,
    },
    /// Hilbert basis of the `w`-chart invariants of cp(k).
    Hilbert {
        #[arg(long)]
        k: u64,
    },
    /// Relations among the Hilbert basis.
    Relations {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        degree: Option<u32>,
    },
    /// Quotient image of the cp(k) strict transform.
    Quotient {
        #[arg(long)]
        k: u64,
    },
    /// Blow-up sequence for a (product) normal form.
    Pipeline {
        #[command(flatten)]
        src: SpecSource,
        /// Parts of a product `cp(k_1) × ⋯`.
        #[arg(long)]
        parts: Option<String>,
    },
}

#[derive(Args, Debug)]
pub struct PolyArgs {
    /// Polynomial, monic in `--z`.
    #[arg(long)]
    pub poly: String,
    /// Divisorial variables.
    #[arg(long, default_value = "w")]
    pub div: String,
    /// Other variables.
    #[arg(long, default_value = "x,z")]
    pub vars: String,
    #[arg(long, default_value = "z")]
    pub z: String,
    /// Root orders `p_i`, one per divisorial variable.
    #[arg(long)]
    pub powers: String,
    /// Degree bound (defaults to CIRCFORGE_DEGREE_BOUND or 12).
    #[arg(long)]
    pub degree: Option<u32>,
}

#[derive(Subcommand, Debug)]
pub enum SplitCmd {
    /// Split by Newton–Puiseux root lifting.
    Newton(PolyArgs),
    /// Check given roots `b_i` (separated by `;`) of `∏(z + b_i)`.
    Verify {
        #[command(flatten)]
        p: PolyArgs,
        #[arg(long)]
        roots: String,
    },
    /// Replay the three origin blow-ups of `z² + (w³ + x)x²` and split.
    ExampleBasic {
        #[arg(long)]
        degree: Option<u32>,
    },
}

#[derive(Args, Debug)]
pub struct JsonInput {
    /// JSON file, or `-` for stdin.
    #[arg(long)]
    pub input: Option<String>,
    /// Inline JSON.
    #[arg(long)]
    pub json: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum NcquotCmd {
    /// `{"action": …, "gens": [..]}` → semi-invariant generators.
    Semiinv(JsonInput),
    /// `{"action": …, "divisors": [..], "s": [..]}` → adapted coordinates.
    Adapt(JsonInput),
    /// `{"action": …, "factors": [..]}` or `{"action": …, "generator": ".."}`.
    Normalize(JsonInput),
}

struct Out {
    json: Value,
    text: String,
}

fn out(json: Value, text: impl Into<String>) -> Out {
    Out { json, text: text.into() }
}

fn group_sub(gs: &GroupSub) -> Result<(AbelianGroup, Subgroup, PairingContext)> {
    let g = parse_group(&gs.group)?;
    let h = subgroup_from_generators(&g, &parse_elements(&g, &gs.sub)?)?;
    let ctx = match gs.k {
        Some(k) => PairingContext::new(&g, k)?,
        None => PairingContext::lcm(&g),
    };
    Ok((g, h, ctx))
}

fn elems_text(v: &[GroupElement]) -> String {
    v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n")
}

fn read_source(path: &str, stdin: &mut dyn Read) -> Result<String> {
    let mut s = String::new();
    if path == "-" {
        stdin.read_to_string(&mut s).map_err(|e| Error::Parse(e.to_string()))?;
    } else {
        s = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{path}: {e}")))?;
    }
    Ok(s)
}

fn json_input(j: &JsonInput, stdin: &mut dyn Read) -> Result<Value> {
    let text = match (&j.json, &j.input) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => read_source(p, stdin)?,
        (None, None) => read_source("-", stdin)?,
    };
    serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
}

fn preset(name: &str) -> Result<NormalFormSpec> {
    match name {
        "klein" => Ok(NormalFormSpec::klein()),
        "z2z4" => Ok(NormalFormSpec::z2z4()),
        s if s.starts_with("cp") => {
            let k: u64 = s[2..].parse().map_err(|_| Error::Parse(format!("bad preset `{s}`")))?;
            if k < 2 {
                return Err(Error::Domain("cp(k) needs k ≥ 2".into()));
            }
            Ok(NormalFormSpec::cpk_named(k))
        }
        s => Err(Error::Parse(format!("unknown preset `{s}`"))),
    }
}

fn spec_of(src: &SpecSource, stdin: &mut dyn Read) -> Result<NormalFormSpec> {
    match (&src.preset, &src.input) {
        (Some(p), None) => preset(p),
        (None, Some(path)) => {
            let s = read_source(path, stdin)?;
            serde_json::from_str(&s).map_err(|e| Error::Parse(e.to_string()))
        }
        _ => Err(Error::Parse("give exactly one of --preset or --input".into())),
    }
}

fn ordering_of(g: &AbelianGroup, ordering: &Option<String>) -> Result<Vec<GroupElement>> {
    match ordering {
        Some(s) => parse_elements(g, s),
        None => Ok(g.elements()),
    }
}

fn action_of(v: &Value) -> Result<DiagonalAction> {
    let a: DiagonalAction = serde_json::from_value(v.get("action").cloned().ok_or_else(|| Error::Parse("missing `action`".into()))?)
        .map_err(|e| Error::Parse(e.to_string()))?;
    DiagonalAction::new(a.group, a.vars, a.weights)
}

fn polys_of(v: &Value, key: &str, sp: &Arc<VarSpace>) -> Result<Vec<FracPoly>> {
    match v.get(key) {
        None => Ok(vec![]),
        Some(Value::Array(xs)) => xs
            .iter()
            .map(|x| {
                x.as_str()
                    .ok_or_else(|| Error::Parse(format!("`{key}` entries must be strings")))
                    .and_then(|s| FracPoly::parse(sp, s))
            })
            .collect(),
        Some(_) => Err(Error::Parse(format!("`{key}` must be an array"))),
    }
}

fn lines(v: &[FracPoly]) -> String {
    v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("\n")
}

fn strs(v: &[FracPoly]) -> Vec<String> {
    v.iter().map(|p| p.to_string()).collect()
}

fn split_space(p: &PolyArgs) -> Result<(Arc<VarSpace>, Vec<u64>, SplitOptions)> {
    let divs: Vec<&str> = p.div.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let frees: Vec<&str> = p.vars.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let sp = VarSpace::of(&divs.iter().map(|d| (*d, 1)).collect::<Vec<_>>(), &frees);
    let powers = parse_parts(&p.powers)?;
    let opts = p.degree.map(SplitOptions::with_degree).unwrap_or_default();
    Ok((sp, powers, opts))
}

fn abelian(cmd: &AbelianCmd) -> Result<Out> {
    match cmd {
        AbelianCmd::Perp(gs) => {
            let (g, h, ctx) = group_sub(gs)?;
            let p = perp(&ctx, &h);
            Ok(out(
                json!({"group": g.moduli(), "k": ctx.k(), "subgroup": h.elements(), "perp": p.elements()}),
                elems_text(&p.elements()),
            ))
        }
        AbelianCmd::Xi { gs, ell } => {
            let (g, h, ctx) = group_sub(gs)?;
            let l = parse_elements(&g, ell)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Parse("missing --ell".into()))?;
            let v = xi(&ctx, &h, &l)?;
            Ok(out(json!({"xi": v.to_text(), "value": v}), v.to_text()))
        }
        AbelianCmd::Quotient(gs) => {
            let (_, h, _) = group_sub(gs)?;
            let g = h.parent().clone();
            let cs = quotient(&g, &h)?;
            let f = quotient_invariant_factors(&h);
            Ok(out(
                json!({"representatives": cs.representatives, "invariant_factors": f}),
                format!("{}\ninvariant factors: {:?}", elems_text(&cs.representatives), f),
            ))
        }
        AbelianCmd::Factors(gs) => {
            let (_, h, _) = group_sub(gs)?;
            let (a, b) = (invariant_factors(&h), quotient_invariant_factors(&h));
            Ok(out(
                json!({"subgroup": a, "quotient": b}),
                format!("H: {a:?}\nG/H: {b:?}"),
            ))
        }
    }
}

fn gcirc(cmd: &GcircCmd, stdin: &mut dyn Read) -> Result<Out> {
    match cmd {
        GcircCmd::Matrix { group, ordering } => {
            let g = parse_group(group)?;
            let m = circulant_matrix(&g, &ordering_of(&g, ordering)?)?;
            Ok(out(serde_json::to_value(&m).unwrap(), m.to_text()))
        }
        GcircCmd::Det { group, ordering, cpk, src } => {
            if *cpk || src.preset.is_some() || src.input.is_some() {
                let spec = if *cpk {
                    let g = parse_group(group.as_deref().ok_or_else(|| Error::Parse("--cpk needs --group".into()))?)?;
                    if g.rank() != 1 {
                        return Err(Error::Domain("--cpk needs a cyclic group".into()));
                    }
                    preset(&format!("cp{}", g.order()))?
                } else {
                    spec_of(src, stdin)?
                };
                let f = normal_form_poly(&spec)?;
                return Ok(out(json!({"poly": f.to_string(), "structured": f.to_json()}), f.to_string()));
            }
            let g = parse_group(group.as_deref().ok_or_else(|| Error::Parse("missing --group".into()))?)?;
            let ord = ordering_of(&g, ordering)?;
            let names: Vec<String> = (0..ord.len()).map(|i| format!("X{i}")).collect();
            let sp = Arc::new(VarSpace::new(vec![], names.clone())?);
            let vals: Vec<FracPoly> = names.iter().map(|n| FracPoly::var(&sp, n)).collect::<Result<_>>()?;
            let d = gcirc_det(&g, &ord, &vals)?;
            Ok(out(json!({"poly": d.to_string(), "ordering": ord}), d.to_string()))
        }
        GcircCmd::NormalForm(src) => {
            let spec = spec_of(src, stdin)?;
            let f = normal_form_poly(&spec)?;
            Ok(out(json!({"spec": spec, "poly": f.to_string()}), f.to_string()))
        }
        GcircCmd::Validate(src) => {
            let spec = spec_of(src, stdin)?;
            let r = validate_normal_form(&spec);
            let text = format!(
                "valid: {}\nG/H invariant factors: {:?}\nΓ invariant factors: {:?}\n{}",
                r.valid,
                r.quotient_factors,
                r.gamma_factors,
                r.messages.join("\n")
            );
            Ok(out(serde_json::to_value(&r).unwrap(), text.trim_end().to_string()))
        }
        GcircCmd::Codim1 { src, index } => {
            let spec = spec_of(src, stdin)?;
            if *index == 0 {
                return Err(Error::Domain("strata are numbered from 1".into()));
            }
            let c = codim1_factor(&spec, index - 1)?;
            let j = json!({
                "index": index,
                "change": c.change.iter().map(|(n, p)| json!({"name": n, "value": p.to_string()})).collect::<Vec<_>>(),
                "det": c.det.to_text(),
                "factors": strs(&c.factors),
                "specialized": c.specialized.to_string(),
            });
            let mut t = String::new();
            for (n, p) in &c.change {
                t += &format!("{n} = {p}\n");
            }
            t += &format!("det = {}\n", c.det.to_text());
            t += &lines(&c.factors);
            Ok(out(j, t))
        }
        GcircCmd::Merge { k, r } => {
            let m = product_merge(*k, *r)?;
            let j = json!({
                "k": k, "r": r,
                "substitution": m.substitution.iter().map(|((i, jj), p)| json!({"i": i, "j": jj, "value": p.to_string()})).collect::<Vec<_>>(),
                "lhs": m.lhs.to_string(),
                "rhs": m.rhs.to_string(),
                "holds": m.lhs == m.rhs,
            });
            Ok(out(j, format!("{}\nidentity holds: {}", m.rhs, m.lhs == m.rhs)))
        }
        GcircCmd::Clean { rows, moduli } => {
            let raw = rows
                .split(';')
                .map(|r| r.split(',').map(|x| parse_q(x.trim())).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            let c = clean_exponents(&raw, &parse_parts(moduli)?)?;
            let text = format!(
                "order: {:?}\ndelta: {}\nbeta: {:?}",
                c.order,
                c.delta.iter().map(|r| fmt_seq(r)).collect::<Vec<_>>().join("; "),
                c.beta
            );
            Ok(out(serde_json::to_value(&c).unwrap(), text))
        }
    }
}

fn resinv(cmd: &ResinvCmd) -> Result<Out> {
    let seq_text = |e: &[crate::cyclotomic::Q]| e.iter().map(fmt_q).collect::<Vec<_>>().join(",");
    let seq_json = |e: &[crate::cyclotomic::Q], c: &[String]| json!({"entries": e.iter().map(fmt_q).collect::<Vec<_>>(), "contacts": c});
    match cmd {
        ResinvCmd::Inv { parts } => {
            let ks = parse_parts(parts)?;
            let inv = inv_recursion(&MonomialMarkedIdeal::product(&ks))?;
            Ok(out(seq_json(&inv.entries, &inv.contacts), seq_text(&inv.entries)))
        }
        ResinvCmd::Atw { parts } => {
            let a = atwinv_product(&parse_parts(parts)?)?;
            Ok(out(seq_json(&a.entries, &a.contacts), seq_text(&a.entries)))
        }
        ResinvCmd::Weights { parts } => {
            let w = weights(&parse_parts(parts)?)?;
            let text = w
                .params
                .iter()
                .zip(&w.integer)
                .map(|(p, i)| format!("{p}: {i}"))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(out(serde_json::to_value(&w).unwrap(), text))
        }
        ResinvCmd::Recursion { parts } => {
            let ks = parse_parts(parts)?;
            let inv = inv_recursion(&MonomialMarkedIdeal::product(&ks))?;
            let atw = inv_to_atw(&inv)?;
            let closed = atwinv_product(&ks)?;
            let agrees = atw.entries == closed.entries;
            Ok(out(
                json!({"inv": seq_json(&inv.entries, &inv.contacts), "atw": seq_json(&atw.entries, &atw.contacts), "closed_form_agrees": agrees}),
                format!("inv: {}\natw: {}\nclosed form agrees: {agrees}", seq_text(&inv.entries), seq_text(&atw.entries)),
            ))
        }
    }
}

fn blowup(cmd: &BlowupCmd, stdin: &mut dyn Read) -> Result<Out> {
    match cmd {
        BlowupCmd::Charts { k, vars, centre, weights } => {
            let atlas = match (k, vars, centre, weights) {
                (Some(k), None, None, None) => cpk_atlas(*k)?,
                (None, Some(v), Some(c), Some(w)) => {
                    let vs: Vec<&str> = v.split(',').map(str::trim).collect();
                    let cs: Vec<&str> = c.split(',').map(str::trim).collect();
                    let sp = VarSpace::of(&[], &vs);
                    charts(&sp, &cs, &parse_parts(w)?)?
                }
                _ => return Err(Error::Parse("give --k, or --vars, --centre and --weights".into())),
            };
            let j = atlas.to_json();
            let text = atlas
                .charts
                .iter()
                .map(|c| {
                    let imgs: Vec<String> = c
                        .map
                        .source
                        .names()
                        .iter()
                        .zip(&c.map.images)
                        .map(|(n, p)| format!("{n} = {p}"))
                        .collect();
                    format!("{}-chart: {}; μ_{}", c.chart_var, imgs.join(", "), c.action.group.order())
                })
                .collect::<Vec<_>>()
                .join("\n");
            Ok(out(j, text))
        }
        BlowupCmd::Transition { weights, i, j } => {
            let t = transition(&parse_parts(weights)?, *i, *j)?;
            let ok = t.isomorphism_ok && t.equivariant && t.etale_equivariant && t.projections_commute;
            Ok(out(serde_json::to_value(&t).unwrap(), format!("verified: {ok}")))
        }
        BlowupCmd::Pullback { k, chart } => {
            let atlas = cpk_atlas(*k)?;
            if *chart >= atlas.charts.len() {
                return Err(Error::Domain(format!("chart index out of range (0..{})", atlas.charts.len())));
            }
            let f = normal_form_poly(&NormalFormSpec::cpk(*k))?;
            let (st, m) = pullback_strict(&f, &atlas, *chart)?;
            Ok(out(
                json!({"chart": atlas.charts[*chart].chart_var, "multiplicity": fmt_q(&m), "strict_transform": st.to_string()}),
                format!("exceptional multiplicity: {}\n{}", fmt_q(&m), st),
            ))
        }
        BlowupCmd::Hilbert { k } => {
            let atlas = cpk_atlas(*k)?;
            let mut hb = hilbert_basis(&atlas.charts[0].action);
            hb.name_chart();
            let text = (0..hb.generators.len())
                .map(|i| format!("{} = {}", hb.names[i], hb.generator_text(i)))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(out(hb.to_json(), text))
        }
        BlowupCmd::Relations { k, degree } => {
            let atlas = cpk_atlas(*k)?;
            let mut hb = hilbert_basis(&atlas.charts[0].action);
            hb.name_chart();
            let rs = relations(&hb, degree.unwrap_or(2 * hb.degree_bound))?;
            let mut t: Vec<String> = rs.lattice.iter().map(|r| r.to_text(&hb)).collect();
            let mut fam = Vec::new();
            for f in &rs.family {
                let tr = toric_relation_transform(f)?;
                t.push(format!("{}  ->  {} = 0", f.relation.to_text(&hb), tr.polynomial));
                fam.push(json!({"relation": f.relation.to_text(&hb), "data": f, "transform": tr}));
            }
            Ok(out(
                json!({
                    "kernel_rank": rs.kernel_rank,
                    "exponent_rank": rs.exponent_rank,
                    "lattice": rs.lattice.iter().map(|r| r.to_text(&hb)).collect::<Vec<_>>(),
                    "family": fam,
                }),
                t.join("\n"),
            ))
        }
        BlowupCmd::Quotient { k } => {
            let atlas = cpk_atlas(*k)?;
            let mut hb = hilbert_basis(&atlas.charts[0].action);
            hb.name_chart();
            let f = normal_form_poly(&NormalFormSpec::cpk(*k))?;
            let (st, _) = pullback_strict(&f, &atlas, 0)?;
            let qi = quotient_image(&st, &hb)?;
            Ok(out(json!({"strict_transform": st.to_string(), "quotient_image": qi.to_string()}), qi.to_string()))
        }
        BlowupCmd::Pipeline { src, parts } => {
            let spec = match parts {
                Some(p) => ProductNormalFormSpec::cp_product(&parse_parts(p)?),
                None => ProductNormalFormSpec {
                    factors: vec![spec_of(src, stdin)?],
                },
            };
            let f = product_normal_form_poly(&spec)?;
            let r = gcirc_blowup_sequence(&spec)?;
            let mut t = vec![format!("input: {f}")];
            for s in &r.steps {
                t.push(format!(
                    "blow-up along {} (weights {:?}): multiplicity {} (expected {})",
                    s.exceptional, s.weights, s.multiplicity, s.expected_multiplicity
                ));
            }
            t.push(format!("strict transform: {}", r.strict_transform));
            t.push(format!(
                "normal crossings: {}; group order {} (bound {}): {}",
                r.normal_crossings, r.group_order, r.order_bound, r.bound_ok
            ));
            Ok(out(serde_json::to_value(&r).unwrap(), t.join("\n")))
        }
    }
}

fn split(cmd: &SplitCmd) -> Result<Out> {
    match cmd {
        SplitCmd::Newton(p) => {
            let (sp, powers, opts) = split_space(p)?;
            let f = FracPoly::parse(&sp, &p.poly)?;
            let s = split_newton(&f, &p.z, &powers, &opts)?;
            Ok(out(
                json!({"substituted": s.substituted.to_string(), "roots": strs(&s.b), "degree_bound": s.degree_bound}),
                lines(&s.b),
            ))
        }
        SplitCmd::Verify { p, roots } => {
            let (sp, powers, opts) = split_space(p)?;
            let f = FracPoly::parse(&sp, &p.poly)?;
            let sub = crate::split::substitute_all(&f, &powers)?;
            let b = roots
                .split(';')
                .map(|r| FracPoly::parse(sub.space(), r.trim()))
                .collect::<Result<Vec<_>>>()?;
            let ok = verify_split(&f, &p.z, &powers, &b, opts.degree_bound)?;
            Ok(out(json!({"verified": ok, "degree_bound": opts.degree_bound}), format!("verified: {ok}")))
        }
        SplitCmd::ExampleBasic { degree } => {
            let opts = degree.map(SplitOptions::with_degree).unwrap_or_default();
            let r = example_basic(3, &opts)?;
            let mut t = vec![format!("f = {}", r.polys[0])];
            for (i, (p, m)) in r.polys[1..].iter().zip(&r.multiplicities).enumerate() {
                t.push(format!("blow-up {} (w-chart, multiplicity {}): {}", i + 1, fmt_q(m), p));
            }
            t.push(format!("w = v^2: {}", r.split.substituted));
            for b in &r.split.b {
                t.push(format!("root: z = -({b})"));
            }
            t.push(format!("split verified to degree {}: {}", opts.degree_bound, r.verified));
            Ok(out(
                json!({
                    "polys": strs(&r.polys),
                    "multiplicities": r.multiplicities.iter().map(fmt_q).collect::<Vec<_>>(),
                    "substituted": r.split.substituted.to_string(),
                    "roots": strs(&r.split.b),
                    "degree_bound": opts.degree_bound,
                    "verified": r.verified,
                }),
                t.join("\n"),
            ))
        }
    }
}

fn ncquot(cmd: &NcquotCmd, stdin: &mut dyn Read) -> Result<Out> {
    match cmd {
        NcquotCmd::Semiinv(j) => {
            let v = json_input(j, stdin)?;
            let action = action_of(&v)?;
            let sp = crate::quotient_nc::action_space(&action)?;
            let r = semi_invariant_generators(&polys_of(&v, "gens", &sp)?, &action)?;
            Ok(out(r.to_json(), lines(&r.generators)))
        }
        NcquotCmd::Adapt(j) => {
            let v = json_input(j, stdin)?;
            let action = action_of(&v)?;
            let sp = crate::quotient_nc::action_space(&action)?;
            let a = adapted_coordinates(&action, &polys_of(&v, "divisors", &sp)?, &polys_of(&v, "s", &sp)?)?;
            let t = a.coords.iter().map(|(n, p)| format!("{n} = {p}")).collect::<Vec<_>>().join("\n");
            Ok(out(a.to_json(), t))
        }
        NcquotCmd::Normalize(j) => {
            let v = json_input(j, stdin)?;
            let inp = InvariantNCInput::from_json(&v)?;
            let nf = invariant_nc_normal_form(&inp)?;
            let mut js = nf.to_json();
            js["input"] = inp.to_json();
            js["verification"] = json!({
                "product_matches_up_to_unit": true,
                "unit": nf.unit.to_string(),
                "det_nonzero": !nf.det.is_zero(),
                "chain_product_is_k": nf.chain().iter().product::<u64>() as usize == nf.k,
            });
            let mut t = vec![format!("chain q = {:?}", nf.chain())];
            for (l, h) in &nf.coords {
                t.push(format!("h{:?} = {}", l, h));
            }
            for row in nf.normalized_matrix() {
                t.push(format!("[{}]", row.iter().map(|c| c.to_text()).collect::<Vec<_>>().join(", ")));
            }
            t.push(format!("det = {}", nf.det.to_text()));
            let fs: Vec<String> = nf.factors.iter().map(|f| format!("({f})")).collect();
            t.push(format!("product = ({}) * {}", nf.unit, fs.join(" * ")));
            if let Some(a) = nf.divisor_adapted {
                t.push(format!("divisor adapted: {a}"));
            }
            Ok(out(js, t.join("\n")))
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Parse(_) => "parse",
        Error::DivisionByZero => "division_by_zero",
        Error::IncompatibleSpaces(_) => "incompatible_spaces",
        Error::NonPolynomial(_) => "non_polynomial",
        Error::NoSplit { .. } => "no_split",
        Error::Ambiguous { .. } => "ambiguous",
        Error::NotExpressible(_) => "not_expressible",
        Error::SplitsInvariantly { .. } => "splits_invariantly",
        Error::DegenerateInput(_) => "degenerate_input",
        Error::InvalidSpec(_) => "invalid_spec",
    }
}

fn dispatch(cli: &Cli, stdin: &mut dyn Read) -> Result<Out> {
    match &cli.command {
        Command::Abelian(c) => abelian(c),
        Command::Gcirc(c) => gcirc(c, stdin),
        Command::Resinv(c) => resinv(c),
        Command::Blowup(c) => blowup(c, stdin),
        Command::Split(c) => split(c),
        Command::Ncquot(c) => ncquot(c, stdin),
    }
}

/// Parse `args` (including the program name) and execute.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    match dispatch(&cli, stdin) {
        Ok(o) => {
            let s = match cli.format {
                Format::Json => serde_json::to_string_pretty(&o.json).unwrap(),
                Format::Text => o.text,
            };
            let _ = writeln!(stdout, "{s}");
            0
        }
        Err(e) => {
            if cli.error_json {
                let v = json!({"error": error_kind(&e), "message": e.to_string()});
                let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&v).unwrap());
            }
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}
