//! Plain-text disclosure sheet.

use cbv_core::fisher::FisherIndices;
use cbv_core::ValuationResult;

use crate::csvio::{render_number, LabeledMatrix, LabeledVector, NodeRecord};
use crate::hash;
use crate::manifest::MANIFEST_VERSION;
use crate::package::Package;

pub const CLEARING_NOT_APPLIED: &str = "Not applied (pre-clearing flows)";
const LABEL_WIDTH: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct DisclosureInputs {
    pub valuation: ValuationResult,
    /// Period label such as `2025-07 -> 2025-08`.
    pub period: Option<String>,
    pub fisher: Option<FisherIndices>,
}

/// Digits grouped by thousands with `,`.
pub fn group_thousands(digits: &str) -> String {
    let (sign, digits) = match digits.strip_prefix('-') {
        Some(d) => ("-", d),
        None => ("", digits),
    };
    let mut out = String::new();
    for (k, ch) in digits.chars().enumerate() {
        if k > 0 && (digits.len() - k) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    format!("{sign}{out}")
}

/// Amounts of a million or more are rounded to units; smaller ones keep up to two decimals.
pub fn format_amount(x: f64) -> String {
    if x.abs() >= 1e6 {
        return group_thousands(&format!("{:.0}", x.round()));
    }
    let s = format!("{x:.2}");
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let frac = frac.trim_end_matches('0');
    let int = if int == "-0" && frac.is_empty() { "0" } else { int };
    if frac.is_empty() {
        group_thousands(int)
    } else {
        format!("{}.{frac}", group_thousands(int))
    }
}

fn names(nodes: &[NodeRecord]) -> String {
    nodes
        .iter()
        .map(|n| if n.label.is_empty() { n.id.clone() } else { n.label.clone() })
        .collect::<Vec<_>>()
        .join("; ")
}

fn amounts(v: &LabeledVector) -> String {
    format!("{{{}}}", v.values.iter().map(|x| format_amount(*x)).collect::<Vec<_>>().join("; "))
}

fn shares(m: &LabeledMatrix) -> String {
    let rows: Vec<String> = m
        .values
        .iter()
        .map(|r| r.iter().map(|x| render_number(*x)).collect::<Vec<_>>().join(", "))
        .collect();
    format!("{{{}}}", rows.join("; "))
}

fn or_na(x: Option<String>) -> String {
    x.filter(|s| !s.is_empty()).unwrap_or_else(|| "n/a".to_string())
}

/// Digest over the sorted `key=hash` lines of the manifest.
pub fn package_digest(pkg: &Package) -> String {
    let lines: String = pkg.manifest.hashes.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    hash::sha256_tag(lines.as_bytes())
}

pub fn render_disclosure_sheet(pkg: &Package, inputs: &DisclosureInputs) -> String {
    let m = &pkg.manifest;
    let mut rows: Vec<(&str, Vec<String>)> = Vec::new();

    rows.push(("Perimeter P", vec![names(&pkg.nodes_p)]));
    rows.push(("Complement O", vec![names(&pkg.nodes_o)]));
    rows.push((
        "Control rule",
        vec![format!("{} + look-through: {}", m.perimeter.control_rule, m.perimeter.lookthrough)],
    ));

    let regime = match (m.regime.as_str(), &pkg.o_pp, pkg.nodes_p.len()) {
        (r, None, 1) => format!("{r} (single-node perimeter; O_PP not required)"),
        (r, Some(_), _) => match m.stability.as_ref().and_then(|s| s.inverse_norm_inf) {
            Some(n) => format!("{r} (||(I - O_PP)^-1||_inf = {})", render_number(n)),
            None => r.to_string(),
        },
        (r, None, _) => r.to_string(),
    };
    rows.push(("Regime", vec![regime]));

    let o = &m.observer;
    let fx = o.fx.as_ref().map(|f| {
        [f.provider.clone(), (!f.pairs.is_empty()).then(|| f.pairs.join(",")), f.date.clone()]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join(" ")
    });
    let ppp = o.ppp.as_ref().filter(|p| p.used).map(|p| {
        let mut s = p.source.clone().unwrap_or_else(|| "used".to_string());
        if let Some(y) = p.base_year {
            s.push_str(&format!(" (base {y})"));
        }
        s
    });
    let sdf = o.sdf.as_ref().filter(|s| s.used).map(|s| {
        [s.measure.clone(), s.spec.clone()].into_iter().flatten().collect::<Vec<_>>().join(", ")
    });
    let prices = o.prices.clone().or_else(|| o.fx.as_ref().and_then(|f| f.method.clone()));
    rows.push((
        "Observer",
        vec![format!(
            "Currency: {}; FX: {}; PPP: {}; SDF: {}; prices: {}",
            o.currency,
            or_na(fx),
            or_na(ppp),
            or_na(sdf),
            or_na(prices)
        )],
    ));

    let mut border = vec![
        format!("b_P = {};", amounts(&pkg.b_p)),
        format!("v_O = {};", amounts(&pkg.v_o)),
        format!("O_PO = {};", shares(&pkg.o_po)),
        format!("O_OP = {}", shares(&pkg.o_op)),
    ];
    if let Some(pp) = &pkg.o_pp {
        border.last_mut().unwrap().push(';');
        border.push(format!("O_PP = {}", shares(pp)));
    }
    rows.push(("Border statistics", border));

    let clearing = if m.clearing.used {
        let selection = pkg.clearing.as_ref().map(|c| c.selection.clone());
        format!(
            "Applied: {} ({} fixed point; post-clearing flows)",
            or_na(m.clearing.engine.clone()),
            or_na(selection)
        )
    } else {
        CLEARING_NOT_APPLIED.to_string()
    };
    rows.push(("Clearing", vec![clearing]));

    let fisher = match &inputs.fisher {
        Some(f) => format!(
            "IV_F = {}, IP_F = {}, G_F = {}",
            render_number(f.iv_f),
            render_number(f.ip_f),
            render_number(f.g_f)
        ),
        None => "n/a".to_string(),
    };
    let fisher_line = match &inputs.period {
        Some(p) => format!("CBV-Fisher indices on {p}: {fisher}"),
        None => format!("CBV-Fisher indices: {fisher}"),
    };
    rows.push((
        "Output",
        vec![
            format!("W(P) = {} {};", format_amount(inputs.valuation.w), o.currency),
            fisher_line,
        ],
    ));

    let mut sources: Vec<String> = m.notes.clone();
    sources.push(format!("manifest {MANIFEST_VERSION}; package hash: {}", package_digest(pkg)));
    rows.push(("Sources & versions", sources));

    let width = rows
        .iter()
        .flat_map(|(_, v)| v.iter().map(|s| s.chars().count()))
        .max()
        .unwrap_or(0)
        + LABEL_WIDTH
        + 3;
    let rule = "-".repeat(width);
    let date = o.date.clone().or_else(|| o.fx.as_ref().and_then(|f| f.date.clone()));
    let mut out = format!("Cut-Report (v1.0) - Disclosure sheet ({}, {})\n", m.perimeter.p_ref, or_na(date));
    out.push_str(&rule);
    out.push('\n');
    for (label, lines) in &rows {
        for (k, line) in lines.iter().enumerate() {
            let l = if k == 0 { *label } else { "" };
            out.push_str(&format!("{l:<LABEL_WIDTH$} | {line}\n"));
        }
    }
    out.push_str(&rule);
    out.push('\n');
    out
}
