mod common;

use std::fs;

use cbv_core::cut::evaluate_regime_a;
use cbv_core::fisher::{elementary_indices, fisher_combine, FisherQuad};
use cbv_core::{Regime, RuleId, Severity, SolverConfig};
use cbv_report::clearing_spec::ClearingSpec;
use cbv_report::disclosure::{render_disclosure_sheet, DisclosureInputs};
use cbv_report::package::{emit_package, load_package, validate_directory, validate_package, Package};
use cbv_report::ReportError;
use common::*;
use proptest::prelude::*;

fn copy_dir(from: &std::path::Path, to: &std::path::Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

#[test]
fn renault_nissan_loads_without_internal_block() {
    let pkg = load_package(&fixture("renault_nissan")).unwrap();
    assert!(pkg.o_pp.is_none());
    assert_eq!(pkg.regime().unwrap(), Regime::A);
    let report = validate_package(&pkg);
    assert!(report.is_empty(), "{:?}", report.findings);

    let stats = pkg.cut_statistics().unwrap();
    let observer = pkg.observer().unwrap();
    assert_eq!(observer.units, "EUR");
    assert_eq!(observer.date.to_string(), "2025-08-20");
    let r = evaluate_regime_a(&stats, observer.tolerances.rounding_threshold).unwrap();
    assert_eq!(r.w, 7_701_000_000.0);
}

#[test]
fn renault_nissan_disclosure_sheet() {
    let pkg = load_package(&fixture("renault_nissan")).unwrap();
    let stats = pkg.cut_statistics().unwrap();
    let valuation = evaluate_regime_a(&stats, 1e-8).unwrap();
    let sheet = render_disclosure_sheet(
        &pkg,
        &DisclosureInputs {
            valuation: valuation.clone(),
            period: Some("2025-07 -> 2025-08".into()),
            fisher: None,
        },
    );
    for needle in [
        "Renault SA (LEI: 969500UP76J7PPY6KX27)",
        "Nissan Motor Co., Ltd. (TSE: 7201)",
        "IFRS10-control@50 + look-through: true",
        "A (single-node perimeter; O_PP not required)",
        "Currency: EUR; FX: ECB EUR/JPY 2025-08-20; PPP: n/a; SDF: n/a; prices: close",
        "b_P = {6,545,183,676};",
        "v_O = {7,044,303,429};",
        "O_PO = {0.357};",
        "O_OP = {0.15}",
        "Not applied (pre-clearing flows)",
        "W(P) = 7,701,000,000 EUR",
        "CBV-Fisher indices on 2025-07 -> 2025-08: n/a",
        "manifest cbv-cut-report@1.0; package hash: sha256:",
    ] {
        assert!(sheet.contains(needle), "missing {needle:?} in\n{sheet}");
    }
    let order = [
        "Perimeter P",
        "Complement O",
        "Control rule",
        "Regime",
        "Observer",
        "Border statistics",
        "Clearing",
        "Output",
        "Sources & versions",
    ];
    let positions: Vec<usize> = order.iter().map(|l| sheet.find(&format!("\n{l}")).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));

    let q = FisherQuad::new(100.0, 110.0, 105.0, 121.0).unwrap();
    let f = fisher_combine(&elementary_indices(&q).unwrap()).unwrap();
    let with_fisher = render_disclosure_sheet(
        &pkg,
        &DisclosureInputs {
            valuation,
            period: Some("2025-07 -> 2025-08".into()),
            fisher: Some(f),
        },
    );
    assert!(with_fisher.contains(&format!("IV_F = {}", f.iv_f)));
    assert!(with_fisher.contains("IP_F = "));
    assert!(!with_fisher.contains(": n/a\n"));
}

#[test]
fn worked_example_round_trip_and_clean_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut pkg = worked_package(Regime::B);
    emit_package(&mut pkg, dir.path()).unwrap();
    let loaded = load_package(dir.path()).unwrap();
    assert_eq!(loaded, pkg);
    assert_eq!(loaded.cut_statistics().unwrap(), worked_example());
    assert_eq!(loaded.observer().unwrap(), observer(Regime::B));
    let report = validate_package(&loaded);
    assert!(report.is_empty(), "{:?}", report.findings);
    assert!(validate_directory(dir.path()).is_empty());
}

#[test]
fn emission_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_package(&mut worked_package(Regime::B), a.path()).unwrap();
    emit_package(&mut worked_package(Regime::B), b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 10);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn flipped_byte_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture("renault_nissan"), dir.path());
    let path = dir.path().join("O_PO.csv");
    let mut bytes = fs::read(&path).unwrap();
    let k = bytes.len() - 2;
    bytes[k] ^= 0x01;
    fs::write(&path, bytes).unwrap();
    match load_package(dir.path()) {
        Err(ReportError::Integrity { file, .. }) => assert_eq!(file, "O_PO.csv"),
        other => panic!("expected integrity error, got {other:?}"),
    }
    let report = validate_directory(dir.path());
    assert!(report.has_rule(RuleId::Hash) && !report.passes());
}

#[test]
fn regime_b_without_internal_block_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut pkg = worked_package(Regime::B);
    pkg.o_pp = None;
    emit_package(&mut pkg, dir.path()).unwrap();
    match load_package(dir.path()) {
        Err(ReportError::Package(msg)) => assert!(msg.contains("O_PP"), "{msg}"),
        other => panic!("expected package error, got {other:?}"),
    }
}

#[test]
fn negative_outside_share_is_a_d2_finding() {
    let mut pkg = worked_package(Regime::A);
    pkg.o_op.values[1][2] = -0.12;
    let report = validate_package(&pkg);
    let f = report.findings.iter().find(|f| f.rule == RuleId::D2).unwrap();
    assert_eq!(f.severity, Severity::Error);
    assert_eq!(f.location, "O_OP.csv[Y,C]");
}

#[test]
fn negative_base_needs_a_note() {
    let mut pkg = worked_package(Regime::A);
    pkg.b_p.values[0] = -5.0;
    let report = validate_package(&pkg);
    assert!(report.has_rule(RuleId::D2) && !report.passes());
    pkg.manifest.notes.push("Negative base of A reflects accumulated losses".into());
    let report = validate_package(&pkg);
    assert!(report.passes());
    assert_eq!(report.findings[0].severity, Severity::Note);
}

#[test]
fn missing_stability_evidence_is_a_d4_finding() {
    let mut pkg = worked_package(Regime::B);
    pkg.manifest.stability = None;
    let report = validate_package(&pkg);
    assert_eq!(report.count(RuleId::D4), 1);
    assert!(!report.passes());
    pkg.other_files
        .insert("proof_stability".into(), ("proof_stability.txt".into(), b"row sums <= 0.15\n".to_vec()));
    pkg.manifest.data_files.insert("proof_stability".into(), "proof_stability.txt".into());
    pkg.manifest.hashes.insert("proof_stability".into(), cbv_report::hash::sha256_tag(b"row sums <= 0.15\n"));
    assert!(!validate_package(&pkg).has_rule(RuleId::D4));
}

#[test]
fn observer_mismatch_is_a_d3_finding() {
    let mut pkg = worked_package(Regime::A);
    pkg.manifest.observer.currency = "USD".into();
    let report = validate_package(&pkg);
    assert!(report.has_rule(RuleId::D3));
    let mut pkg = worked_package(Regime::A);
    pkg.manifest.regime = "B".into();
    assert!(validate_package(&pkg).has_rule(RuleId::D3));
}

#[test]
fn clearing_consistency_is_a_d5_finding() {
    let mut pkg = worked_package(Regime::A);
    pkg.manifest.clearing.used = true;
    pkg.manifest.clearing.engine = Some("Rogers-Veraart".into());
    let report = validate_package(&pkg);
    assert!(report.has_rule(RuleId::D5) && !report.passes());

    pkg.clearing = Some(ClearingSpec::parse(br#"{"engine": "Eisenberg-Noe"}"#).unwrap());
    assert!(validate_package(&pkg).has_rule(RuleId::D5));
    pkg.clearing.as_mut().unwrap().engine = "Rogers-Veraart".into();
    assert!(validate_package(&pkg).is_empty());
    assert_eq!(
        pkg.cut_statistics().unwrap().clearing,
        cbv_core::cut::ClearingState::PostClearing {
            engine: "Rogers-Veraart".into()
        }
    );
}

#[test]
fn unknown_fields_are_kept_and_noted() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture("renault_nissan"), dir.path());
    let path = dir.path().join("manifest.yaml");
    let text = fs::read_to_string(&path).unwrap().replace("regime: A", "reviewer: audit-team\nregime: A");
    fs::write(&path, text).unwrap();
    let mut pkg = load_package(dir.path()).unwrap();
    let report = validate_package(&pkg);
    assert_eq!(report.findings.len(), 1);
    assert_eq!(report.findings[0].severity, Severity::Note);
    assert!(report.passes());

    let out = tempfile::tempdir().unwrap();
    emit_package(&mut pkg, out.path()).unwrap();
    let again = load_package(out.path()).unwrap();
    assert!(again.manifest.extra.contains_key("reviewer"));
    assert_eq!(again, pkg);
}

#[test]
fn flows_outside_the_boundary_are_d1_findings() {
    let mut pkg = worked_package(Regime::A);
    pkg.flows.push(cbv_report::csvio::FlowRecord {
        from: "A".into(),
        to: "B".into(),
        kind: "debt".into(),
        amount: 1.0,
    });
    assert!(validate_package(&pkg).has_rule(RuleId::D1));
    assert!(pkg.cut_statistics().is_err());
}

#[test]
fn regime_b_valuation_from_loaded_package() {
    let dir = tempfile::tempdir().unwrap();
    let mut pkg = worked_package(Regime::B);
    pkg.v_p = None;
    emit_package(&mut pkg, dir.path()).unwrap();
    let loaded = load_package(dir.path()).unwrap();
    let r = cbv_core::cut::evaluate_regime_b(&loaded.cut_statistics().unwrap(), &SolverConfig::default(), 1e-8).unwrap();
    assert!((r.w - 86.5211).abs() < 1e-4);
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e12..1e12f64,
        0.0..1.0f64,
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn emit_then_load_is_identity(
        b in prop::collection::vec(finite(), 3),
        v in prop::collection::vec(finite(), 2),
        shares in prop::collection::vec(0.0..0.3f64, 6),
        flow in 0.0..1e9f64,
    ) {
        let mut pkg: Package = worked_package(Regime::B);
        pkg.b_p.values = b;
        pkg.v_o.values = v;
        for (k, s) in shares.iter().enumerate() {
            pkg.o_po.values[k / 2][k % 2] = *s;
        }
        pkg.flows.push(cbv_report::csvio::FlowRecord { from: "X".into(), to: "A".into(), kind: "cashflow".into(), amount: flow });
        let dir = tempfile::tempdir().unwrap();
        emit_package(&mut pkg, dir.path()).unwrap();
        let loaded = load_package(dir.path()).unwrap();
        prop_assert_eq!(&loaded, &pkg);
        let again = tempfile::tempdir().unwrap();
        let mut copy = loaded.clone();
        emit_package(&mut copy, again.path()).unwrap();
        prop_assert_eq!(copy.manifest.hashes, pkg.manifest.hashes);
    }
}
