#![allow(dead_code)]

use std::path::PathBuf;

use cbv_core::control::{ControlOption, ControlRuleSpec};
use cbv_core::network::ids;
use cbv_core::{CutStatistics, Observer, Regime, SparseMatrix};
use cbv_report::manifest::ManifestPerimeter;
use cbv_report::Package;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Three internal and two outside nodes; W = 84.56 in regime A.
pub fn worked_example() -> CutStatistics {
    let po = SparseMatrix::from_triplets(3, 2, vec![(0, 0, 0.05), (0, 1, 0.02), (1, 0, 0.03), (2, 1, 0.04)]).unwrap();
    let op = SparseMatrix::from_triplets(2, 3, vec![(0, 0, 0.10), (0, 1, 0.05), (1, 1, 0.08), (1, 2, 0.12)]).unwrap();
    let pp = SparseMatrix::from_triplets(3, 3, vec![(0, 1, 0.10), (1, 0, 0.05), (1, 2, 0.10), (2, 1, 0.05)]).unwrap();
    CutStatistics::new(ids(["A", "B", "C"]), ids(["X", "Y"]), vec![25.0, 35.0, 30.0], vec![60.0, 80.0], po, op)
        .unwrap()
        .with_v_p(vec![52.0, 48.0, 30.0])
        .unwrap()
        .with_o_pp(pp)
        .unwrap()
}

pub fn observer(regime: Regime) -> Observer {
    let rule = ControlRuleSpec {
        option: ControlOption::CAttenuated,
        alpha: 0.6,
        ..ControlRuleSpec::default()
    };
    Observer::new("P-WORKED", "EUR", "2025-06-30", regime, rule).unwrap()
}

pub fn perimeter() -> ManifestPerimeter {
    ManifestPerimeter {
        p_ref: "P-WORKED".into(),
        o_ref: Some("O-WORKED".into()),
        control_rule: "IFRS10-control@50".into(),
        lookthrough: false,
        extra: Default::default(),
    }
}

pub fn worked_package(regime: Regime) -> Package {
    Package::from_statistics(&worked_example(), &observer(regime), perimeter()).unwrap()
}

pub fn strip_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}
