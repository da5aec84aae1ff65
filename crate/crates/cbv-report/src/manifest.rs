//! `manifest.yaml`: observer, perimeter, regime, clearing, data files and hashes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use crate::error::{ReportError, Result};

pub const MANIFEST_VERSION: &str = "cbv-cut-report@1.0";
pub const MANIFEST_FILE: &str = "manifest.yaml";

pub type Extra = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub observer: ManifestObserver,
    pub perimeter: ManifestPerimeter,
    pub regime: String,
    #[serde(default)]
    pub clearing: ClearingBlock,
    pub data_files: BTreeMap<String, String>,
    #[serde(default)]
    pub hashes: BTreeMap<String, String>,
    /// Reported bound on the internal block, used as stability evidence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityBlock>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestObserver {
    pub currency: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx: Option<FxBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppp: Option<PppBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdf: Option<SdfBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FxBlock {
    pub provider: Option<String>,
    pub date: Option<String>,
    #[serde(default)]
    pub pairs: Vec<String>,
    pub method: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PppBlock {
    pub used: bool,
    pub source: Option<String>,
    pub base_year: Option<i32>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdfBlock {
    pub used: bool,
    pub measure: Option<String>,
    pub spec: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPerimeter {
    #[serde(rename = "P_ref")]
    pub p_ref: String,
    #[serde(rename = "O_ref", default)]
    pub o_ref: Option<String>,
    pub control_rule: String,
    #[serde(default)]
    pub lookthrough: bool,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClearingBlock {
    pub used: bool,
    #[serde(default)]
    pub engine: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(flatten)]
    pub extra: Extra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityBlock {
    /// Upper bound on ρ(O_PP).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_bound: Option<f64>,
    /// `‖(I − O_PP)^-1‖_∞`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_norm_inf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        serde_yaml::from_str(text).map_err(|e| ReportError::parse(MANIFEST_FILE, e))
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("manifest serializes")
    }

    /// Dotted paths of fields outside the v1.0 schema.
    pub fn unknown_fields(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut add = |prefix: &str, extra: &Extra| {
            out.extend(extra.keys().map(|k| format!("{prefix}{k}")));
        };
        add("", &self.extra);
        add("observer.", &self.observer.extra);
        if let Some(fx) = &self.observer.fx {
            add("observer.fx.", &fx.extra);
        }
        if let Some(ppp) = &self.observer.ppp {
            add("observer.ppp.", &ppp.extra);
        }
        if let Some(sdf) = &self.observer.sdf {
            add("observer.sdf.", &sdf.extra);
        }
        add("perimeter.", &self.perimeter.extra);
        add("clearing.", &self.clearing.extra);
        if let Some(s) = &self.stability {
            add("stability.", &s.extra);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEMPLATE: &str = r#"version: cbv-cut-report@1.0
observer:
  currency: EUR
  fx:
    provider: ECB
    date: 2025-08-20
    pairs: [EUR/JPY]
    method: close
  ppp:
    used: false
    source: null
    base_year: null
  sdf:
    used: false
    measure: null         # e.g. physical | risk-neutral
    spec: null            # e.g. curve name, tenor grid
perimeter:
  P_ref: P-REN-2025Q3
  O_ref: O-NSN-2025Q3
  control_rule: IFRS10-control@50
  lookthrough: true
regime: A                 # A | B
clearing:
  used: false
  engine: null            # e.g. Rogers-Veraart
  params: {}
data_files:
  nodes_P: nodes_P.csv
  O_PP: O_PP.csv          # required if regime == B
hashes:
  nodes_P: sha256:...
notes:
  - "Market cap data sources: ..."
"#;

    #[test]
    fn template_parses() {
        let m = Manifest::parse(TEMPLATE).unwrap();
        assert_eq!(m.version, MANIFEST_VERSION);
        assert_eq!(m.observer.fx.as_ref().unwrap().pairs, vec!["EUR/JPY"]);
        assert_eq!(m.observer.fx.as_ref().unwrap().date.as_deref(), Some("2025-08-20"));
        assert_eq!(m.perimeter.p_ref, "P-REN-2025Q3");
        assert!(m.perimeter.lookthrough);
        assert_eq!(m.regime, "A");
        assert!(!m.clearing.used && m.clearing.engine.is_none());
        assert!(m.unknown_fields().is_empty());
        let again = Manifest::parse(&m.to_yaml()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn unknown_fields_survive() {
        let text = TEMPLATE.replace("regime: A", "regime: A\nreviewer: jdoe\n").replace(
            "  lookthrough: true",
            "  lookthrough: true\n  spv_list: [a, b]",
        );
        let m = Manifest::parse(&text).unwrap();
        assert_eq!(m.unknown_fields(), vec!["reviewer", "perimeter.spv_list"]);
        let again = Manifest::parse(&m.to_yaml()).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn missing_required_key_is_a_parse_error() {
        let text = TEMPLATE.replace("regime: A                 # A | B\n", "");
        assert!(matches!(Manifest::parse(&text), Err(ReportError::Parse { .. })));
    }
}
