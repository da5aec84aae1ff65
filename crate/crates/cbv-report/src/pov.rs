//! Perimeter-of-validity document (`pov.json`).

use std::collections::BTreeMap;

use cbv_core::control::{ControlOption, ControlRuleSpec};
use cbv_core::network::{is_currency_code, parse_date, Basis, FxPpp, SdfSpec, SdfState, Tolerances};
use cbv_core::{Observer, Regime};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ReportError, Result};

pub const POV_FILE: &str = "pov.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovDoc {
    pub observer: PovObserver,
    #[serde(default)]
    pub tolerances: PovTolerances,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub data_sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assumptions: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub versioning: BTreeMap<String, String>,
    #[serde(default)]
    pub notes: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovObserver {
    #[serde(rename = "P")]
    pub p: Vec<String>,
    pub basis: String,
    pub units: String,
    pub date: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx_ppp: Option<PovFxPpp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdf: Option<PovSdf>,
    pub information_regime: String,
    pub control_rule: PovControlRule,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovFxPpp {
    /// Omitted when 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppp_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deflator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovSdf {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_source: Option<String>,
    pub measure: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<PovSdfState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PovSdfState {
    pub p: f64,
    pub m: f64,
    #[serde(default = "one")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovControlRule {
    pub option: String,
    #[serde(default)]
    pub params: PovControlParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PovControlParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reachability_depth: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PovTolerances {
    pub rounding_threshold: f64,
    pub solver_eps: f64,
    pub max_iters: usize,
}

impl Default for PovTolerances {
    fn default() -> Self {
        Tolerances::default().into()
    }
}

impl From<Tolerances> for PovTolerances {
    fn from(t: Tolerances) -> Self {
        PovTolerances {
            rounding_threshold: t.rounding_threshold,
            solver_eps: t.solver_eps,
            max_iters: t.max_iters,
        }
    }
}

/// Free-form metadata carried alongside the observer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PovMetadata {
    pub data_sources: Vec<String>,
    pub assumptions: Vec<String>,
    pub versioning: BTreeMap<String, String>,
    pub notes: String,
}

impl PovDoc {
    pub fn from_observer(observer: &Observer, perimeter: &[String], meta: &PovMetadata) -> Self {
        let cr = &observer.control_rule;
        PovDoc {
            observer: PovObserver {
                p: perimeter.to_vec(),
                basis: observer.basis.as_str().to_string(),
                units: observer.units.clone(),
                date: observer.date.format("%Y-%m-%d").to_string(),
                fx_ppp: observer.fx_ppp.as_ref().map(|f| PovFxPpp {
                    kappa: (f.kappa != 1.0).then_some(f.kappa),
                    fx_source: f.fx_source.clone(),
                    ppp_source: f.ppp_source.clone(),
                    deflator: f.deflator.clone(),
                }),
                sdf: observer.sdf.as_ref().map(|s| PovSdf {
                    curve_source: s.curve_source.clone(),
                    measure: s.measure.clone(),
                    horizon: s.horizon.clone(),
                    states: s
                        .states
                        .iter()
                        .map(|st| PovSdfState {
                            p: st.probability,
                            m: st.discount,
                            lambda: st.change_of_measure,
                        })
                        .collect(),
                }),
                information_regime: observer.regime.as_str().to_string(),
                control_rule: PovControlRule {
                    option: cr.option.as_str().to_string(),
                    params: PovControlParams {
                        tau: Some(cr.tau),
                        alpha: Some(cr.alpha),
                        normalize: Some(cr.normalize),
                        reachability_depth: cr.reachability_depth,
                    },
                },
                extra: BTreeMap::new(),
            },
            tolerances: observer.tolerances.into(),
            data_sources: meta.data_sources.clone(),
            assumptions: meta.assumptions.clone(),
            versioning: meta.versioning.clone(),
            notes: meta.notes.clone(),
            extra: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ReportError::parse(POV_FILE, e))
    }

    /// Missing or malformed required fields, as dotted paths.
    pub fn missing_required(&self) -> Vec<String> {
        let o = &self.observer;
        let mut missing = Vec::new();
        if o.p.is_empty() || o.p.iter().any(String::is_empty) {
            missing.push("observer.P".to_string());
        }
        if Basis::parse(&o.basis).is_err() {
            missing.push("observer.basis".to_string());
        }
        if !is_currency_code(&o.units) {
            missing.push("observer.units".to_string());
        }
        if parse_date(&o.date).is_err() {
            missing.push("observer.date".to_string());
        }
        if Regime::parse(&o.information_regime).is_err() {
            missing.push("observer.information_regime".to_string());
        }
        if ControlOption::parse(&o.control_rule.option).is_err() {
            missing.push("observer.control_rule.option".to_string());
        }
        missing
    }

    pub fn to_json(&self) -> Result<String> {
        let missing = self.missing_required();
        if !missing.is_empty() {
            return Err(ReportError::Emission(missing));
        }
        Ok(serde_json::to_string_pretty(self).expect("PoV serializes"))
    }

    pub fn to_observer(&self) -> Result<Observer> {
        let o = &self.observer;
        let defaults = ControlRuleSpec::default();
        let params = &o.control_rule.params;
        let observer = Observer {
            perimeter_ref: o.p.join(","),
            basis: Basis::parse(&o.basis)?,
            units: o.units.clone(),
            date: parse_date(&o.date)?,
            fx_ppp: o.fx_ppp.as_ref().map(|f| FxPpp {
                kappa: f.kappa.unwrap_or(1.0),
                fx_source: f.fx_source.clone(),
                ppp_source: f.ppp_source.clone(),
                deflator: f.deflator.clone(),
            }),
            sdf: o.sdf.as_ref().map(|s| SdfSpec {
                measure: s.measure.clone(),
                curve_source: s.curve_source.clone(),
                horizon: s.horizon.clone(),
                states: s
                    .states
                    .iter()
                    .map(|st| SdfState {
                        probability: st.p,
                        discount: st.m,
                        change_of_measure: st.lambda,
                    })
                    .collect(),
            }),
            regime: Regime::parse(&o.information_regime)?,
            control_rule: ControlRuleSpec {
                option: ControlOption::parse(&o.control_rule.option)?,
                tau: params.tau.unwrap_or(defaults.tau),
                alpha: params.alpha.unwrap_or(defaults.alpha),
                normalize: params.normalize.unwrap_or(defaults.normalize),
                reachability_depth: params.reachability_depth,
            },
            tolerances: Tolerances {
                rounding_threshold: self.tolerances.rounding_threshold,
                solver_eps: self.tolerances.solver_eps,
                max_iters: self.tolerances.max_iters,
            },
        };
        observer.validate()?;
        Ok(observer)
    }

    pub fn unknown_fields(&self) -> Vec<String> {
        self.extra
            .keys()
            .cloned()
            .chain(self.observer.extra.keys().map(|k| format!("observer.{k}")))
            .collect()
    }
}

/// Serializes the observer's PoV; fails when a required field is missing.
pub fn emit_pov(observer: &Observer, perimeter: &[String], meta: &PovMetadata) -> Result<String> {
    PovDoc::from_observer(observer, perimeter, meta).to_json()
}
