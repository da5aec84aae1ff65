//! `clearing.json`: engine, parameters, fixed-point selection and an optional problem.

use std::collections::BTreeMap;

use cbv_core::clearing::{ClearingProblem, FixedPointSelection, DEFAULT_EPS, DEFAULT_MAX_ITERS};
use cbv_core::{NodeId, SparseMatrix};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ReportError, Result};

pub const CLEARING_FILE: &str = "clearing.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingSpec {
    pub engine: String,
    #[serde(default = "greatest")]
    pub selection: String,
    #[serde(default)]
    pub params: ClearingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ClearingProblemDoc>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

fn greatest() -> String {
    FixedPointSelection::Greatest.as_str().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearingParams {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl Default for ClearingParams {
    fn default() -> Self {
        ClearingParams {
            eps: DEFAULT_EPS,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingProblemDoc {
    pub resources: BTreeMap<String, f64>,
    /// Most senior first.
    pub classes: Vec<ClassDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub default_cost: DefaultCost,
    pub liabilities: Vec<LiabilityDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DefaultCost {
    Uniform(f64),
    PerNode(BTreeMap<String, f64>),
}

impl Default for DefaultCost {
    fn default() -> Self {
        DefaultCost::Uniform(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiabilityDoc {
    pub from: String,
    pub to: String,
    pub amount: f64,
}

impl ClearingSpec {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| ReportError::parse(CLEARING_FILE, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("clearing spec serializes")
    }

    pub fn selection(&self) -> Result<FixedPointSelection> {
        Ok(FixedPointSelection::parse(&self.selection)?)
    }

    /// Builds the engine input. Nodes are the resource keys, in sorted order.
    pub fn to_problem(&self) -> Result<ClearingProblem> {
        let doc = self
            .problem
            .as_ref()
            .ok_or_else(|| ReportError::Package(format!("{CLEARING_FILE} has no problem block")))?;
        let names: Vec<&String> = doc.resources.keys().collect();
        let index = |id: &str| {
            names
                .binary_search_by(|n| n.as_str().cmp(id))
                .map_err(|_| ReportError::parse(CLEARING_FILE, format!("unknown node {id:?}")))
        };
        let n = names.len();
        let mut classes = Vec::new();
        let mut costs = Vec::new();
        for class in &doc.classes {
            let mut t = Vec::new();
            for l in &class.liabilities {
                t.push((index(&l.from)?, index(&l.to)?, l.amount));
            }
            classes.push(SparseMatrix::from_triplets(n, n, t)?);
            costs.push(match &class.default_cost {
                DefaultCost::Uniform(g) => vec![*g; n],
                DefaultCost::PerNode(m) => {
                    for k in m.keys() {
                        index(k)?;
                    }
                    names.iter().map(|id| m.get(*id).copied().unwrap_or(0.0)).collect()
                }
            });
        }
        let nodes = names
            .iter()
            .map(|s| NodeId::new(s.as_str()))
            .collect::<cbv_core::Result<Vec<_>>>()?;
        Ok(ClearingProblem::new(
            nodes,
            classes,
            doc.resources.values().copied().collect(),
            costs,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_defaults_and_builds_problem() {
        let spec = ClearingSpec::parse(
            br#"{"engine": "Rogers-Veraart",
                 "problem": {"resources": {"b": 0, "a": 60},
                             "classes": [{"default_cost": {"a": 0.5}, "liabilities": [{"from": "a", "to": "b", "amount": 100}]}]}}"#,
        )
        .unwrap();
        assert_eq!(spec.selection().unwrap(), FixedPointSelection::Greatest);
        assert_eq!(spec.params, ClearingParams::default());
        let p = spec.to_problem().unwrap();
        assert_eq!(p.nodes()[0].as_str(), "a");
        assert_eq!(p.resources(), &[60.0, 0.0]);
        assert_eq!(p.default_costs()[0], vec![0.5, 0.0]);
        assert_eq!(p.dues()[0], vec![100.0, 0.0]);
        assert_eq!(ClearingSpec::parse(spec.to_json().as_bytes()).unwrap(), spec);
    }

    #[test]
    fn unknown_node_is_rejected() {
        let spec = ClearingSpec::parse(
            br#"{"engine": "x", "problem": {"resources": {"a": 1},
                 "classes": [{"liabilities": [{"from": "a", "to": "zz", "amount": 1}]}]}}"#,
        )
        .unwrap();
        assert!(spec.to_problem().is_err());
    }
}
