//! Cut Summary document (`cut_summary.json`).

use std::collections::BTreeMap;

use cbv_core::cut::{hedge_vector, priced_boundary, PricedEdge};
use cbv_core::{CutStatistics, Observer, ValuationResult};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ReportError, Result};

pub const CUT_SUMMARY_FILE: &str = "cut_summary.json";
pub const RECONCILE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutSummaryDoc {
    pub perimeter: String,
    pub date: String,
    pub currency: String,
    #[serde(rename = "edges_PO")]
    pub edges_po: Vec<EdgeDoc>,
    #[serde(rename = "edges_OP")]
    pub edges_op: Vec<EdgeDoc>,
    pub node_primitives: NodePrimitivesDoc,
    pub totals: TotalsDoc,
    pub consolidated_value: f64,
    #[serde(rename = "hedge_vector_O", default, skip_serializing_if = "Option::is_none")]
    pub hedge_vector_o: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub missing_data: Vec<MissingDataDoc>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub from: String,
    pub to: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePrimitivesDoc {
    #[serde(rename = "v_P")]
    pub v_p: BTreeMap<String, f64>,
    #[serde(rename = "v_O")]
    pub v_o: BTreeMap<String, f64>,
    #[serde(rename = "b_P", default, skip_serializing_if = "Option::is_none")]
    pub b_p: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TotalsDoc {
    #[serde(rename = "T_out")]
    pub t_out: f64,
    #[serde(rename = "T_in")]
    pub t_in: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingDataDoc {
    pub field: String,
    pub imputation: String,
}

fn edge_doc(e: &PricedEdge) -> EdgeDoc {
    EdgeDoc {
        from: e.from.to_string(),
        to: e.to.to_string(),
        kind: e.kind.as_str().to_string(),
        amount: e.amount,
    }
}

fn keyed<'a>(ids: impl IntoIterator<Item = &'a cbv_core::NodeId>, values: &[f64]) -> BTreeMap<String, f64> {
    ids.into_iter().map(|id| id.to_string()).zip(values.iter().copied()).collect()
}

impl CutSummaryDoc {
    /// Builds the summary from a completed valuation.
    ///
    /// Edges are re-priced with the same `v_P` and threshold the valuation used, so the
    /// emitted totals are the sums of the emitted edges.
    pub fn from_valuation(
        result: &ValuationResult,
        stats: &CutStatistics,
        observer: &Observer,
        perimeter: &str,
    ) -> Self {
        let tau = observer.tolerances.rounding_threshold;
        let boundary = priced_boundary(stats, &result.v_p_used, tau);
        CutSummaryDoc {
            perimeter: perimeter.to_string(),
            date: observer.date.format("%Y-%m-%d").to_string(),
            currency: observer.units.clone(),
            edges_po: boundary.outgoing.iter().map(edge_doc).collect(),
            edges_op: boundary.incoming.iter().map(edge_doc).collect(),
            node_primitives: NodePrimitivesDoc {
                v_p: keyed(&stats.p_ids, &result.v_p_used),
                v_o: keyed(&stats.o_ids, &stats.v_o),
                b_p: Some(keyed(&stats.p_ids, &stats.b_p)),
            },
            totals: TotalsDoc {
                t_out: result.t_out,
                t_in: result.t_in,
            },
            consolidated_value: result.w,
            hedge_vector_o: Some(
                hedge_vector(stats)
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v))
                    .collect(),
            ),
            missing_data: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ReportError::parse(CUT_SUMMARY_FILE, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cut summary serializes")
    }

    /// Checks the totals against the edge tables and the header fields.
    pub fn check(&self) -> Result<()> {
        let sum = |edges: &[EdgeDoc]| edges.iter().fold(0.0, |acc, e| acc + e.amount);
        for (name, total, edges) in [
            ("T_out", self.totals.t_out, &self.edges_po),
            ("T_in", self.totals.t_in, &self.edges_op),
        ] {
            let s = sum(edges);
            if (s - total).abs() > RECONCILE_TOLERANCE * total.abs().max(1.0) {
                return Err(ReportError::parse(
                    CUT_SUMMARY_FILE,
                    format!("{name} = {total} but edges sum to {s}"),
                ));
            }
        }
        if !cbv_core::network::is_currency_code(&self.currency) {
            return Err(ReportError::parse(CUT_SUMMARY_FILE, format!("bad currency {:?}", self.currency)));
        }
        cbv_core::network::parse_date(&self.date)?;
        Ok(())
    }
}

pub fn emit_cut_summary(
    result: &ValuationResult,
    stats: &CutStatistics,
    observer: &Observer,
    perimeter: &str,
) -> String {
    CutSummaryDoc::from_valuation(result, stats, observer, perimeter).to_json()
}
