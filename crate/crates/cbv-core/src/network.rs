//! Nodes, ownership matrices, perimeters and the observer configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;

use crate::control::ControlRuleSpec;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::validation::{RuleId, Severity, ValidationReport};

/// Column sums above `1 + COLUMN_SUM_SLACK` are share violations.
pub const COLUMN_SUM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Validation("node id must be non-empty".into()));
        }
        Ok(NodeId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Convenience for tests and fixtures: panics on an empty id.
pub fn ids<I, S>(names: I) -> Vec<NodeId>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    names
        .into_iter()
        .map(|s| NodeId::new(s).expect("non-empty node id"))
        .collect()
}

/// Node set plus share matrix; `shares[(i, j)]` is the fraction of `j` owned by `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnershipNetwork {
    nodes: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    shares: SparseMatrix,
}

impl OwnershipNetwork {
    /// Nodes are stored in canonical (lexicographic) order regardless of input order.
    pub fn new<I>(nodes: Vec<NodeId>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (NodeId, NodeId, f64)>,
    {
        let mut sorted = nodes;
        sorted.sort();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Validation(format!("duplicate node id {}", w[0])));
            }
        }
        let index: BTreeMap<NodeId, usize> =
            sorted.iter().cloned().enumerate().map(|(k, id)| (id, k)).collect();
        let mut triplets = Vec::new();
        for (owner, owned, s) in entries {
            let i = *index
                .get(&owner)
                .ok_or_else(|| Error::Membership(format!("unknown node {owner}")))?;
            let j = *index
                .get(&owned)
                .ok_or_else(|| Error::Membership(format!("unknown node {owned}")))?;
            triplets.push((i, j, s));
        }
        let n = sorted.len();
        let shares = SparseMatrix::from_triplets(n, n, triplets)?;
        Ok(OwnershipNetwork {
            nodes: sorted,
            index,
            shares,
        })
    }

    /// Wraps an existing matrix whose rows/columns follow `nodes` (already canonical).
    pub fn from_matrix(nodes: Vec<NodeId>, shares: SparseMatrix) -> Result<Self> {
        if shares.nrows() != nodes.len() || shares.ncols() != nodes.len() {
            return Err(Error::Validation(format!(
                "share matrix is {}x{} for {} nodes",
                shares.nrows(),
                shares.ncols(),
                nodes.len()
            )));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("nodes must be strictly sorted and unique".into()));
        }
        let index = nodes.iter().cloned().enumerate().map(|(k, id)| (id, k)).collect();
        Ok(OwnershipNetwork {
            nodes,
            index,
            shares,
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn shares(&self) -> &SparseMatrix {
        &self.shares
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Share-range and column-sum checks.
pub fn validate_network(network: &OwnershipNetwork) -> ValidationReport {
    let mut report = ValidationReport::new();
    let m = network.shares();
    if m.nrows() != network.len() || m.ncols() != network.len() {
        report.push(
            RuleId::D1,
            Severity::Error,
            format!("share matrix {}x{} for {} nodes", m.nrows(), m.ncols(), network.len()),
            "O",
        );
        return report;
    }
    for (i, j, s) in m.iter() {
        if !(0.0..=1.0).contains(&s) {
            report.push(
                RuleId::D2,
                Severity::Error,
                format!("share {s} outside [0, 1]"),
                format!("O[{}][{}]", network.nodes[i], network.nodes[j]),
            );
        }
    }
    for (j, total) in m.col_sums().into_iter().enumerate() {
        if total > 1.0 + COLUMN_SUM_SLACK {
            report.push(
                RuleId::D2,
                Severity::Error,
                format!("column sum {total} exceeds 1"),
                format!("O[*][{}]", network.nodes[j]),
            );
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Perimeter {
    members: BTreeSet<NodeId>,
}

impl Perimeter {
    pub fn new<I: IntoIterator<Item = NodeId>>(members: I) -> Self {
        Perimeter {
            members: members.into_iter().collect(),
        }
    }

    pub fn members(&self) -> &BTreeSet<NodeId> {
        &self.members
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.members.contains(id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_subset(&self, other: &Perimeter) -> bool {
        self.members.is_subset(&other.members)
    }

    /// Fails with a membership error when a member is not in `network`.
    pub fn check_within(&self, network: &OwnershipNetwork) -> Result<()> {
        for id in &self.members {
            if network.index_of(id).is_none() {
                return Err(Error::Membership(format!("perimeter member {id} not in network")));
            }
        }
        Ok(())
    }

    pub fn complement(&self, network: &OwnershipNetwork) -> Result<Vec<NodeId>> {
        self.check_within(network)?;
        Ok(network
            .nodes()
            .iter()
            .filter(|id| !self.members.contains(*id))
            .cloned()
            .collect())
    }
}

/// The four blocks of O for a perimeter, with sorted index maps.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    pub p_ids: Vec<NodeId>,
    pub o_ids: Vec<NodeId>,
    pub pp: SparseMatrix,
    pub po: SparseMatrix,
    pub op: SparseMatrix,
    pub oo: SparseMatrix,
}

pub fn partition(network: &OwnershipNetwork, perimeter: &Perimeter) -> Result<BlockPartition> {
    perimeter.check_within(network)?;
    let n = network.len();
    // (is_in_P, position within its block)
    let mut place = vec![(false, 0usize); n];
    let mut p_ids = Vec::new();
    let mut o_ids = Vec::new();
    for (k, id) in network.nodes().iter().enumerate() {
        if perimeter.contains(id) {
            place[k] = (true, p_ids.len());
            p_ids.push(id.clone());
        } else {
            place[k] = (false, o_ids.len());
            o_ids.push(id.clone());
        }
    }
    let (mut pp, mut po, mut op, mut oo) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, j, s) in network.shares().iter() {
        let (ip, ii) = place[i];
        let (jp, jj) = place[j];
        match (ip, jp) {
            (true, true) => pp.push((ii, jj, s)),
            (true, false) => po.push((ii, jj, s)),
            (false, true) => op.push((ii, jj, s)),
            (false, false) => oo.push((ii, jj, s)),
        }
    }
    let (np, no) = (p_ids.len(), o_ids.len());
    Ok(BlockPartition {
        pp: SparseMatrix::from_triplets(np, np, pp)?,
        po: SparseMatrix::from_triplets(np, no, po)?,
        op: SparseMatrix::from_triplets(no, np, op)?,
        oo: SparseMatrix::from_triplets(no, no, oo)?,
        p_ids,
        o_ids,
    })
}

impl BlockPartition {
    /// Rebuilds the full matrix in canonical node order.
    pub fn reassemble(&self) -> Result<(Vec<NodeId>, SparseMatrix)> {
        let mut all: Vec<(NodeId, bool, usize)> = self
            .p_ids
            .iter()
            .enumerate()
            .map(|(k, id)| (id.clone(), true, k))
            .chain(self.o_ids.iter().enumerate().map(|(k, id)| (id.clone(), false, k)))
            .collect();
        all.sort();
        let mut p_pos = vec![0; self.p_ids.len()];
        let mut o_pos = vec![0; self.o_ids.len()];
        for (g, (_, in_p, k)) in all.iter().enumerate() {
            if *in_p {
                p_pos[*k] = g;
            } else {
                o_pos[*k] = g;
            }
        }
        let mut t = Vec::new();
        t.extend(self.pp.iter().map(|(i, j, s)| (p_pos[i], p_pos[j], s)));
        t.extend(self.po.iter().map(|(i, j, s)| (p_pos[i], o_pos[j], s)));
        t.extend(self.op.iter().map(|(i, j, s)| (o_pos[i], p_pos[j], s)));
        t.extend(self.oo.iter().map(|(i, j, s)| (o_pos[i], o_pos[j], s)));
        let n = all.len();
        let nodes = all.into_iter().map(|(id, _, _)| id).collect();
        Ok((nodes, SparseMatrix::from_triplets(n, n, t)?))
    }
}

/// Base values `b` and equity values `v` keyed by node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodePrimitives {
    pub b: BTreeMap<NodeId, f64>,
    pub v: BTreeMap<NodeId, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaircutSpec {
    h_liq: f64,
    h_fx: f64,
}

impl HaircutSpec {
    pub fn new(h_liq: f64, h_fx: f64) -> Result<Self> {
        for (name, h) in [("h_liq", h_liq), ("h_fx", h_fx)] {
            if !(0.0..=1.0).contains(&h) {
                return Err(Error::Domain(format!("{name} = {h} outside [0, 1]")));
            }
        }
        Ok(HaircutSpec { h_liq, h_fx })
    }

    pub fn combined(&self) -> f64 {
        self.h_liq * self.h_fx
    }
}

pub fn apply_haircut(spec: &HaircutSpec, value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Domain("haircut applied to a non-finite value".into()));
    }
    Ok(spec.h_liq * spec.h_fx * value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    FairValue,
    HistoricalCost,
    Realizable,
}

impl Basis {
    pub fn as_str(self) -> &'static str {
        match self {
            Basis::FairValue => "fair_value",
            Basis::HistoricalCost => "historical_cost",
            Basis::Realizable => "realizable",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fair_value" => Ok(Basis::FairValue),
            "historical_cost" => Ok(Basis::HistoricalCost),
            "realizable" => Ok(Basis::Realizable),
            other => Err(Error::Domain(format!("unknown basis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Internal values observed at the boundary.
    A,
    /// Internal values estimated through `(I - O_PP)^-1`.
    B,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::A => "A",
            Regime::B => "B",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Regime::A),
            "B" | "b" => Ok(Regime::B),
            other => Err(Error::Domain(format!("unknown regime {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FxPpp {
    pub kappa: f64,
    pub fx_source: Option<String>,
    pub ppp_source: Option<String>,
    pub deflator: Option<String>,
}

impl FxPpp {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Domain(format!("scale kappa = {kappa} must be positive")));
        }
        Ok(FxPpp {
            kappa,
            fx_source: None,
            ppp_source: None,
            deflator: None,
        })
    }
}

/// One state of a discrete SDF: probability `p`, discount `m`, change of measure `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfState {
    pub probability: f64,
    pub discount: f64,
    pub change_of_measure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfSpec {
    pub measure: String,
    pub curve_source: Option<String>,
    pub horizon: Option<String>,
    pub states: Vec<SdfState>,
}

impl SdfSpec {
    /// Scalar deflator `Σ p m Λ` applied to deterministic boundary amounts; 1 when no states are given.
    pub fn deflator(&self) -> Result<f64> {
        if self.states.is_empty() {
            return Ok(1.0);
        }
        let mut total = 0.0;
        for s in &self.states {
            if s.probability < 0.0 || s.discount < 0.0 || s.change_of_measure < 0.0 {
                return Err(Error::Domain("SDF weights must be nonnegative".into()));
            }
            total += s.probability * s.discount * s.change_of_measure;
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Domain(format!("SDF deflator {total} must be positive")));
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rounding_threshold: f64,
    pub solver_eps: f64,
    pub max_iters: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rounding_threshold: 1e-8,
            solver_eps: 1e-10,
            max_iters: 10_000,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.rounding_threshold >= 0.0) {
            return Err(Error::Domain("rounding threshold must be >= 0".into()));
        }
        if !(self.solver_eps > 0.0) {
            return Err(Error::Domain("solver eps must be > 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Domain("max iterations must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observer {
    pub perimeter_ref: String,
    pub basis: Basis,
    pub units: String,
    pub date: NaiveDate,
    pub fx_ppp: Option<FxPpp>,
    pub sdf: Option<SdfSpec>,
    pub regime: Regime,
    pub control_rule: ControlRuleSpec,
    pub tolerances: Tolerances,
}

impl Observer {
    pub fn new(
        perimeter_ref: impl Into<String>,
        units: &str,
        date: &str,
        regime: Regime,
        control_rule: ControlRuleSpec,
    ) -> Result<Self> {
        let obs = Observer {
            perimeter_ref: perimeter_ref.into(),
            basis: Basis::FairValue,
            units: units.to_string(),
            date: parse_date(date)?,
            fx_ppp: None,
            sdf: None,
            regime,
            control_rule,
            tolerances: Tolerances::default(),
        };
        obs.validate()?;
        Ok(obs)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_currency_code(&self.units) {
            return Err(Error::Domain(format!("{:?} is not an ISO-4217 code", self.units)));
        }
        if let Some(fx) = &self.fx_ppp {
            if !(fx.kappa > 0.0 && fx.kappa.is_finite()) {
                return Err(Error::Domain(format!("scale kappa = {} must be positive", fx.kappa)));
            }
        }
        if let Some(sdf) = &self.sdf {
            sdf.deflator()?;
        }
        self.control_rule.validate()?;
        self.tolerances.validate()
    }

    /// Monetary scale applied when this observer re-prices boundary statistics.
    pub fn price_scale(&self) -> Result<f64> {
        let kappa = self.fx_ppp.as_ref().map_or(1.0, |f| f.kappa);
        let deflator = match &self.sdf {
            Some(s) => s.deflator()?,
            None => 1.0,
        };
        Ok(kappa * deflator)
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    if s.len() != 10 {
        return Err(Error::Domain(format!("{s:?} is not a YYYY-MM-DD date")));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| Error::Domain(format!("{s:?} is not a YYYY-MM-DD date")))
}

/// Three upper-case ASCII letters.
pub fn is_currency_code(s: &str) -> bool {
    s.len() == 3 && s.bytes().all(|b| b.is_ascii_uppercase())
}
