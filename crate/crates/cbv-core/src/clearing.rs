//! Clearing with seniority classes and default costs.
//!
//! For node `i` the payment map settles classes in seniority order out of
//!
//! ```text
//! e_i = a_i + Σ_k Σ_j L^(k)_ji θ^(k)_j
//! ```
//!
//! Class `ℓ` receives `min(p̄^(ℓ)_i, R^(ℓ)_i)` clamped at zero, where `R^(ℓ)`
//! is what is left after senior payments and after the default costs
//! `γ^(k)_i (p̄^(k)_i − p^(k)_i)` of classes `k ≤ ℓ`. The map is monotone, so
//! iterating from full payment gives the greatest fixed point and iterating
//! from zero the least.

use crate::error::{Error, Result};
use crate::network::{NodeId, Perimeter};
use crate::sparse::SparseMatrix;

pub const DEFAULT_EPS: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingProblem {
    nodes: Vec<NodeId>,
    /// Class 0 is the most senior; `classes[ℓ][(i, j)]` is owed by `i` to `j`.
    classes: Vec<SparseMatrix>,
    resources: Vec<f64>,
    /// `default_costs[ℓ][i]`
    default_costs: Vec<Vec<f64>>,
    dues: Vec<Vec<f64>>,
}

impl ClearingProblem {
    pub fn new(
        nodes: Vec<NodeId>,
        classes: Vec<SparseMatrix>,
        resources: Vec<f64>,
        default_costs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = nodes.len();
        if classes.is_empty() {
            return Err(Error::Validation("at least one seniority class is required".into()));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("clearing nodes must be sorted and unique".into()));
        }
        if resources.len() != n {
            return Err(Error::Validation(format!("{} resources for {n} nodes", resources.len())));
        }
        if default_costs.len() != classes.len() {
            return Err(Error::Validation("one default-cost vector per class is required".into()));
        }
        for (l, (m, g)) in classes.iter().zip(&default_costs).enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Validation(format!("class {} liabilities are not {n}x{n}", l + 1)));
            }
            if m.iter().any(|(_, _, v)| v < 0.0) {
                return Err(Error::Domain(format!("class {} has a negative liability", l + 1)));
            }
            if g.len() != n || g.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Domain(format!("class {} default costs must be n values in [0, 1]", l + 1)));
            }
        }
        if resources.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::Domain("resources must be finite and nonnegative".into()));
        }
        let dues = classes.iter().map(|m| m.row_sums()).collect();
        Ok(ClearingProblem {
            nodes,
            classes,
            resources,
            default_costs,
            dues,
        })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn classes(&self) -> &[SparseMatrix] {
        &self.classes
    }

    pub fn resources(&self) -> &[f64] {
        &self.resources
    }

    pub fn default_costs(&self) -> &[Vec<f64>] {
        &self.default_costs
    }

    /// `p̄^(ℓ) = L^(ℓ) 1`
    pub fn dues(&self) -> &[Vec<f64>] {
        &self.dues
    }

    pub fn ratios(&self, payments: &[Vec<f64>]) -> Vec<Vec<f64>> {
        payments
            .iter()
            .zip(&self.dues)
            .map(|(p, d)| p.iter().zip(d).map(|(pi, di)| if *di > 0.0 { pi / di } else { 1.0 }).collect())
            .collect()
    }

    /// Synchronous application of the payment map to `payments`.
    pub fn apply_map(&self, payments: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        let theta = self.ratios(payments);
        let mut inflow = self.resources.clone();
        for (m, th) in self.classes.iter().zip(&theta) {
            for (i, j, v) in m.iter() {
                inflow[j] += v * th[i];
            }
        }
        let mut out = vec![vec![0.0; n]; self.classes.len()];
        for i in 0..n {
            let mut remaining = inflow[i];
            for l in 0..self.classes.len() {
                let due = self.dues[l][i];
                remaining -= self.default_costs[l][i] * (due - payments[l][i]);
                let paid = remaining.min(due).max(0.0);
                out[l][i] = paid;
                remaining -= paid;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FixedPointSelection {
    #[default]
    Greatest,
    Least,
}

impl FixedPointSelection {
    pub fn as_str(self) -> &'static str {
        match self {
            FixedPointSelection::Greatest => "greatest",
            FixedPointSelection::Least => "least",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greatest" => Ok(FixedPointSelection::Greatest),
            "least" => Ok(FixedPointSelection::Least),
            other => Err(Error::Domain(format!("unknown fixed-point selection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingOutcome {
    pub payments: Vec<Vec<f64>>,
    pub ratios: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub selection: FixedPointSelection,
}

fn sup_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn clear(
    problem: &ClearingProblem,
    selection: FixedPointSelection,
    eps: f64,
    max_iters: usize,
) -> Result<ClearingOutcome> {
    if !(eps > 0.0) || max_iters < 1 {
        return Err(Error::Domain("clearing needs eps > 0 and at least one iteration".into()));
    }
    let mut p: Vec<Vec<f64>> = match selection {
        FixedPointSelection::Greatest => problem.dues.clone(),
        FixedPointSelection::Least => problem.dues.iter().map(|d| vec![0.0; d.len()]).collect(),
    };
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let next = problem.apply_map(&p);
        residual = sup_distance(&next, &p);
        p = next;
        if residual < eps {
            return Ok(ClearingOutcome {
                ratios: problem.ratios(&p),
                payments: p,
                iterations: it,
                residual,
                selection,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual,
    })
}

/// Post-clearing boundary flows, in currency.
#[derive(Debug, Clone, PartialEq)]
pub struct NetBoundaryFlows {
    pub p_ids: Vec<NodeId>,
    pub o_ids: Vec<NodeId>,
    /// Paid by P to O: `Σ_ℓ Θ^(ℓ)_P L^(ℓ)_PO` (rows scaled by the payer's ratio).
    pub x_po: SparseMatrix,
    /// Paid by O to P.
    pub x_op: SparseMatrix,
}

pub fn net_boundary_flows(
    problem: &ClearingProblem,
    outcome: &ClearingOutcome,
    perimeter: &Perimeter,
) -> Result<NetBoundaryFlows> {
    let n = problem.nodes.len();
    if outcome.ratios.len() != problem.classes.len() || outcome.ratios.iter().any(|r| r.len() != n) {
        return Err(Error::Validation("clearing outcome does not match the problem".into()));
    }
    for id in perimeter.members() {
        if problem.nodes.binary_search(id).is_err() {
            return Err(Error::Membership(format!("perimeter member {id} not in clearing problem")));
        }
    }
    let mut place = vec![(false, 0usize); n];
    let (mut p_ids, mut o_ids) = (Vec::new(), Vec::new());
    for (k, id) in problem.nodes.iter().enumerate() {
        if perimeter.contains(id) {
            place[k] = (true, p_ids.len());
            p_ids.push(id.clone());
        } else {
            place[k] = (false, o_ids.len());
            o_ids.push(id.clone());
        }
    }
    let mut po = vec![vec![0.0; o_ids.len()]; p_ids.len()];
    let mut op = vec![vec![0.0; p_ids.len()]; o_ids.len()];
    for (m, th) in problem.classes.iter().zip(&outcome.ratios) {
        for (i, j, v) in m.iter() {
            match (place[i], place[j]) {
                ((true, a), (false, b)) => po[a][b] += v * th[i],
                ((false, a), (true, b)) => op[a][b] += v * th[i],
                _ => {}
            }
        }
    }
    let to_sparse = |rows: Vec<Vec<f64>>, nc: usize| {
        let nr = rows.len();
        let t = rows
            .into_iter()
            .enumerate()
            .flat_map(|(r, row)| row.into_iter().enumerate().map(move |(c, v)| (r, c, v)));
        SparseMatrix::from_triplets(nr, nc, t)
    };
    Ok(NetBoundaryFlows {
        x_po: to_sparse(po, o_ids.len())?,
        x_op: to_sparse(op, p_ids.len())?,
        p_ids,
        o_ids,
    })
}

impl NetBoundaryFlows {
    /// Flows as cut-engine inputs of the given kind, in canonical order.
    pub fn as_priced_flows(&self, kind: crate::cut::FlowKind) -> (Vec<crate::cut::PricedFlow>, Vec<crate::cut::PricedFlow>) {
        let conv = |m: &SparseMatrix| {
            m.iter()
                .map(|(from, to, amount)| crate::cut::PricedFlow { from, to, kind, amount })
                .collect()
        };
        (conv(&self.x_po), conv(&self.x_op))
    }
}
