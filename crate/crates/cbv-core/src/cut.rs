//! Consolidated value from boundary statistics.
//!
//! Regime A evaluates `W = Σ b_P + Σ O_PO v_O − Σ O_OP v_P` directly. Regime B
//! first estimates `v_P = (I − O_PP)^-1 (b_P + O_PO v_O)` and then evaluates the
//! same formula.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, vec_norm, NormKind};
use crate::network::{BlockPartition, NodeId, NodePrimitives, Regime};
use crate::sparse::SparseMatrix;

/// Above this perimeter size the automatic method switches to Neumann iteration.
pub const DIRECT_SOLVER_MAX_SIZE: usize = 2048;

/// Iterations used by [`spectral_radius_bound`] for its power estimate.
pub const POWER_ITERATIONS: usize = 1000;

const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlowKind {
    Equity,
    Debt,
    Derivative,
    Cashflow,
}

impl FlowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::Equity => "equity",
            FlowKind::Debt => "debt",
            FlowKind::Derivative => "derivative",
            FlowKind::Cashflow => "cashflow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "equity" => Ok(FlowKind::Equity),
            "debt" => Ok(FlowKind::Debt),
            "derivative" => Ok(FlowKind::Derivative),
            "cashflow" => Ok(FlowKind::Cashflow),
            other => Err(Error::Domain(format!("unknown edge type {other:?}"))),
        }
    }
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Monetary boundary flow given directly in currency (not as a share).
///
/// For outgoing flows `from` indexes P and `to` indexes O; incoming flows the other way round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricedFlow {
    pub from: usize,
    pub to: usize,
    pub kind: FlowKind,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ClearingState {
    #[default]
    PreClearing,
    PostClearing { engine: String },
}

/// Border statistics for one perimeter.
#[derive(Debug, Clone, PartialEq)]
pub struct CutStatistics {
    pub p_ids: Vec<NodeId>,
    pub o_ids: Vec<NodeId>,
    pub b_p: Vec<f64>,
    pub v_o: Vec<f64>,
    pub v_p: Option<Vec<f64>>,
    pub o_po: SparseMatrix,
    pub o_op: SparseMatrix,
    pub o_pp: Option<SparseMatrix>,
    pub flows_po: Vec<PricedFlow>,
    pub flows_op: Vec<PricedFlow>,
    pub clearing: ClearingState,
}

impl CutStatistics {
    pub fn new(
        p_ids: Vec<NodeId>,
        o_ids: Vec<NodeId>,
        b_p: Vec<f64>,
        v_o: Vec<f64>,
        o_po: SparseMatrix,
        o_op: SparseMatrix,
    ) -> Result<Self> {
        let stats = CutStatistics {
            p_ids,
            o_ids,
            b_p,
            v_o,
            v_p: None,
            o_po,
            o_op,
            o_pp: None,
            flows_po: Vec::new(),
            flows_op: Vec::new(),
            clearing: ClearingState::PreClearing,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn with_v_p(mut self, v_p: Vec<f64>) -> Result<Self> {
        self.v_p = Some(v_p);
        self.validate()?;
        Ok(self)
    }

    pub fn with_o_pp(mut self, o_pp: SparseMatrix) -> Result<Self> {
        self.o_pp = Some(o_pp);
        self.validate()?;
        Ok(self)
    }

    pub fn with_flows(mut self, po: Vec<PricedFlow>, op: Vec<PricedFlow>) -> Result<Self> {
        self.flows_po = po;
        self.flows_op = op;
        self.validate()?;
        Ok(self)
    }

    /// Builds statistics from a partition and node primitives.
    ///
    /// `v_P` is attached when every member has a value; `O_PP` is always attached.
    pub fn from_partition(part: &BlockPartition, prims: &NodePrimitives) -> Result<Self> {
        let lookup = |map: &BTreeMap<NodeId, f64>, id: &NodeId, what: &str| {
            map.get(id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("{what} missing for node {id}")))
        };
        let b_p = part
            .p_ids
            .iter()
            .map(|id| lookup(&prims.b, id, "base value b"))
            .collect::<Result<Vec<_>>>()?;
        let v_o = part
            .o_ids
            .iter()
            .map(|id| lookup(&prims.v, id, "equity value v"))
            .collect::<Result<Vec<_>>>()?;
        let v_p: Option<Vec<f64>> = part.p_ids.iter().map(|id| prims.v.get(id).copied()).collect();
        let mut stats = CutStatistics::new(
            part.p_ids.clone(),
            part.o_ids.clone(),
            b_p,
            v_o,
            part.po.clone(),
            part.op.clone(),
        )?
        .with_o_pp(part.pp.clone())?;
        if let Some(v) = v_p {
            stats = stats.with_v_p(v)?;
        }
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        let (np, no) = (self.p_ids.len(), self.o_ids.len());
        let dims = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::Validation(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            } else {
                Ok(())
            }
        };
        dims("b_P", (self.b_p.len(), 1), (np, 1))?;
        dims("v_O", (self.v_o.len(), 1), (no, 1))?;
        if let Some(v) = &self.v_p {
            dims("v_P", (v.len(), 1), (np, 1))?;
        }
        dims("O_PO", (self.o_po.nrows(), self.o_po.ncols()), (np, no))?;
        dims("O_OP", (self.o_op.nrows(), self.o_op.ncols()), (no, np))?;
        if let Some(m) = &self.o_pp {
            dims("O_PP", (m.nrows(), m.ncols()), (np, np))?;
        }
        for f in &self.flows_po {
            if f.from >= np || f.to >= no {
                return Err(Error::Validation("outgoing flow index out of range".into()));
            }
        }
        for f in &self.flows_op {
            if f.from >= no || f.to >= np {
                return Err(Error::Validation("incoming flow index out of range".into()));
            }
        }
        let finite = self.b_p.iter().chain(&self.v_o).chain(self.v_p.iter().flatten());
        if finite.into_iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite base or value".into()));
        }
        Ok(())
    }

    pub fn require(&self, regime: Regime) -> Result<()> {
        match regime {
            Regime::A if self.v_p.is_none() => {
                Err(Error::Regime("regime A requires observed v_P".into()))
            }
            Regime::B if self.o_pp.is_none() => {
                Err(Error::Regime("regime B requires the internal block O_PP".into()))
            }
            _ => Ok(()),
        }
    }

    /// `b + O_PO v_O`, the primitives driving the internal system.
    pub fn primitives(&self) -> Vec<f64> {
        let ov = self.o_po.mul_vec(&self.v_o);
        self.b_p.iter().zip(ov).map(|(b, x)| b + x).collect()
    }

    /// Multiplies every monetary quantity by `kappa`; shares are untouched.
    pub fn scale_units(&self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Domain(format!("scale kappa = {kappa} must be positive")));
        }
        let mut out = self.clone();
        out.b_p.iter_mut().for_each(|x| *x *= kappa);
        out.v_o.iter_mut().for_each(|x| *x *= kappa);
        if let Some(v) = out.v_p.as_mut() {
            v.iter_mut().for_each(|x| *x *= kappa);
        }
        out.flows_po.iter_mut().for_each(|f| f.amount *= kappa);
        out.flows_op.iter_mut().for_each(|f| f.amount *= kappa);
        Ok(out)
    }
}

/// Free-function form of [`CutStatistics::scale_units`].
pub fn scale_units(kappa: f64, stats: &CutStatistics) -> Result<CutStatistics> {
    stats.scale_units(kappa)
}

/// One priced boundary edge as it enters the totals.
#[derive(Debug, Clone, PartialEq)]
pub struct PricedEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: FlowKind,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PricedBoundary {
    pub outgoing: Vec<PricedEdge>,
    pub incoming: Vec<PricedEdge>,
    pub dropped: usize,
}

/// Prices every boundary edge in canonical order and drops amounts below `tau`.
///
/// Share edges come first (row-major), followed by monetary flows in the order given.
pub fn priced_boundary(stats: &CutStatistics, v_p: &[f64], tau: f64) -> PricedBoundary {
    let mut out = PricedBoundary::default();
    for (i, k, s) in stats.o_po.iter() {
        let amount = s * stats.v_o[k];
        push_edge(&mut out.outgoing, &mut out.dropped, tau, &stats.p_ids[i], &stats.o_ids[k], FlowKind::Equity, amount);
    }
    for f in &stats.flows_po {
        push_edge(&mut out.outgoing, &mut out.dropped, tau, &stats.p_ids[f.from], &stats.o_ids[f.to], f.kind, f.amount);
    }
    for (i, j, s) in stats.o_op.iter() {
        let amount = s * v_p[j];
        push_edge(&mut out.incoming, &mut out.dropped, tau, &stats.o_ids[i], &stats.p_ids[j], FlowKind::Equity, amount);
    }
    for f in &stats.flows_op {
        push_edge(&mut out.incoming, &mut out.dropped, tau, &stats.o_ids[f.from], &stats.p_ids[f.to], f.kind, f.amount);
    }
    out
}

fn push_edge(
    list: &mut Vec<PricedEdge>,
    dropped: &mut usize,
    tau: f64,
    from: &NodeId,
    to: &NodeId,
    kind: FlowKind,
    amount: f64,
) {
    if amount.abs() < tau {
        *dropped += 1;
    } else {
        list.push(PricedEdge {
            from: from.clone(),
            to: to.clone(),
            kind,
            amount,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverMethod {
    Direct,
    Neumann,
    IterativeKrylov,
}

impl SolverMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverMethod::Direct => "direct",
            SolverMethod::Neumann => "neumann",
            SolverMethod::IterativeKrylov => "iterative_krylov",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(SolverMethod::Direct),
            "neumann" => Ok(SolverMethod::Neumann),
            "iterative_krylov" | "krylov" => Ok(SolverMethod::IterativeKrylov),
            other => Err(Error::Domain(format!("unknown solver method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// `None` selects direct for `|P| ≤ 2048` and Neumann above.
    pub method: Option<SolverMethod>,
    pub eps: f64,
    pub max_iters: usize,
    pub damping: Option<f64>,
    pub regularization: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: None,
            eps: 1e-10,
            max_iters: 10_000,
            damping: None,
            regularization: None,
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: SolverMethod) -> Self {
        SolverConfig {
            method: Some(method),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Domain(format!("solver eps = {} must be > 0", self.eps)));
        }
        if self.max_iters < 1 {
            return Err(Error::Domain("max iterations must be >= 1".into()));
        }
        if let Some(b) = self.damping {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Domain(format!("damping {b} outside (0, 1)")));
            }
        }
        if let Some(r) = self.regularization {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Domain(format!("regularization {r} must be >= 0")));
            }
        }
        Ok(())
    }

    fn resolve_method(&self, n: usize) -> SolverMethod {
        self.method.unwrap_or(if n <= DIRECT_SOLVER_MAX_SIZE {
            SolverMethod::Direct
        } else {
            SolverMethod::Neumann
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverLog {
    pub method: Option<SolverMethod>,
    pub iterations: usize,
    pub residual: f64,
    pub rho_bound: Option<f64>,
    pub power_estimate: Option<f64>,
    pub damping: Option<f64>,
    pub regularization: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValuationResult {
    pub regime: Regime,
    pub w: f64,
    pub base_total: f64,
    pub t_out: f64,
    pub t_in: f64,
    pub v_p_used: Vec<f64>,
    pub dropped_below_threshold: usize,
    pub solver_log: SolverLog,
}

fn sum_in_order<'a, I: IntoIterator<Item = &'a f64>>(xs: I) -> f64 {
    xs.into_iter().fold(0.0, |acc, x| acc + x)
}

fn evaluate_with(stats: &CutStatistics, v_p: &[f64], tau: f64, regime: Regime, log: SolverLog) -> ValuationResult {
    let boundary = priced_boundary(stats, v_p, tau);
    let base_total = sum_in_order(&stats.b_p);
    let t_out = boundary.outgoing.iter().fold(0.0, |acc, e| acc + e.amount);
    let t_in = boundary.incoming.iter().fold(0.0, |acc, e| acc + e.amount);
    ValuationResult {
        regime,
        w: base_total + t_out - t_in,
        base_total,
        t_out,
        t_in,
        v_p_used: v_p.to_vec(),
        dropped_below_threshold: boundary.dropped,
        solver_log: log,
    }
}

/// Direct cut evaluation; `O_PP` is never read.
pub fn evaluate_regime_a(stats: &CutStatistics, tau: f64) -> Result<ValuationResult> {
    stats.validate()?;
    check_tau(tau)?;
    let v_p = stats
        .v_p
        .as_ref()
        .ok_or_else(|| Error::Regime("regime A requires observed v_P".into()))?;
    Ok(evaluate_with(stats, v_p, tau, Regime::A, SolverLog::default()))
}

/// Estimates `v_P`, then evaluates the cut with it.
pub fn evaluate_regime_b(stats: &CutStatistics, cfg: &SolverConfig, tau: f64) -> Result<ValuationResult> {
    check_tau(tau)?;
    let est = estimate_internal_values(stats, cfg)?;
    Ok(evaluate_with(stats, &est.v_p, tau, Regime::B, est.log))
}

pub fn evaluate(stats: &CutStatistics, regime: Regime, cfg: &SolverConfig, tau: f64) -> Result<ValuationResult> {
    match regime {
        Regime::A => evaluate_regime_a(stats, tau),
        Regime::B => evaluate_regime_b(stats, cfg, tau),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("threshold {tau} must be >= 0")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBound {
    pub rho_upper: f64,
    pub norm_1: f64,
    pub norm_inf: f64,
    pub gershgorin_ok: bool,
    pub power_iteration_estimate: f64,
}

pub fn spectral_radius_bound(o_pp: &SparseMatrix) -> Result<SpectralBound> {
    if !o_pp.is_square() {
        return Err(Error::Validation(format!(
            "internal block is {}x{}, not square",
            o_pp.nrows(),
            o_pp.ncols()
        )));
    }
    let norm_1 = o_pp.norm_1();
    let norm_inf = o_pp.norm_inf();
    // Disc radius plus centre magnitude, row by row.
    let gershgorin_ok = (0..o_pp.nrows()).all(|r| o_pp.row(r).map(|(_, v)| v.abs()).sum::<f64>() < 1.0);
    Ok(SpectralBound {
        rho_upper: norm_1.min(norm_inf),
        norm_1,
        norm_inf,
        gershgorin_ok,
        power_iteration_estimate: linalg::power_iteration_abs(o_pp, POWER_ITERATIONS),
    })
}

/// Result of [`estimate_internal_values`].
#[derive(Debug, Clone, PartialEq)]
pub struct InternalEstimate {
    pub v_p: Vec<f64>,
    pub log: SolverLog,
}

/// The operator actually inverted: `c·I − M` with `M = β·O_PP` and `c = 1 + ε_reg`.
struct InternalOperator {
    m: SparseMatrix,
    shift: f64,
}

impl InternalOperator {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mx = self.m.mul_vec(x);
        x.iter().zip(mx).map(|(xi, yi)| self.shift * xi - yi).collect()
    }

    fn residual(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        self.apply(x).iter().zip(rhs).map(|(a, b)| a - b).collect()
    }
}

/// Applies the stability gate to `M / shift` and records the outcome in `log`.
fn stability_gate(op: &InternalOperator, log: &mut SolverLog) -> Result<()> {
    if !op.m.is_square() {
        return Err(Error::Validation(format!("internal block is {}x{}, not square", op.m.nrows(), op.m.ncols())));
    }
    let rho_upper = op.m.norm_1().min(op.m.norm_inf()) / op.shift;
    log.rho_bound = Some(rho_upper);
    if rho_upper < 1.0 {
        return Ok(());
    }
    // The power estimate is only needed when the norm bounds are inconclusive.
    let power = linalg::power_iteration_abs(&op.m, POWER_ITERATIONS) / op.shift;
    log.power_estimate = Some(power);
    if power < 1.0 {
        log.warnings.push(format!(
            "norm bounds {rho_upper:.6} >= 1; proceeding on power-iteration estimate {power:.6}"
        ));
        return Ok(());
    }
    Err(Error::Stability(format!(
        "spectral radius bound {rho_upper:.6} and power estimate {power:.6} are both >= 1"
    )))
}

/// Solves `(I − O_PP) v_P = b_P + O_PO v_O`, with optional damping and regularization.
///
/// The residual tolerance is `eps · max(1, ‖rhs‖_∞)` so currency-scale inputs
/// are judged relative to their magnitude.
pub fn estimate_internal_values(stats: &CutStatistics, cfg: &SolverConfig) -> Result<InternalEstimate> {
    stats.validate()?;
    cfg.validate()?;
    stats.require(Regime::B)?;
    let o_pp = stats.o_pp.as_ref().expect("checked by require");
    let rhs = stats.primitives();
    let mut log = SolverLog {
        damping: cfg.damping,
        regularization: cfg.regularization,
        ..SolverLog::default()
    };
    let op = InternalOperator {
        m: match cfg.damping {
            Some(beta) => o_pp.scale(beta),
            None => o_pp.clone(),
        },
        shift: 1.0 + cfg.regularization.unwrap_or(0.0),
    };
    stability_gate(&op, &mut log)?;
    let n = rhs.len();
    let method = cfg.resolve_method(n);
    log.method = Some(method);
    let tol = cfg.eps * vec_norm(&rhs, NormKind::Inf).max(1.0);
    let v_p = match method {
        SolverMethod::Direct => solve_direct(&op, &rhs, tol, &mut log)?,
        SolverMethod::Neumann => solve_neumann(&op, &rhs, tol, cfg.max_iters, &mut log)?,
        SolverMethod::IterativeKrylov => solve_bicgstab(&op, &rhs, tol, cfg.max_iters, &mut log)?,
    };
    Ok(InternalEstimate { v_p, log })
}

fn solve_direct(op: &InternalOperator, rhs: &[f64], tol: f64, log: &mut SolverLog) -> Result<Vec<f64>> {
    let a = linalg::shifted_identity_minus(&op.m, op.shift);
    let lu = a.lu();
    let solve = |b: &[f64]| -> Result<Vec<f64>> {
        if b.is_empty() {
            return Ok(Vec::new());
        }
        lu.solve(&nalgebra::DVector::from_column_slice(b))
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .map(|x| x.as_slice().to_vec())
            .ok_or_else(|| Error::Stability("I - O_PP is singular".into()))
    };
    let mut x = solve(rhs)?;
    log.iterations = 1;
    let mut r = op.residual(&x, rhs);
    let mut res = vec_norm(&r, NormKind::Inf);
    // Iterative refinement for ill-conditioned blocks.
    for _ in 0..REFINEMENT_STEPS {
        if res < tol {
            break;
        }
        let dx = solve(&r)?;
        x.iter_mut().zip(dx).for_each(|(xi, d)| *xi -= d);
        r = op.residual(&x, rhs);
        res = vec_norm(&r, NormKind::Inf);
        log.iterations += 1;
    }
    log.residual = res;
    if res < tol {
        Ok(x)
    } else {
        Err(Error::Convergence {
            iterations: log.iterations,
            residual: res,
        })
    }
}

fn solve_neumann(
    op: &InternalOperator,
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
    log: &mut SolverLog,
) -> Result<Vec<f64>> {
    let c = op.shift;
    let mut x: Vec<f64> = rhs.iter().map(|b| b / c).collect();
    let mut res = vec_norm(&op.residual(&x, rhs), NormKind::Inf);
    for t in 1..=max_iters {
        if res < tol {
            log.iterations = t - 1;
            log.residual = res;
            return Ok(x);
        }
        let mx = op.m.mul_vec(&x);
        x = rhs.iter().zip(mx).map(|(b, y)| (b + y) / c).collect();
        res = vec_norm(&op.residual(&x, rhs), NormKind::Inf);
    }
    log.iterations = max_iters;
    log.residual = res;
    if res < tol {
        Ok(x)
    } else {
        Err(Error::Convergence {
            iterations: max_iters,
            residual: res,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BiCGSTAB on the shifted operator, started from the first Neumann term.
fn solve_bicgstab(
    op: &InternalOperator,
    rhs: &[f64],
    tol: f64,
    max_iters: usize,
    log: &mut SolverLog,
) -> Result<Vec<f64>> {
    let n = rhs.len();
    let mut x: Vec<f64> = rhs.iter().map(|b| b / op.shift).collect();
    let mut r: Vec<f64> = rhs.iter().zip(op.apply(&x)).map(|(b, ax)| b - ax).collect();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut res = vec_norm(&r, NormKind::Inf);
    let mut it = 0;
    while res >= tol && it < max_iters {
        it += 1;
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        v = op.apply(&p);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if vec_norm(&s, NormKind::Inf) < tol {
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            res = vec_norm(&op.residual(&x, rhs), NormKind::Inf);
            break;
        }
        let t = op.apply(&s);
        let tt = dot(&t, &t);
        omega = if tt == 0.0 { 0.0 } else { dot(&t, &s) / tt };
        for k in 0..n {
            x[k] += alpha * p[k] + omega * s[k];
        }
        r = s.iter().zip(&t).map(|(si, ti)| si - omega * ti).collect();
        // Recompute the true residual so breakdown cannot hide drift.
        res = vec_norm(&op.residual(&x, rhs), NormKind::Inf);
    }
    log.iterations = it;
    log.residual = res;
    if res < tol {
        Ok(x)
    } else {
        Err(Error::Convergence {
            iterations: it,
            residual: res,
        })
    }
}

/// Boundary operators after eliminating the perimeter.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurOperators {
    /// `I − O_OO − O_OP (I − O_PP)^-1 O_PO`
    pub s_oo: DMatrix<f64>,
    /// `(I − O_PP)^-1 O_PO`
    pub t_po: DMatrix<f64>,
    /// `O_OP (I − O_PP)^-1`
    pub u_op: DMatrix<f64>,
}

/// Computes the Schur operators. Unless `allow_unverified` is set, the
/// spectral gate must pass first.
pub fn schur_operators(part: &BlockPartition, allow_unverified: bool) -> Result<SchurOperators> {
    if !allow_unverified {
        let mut log = SolverLog::default();
        stability_gate(&InternalOperator { m: part.pp.clone(), shift: 1.0 }, &mut log)?;
    }
    let inv = internal_inverse(&part.pp)?;
    let po = part.po.to_dense();
    let op = part.op.to_dense();
    let no = part.o_ids.len();
    let t_po = &inv * &po;
    let u_op = &op * &inv;
    let s_oo = DMatrix::identity(no, no) - part.oo.to_dense() - &op * &t_po;
    Ok(SchurOperators { s_oo, t_po, u_op })
}

/// Dense `(I − O_PP)^-1`.
pub fn internal_inverse(o_pp: &SparseMatrix) -> Result<DMatrix<f64>> {
    if !o_pp.is_square() {
        return Err(Error::Validation("internal block is not square".into()));
    }
    linalg::inverse(&linalg::shifted_identity_minus(o_pp, 1.0))
        .ok_or_else(|| Error::Stability("I - O_PP is singular".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveShare {
    /// `δ_j = Σ_{i∈O} O_ij`
    pub delta: Vec<f64>,
    pub e_ext: f64,
    pub omega_eff: f64,
    /// `Σ b_P + Σ O_PO v_O + outgoing flows − E_ext − incoming flows`
    pub w_meta: f64,
}

/// Leakage of perimeter value to outside holders through the internal network.
///
/// `E_ext = δᵀ (I − O_PP)^-1 π` with `π = b_P + O_PO v_O`, which equals `δᵀ v_P`
/// for the estimated `v_P`; `omega_eff = E_ext / 1ᵀπ`. No threshold is applied, so
/// `w_meta` matches [`evaluate_regime_b`] at `tau = 0`.
pub fn effective_external_share(stats: &CutStatistics, cfg: &SolverConfig) -> Result<EffectiveShare> {
    let est = estimate_internal_values(stats, cfg)?;
    let pi = stats.primitives();
    let delta = stats.o_op.col_sums();
    let e_ext = dot(&delta, &est.v_p);
    let pi_total = sum_in_order(&pi);
    let omega_eff = if e_ext == 0.0 {
        0.0
    } else if pi_total == 0.0 {
        return Err(Error::Domain("effective share undefined: primitives sum to zero".into()));
    } else {
        e_ext / pi_total
    };
    let base = sum_in_order(&stats.b_p);
    let share_out = stats.o_po.iter().fold(0.0, |acc, (_, k, s)| acc + s * stats.v_o[k]);
    let flows_out = stats.flows_po.iter().fold(0.0, |acc, f| acc + f.amount);
    let flows_in = stats.flows_op.iter().fold(0.0, |acc, f| acc + f.amount);
    Ok(EffectiveShare {
        delta,
        e_ext,
        omega_eff,
        w_meta: base + (share_out + flows_out) - (e_ext + flows_in),
    })
}

/// `h_k = Σ_{i∈P} O_ik`, keyed by outside node.
pub fn hedge_vector(stats: &CutStatistics) -> BTreeMap<NodeId, f64> {
    stats
        .o_ids
        .iter()
        .cloned()
        .zip(stats.o_po.col_sums())
        .collect()
}

/// `(gross − W) / W`
pub fn cut_gap(gross: f64, w: f64) -> Result<f64> {
    if w == 0.0 {
        return Err(Error::Domain("cut gap undefined for W = 0".into()));
    }
    Ok((gross - w) / w)
}
