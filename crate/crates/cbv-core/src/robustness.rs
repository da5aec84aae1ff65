//! Error-propagation bounds, conditioning of `I − O_PP`, and Monte Carlo bands.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cut::{self, spectral_radius_bound, CutStatistics, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, vec_norm, NormKind};
use crate::network::{BlockPartition, Regime};
use crate::sparse::SparseMatrix;

/// Dense decomposition is used for κ₂ up to this size.
pub const EXACT_CONDITION_MAX_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub p: NormKind,
    /// Bound on `‖Δb_P‖_p`.
    pub eta: f64,
    /// Bound on `‖Δv_O‖_p`.
    pub eps: f64,
}

impl PerturbationSpec {
    pub fn new(p: NormKind, eta: f64, eps: f64) -> Result<Self> {
        if !(eta >= 0.0 && eps >= 0.0) {
            return Err(Error::Domain("perturbation radii must be nonnegative".into()));
        }
        Ok(PerturbationSpec { p, eta, eps })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryBound {
    /// `‖1_P‖_q η + ‖1_Pᵀ O_PO‖_q ε`
    pub bound: f64,
    /// For `p = 2`: `√|P| (η + ‖O_PO‖₂ ε)`.
    pub looser_p2: Option<f64>,
}

pub fn boundary_bound(spec: &PerturbationSpec, o_po: &SparseMatrix, p_count: usize) -> BoundaryBound {
    let q = spec.p.dual();
    let ones = vec![1.0; p_count];
    let col_sums = o_po.col_sums();
    let bound = vec_norm(&ones, q) * spec.eta + vec_norm(&col_sums, q) * spec.eps;
    let looser_p2 = (spec.p == NormKind::Two).then(|| {
        (p_count as f64).sqrt() * (spec.eta + linalg::op_norm(&o_po.to_dense(), NormKind::Two) * spec.eps)
    });
    BoundaryBound { bound, looser_p2 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeBBound {
    pub boundary: BoundaryBound,
    /// `‖δ‖_q ‖(I − O_PP)^-1‖_p (η + ‖O_PO‖_p ε)`
    pub extension: f64,
    pub total: f64,
    /// Exact `‖(I − O_PP)^-1‖_p` used in the extension.
    pub inverse_norm: f64,
    /// `1 / (1 − ‖O_PP‖_p)` when that norm is below one.
    pub geometric_inverse_bound: Option<f64>,
}

/// Boundary bound plus the propagation through estimated internal values.
///
/// `O_PO` enters through its `p → p` operator norm, which bounds `‖O_PO Δv_O‖_p`.
pub fn regime_b_bound(spec: &PerturbationSpec, part: &BlockPartition) -> Result<RegimeBBound> {
    let boundary = boundary_bound(spec, &part.po, part.p_ids.len());
    let inv = cut::internal_inverse(&part.pp)?;
    let inverse_norm = linalg::op_norm(&inv, spec.p);
    let pp_norm = linalg::op_norm(&part.pp.to_dense(), spec.p);
    let delta = part.op.col_sums();
    let po_norm = linalg::op_norm(&part.po.to_dense(), spec.p);
    let extension = vec_norm(&delta, spec.p.dual()) * inverse_norm * (spec.eta + po_norm * spec.eps);
    Ok(RegimeBBound {
        boundary,
        extension,
        total: boundary.bound + extension,
        inverse_norm,
        geometric_inverse_bound: (pp_norm < 1.0).then(|| 1.0 / (1.0 - pp_norm)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningReport {
    pub rho_estimate: f64,
    pub kappa2: f64,
    /// True when κ₂ came from a singular value decomposition.
    pub exact: bool,
    pub regularization_used: Option<f64>,
    pub band: Option<(f64, f64)>,
}

pub fn condition_diagnostics(o_pp: &SparseMatrix) -> Result<ConditioningReport> {
    let spectral = spectral_radius_bound(o_pp)?;
    let n = o_pp.nrows();
    let a = linalg::shifted_identity_minus(o_pp, 1.0);
    let (kappa2, exact) = if n == 0 {
        (1.0, true)
    } else if n <= EXACT_CONDITION_MAX_SIZE {
        let sv = a.svd(false, false).singular_values;
        let max = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
        let min = sv.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        (if min == 0.0 { f64::INFINITY } else { max / min }, true)
    } else {
        // ‖M‖₂ ≤ √(‖M‖₁ ‖M‖_∞) applied to A and A⁻¹.
        let estimate = match linalg::inverse(&a) {
            Some(inv) => {
                let na = (linalg::op_norm(&a, NormKind::One) * linalg::op_norm(&a, NormKind::Inf)).sqrt();
                let ni = (linalg::op_norm(&inv, NormKind::One) * linalg::op_norm(&inv, NormKind::Inf)).sqrt();
                na * ni
            }
            None => f64::INFINITY,
        };
        (estimate, false)
    };
    Ok(ConditioningReport {
        rho_estimate: spectral.power_iteration_estimate,
        kappa2: kappa2.max(1.0),
        exact,
        regularization_used: None,
        band: None,
    })
}

/// An entry of the border statistics that a Monte Carlo draw may perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntryRef {
    /// `O_PP[i][j]`
    Internal(usize, usize),
    /// `O_PO[i][k]`
    Outgoing(usize, usize),
    /// `O_OP[k][j]`
    Incoming(usize, usize),
    Base(usize),
    OutsideValue(usize),
}

/// Uniform additive noise `U[low, high]`; entries sharing a group share the draw.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub low: f64,
    pub high: f64,
    pub targets: Vec<(EntryRef, usize)>,
    /// Also evaluate the all-low and all-high corners.
    pub include_vertices: bool,
}

impl NoiseSpec {
    /// Independent `U[−amplitude, amplitude]` on each entry, corners included.
    pub fn independent(amplitude: f64, entries: &[EntryRef]) -> Self {
        NoiseSpec {
            low: -amplitude,
            high: amplitude,
            targets: entries.iter().enumerate().map(|(g, e)| (*e, g)).collect(),
            include_vertices: true,
        }
    }

    /// One shared draw in `[low, high]` for all entries.
    pub fn tied(low: f64, high: f64, entries: &[EntryRef]) -> Self {
        NoiseSpec {
            low,
            high,
            targets: entries.iter().map(|e| (*e, 0)).collect(),
            include_vertices: true,
        }
    }

    fn groups(&self) -> Vec<usize> {
        let mut g: Vec<usize> = self.targets.iter().map(|(_, g)| *g).collect();
        g.sort_unstable();
        g.dedup();
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McBand {
    pub w_point: f64,
    pub w_low: f64,
    pub w_high: f64,
    /// `1ᵀ v_P` envelope over the same draws.
    pub total_low: f64,
    pub total_high: f64,
    pub evaluated: usize,
    /// Indices of random draws that lost stability or failed to converge.
    pub excluded: Vec<usize>,
    /// Corner evaluations that were excluded (0, 1 or 2).
    pub excluded_vertices: usize,
}

fn perturb_matrix(m: &SparseMatrix, offsets: &BTreeMap<(usize, usize), f64>) -> Result<SparseMatrix> {
    if offsets.is_empty() {
        return Ok(m.clone());
    }
    let mut entries: BTreeMap<(usize, usize), f64> = m.iter().map(|(r, c, v)| ((r, c), v)).collect();
    for (&(r, c), d) in offsets {
        *entries.entry((r, c)).or_insert(0.0) += d;
    }
    SparseMatrix::from_triplets(m.nrows(), m.ncols(), entries.into_iter().map(|((r, c), v)| (r, c, v)))
}

fn perturbed(stats: &CutStatistics, noise: &NoiseSpec, group_values: &BTreeMap<usize, f64>) -> Result<CutStatistics> {
    let mut out = stats.clone();
    let (mut pp, mut po, mut op) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for (entry, group) in &noise.targets {
        let d = group_values[group];
        match *entry {
            EntryRef::Internal(i, j) => *pp.entry((i, j)).or_insert(0.0) += d,
            EntryRef::Outgoing(i, k) => *po.entry((i, k)).or_insert(0.0) += d,
            EntryRef::Incoming(k, j) => *op.entry((k, j)).or_insert(0.0) += d,
            EntryRef::Base(i) => {
                *out.b_p.get_mut(i).ok_or_else(|| Error::Validation("noise target out of range".into()))? += d
            }
            EntryRef::OutsideValue(k) => {
                *out.v_o.get_mut(k).ok_or_else(|| Error::Validation("noise target out of range".into()))? += d
            }
        }
    }
    if !pp.is_empty() {
        let base = stats
            .o_pp
            .as_ref()
            .ok_or_else(|| Error::Regime("internal noise needs O_PP".into()))?;
        out.o_pp = Some(perturb_matrix(base, &pp)?);
    }
    out.o_po = perturb_matrix(&stats.o_po, &po)?;
    out.o_op = perturb_matrix(&stats.o_op, &op)?;
    out.validate()?;
    Ok(out)
}

/// `Some((W, 1ᵀv_P))`, or `None` when the draw lost stability.
fn evaluate_draw(stats: &CutStatistics, regime: Regime, cfg: &SolverConfig, tau: f64) -> Result<Option<(f64, f64)>> {
    match cut::evaluate(stats, regime, cfg, tau) {
        Ok(r) => Ok(Some((r.w, r.v_p_used.iter().sum()))),
        Err(Error::Stability(_)) | Err(Error::Convergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Min/max envelope of W (and of internal totals) over seeded uniform draws.
pub fn monte_carlo_band(
    stats: &CutStatistics,
    regime: Regime,
    cfg: &SolverConfig,
    tau: f64,
    noise: &NoiseSpec,
    draws: usize,
    seed: u64,
) -> Result<McBand> {
    if draws < 1 {
        return Err(Error::Domain("at least one draw is required".into()));
    }
    if !(noise.low <= noise.high) {
        return Err(Error::Domain("noise interval must satisfy low <= high".into()));
    }
    let (w_point, total_point) = evaluate_draw(stats, regime, cfg, tau)?
        .ok_or_else(|| Error::Stability("unperturbed instance is not stable".into()))?;
    let groups = noise.groups();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<BTreeMap<usize, f64>> = (0..draws)
        .map(|_| {
            groups
                .iter()
                .map(|g| {
                    let u = if noise.high > noise.low {
                        rng.random_range(noise.low..=noise.high)
                    } else {
                        noise.low
                    };
                    (*g, u)
                })
                .collect()
        })
        .collect();
    let results: Vec<Result<Option<(f64, f64)>>> = samples
        .par_iter()
        .map(|gv| evaluate_draw(&perturbed(stats, noise, gv)?, regime, cfg, tau))
        .collect();
    let mut band = McBand {
        w_point,
        w_low: w_point,
        w_high: w_point,
        total_low: total_point,
        total_high: total_point,
        evaluated: 1,
        excluded: Vec::new(),
        excluded_vertices: 0,
    };
    let absorb = |band: &mut McBand, (w, t): (f64, f64)| {
        band.w_low = band.w_low.min(w);
        band.w_high = band.w_high.max(w);
        band.total_low = band.total_low.min(t);
        band.total_high = band.total_high.max(t);
        band.evaluated += 1;
    };
    for (k, r) in results.into_iter().enumerate() {
        match r? {
            Some(v) => absorb(&mut band, v),
            None => band.excluded.push(k),
        }
    }
    if noise.include_vertices {
        for corner in [noise.low, noise.high] {
            let gv: BTreeMap<usize, f64> = groups.iter().map(|g| (*g, corner)).collect();
            match evaluate_draw(&perturbed(stats, noise, &gv)?, regime, cfg, tau)? {
                Some(v) => absorb(&mut band, v),
                None => band.excluded_vertices += 1,
            }
        }
    }
    Ok(band)
}
