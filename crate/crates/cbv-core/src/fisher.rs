//! Cross-priced valuations and Fisher-type volume/price decomposition of W.

use crate::cut::{self, CutStatistics, SolverConfig, ValuationResult};
use crate::error::{Error, Result};
use crate::network::{NodeId, Observer, Regime};
use crate::sparse::SparseMatrix;

/// The three additive pieces of one W.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub base_total: f64,
    pub t_out: f64,
    pub t_in: f64,
}

impl From<&ValuationResult> for Components {
    fn from(r: &ValuationResult) -> Self {
        Components {
            base_total: r.base_total,
            t_out: r.t_out,
            t_in: r.t_in,
        }
    }
}

/// `W_{period}^{observer}` for the two periods and two observers.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherQuad {
    pub w_prev_prev_obs: f64,
    pub w_curr_prev_obs: f64,
    pub w_prev_curr_obs: f64,
    pub w_curr_curr_obs: f64,
    /// Same order as the W fields when the quad came from valuations.
    pub components: Option<[Components; 4]>,
    /// Outside nodes dropped because they exist in only one of the periods.
    pub excluded: Vec<NodeId>,
}

impl FisherQuad {
    pub fn new(prev_prev: f64, curr_prev: f64, prev_curr: f64, curr_curr: f64) -> Result<Self> {
        let q = FisherQuad {
            w_prev_prev_obs: prev_prev,
            w_curr_prev_obs: curr_prev,
            w_prev_curr_obs: prev_curr,
            w_curr_curr_obs: curr_curr,
            components: None,
            excluded: Vec::new(),
        };
        if q.values().iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("quad values must be finite".into()));
        }
        Ok(q)
    }

    pub fn values(&self) -> [f64; 4] {
        [
            self.w_prev_prev_obs,
            self.w_curr_prev_obs,
            self.w_prev_curr_obs,
            self.w_curr_curr_obs,
        ]
    }

    /// The quad seen with the two periods exchanged.
    pub fn swapped(&self) -> FisherQuad {
        FisherQuad {
            w_prev_prev_obs: self.w_curr_curr_obs,
            w_curr_prev_obs: self.w_prev_curr_obs,
            w_prev_curr_obs: self.w_curr_prev_obs,
            w_curr_curr_obs: self.w_prev_prev_obs,
            components: self.components.map(|c| [c[3], c[2], c[1], c[0]]),
            excluded: self.excluded.clone(),
        }
    }
}

/// How Regime-B internal values are obtained under a foreign observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegimeBPricing {
    /// Solve for `v_P` again from the re-priced primitives.
    #[default]
    Reestimate,
    /// Solve under the period's own observer, then re-price the estimate.
    RepriceEstimate,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CrossPricing {
    pub solver: SolverConfig,
    pub regime_b: RegimeBPricing,
}

fn clearing_label(stats: &CutStatistics) -> Option<&str> {
    match &stats.clearing {
        cut::ClearingState::PreClearing => None,
        cut::ClearingState::PostClearing { engine } => Some(engine.as_str()),
    }
}

/// Evaluates W for each (period, observer) pair.
pub fn cross_priced_quad(
    stats_prev: &CutStatistics,
    stats_curr: &CutStatistics,
    obs_prev: &Observer,
    obs_curr: &Observer,
    options: &CrossPricing,
) -> Result<FisherQuad> {
    if obs_prev.regime != obs_curr.regime {
        return Err(Error::Protocol(format!(
            "regime changes between periods ({} -> {})",
            obs_prev.regime.as_str(),
            obs_curr.regime.as_str()
        )));
    }
    match (clearing_label(stats_prev), clearing_label(stats_curr)) {
        (None, None) => {}
        (Some(a), Some(b)) if a == b => {}
        (a, b) => {
            return Err(Error::Protocol(format!(
                "pre- and post-clearing statistics mixed ({} vs {})",
                a.unwrap_or("pre-clearing"),
                b.unwrap_or("pre-clearing")
            )))
        }
    }
    if stats_prev.p_ids != stats_curr.p_ids {
        return Err(Error::Protocol("perimeter changes between periods".into()));
    }
    let (prev, curr, excluded) = align_outside(stats_prev, stats_curr)?;
    let regime = obs_prev.regime;
    let scale_prev = obs_prev.price_scale()?;
    let scale_curr = obs_curr.price_scale()?;
    let value = |stats: &CutStatistics, own: (f64, &Observer), pricing: (f64, &Observer)| -> Result<ValuationResult> {
        let tau = pricing.1.tolerances.rounding_threshold;
        match (regime, options.regime_b) {
            (Regime::A, _) | (Regime::B, RegimeBPricing::Reestimate) => {
                cut::evaluate(&stats.scale_units(pricing.0)?, regime, &options.solver, tau)
            }
            (Regime::B, RegimeBPricing::RepriceEstimate) => {
                let est = cut::estimate_internal_values(&stats.scale_units(own.0)?, &options.solver)?;
                let ratio = pricing.0 / own.0;
                let v_p = est.v_p.iter().map(|v| v * ratio).collect();
                let priced = stats.scale_units(pricing.0)?.with_v_p(v_p)?;
                let mut r = cut::evaluate_regime_a(&priced, tau)?;
                r.regime = Regime::B;
                r.solver_log = est.log;
                Ok(r)
            }
        }
    };
    let own_prev = (scale_prev, obs_prev);
    let own_curr = (scale_curr, obs_curr);
    let pp = value(&prev, own_prev, own_prev)?;
    let cp = value(&curr, own_curr, own_prev)?;
    let pc = value(&prev, own_prev, own_curr)?;
    let cc = value(&curr, own_curr, own_curr)?;
    Ok(FisherQuad {
        w_prev_prev_obs: pp.w,
        w_curr_prev_obs: cp.w,
        w_prev_curr_obs: pc.w,
        w_curr_curr_obs: cc.w,
        components: Some([(&pp).into(), (&cp).into(), (&pc).into(), (&cc).into()]),
        excluded,
    })
}

/// Restricts both periods to the outside nodes they share.
fn align_outside(a: &CutStatistics, b: &CutStatistics) -> Result<(CutStatistics, CutStatistics, Vec<NodeId>)> {
    if a.o_ids == b.o_ids {
        return Ok((a.clone(), b.clone(), Vec::new()));
    }
    let mut excluded: Vec<NodeId> = a
        .o_ids
        .iter()
        .filter(|id| !b.o_ids.contains(id))
        .chain(b.o_ids.iter().filter(|id| !a.o_ids.contains(id)))
        .cloned()
        .collect();
    excluded.sort();
    let keep = |s: &CutStatistics| -> Result<CutStatistics> {
        let kept: Vec<usize> = (0..s.o_ids.len()).filter(|&k| !excluded.contains(&s.o_ids[k])).collect();
        let mut pos = vec![usize::MAX; s.o_ids.len()];
        for (new, &old) in kept.iter().enumerate() {
            pos[old] = new;
        }
        let np = s.p_ids.len();
        let po = SparseMatrix::from_triplets(
            np,
            kept.len(),
            s.o_po.iter().filter(|&(_, k, _)| pos[k] != usize::MAX).map(|(i, k, v)| (i, pos[k], v)),
        )?;
        let op = SparseMatrix::from_triplets(
            kept.len(),
            np,
            s.o_op.iter().filter(|&(k, _, _)| pos[k] != usize::MAX).map(|(k, j, v)| (pos[k], j, v)),
        )?;
        let mut out = s.clone();
        out.o_ids = kept.iter().map(|&k| s.o_ids[k].clone()).collect();
        out.v_o = kept.iter().map(|&k| s.v_o[k]).collect();
        out.o_po = po;
        out.o_op = op;
        out.flows_po = s
            .flows_po
            .iter()
            .filter(|f| pos[f.to] != usize::MAX)
            .map(|f| cut::PricedFlow { to: pos[f.to], ..*f })
            .collect();
        out.flows_op = s
            .flows_op
            .iter()
            .filter(|f| pos[f.from] != usize::MAX)
            .map(|f| cut::PricedFlow { from: pos[f.from], ..*f })
            .collect();
        out.validate()?;
        Ok(out)
    };
    Ok((keep(a)?, keep(b)?, excluded))
}

/// Laspeyres and Paasche volume/price ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementaryIndices {
    pub iv_l: f64,
    pub ip_l: f64,
    pub iv_p: f64,
    pub ip_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherIndices {
    pub iv_l: f64,
    pub ip_l: f64,
    pub iv_p: f64,
    pub ip_p: f64,
    pub iv_f: f64,
    pub ip_f: f64,
    pub g_f: f64,
}

fn ratios(q: [f64; 4]) -> ElementaryIndices {
    let [pp, cp, pc, cc] = q;
    ElementaryIndices {
        iv_l: cp / pp,
        ip_l: pc / pp,
        iv_p: cc / pc,
        ip_p: cc / cp,
    }
}

/// Strict mode: every W must be positive.
pub fn elementary_indices(quad: &FisherQuad) -> Result<ElementaryIndices> {
    let values = quad.values();
    if values.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Sign {
            message: "Fisher indices need positive W in all four cross-priced valuations".into(),
            values: values.to_vec(),
        });
    }
    Ok(ratios(values))
}

pub fn fisher_combine(e: &ElementaryIndices) -> Result<FisherIndices> {
    let all = [e.iv_l, e.ip_l, e.iv_p, e.ip_p];
    if all.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!("elementary indices must be positive, got {all:?}")));
    }
    let iv_f = (e.iv_l * e.iv_p).sqrt();
    let ip_f = (e.ip_l * e.ip_p).sqrt();
    Ok(FisherIndices {
        iv_l: e.iv_l,
        ip_l: e.ip_l,
        iv_p: e.iv_p,
        ip_p: e.ip_p,
        iv_f,
        ip_f,
        g_f: iv_f * ip_f,
    })
}

/// Fallback when some W is not positive: each component is indexed on its
/// absolute value, and the sign of every W is reported.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentIndices {
    pub base: Option<FisherIndices>,
    pub outflow: Option<FisherIndices>,
    pub inflow: Option<FisherIndices>,
    pub signs: [f64; 4],
}

pub fn component_indices(quad: &FisherQuad) -> Result<ComponentIndices> {
    let comps = quad
        .components
        .ok_or_else(|| Error::Domain("component fallback needs valuation components".into()))?;
    let one = |pick: fn(&Components) -> f64, name: &str| -> Result<Option<FisherIndices>> {
        let q = [pick(&comps[0]).abs(), pick(&comps[1]).abs(), pick(&comps[2]).abs(), pick(&comps[3]).abs()];
        if q.iter().all(|x| *x == 0.0) {
            return Ok(None);
        }
        if q.iter().any(|x| *x == 0.0) {
            return Err(Error::Sign {
                message: format!("{name} component vanishes in some but not all valuations"),
                values: q.to_vec(),
            });
        }
        fisher_combine(&ratios(q)).map(Some)
    };
    Ok(ComponentIndices {
        base: one(|c| c.base_total, "base")?,
        outflow: one(|c| c.t_out, "outflow")?,
        inflow: one(|c| c.t_in, "inflow")?,
        signs: quad.values().map(f64::signum),
    })
}

/// `level_0 = 1`, `level_t = level_{t−1} · G_F(t)`.
pub fn chain_link(multipliers: &[f64]) -> Result<Vec<f64>> {
    let mut levels = Vec::with_capacity(multipliers.len() + 1);
    levels.push(1.0);
    for (t, g) in multipliers.iter().enumerate() {
        if !(*g > 0.0 && g.is_finite()) {
            return Err(Error::Domain(format!("multiplier {t} = {g} must be positive")));
        }
        let last = *levels.last().expect("non-empty");
        levels.push(last * g);
    }
    Ok(levels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilateralIndex {
    pub laspeyres: f64,
    pub paasche: f64,
    pub fisher: f64,
}

/// Goods-basket Laspeyres/Paasche/Fisher between two price vectors.
pub fn bilateral_goods_index(p0: &[f64], p1: &[f64], q0: &[f64], q1: &[f64]) -> Result<BilateralIndex> {
    let n = p0.len();
    if p1.len() != n || q0.len() != n || q1.len() != n {
        return Err(Error::Domain("price and quantity vectors differ in length".into()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (d_l, d_p) = (dot(p0, q0), dot(p0, q1));
    if !(d_l > 0.0 && d_p > 0.0) {
        return Err(Error::Domain("nonpositive index denominator".into()));
    }
    let laspeyres = dot(p1, q0) / d_l;
    let paasche = dot(p1, q1) / d_p;
    if !(laspeyres > 0.0 && paasche > 0.0) {
        return Err(Error::Domain("nonpositive Laspeyres or Paasche index".into()));
    }
    Ok(BilateralIndex {
        laspeyres,
        paasche,
        fisher: (laspeyres * paasche).sqrt(),
    })
}
