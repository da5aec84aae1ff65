//! Piecewise-affine payoffs, closed-form affine-lift evaluators, and
//! per-state valuation with coherent aggregation.

use rayon::prelude::*;

use crate::cut::{self, CutStatistics, SolverConfig};
use crate::error::{Error, Result};
use crate::network::Regime;

/// Weights of a [`StateSpace`] must sum to one within this tolerance.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PwaFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PwaFunction {
    /// Linear interpolant through `(knot, value)` pairs.
    pub fn build(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Domain("a piecewise-affine function needs at least two knots".into()));
        }
        if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Domain("knots and values must be finite".into()));
        }
        if samples.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Domain("knots must be strictly increasing".into()));
        }
        Ok(PwaFunction {
            knots: samples.iter().map(|s| s.0).collect(),
            values: samples.iter().map(|s| s.1).collect(),
        })
    }

    /// Samples `f` at the given knots.
    pub fn sample(f: impl Fn(f64) -> f64, knots: &[f64]) -> Result<Self> {
        let samples: Vec<(f64, f64)> = knots.iter().map(|&x| (x, f(x))).collect();
        Self::build(&samples)
    }

    /// `n` equal segments on `[a, b]`.
    pub fn uniform(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Result<Self> {
        if n < 1 || !(a < b) {
            return Err(Error::Domain("uniform grid needs n >= 1 and a < b".into()));
        }
        let knots: Vec<f64> = (0..=n)
            .map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 })
            .collect();
        Self::sample(f, &knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
            .collect()
    }

    /// Largest segment length.
    pub fn max_step(&self) -> f64 {
        self.knots.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let (a, b) = (self.knots[0], *self.knots.last().expect("two knots"));
        if !(x >= a && x <= b) {
            return Err(Error::Domain(format!("{x} outside knot range [{a}, {b}]")));
        }
        let k = match self.knots.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => return Ok(self.values[i]),
            Err(i) => i - 1,
        };
        let t = (x - self.knots[k]) / (self.knots[k + 1] - self.knots[k]);
        Ok(self.values[k] + t * (self.values[k + 1] - self.values[k]))
    }
}

/// `Γ Δ² / 8`
pub fn pwa_error_bound(gamma_max: f64, delta: f64) -> Result<f64> {
    if !(gamma_max >= 0.0) || !(delta > 0.0) {
        return Err(Error::Domain("need curvature >= 0 and step > 0".into()));
    }
    Ok(gamma_max * delta * delta / 8.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Granularity {
    pub delta_max: f64,
    /// Segments needed on the unit interval.
    pub segments: usize,
}

/// `Δ_max = √(8ε/Γ)` and `N = ⌈1/Δ_max⌉`.
pub fn delta_max(eps: f64, gamma_max: f64) -> Result<Granularity> {
    if !(eps > 0.0) || !(gamma_max > 0.0) {
        return Err(Error::Domain("need target error > 0 and curvature > 0".into()));
    }
    let d = (8.0 * eps / gamma_max).sqrt();
    let ratio = 1.0 / d;
    // 1/Δ can land a few ulps above an integer (ε = 0.5, Γ = 1 gives exactly 2).
    let segments = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    };
    Ok(Granularity {
        delta_max: d,
        segments: (segments as usize).max(1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waterfall {
    pub senior: f64,
    pub junior: f64,
}

/// Two-tier waterfall with senior cap `cap`.
pub fn eval_waterfall(inflow: f64, cap: f64) -> Result<Waterfall> {
    if !(inflow >= 0.0) || !(cap >= 0.0) {
        return Err(Error::Domain("inflow and cap must be nonnegative".into()));
    }
    let senior = inflow.min(cap);
    Ok(Waterfall {
        senior,
        junior: inflow - senior,
    })
}

pub fn call_payoff(x: f64, strike: f64) -> f64 {
    (x - strike).max(0.0)
}

pub fn put_payoff(x: f64, strike: f64) -> f64 {
    (strike - x).max(0.0)
}

/// `min(max(x, floor), cap)`
pub fn collar(x: f64, floor: f64, cap: f64) -> Result<f64> {
    if floor > cap {
        return Err(Error::Domain("floor above cap".into()));
    }
    Ok(x.clamp(floor, cap))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateInput {
    Value(f64),
    Cut { stats: Box<CutStatistics>, regime: Regime },
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub label: String,
    pub weight: f64,
    pub input: StateInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    states: Vec<State>,
}

impl StateSpace {
    pub fn new(states: Vec<State>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Domain("state space is empty".into()));
        }
        if states.iter().any(|s| !(s.weight >= 0.0) || !s.weight.is_finite()) {
            return Err(Error::Domain("state weights must be nonnegative".into()));
        }
        let total: f64 = states.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::Domain(format!("state weights sum to {total}, not 1")));
        }
        let mut labels: Vec<&str> = states.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain("state labels must be unique".into()));
        }
        Ok(StateSpace { states })
    }

    /// States given directly by value.
    pub fn from_values(states: &[(&str, f64, f64)]) -> Result<Self> {
        Self::new(
            states
                .iter()
                .map(|(label, weight, value)| State {
                    label: label.to_string(),
                    weight: *weight,
                    input: StateInput::Value(*value),
                })
                .collect(),
        )
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn weights(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.weight).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AggregatorPolicy {
    ExpectationQ,
    /// Per-state SDF weights `M_s`.
    SdfPhysical { m: Vec<f64> },
    Cvar { alpha: f64 },
    /// Discrete mixture `Σ μ(u) CVaR_u` over `(u, μ(u))` pairs.
    KusuokaMix { levels: Vec<(f64, f64)> },
    WorstCase { subset: Vec<String> },
}

impl AggregatorPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            AggregatorPolicy::ExpectationQ => "expectation_Q",
            AggregatorPolicy::SdfPhysical { .. } => "sdf_physical",
            AggregatorPolicy::Cvar { .. } => "cvar",
            AggregatorPolicy::KusuokaMix { .. } => "kusuoka_mix",
            AggregatorPolicy::WorstCase { .. } => "worst_case",
        }
    }

    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        match self {
            AggregatorPolicy::ExpectationQ => Ok(()),
            AggregatorPolicy::SdfPhysical { m } => {
                if m.len() != space.states.len() {
                    return Err(Error::Domain("one SDF weight per state is required".into()));
                }
                if m.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                    return Err(Error::Domain("SDF weights must be nonnegative".into()));
                }
                Ok(())
            }
            AggregatorPolicy::Cvar { alpha } => {
                if *alpha > 0.0 && *alpha < 1.0 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("CVaR level {alpha} outside (0, 1)")))
                }
            }
            AggregatorPolicy::KusuokaMix { levels } => {
                if levels.is_empty() {
                    return Err(Error::Domain("Kusuoka mixture has no levels".into()));
                }
                if levels.iter().any(|(u, mu)| !(*u >= 0.0 && *u < 1.0) || !(*mu >= 0.0)) {
                    return Err(Error::Domain("Kusuoka levels need u in [0, 1) and mu >= 0".into()));
                }
                let total: f64 = levels.iter().map(|l| l.1).sum();
                if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                    return Err(Error::Domain(format!("Kusuoka weights sum to {total}, not 1")));
                }
                Ok(())
            }
            AggregatorPolicy::WorstCase { subset } => {
                if subset.is_empty() {
                    return Err(Error::Domain("worst-case subset is empty".into()));
                }
                for label in subset {
                    if !space.states.iter().any(|s| &s.label == label) {
                        return Err(Error::Domain(format!("unknown state {label:?} in worst-case subset")));
                    }
                }
                Ok(())
            }
        }
    }
}

/// Mean of the lowest `1 − alpha` probability mass; an atom straddling the
/// quantile contributes only its share.
pub fn cvar(values: &[f64], weights: &[f64], alpha: f64) -> Result<f64> {
    if values.len() != weights.len() || values.is_empty() {
        return Err(Error::Domain("values and weights must be non-empty and of equal length".into()));
    }
    if !(alpha >= 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("CVaR level {alpha} outside [0, 1)")));
    }
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut remaining = 1.0 - alpha;
    let (mut sum, mut taken) = (0.0, 0.0);
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let take = weights[i].min(remaining);
        sum += take * values[i];
        taken += take;
        remaining -= take;
    }
    if taken <= 0.0 {
        return Err(Error::Domain("no probability mass in the tail".into()));
    }
    Ok(sum / taken)
}

pub fn aggregate(space: &StateSpace, values: &[f64], policy: &AggregatorPolicy) -> Result<f64> {
    policy.validate(space)?;
    if values.len() != space.states.len() {
        return Err(Error::Domain("one value per state is required".into()));
    }
    let w = space.weights();
    match policy {
        AggregatorPolicy::ExpectationQ => Ok(w.iter().zip(values).map(|(w, v)| w * v).sum()),
        AggregatorPolicy::SdfPhysical { m } => Ok(w.iter().zip(m).zip(values).map(|((w, m), v)| w * m * v).sum()),
        AggregatorPolicy::Cvar { alpha } => cvar(values, &w, *alpha),
        AggregatorPolicy::KusuokaMix { levels } => {
            let mut total = 0.0;
            for (u, mu) in levels {
                if *mu > 0.0 {
                    total += mu * cvar(values, &w, *u)?;
                }
            }
            Ok(total)
        }
        AggregatorPolicy::WorstCase { subset } => Ok(space
            .states
            .iter()
            .zip(values)
            .filter(|(s, _)| subset.contains(&s.label))
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SclOutcome {
    /// Canonical (input) state order.
    pub per_state: Vec<(String, f64)>,
    pub aggregate: f64,
}

/// Values every state through the cut engine, then aggregates.
pub fn scl_evaluate(space: &StateSpace, policy: &AggregatorPolicy, cfg: &SolverConfig, tau: f64) -> Result<SclOutcome> {
    policy.validate(space)?;
    let values: Vec<f64> = space
        .states
        .par_iter()
        .map(|s| match &s.input {
            StateInput::Value(v) => Ok(*v),
            StateInput::Cut { stats, regime } => cut::evaluate(stats, *regime, cfg, tau).map(|r| r.w),
        })
        .collect::<Result<_>>()?;
    let aggregate = aggregate(space, &values, policy)?;
    Ok(SclOutcome {
        per_state: space.states.iter().map(|s| s.label.clone()).zip(values).collect(),
        aggregate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub aggregate: f64,
    pub resolution: usize,
    pub rounds: usize,
    pub last_change: f64,
}

/// Doubles `resolution` from `start` until the aggregate moves by less than `tau`.
pub fn refine_until(
    mut evaluate: impl FnMut(usize) -> Result<f64>,
    start: usize,
    tau: f64,
    max_rounds: usize,
) -> Result<Refinement> {
    if !(tau > 0.0) || start < 1 {
        return Err(Error::Domain("refinement needs tau > 0 and a positive start".into()));
    }
    let mut resolution = start;
    let mut current = evaluate(resolution)?;
    for round in 1..=max_rounds {
        resolution *= 2;
        let next = evaluate(resolution)?;
        let change = (next - current).abs();
        current = next;
        if change < tau {
            return Ok(Refinement {
                aggregate: current,
                resolution,
                rounds: round,
                last_change: change,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_rounds,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_on_three_knots() {
        let f = PwaFunction::uniform(|x| x * x, 0.0, 1.0, 2).unwrap();
        assert_eq!(f.values(), &[0.0, 0.25, 1.0]);
        assert_eq!(f.eval(0.25).unwrap(), 0.125);
        assert_eq!(f.eval(0.5).unwrap(), 0.25);
        assert!(f.eval(1.5).is_err());
        assert!(PwaFunction::build(&[(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(PwaFunction::build(&[(1.0, 1.0), (0.0, 2.0)]).is_err());
    }

    #[test]
    fn granularity_rows() {
        let g = delta_max(0.01, 1.0).unwrap();
        assert!((g.delta_max - 0.2828).abs() < 1e-4);
        assert_eq!(g.segments, 4);
        assert_eq!(delta_max(0.001, 5.0).unwrap().segments, 25);
        assert_eq!(delta_max(0.05, 0.5).unwrap().segments, 2);
        assert_eq!(pwa_error_bound(0.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn waterfall_rows() {
        assert_eq!(eval_waterfall(150.0, 100.0).unwrap(), Waterfall { senior: 100.0, junior: 50.0 });
        assert_eq!(eval_waterfall(60.0, 100.0).unwrap(), Waterfall { senior: 60.0, junior: 0.0 });
        assert!(eval_waterfall(-1.0, 100.0).is_err());
    }

    #[test]
    fn cds_aggregates() {
        let space = StateSpace::from_values(&[("none", 0.95, -1.0), ("one", 0.04, 59.0), ("two", 0.01, 89.0)]).unwrap();
        let v = [-1.0, 59.0, 89.0];
        assert_eq!(aggregate(&space, &v, &AggregatorPolicy::ExpectationQ).unwrap(), 2.3);
        assert_eq!(aggregate(&space, &v, &AggregatorPolicy::Cvar { alpha: 0.95 }).unwrap(), -1.0);
        let worst = AggregatorPolicy::WorstCase { subset: vec!["one".into(), "two".into()] };
        assert_eq!(aggregate(&space, &v, &worst).unwrap(), 59.0);
        assert!(aggregate(&space, &v, &AggregatorPolicy::WorstCase { subset: vec![] }).is_err());
    }

    #[test]
    fn atom_splitting() {
        // Tail mass 0.5 takes all of 0 (0.3) and 0.2 of 10.
        assert!((cvar(&[10.0, 0.0], &[0.7, 0.3], 0.5).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn refinement_stops() {
        let r = refine_until(|n| Ok(1.0 / n as f64), 1, 0.1, 10).unwrap();
        assert_eq!(r.resolution, 16);
        assert!(refine_until(|_| Ok(0.0), 1, 0.0, 10).is_err());
    }
}
