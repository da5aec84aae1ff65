//! Control matrices derived from share matrices, and perimeter selection.
//!
//! Three rules: majority threshold with optional look-through (A), Herfindahl
//! look-through (B and its squared variant B′), and attenuated paths (C).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{NodeId, OwnershipNetwork, Perimeter};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlOption {
    AThreshold,
    BHerfindahl,
    BPrime,
    CAttenuated,
}

impl ControlOption {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlOption::AThreshold => "A",
            ControlOption::BHerfindahl => "B",
            ControlOption::BPrime => "B_prime",
            ControlOption::CAttenuated => "C",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(ControlOption::AThreshold),
            "B" => Ok(ControlOption::BHerfindahl),
            "B_prime" | "B'" => Ok(ControlOption::BPrime),
            "C" => Ok(ControlOption::CAttenuated),
            other => Err(Error::Domain(format!("unknown control option {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRuleSpec {
    pub option: ControlOption,
    pub tau: f64,
    pub alpha: f64,
    pub normalize: bool,
    pub reachability_depth: Option<usize>,
}

impl Default for ControlRuleSpec {
    fn default() -> Self {
        ControlRuleSpec {
            option: ControlOption::AThreshold,
            tau: 0.5,
            alpha: 0.6,
            normalize: true,
            reachability_depth: None,
        }
    }
}

impl ControlRuleSpec {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        check_alpha(self.alpha)
    }

    /// Builds ω under this rule.
    pub fn apply(&self, shares: &OwnershipNetwork) -> Result<ControlMatrix> {
        self.validate()?;
        match self.option {
            ControlOption::AThreshold => threshold_control(shares, self.tau, self.reachability_depth, self.normalize),
            ControlOption::BHerfindahl => herfindahl_control(shares, HerfindahlVariant::B, self.normalize),
            ControlOption::BPrime => herfindahl_control(shares, HerfindahlVariant::BPrime, self.normalize),
            ControlOption::CAttenuated => attenuated_control(shares, self.alpha, self.normalize),
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("threshold {tau} outside (0, 1]")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("attenuation {alpha} outside (0, 1)")))
    }
}

/// Control weights; `weights[(i, j)]` is the control of `i` over `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMatrix {
    pub nodes: Vec<NodeId>,
    pub weights: DMatrix<f64>,
}

impl ControlMatrix {
    pub fn get(&self, owner: &NodeId, owned: &NodeId) -> Option<f64> {
        let i = self.nodes.binary_search(owner).ok()?;
        let j = self.nodes.binary_search(owned).ok()?;
        Some(self.weights[(i, j)])
    }

    pub fn column(&self, owned: &NodeId) -> Option<Vec<f64>> {
        let j = self.nodes.binary_search(owned).ok()?;
        Some(self.weights.column(j).iter().copied().collect())
    }
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let s: f64 = col.iter().sum();
        if s != 0.0 {
            col.iter_mut().for_each(|x| *x /= s);
        }
    }
}

/// Option A: `ω_ij = 1{s_ij ≥ τ}`, optionally closed under majority chains up to `depth` hops.
pub fn threshold_control(
    shares: &OwnershipNetwork,
    tau: f64,
    depth: Option<usize>,
    normalize: bool,
) -> Result<ControlMatrix> {
    check_tau(tau)?;
    let n = shares.len();
    let mut direct = DMatrix::<f64>::zeros(n, n);
    for (i, j, s) in shares.shares().iter() {
        if i != j && s >= tau {
            direct[(i, j)] = 1.0;
        }
    }
    let mut reach = direct.clone();
    let mut frontier = direct.clone();
    for _ in 1..depth.unwrap_or(1) {
        let mut next = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                if frontier[(i, k)] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    if direct[(k, j)] != 0.0 && i != j {
                        next[(i, j)] = 1.0;
                    }
                }
            }
        }
        let mut grew = false;
        for (r, x) in reach.iter_mut().zip(next.iter()) {
            if *x != 0.0 && *r == 0.0 {
                *r = 1.0;
                grew = true;
            }
        }
        if !grew {
            break;
        }
        frontier = next;
    }
    if normalize {
        normalize_columns(&mut reach);
    }
    Ok(ControlMatrix {
        nodes: shares.nodes().to_vec(),
        weights: reach,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HerfindahlVariant {
    /// `ω = s·H`
    B,
    /// `ω = s²/H`
    BPrime,
}

/// Option B / B′. Columns summing below one are completed by a dispersed
/// holder carrying the residual; it enters `H_j` but is not reported in ω.
pub fn herfindahl_control(
    shares: &OwnershipNetwork,
    variant: HerfindahlVariant,
    normalize: bool,
) -> Result<ControlMatrix> {
    let n = shares.len();
    let s = shares.shares().to_dense();
    let mut w = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let col = s.column(j);
        let total: f64 = col.iter().sum();
        if total == 0.0 {
            continue;
        }
        let residual = (1.0 - total).max(0.0);
        let h = col.iter().map(|x| x * x).sum::<f64>() + residual * residual;
        for i in 0..n {
            let sij = col[i];
            w[(i, j)] = match variant {
                HerfindahlVariant::B => sij * h,
                HerfindahlVariant::BPrime => sij * sij / h,
            };
        }
    }
    if normalize {
        normalize_columns(&mut w);
    }
    Ok(ControlMatrix {
        nodes: shares.nodes().to_vec(),
        weights: w,
    })
}

/// Option C: `W(α) = S (I − αS)^-1`.
pub fn attenuated_control(shares: &OwnershipNetwork, alpha: f64, normalize: bool) -> Result<ControlMatrix> {
    check_alpha(alpha)?;
    let s = shares.shares();
    let scaled = s.scale(alpha);
    let norm_bound = scaled.norm_1().min(scaled.norm_inf());
    if norm_bound >= 1.0 && linalg::power_iteration_abs(&scaled, crate::cut::POWER_ITERATIONS) >= 1.0 {
        return Err(Error::Stability(format!(
            "attenuated series diverges: rho(alpha S) bound {norm_bound:.6} >= 1"
        )));
    }
    let inv = linalg::inverse(&linalg::shifted_identity_minus(&scaled, 1.0))
        .ok_or_else(|| Error::Stability("I - alpha S is singular".into()))?;
    let mut w = s.to_dense() * inv;
    if normalize {
        normalize_columns(&mut w);
    }
    Ok(ControlMatrix {
        nodes: shares.nodes().to_vec(),
        weights: w,
    })
}

/// Truncated series `Σ_{k=1..K} α^{k−1} S^k`.
pub fn attenuated_series(shares: &SparseMatrix, alpha: f64, terms: usize) -> DMatrix<f64> {
    let s = shares.to_dense();
    let n = s.nrows();
    let mut total = DMatrix::<f64>::zeros(n, n);
    let mut term = s.clone();
    for _ in 0..terms {
        total += &term;
        term = (&term * &s) * alpha;
    }
    total
}

/// Induced ∞-norm bound on the gap between [`attenuated_series`] with `terms`
/// terms and the closed form: `max(1, ‖S‖) · ‖αS‖^K / (1 − ‖αS‖)`.
pub fn attenuated_tail_bound(shares: &SparseMatrix, alpha: f64, terms: usize) -> Option<f64> {
    let q = alpha * shares.norm_inf();
    if q >= 1.0 {
        return None;
    }
    let lead = shares.norm_inf().max(1.0);
    Some(lead * q.powi(terms as i32) / (1.0 - q))
}

/// Smallest perimeter containing `seed` that is closed under
/// `Σ_{i∈P} ω_ij ≥ τ_P ⇒ j ∈ P`; candidates are visited in canonical order.
pub fn select_perimeter(omega: &ControlMatrix, seed: &Perimeter, tau_p: f64) -> Result<Perimeter> {
    check_tau(tau_p)?;
    let n = omega.nodes.len();
    let mut inside = vec![false; n];
    for id in seed.members() {
        let k = omega
            .nodes
            .binary_search(id)
            .map_err(|_| Error::Membership(format!("seed member {id} not in control matrix")))?;
        inside[k] = true;
    }
    loop {
        let mut changed = false;
        for j in 0..n {
            if inside[j] {
                continue;
            }
            let weight: f64 = (0..n).filter(|&i| inside[i]).map(|i| omega.weights[(i, j)]).sum();
            if weight >= tau_p {
                inside[j] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(Perimeter::new(
        omega
            .nodes
            .iter()
            .zip(inside)
            .filter(|(_, keep)| *keep)
            .map(|(id, _)| id.clone()),
    ))
}
