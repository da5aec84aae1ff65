mod common;

use cbv_core::cut::{
    self, effective_external_share, estimate_internal_values, evaluate_regime_a, evaluate_regime_b, CutStatistics,
    SolverConfig, SolverMethod,
};
use cbv_core::linalg::vec_norm;
use cbv_core::linalg::NormKind;
use cbv_core::network::ids;
use cbv_core::sparse::SparseMatrix;
use common::{node_ids, random_shares, random_subset, rel_diff, FullInstance};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn regime_a_ignores_internal_wiring(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(3..9);
        let inst = FullInstance::random(&mut r, n);
        let members = random_subset(&mut r, n, 1);
        let stats = inst.stats(&members);
        let w = evaluate_regime_a(&stats, 0.0).unwrap().w;
        let np = members.len();
        for _ in 0..5 {
            let rewired = stats.clone().with_o_pp(random_shares(&mut r, np, 0.7, 1.0)).unwrap();
            prop_assert_eq!(evaluate_regime_a(&rewired, 0.0).unwrap().w.to_bits(), w.to_bits());
        }
    }

    #[test]
    fn closed_system_values_bases(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..8);
        let inst = FullInstance::random(&mut r, n);
        let all: Vec<usize> = (0..n).collect();
        let stats = inst.stats(&all);
        let total: f64 = inst.b.iter().fold(0.0, |acc, x| acc + x);
        prop_assert_eq!(evaluate_regime_a(&stats, 0.0).unwrap().w, total);
        prop_assert_eq!(evaluate_regime_b(&stats, &SolverConfig::default(), 0.0).unwrap().w, total);
    }

    #[test]
    fn nested_perimeters_aggregate(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(4..10);
        let inst = FullInstance::random(&mut r, n);
        let q = random_subset(&mut r, n, 2);
        let split = r.random_range(1..q.len());
        let (p, rest) = q.split_at(split);
        let w = |m: &[usize]| evaluate_regime_a(&inst.stats(m), 0.0).unwrap().w;
        // Value crossing the internal cut between P and Q \ P, seen from both sides.
        let s = inst.network.shares();
        let mut internal = 0.0;
        for &i in p {
            for &k in rest {
                internal += s.get(i, k) * inst.v[k] - s.get(k, i) * inst.v[i];
                internal += s.get(k, i) * inst.v[i] - s.get(i, k) * inst.v[k];
            }
        }
        let lhs = w(&q);
        let rhs = w(p) + w(rest) - internal;
        prop_assert!(rel_diff(lhs, rhs) < 1e-9, "W(Q) = {lhs}, pieces give {rhs}");
    }

    #[test]
    fn unit_scaling_is_equivariant(seed in any::<u64>(), k in prop::sample::select(vec![0.5, 1.2, 3.0])) {
        let mut r = rng(seed);
        let n = r.random_range(2..8);
        let inst = FullInstance::random(&mut r, n);
        let stats = inst.stats(&random_subset(&mut r, n, 1));
        let scaled = cut::scale_units(k, &stats).unwrap();
        let cfg = SolverConfig::default();
        let (a, a_k) = (evaluate_regime_a(&stats, 0.0).unwrap().w, evaluate_regime_a(&scaled, 0.0).unwrap().w);
        prop_assert!(rel_diff(a_k, k * a) < 1e-12);
        let (b, b_k) = (evaluate_regime_b(&stats, &cfg, 0.0).unwrap().w, evaluate_regime_b(&scaled, &cfg, 0.0).unwrap().w);
        prop_assert!(rel_diff(b_k, k * b) < 1e-12);
    }

    #[test]
    fn regime_b_reproduces_consistent_values(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..10);
        let inst = FullInstance::random(&mut r, n);
        let stats = inst.stats(&random_subset(&mut r, n, 1));
        let a = evaluate_regime_a(&stats, 0.0).unwrap().w;
        let b = evaluate_regime_b(&stats, &SolverConfig::default(), 0.0).unwrap().w;
        prop_assert!(rel_diff(a, b) < 1e-9, "A = {a}, B = {b}");
    }

    #[test]
    fn solvers_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let np = r.random_range(1..12);
        let no = r.random_range(0..5);
        // Entries below 0.8/np keep both the row and the column norms at most 0.8.
        let cap = 0.8 / np as f64;
        let pp = SparseMatrix::from_triplets(np, np,
            (0..np).flat_map(|i| (0..np).map(move |j| (i, j))).map(|(i, j)| (i, j, r.random_range(0.0..cap))).collect::<Vec<_>>()).unwrap();
        let po = SparseMatrix::from_triplets(np, no,
            (0..np).flat_map(|i| (0..no).map(move |k| (i, k))).map(|(i, k)| (i, k, r.random_range(0.0..0.1))).collect::<Vec<_>>()).unwrap();
        let b: Vec<f64> = (0..np).map(|_| r.random_range(0.0..1.0)).collect();
        let v_o: Vec<f64> = (0..no).map(|_| r.random_range(0.0..1.0)).collect();
        let stats = CutStatistics::new(node_ids(np), ids((0..no).map(|k| format!("o{k}"))), b, v_o, po, SparseMatrix::zeros(no, np))
            .unwrap().with_o_pp(pp).unwrap();
        let eps = 1e-10;
        let solve = |m| estimate_internal_values(&stats, &SolverConfig { eps, ..SolverConfig::with_method(m) }).unwrap().v_p;
        let d = solve(SolverMethod::Direct);
        for m in [SolverMethod::Neumann, SolverMethod::IterativeKrylov] {
            let x = solve(m);
            let diff: Vec<f64> = d.iter().zip(&x).map(|(a, b)| a - b).collect();
            prop_assert!(vec_norm(&diff, NormKind::Inf) <= 10.0 * eps, "{m:?} differs by {diff:?}");
        }
    }
}

/// Gauge rewiring `O_PP + s·x yᵀ` with `U_OP x = 0` and `yᵀ T_PO = 0`.
fn gauge_rewiring(stats: &CutStatistics, r: &mut ChaCha8Rng) -> Option<SparseMatrix> {
    let pp = stats.o_pp.as_ref().unwrap().to_dense();
    let np = pp.nrows();
    let a = DMatrix::identity(np, np) - &pp;
    let inv = a.try_inverse()?;
    let t = &inv * stats.o_po.to_dense();
    let u = stats.o_op.to_dense() * &inv;
    let rand_vec = |r: &mut ChaCha8Rng| DVector::from_fn(np, |_, _| r.random_range(-1.0..1.0));
    // Orthogonal projections onto ker U and ker Tᵀ.
    let x0 = rand_vec(r);
    let x = &x0 - u.transpose() * (&u * u.transpose()).try_inverse()? * (&u * &x0);
    let y0 = rand_vec(r);
    let y = &y0 - &t * (t.transpose() * &t).try_inverse()? * (t.transpose() * &y0);
    let delta = &x * y.transpose();
    let max = delta.amax();
    if max < 1e-6 {
        return None;
    }
    let min_entry = pp.iter().copied().fold(f64::INFINITY, f64::min);
    let s = 0.5 * min_entry / max;
    Some(SparseMatrix::from_dense(&(pp + delta * s)))
}

#[test]
fn regime_b_gauge_invariance() {
    let mut r = rng(7);
    let (np, no) = (6, 2);
    let mut checked = 0;
    while checked < 100 {
        let pp = SparseMatrix::from_triplets(np, np,
            (0..np).flat_map(|i| (0..np).map(move |j| (i, j))).map(|(i, j)| (i, j, r.random_range(0.02..0.08))).collect::<Vec<_>>()).unwrap();
        let po = SparseMatrix::from_triplets(np, no,
            (0..np).flat_map(|i| (0..no).map(move |k| (i, k))).map(|(i, k)| (i, k, r.random_range(0.0..0.2))).collect::<Vec<_>>()).unwrap();
        let op = SparseMatrix::from_triplets(no, np,
            (0..no).flat_map(|k| (0..np).map(move |j| (k, j))).map(|(k, j)| (k, j, r.random_range(0.0..0.2))).collect::<Vec<_>>()).unwrap();
        let b: Vec<f64> = (0..np).map(|_| r.random_range(1.0..100.0)).collect();
        let v_o: Vec<f64> = (0..no).map(|_| r.random_range(1.0..100.0)).collect();
        let stats = CutStatistics::new(node_ids(np), ids(["x", "y"]), b, v_o, po, op).unwrap().with_o_pp(pp).unwrap();
        let Some(rewired) = gauge_rewiring(&stats, &mut r) else { continue };
        let cfg = SolverConfig::default();
        let w = evaluate_regime_b(&stats, &cfg, 0.0).unwrap().w;
        let moved = stats.clone().with_o_pp(rewired.clone()).unwrap();
        let w2 = evaluate_regime_b(&moved, &cfg, 0.0).unwrap().w;
        assert_ne!(&rewired, stats.o_pp.as_ref().unwrap());
        assert!(rel_diff(w, w2) < 1e-9, "W moved from {w} to {w2}");
        checked += 1;
    }
}

#[test]
fn meta_node_matches_regime_b() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = r.random_range(2..9);
        let inst = FullInstance::random(&mut r, n);
        let stats = inst.stats(&random_subset(&mut r, n, 1));
        let cfg = SolverConfig::default();
        let share = effective_external_share(&stats, &cfg).unwrap();
        let w = evaluate_regime_b(&stats, &cfg, 0.0).unwrap().w;
        assert!(rel_diff(share.w_meta, w) < 1e-12);
        assert!(share.omega_eff >= 0.0);
    }
}

#[test]
fn single_node_effective_share_closed_form() {
    // P = {p} holds rho of itself; an outside owner holds d.
    for (rho, d) in [(0.0, 1.0), (0.2, 0.5), (0.5, 0.5), (0.9, 0.1), (0.6, 0.0)] {
        let stats = CutStatistics::new(
            ids(["p"]),
            ids(["o"]),
            vec![10.0],
            vec![0.0],
            SparseMatrix::zeros(1, 1),
            SparseMatrix::from_triplets(1, 1, vec![(0, 0, d)]).unwrap(),
        )
        .unwrap()
        .with_o_pp(SparseMatrix::from_triplets(1, 1, vec![(0, 0, rho)]).unwrap())
        .unwrap();
        let share = effective_external_share(&stats, &SolverConfig::default()).unwrap();
        assert!((share.omega_eff - d / (1.0 - rho)).abs() < 1e-12);
        assert!((share.e_ext - 10.0 * d / (1.0 - rho)).abs() < 1e-9);
    }
}
