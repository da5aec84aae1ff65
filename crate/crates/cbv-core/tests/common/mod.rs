#![allow(dead_code)]

use std::collections::BTreeMap;

use cbv_core::cut::CutStatistics;
use cbv_core::network::{partition, BlockPartition, NodeId, NodePrimitives, OwnershipNetwork, Perimeter};
use cbv_core::sparse::SparseMatrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn node_ids(n: usize) -> Vec<NodeId> {
    (0..n).map(|k| NodeId::new(format!("n{k:02}")).unwrap()).collect()
}

/// Sparse share matrix without self-holdings; every column sums to at most `budget`.
pub fn random_shares(rng: &mut ChaCha8Rng, n: usize, density: f64, budget: f64) -> SparseMatrix {
    let mut t = Vec::new();
    for j in 0..n {
        let mut picks: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            if i != j && rng.random_bool(density) {
                picks.push((i, rng.random_range(0.05..1.0)));
            }
        }
        let total: f64 = picks.iter().map(|p| p.1).sum();
        if total == 0.0 {
            continue;
        }
        let col_total = rng.random_range(0.0..budget);
        t.extend(picks.into_iter().map(|(i, w)| (i, j, w / total * col_total)));
    }
    SparseMatrix::from_triplets(n, n, t).unwrap()
}

pub struct FullInstance {
    pub network: OwnershipNetwork,
    pub b: Vec<f64>,
    /// Consistent equity values `v = (I − O)^-1 b`.
    pub v: Vec<f64>,
}

impl FullInstance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let shares = random_shares(rng, n, 0.4, 0.8);
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..100.0)).collect();
        let a = DMatrix::identity(n, n) - shares.to_dense();
        let v = a.lu().solve(&DVector::from_vec(b.clone())).unwrap();
        FullInstance {
            network: OwnershipNetwork::from_matrix(node_ids(n), shares).unwrap(),
            b,
            v: v.iter().copied().collect(),
        }
    }

    pub fn primitives(&self) -> NodePrimitives {
        let ids = self.network.nodes();
        NodePrimitives {
            b: ids.iter().cloned().zip(self.b.iter().copied()).collect::<BTreeMap<_, _>>(),
            v: ids.iter().cloned().zip(self.v.iter().copied()).collect::<BTreeMap<_, _>>(),
        }
    }

    pub fn perimeter(&self, members: &[usize]) -> Perimeter {
        Perimeter::new(members.iter().map(|&k| self.network.nodes()[k].clone()))
    }

    pub fn partition(&self, members: &[usize]) -> BlockPartition {
        partition(&self.network, &self.perimeter(members)).unwrap()
    }

    pub fn stats(&self, members: &[usize]) -> CutStatistics {
        CutStatistics::from_partition(&self.partition(members), &self.primitives()).unwrap()
    }
}

/// Random subset of `0..n` with between `min` and `n − 1` members.
pub fn random_subset(rng: &mut ChaCha8Rng, n: usize, min: usize) -> Vec<usize> {
    loop {
        let s: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        if s.len() >= min && s.len() < n {
            return s;
        }
    }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
