#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use torsor_core::groups::sample_element;
use torsor_core::{FeatureAssignment, GroupElement, GroupKind, PotentialGraph, Representation};

pub const KINDS: [GroupKind; 3] = [GroupKind::Cyclic(4), GroupKind::So2, GroupKind::So3];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random spanning tree plus `extra` chords, as `(u, v)` pairs with `u < v`.
pub fn connected_edges(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v));
    }
    let mut tries = 0;
    while edges.len() < n - 1 + extra && tries < 50 * (extra + 1) {
        tries += 1;
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        let (u, v) = (a.min(b), a.max(b));
        if u != v && !edges.contains(&(u, v)) {
            edges.push((u, v));
        }
    }
    edges
}

pub fn consistent_graph(kind: GroupKind, n: usize, extra: usize, seed: u64) -> (PotentialGraph, Vec<GroupElement>) {
    let mut r = rng(seed);
    let states: Vec<_> = (0..n).map(|_| sample_element(kind, &mut r)).collect();
    let edges = connected_edges(n, extra, &mut r);
    (PotentialGraph::from_absolute_states(&states, &edges).unwrap(), states)
}

pub fn random_graph(kind: GroupKind, n: usize, extra: usize, seed: u64) -> PotentialGraph {
    let mut r = rng(seed);
    let edges = connected_edges(n, extra, &mut r);
    let mut b = PotentialGraph::builder(kind, n).unwrap();
    for (u, v) in edges {
        let w = r.random_range(0.25..2.0);
        b.weighted_edge(u, v, sample_element(kind, &mut r), w).unwrap();
    }
    b.build()
}

/// Representation used for each kind in generic tests.
pub fn test_rep(kind: GroupKind) -> Representation {
    match kind {
        GroupKind::Cyclic(_) => Representation::direct_sum(
            kind,
            vec![
                Representation::regular(kind).unwrap(),
                Representation::standard(kind).unwrap(),
            ],
        )
        .unwrap(),
        _ => Representation::direct_sum(
            kind,
            vec![
                Representation::standard(kind).unwrap(),
                Representation::trivial(kind, 1).unwrap(),
            ],
        )
        .unwrap(),
    }
}

pub fn random_features(rep: &Representation, n: usize, seed: u64) -> FeatureAssignment {
    let mut r = rng(seed);
    FeatureAssignment::new(
        rep.clone(),
        DMatrix::from_fn(n, rep.dim(), |_, _| r.random_range(-1.0..1.0)),
    )
    .unwrap()
}

pub fn random_vector(dim: usize, seed: u64) -> DVector<f64> {
    let mut r = rng(seed);
    DVector::from_fn(dim, |_, _| r.random_range(-1.0..1.0))
}
