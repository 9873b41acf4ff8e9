//! Deterministic inputs shared by the benchmarks.

use nalgebra::DMatrix;
use torsor_core::{random_element, FeatureAssignment, GroupKind, PotentialGraph, Representation, Result};

/// Ring on `n` vertices with consistent potentials from seeded states.
pub fn consistent_ring(kind: GroupKind, n: usize, seed: u64) -> Result<PotentialGraph> {
    let states: Vec<_> = (0..n).map(|v| random_element(kind, seed + v as u64)).collect();
    let edges: Vec<_> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    PotentialGraph::from_absolute_states(&states, &edges)
}

/// Ring plus `chords` evenly spaced chords, with seeded random potentials.
pub fn frustrated_graph(kind: GroupKind, n: usize, chords: usize, seed: u64) -> Result<PotentialGraph> {
    let mut b = PotentialGraph::builder(kind, n)?;
    let mut k = seed;
    let mut next = || {
        k += 1;
        random_element(kind, k)
    };
    for v in 0..n {
        b.edge(v, (v + 1) % n, next())?;
    }
    let step = (n / (chords + 1)).max(2);
    for c in 0..chords {
        let u = (c * step) % n;
        let v = (u + n / 2) % n;
        if u != v && u.abs_diff(v) != 1 && u.abs_diff(v) != n - 1 {
            let _ = b.edge(u, v, next());
        }
    }
    Ok(b.build())
}

/// Smooth deterministic features, `sin` of a vertex/channel mix.
pub fn features(rep: &Representation, n: usize) -> Result<FeatureAssignment> {
    let values = DMatrix::from_fn(n, rep.dim(), |v, j| ((v * 7 + j * 3) as f64 * 0.37).sin());
    FeatureAssignment::new(rep.clone(), values)
}
