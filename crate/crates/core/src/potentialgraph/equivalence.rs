use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Gauge, PotentialGraph, SpanningForest};
use crate::error::Result;
use crate::groups::{distance, project_to_so3, sample_element, GroupElement, GroupKind};

const SAMPLED_STARTS: usize = 64;
const REFINE_STEPS: usize = 100;
const SAMPLE_SEED: u64 = 0x70_72_73_6f;

/// How the root gauge of each component was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GaugeSearch {
    /// Every candidate root gauge was tried (finite groups).
    Enumerated,
    /// The group is abelian, so any root gauge works.
    Abelian,
    /// Root gauge solved from holonomy axes (SO(3)).
    Aligned,
    /// SO(3) fallback: sampled starts with local refinement. A `None` result
    /// after this search may be a false negative.
    Sampled,
}

impl GaugeSearch {
    /// Whether a negative answer from this search is conclusive.
    pub fn is_exhaustive(self) -> bool {
        !matches!(self, GaugeSearch::Sampled)
    }
}

/// A gauge `γ` with `apply_gauge(a, γ) ≈ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeMatch {
    pub gauge: Gauge,
    /// Largest edgewise distance between `apply_gauge(a, γ)` and `b`.
    pub max_residual: f64,
    /// Weakest search used over all components.
    pub search: GaugeSearch,
}

struct Component {
    root: usize,
    vertices: Vec<usize>,
    edges: Vec<usize>,
    non_tree: Vec<usize>,
}

fn components(g: &PotentialGraph, forest: &SpanningForest) -> Vec<Component> {
    let mut comps: Vec<Component> = forest
        .roots
        .iter()
        .map(|&root| Component {
            root,
            vertices: Vec::new(),
            edges: Vec::new(),
            non_tree: Vec::new(),
        })
        .collect();
    for &x in &forest.order {
        comps[forest.component[x]].vertices.push(x);
    }
    for (i, e) in g.edges().iter().enumerate() {
        let c = &mut comps[forest.component[e.u]];
        c.edges.push(i);
        if !forest.tree_edge[i] {
            c.non_tree.push(i);
        }
    }
    comps
}

/// Fills `gamma` on one component from the root value, following the tree.
fn propagate_gauge(
    a: &PotentialGraph,
    b: &PotentialGraph,
    forest: &SpanningForest,
    comp: &Component,
    root_value: GroupElement,
    gamma: &mut [GroupElement],
) -> Result<()> {
    gamma[comp.root] = root_value;
    for &x in &comp.vertices {
        if let Some((p, _)) = forest.parent[x] {
            // ψ'_px = γ_p⁻¹ ψ_px γ_x  ⇒  γ_x = ψ_px⁻¹ γ_p ψ'_px
            let psi = a.potential(p, x)?;
            let psi_b = b.potential(p, x)?;
            gamma[x] = psi.inverse().compose(&gamma[p])?.compose(&psi_b)?;
        }
    }
    Ok(())
}

fn component_residual(a: &PotentialGraph, b: &PotentialGraph, comp: &Component, gamma: &[GroupElement]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &i in &comp.edges {
        let e = &a.edges()[i];
        let moved = gamma[e.u].inverse().compose(&e.psi)?.compose(&gamma[e.v])?;
        worst = worst.max(distance(&moved, &b.potential(e.u, e.v)?)?);
    }
    Ok(worst)
}

/// Path potentials `P_x` from the root along the tree: `P_child = P_parent · ψ_{parent,child}`.
fn tree_transports(
    g: &PotentialGraph,
    forest: &SpanningForest,
    comp: &Component,
) -> Result<Vec<(usize, GroupElement)>> {
    let mut out = vec![GroupElement::identity(g.kind()); g.num_vertices()];
    for &x in &comp.vertices {
        if let Some((p, _)) = forest.parent[x] {
            out[x] = out[p].compose(&g.potential(p, x)?)?;
        }
    }
    Ok(comp.vertices.iter().map(|&v| (v, out[v])).collect())
}

/// Holonomies of the fundamental cycles closed by non-tree edges, based at the root.
fn root_holonomies(g: &PotentialGraph, forest: &SpanningForest, comp: &Component) -> Result<Vec<Matrix3<f64>>> {
    let mut transport = vec![GroupElement::identity(g.kind()); g.num_vertices()];
    for (v, p) in tree_transports(g, forest, comp)? {
        transport[v] = p;
    }
    comp.non_tree
        .iter()
        .map(|&i| {
            let e = &g.edges()[i];
            let h = transport[e.u].compose(&e.psi)?.compose(&transport[e.v].inverse())?;
            Ok(*h.rotation().expect("so3 element"))
        })
        .collect()
}

/// Smallest rotation taking unit vector `from` to unit vector `to`.
fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let cross = from.cross(to);
    let dot = from.dot(to).clamp(-1.0, 1.0);
    if cross.norm() < 1e-12 {
        if dot > 0.0 {
            return Matrix3::identity();
        }
        // Half turn about any axis orthogonal to `from`.
        let helper = if from.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let axis = from.cross(&helper).normalize();
        return 2.0 * axis * axis.transpose() - Matrix3::identity();
    }
    let angle = cross.norm().atan2(dot);
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(cross), angle).matrix()
}

fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).matrix()
}

/// Candidate root gauges `x` with `x⁻¹ H_e x = H'_e`, read off the rotation axes.
fn aligned_candidates(h: &[Matrix3<f64>], h_b: &[Matrix3<f64>]) -> Vec<Matrix3<f64>> {
    let axes = |m: &Matrix3<f64>| GroupElement::so3(*m).ok().and_then(|g| g.axis_angle());
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = h
        .iter()
        .zip(h_b)
        .filter_map(|(x, y)| {
            let (ax, tx) = axes(x)?;
            let (ay, ty) = axes(y)?;
            (tx > 1e-6 && ty > 1e-6).then_some((ax, ay))
        })
        .collect();
    let Some(&(a1, a1b)) = pairs.first() else {
        return vec![Matrix3::identity()];
    };
    let second = pairs.iter().find(|(_, ab)| ab.cross(&a1b).norm() > 1e-6).copied();
    let mut out = Vec::new();
    for s1 in [1.0, -1.0] {
        // x maps the axis of H' onto the axis of H.
        let x0 = rotation_between(&a1b, &(a1 * s1));
        match second {
            None => out.push(x0),
            Some((a2, a2b)) => {
                for s2 in [1.0, -1.0] {
                    let target = x0.transpose() * (a2 * s2);
                    let p = a2b - a1b * a2b.dot(&a1b);
                    let q = target - a1b * target.dot(&a1b);
                    let phi = a1b.dot(&p.cross(&q)).atan2(p.dot(&q));
                    out.push(x0 * rotation_about(&a1b, phi));
                }
            }
        }
    }
    out
}

/// Fixed-point ascent on `Σ tr(xᵀ Hᵀ x H')` over SO(3).
fn refine(mut x: Matrix3<f64>, h: &[Matrix3<f64>], h_b: &[Matrix3<f64>]) -> Matrix3<f64> {
    for _ in 0..REFINE_STEPS {
        let grad = h.iter().zip(h_b).fold(Matrix3::zeros(), |acc, (a, b)| {
            acc + a.transpose() * x * b + a * x * b.transpose()
        });
        let next = project_to_so3(&grad);
        if (next - x).amax() < 1e-15 {
            return next;
        }
        x = next;
    }
    x
}

/// Searches for a gauge `γ` with `ψ^b_uv = γ_u⁻¹ ψ^a_uv γ_v` on every edge.
///
/// Each connected component is handled independently from a BFS tree: the tree
/// fixes `γ` once the root value is known, and non-tree edges decide the root.
/// Cyclic groups enumerate all roots; SO(2) is abelian so the identity root
/// suffices; SO(3) aligns holonomy axes and falls back to a sampled search,
/// in which case a `None` answer is not conclusive (see [`GaugeSearch`]).
pub fn are_gauge_equivalent(a: &PotentialGraph, b: &PotentialGraph, tol: f64) -> Result<Option<GaugeMatch>> {
    a.ensure_same_topology(b)?;
    let kind = a.kind();
    let forest = a.spanning_forest(None);
    let mut gamma = vec![GroupElement::identity(kind); a.num_vertices()];
    let mut max_residual: f64 = 0.0;
    let mut search = GaugeSearch::Enumerated;

    for comp in components(a, &forest) {
        let mut best: Option<(f64, GroupElement)> = None;
        let mut consider = |root: GroupElement, gamma: &mut [GroupElement]| -> Result<bool> {
            propagate_gauge(a, b, &forest, &comp, root, gamma)?;
            let r = component_residual(a, b, &comp, gamma)?;
            if best.as_ref().map_or(true, |(br, _)| r < *br) {
                best = Some((r, root));
            }
            Ok(r <= tol)
        };

        let comp_search = match kind {
            GroupKind::Cyclic(n) => {
                for k in 0..n {
                    if consider(GroupElement::cyclic(n, k as i64)?, &mut gamma)? {
                        break;
                    }
                }
                GaugeSearch::Enumerated
            }
            GroupKind::So2 => {
                consider(GroupElement::identity(kind), &mut gamma)?;
                GaugeSearch::Abelian
            }
            GroupKind::So3 => {
                let h = root_holonomies(a, &forest, &comp)?;
                let h_b = root_holonomies(b, &forest, &comp)?;
                let mut found = false;
                for x in aligned_candidates(&h, &h_b) {
                    if consider(GroupElement::so3(refine(x, &h, &h_b))?, &mut gamma)? {
                        found = true;
                        break;
                    }
                }
                if found {
                    GaugeSearch::Aligned
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
                    for _ in 0..SAMPLED_STARTS {
                        let start = *sample_element(GroupKind::So3, &mut rng).rotation().expect("so3");
                        if consider(GroupElement::so3(refine(start, &h, &h_b))?, &mut gamma)? {
                            break;
                        }
                    }
                    GaugeSearch::Sampled
                }
            }
        };
        search = search.max(comp_search);

        let (residual, root) = best.expect("at least one candidate was tried");
        if residual > tol {
            return Ok(None);
        }
        propagate_gauge(a, b, &forest, &comp, root, &mut gamma)?;
        max_residual = max_residual.max(residual);
    }

    Ok(Some(GaugeMatch {
        gauge: Gauge::new(kind, gamma)?,
        max_residual,
        search,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::random_element;

    fn ring(kind: GroupKind, n: usize, seed: u64) -> PotentialGraph {
        let mut b = PotentialGraph::builder(kind, n).unwrap();
        for i in 0..n {
            b.edge(i, (i + 1) % n, random_element(kind, seed * 1000 + i as u64))
                .unwrap();
        }
        b.edge(0, n / 2, random_element(kind, seed * 1000 + 999)).unwrap();
        b.build()
    }

    fn assert_verifies(a: &PotentialGraph, b: &PotentialGraph, m: &GaugeMatch, tol: f64) {
        let moved = a.apply_gauge(&m.gauge).unwrap();
        for e in moved.edges() {
            assert!(distance(&e.psi, &b.potential(e.u, e.v).unwrap()).unwrap() <= tol);
        }
    }

    #[test]
    fn detects_gauge_transformed_copies() {
        for kind in [GroupKind::Cyclic(5), GroupKind::So2, GroupKind::So3] {
            for seed in 0..5 {
                let a = ring(kind, 7, seed);
                let b = a.apply_gauge(&Gauge::random(kind, 7, seed + 77)).unwrap();
                let m = are_gauge_equivalent(&a, &b, 1e-9).unwrap().expect("equivalent");
                assert_verifies(&a, &b, &m, 1e-9);
            }
        }
    }

    #[test]
    fn identical_graphs_match() {
        let a = ring(GroupKind::So3, 6, 3);
        let m = are_gauge_equivalent(&a, &a, 1e-9).unwrap().unwrap();
        assert_verifies(&a, &a, &m, 1e-9);
    }

    #[test]
    fn holonomy_angle_is_an_invariant() {
        let so2 = |t: f64| GroupElement::so2(t).unwrap();
        let id = GroupElement::identity(GroupKind::So2);
        let tri = |t: f64| {
            PotentialGraph::from_edges(
                GroupKind::So2,
                3,
                [(0, 1, so2(t), 1.0), (1, 2, id, 1.0), (2, 0, id, 1.0)],
            )
            .unwrap()
        };
        assert!(are_gauge_equivalent(&tri(0.3), &tri(0.7), 1e-9).unwrap().is_none());
    }

    #[test]
    fn so3_holonomy_conjugacy_class_is_respected() {
        let id = GroupElement::identity(GroupKind::So3);
        let tri = |g: GroupElement| {
            PotentialGraph::from_edges(GroupKind::So3, 3, [(0, 1, g, 1.0), (1, 2, id, 1.0), (2, 0, id, 1.0)]).unwrap()
        };
        let a = tri(GroupElement::rotation_z(0.8));
        let axis = Vector3::new(0.3, -1.0, 0.2);
        let b = tri(GroupElement::from_axis_angle(axis, 0.8).unwrap());
        let c = tri(GroupElement::from_axis_angle(axis, 0.9).unwrap());
        assert!(are_gauge_equivalent(&a, &b, 1e-9).unwrap().is_some());
        assert!(are_gauge_equivalent(&a, &c, 1e-6).unwrap().is_none());
    }

    #[test]
    fn disconnected_components_are_independent() {
        let kind = GroupKind::So3;
        let mut builder = PotentialGraph::builder(kind, 7).unwrap();
        for (u, v) in [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)] {
            builder.edge(u, v, random_element(kind, (u * 10 + v) as u64)).unwrap();
        }
        let a = builder.build();
        let b = a.apply_gauge(&Gauge::random(kind, 7, 5)).unwrap();
        let m = are_gauge_equivalent(&a, &b, 1e-9).unwrap().unwrap();
        assert_verifies(&a, &b, &m, 1e-9);
    }

    #[test]
    fn topology_mismatch_is_an_error() {
        let a = ring(GroupKind::So2, 5, 1);
        let b = ring(GroupKind::So2, 6, 1);
        assert!(are_gauge_equivalent(&a, &b, 1e-9).is_err());
    }
}
