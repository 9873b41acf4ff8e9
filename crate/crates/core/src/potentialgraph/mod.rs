//! Undirected graphs carrying antisymmetric group-valued edge potentials.
//!
//! Each undirected edge is stored once, in the orientation `u < v`, together
//! with `ψ_uv`. The reverse orientation is always computed as `ψ_uv⁻¹`, so
//! antisymmetry holds by construction. `ψ_uv` maps the frame at `v` into the
//! frame at `u`: a consistent assignment of states satisfies `g_u = ψ_uv g_v`.

mod equivalence;
mod gauge;

use std::collections::{HashMap, VecDeque};

use crate::error::{Result, TorsorError};
use crate::groups::{distance, GroupElement, GroupKind};

pub use equivalence::{are_gauge_equivalent, GaugeMatch, GaugeSearch};
pub use gauge::Gauge;

/// An undirected edge stored in canonical orientation `u < v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    /// `ψ_uv`.
    pub psi: GroupElement,
    pub weight: f64,
}

/// A graph with an edge potential `ψ: E → G`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialGraph {
    kind: GroupKind,
    num_vertices: usize,
    edges: Vec<Edge>,
    index: HashMap<(usize, usize), usize>,
    /// Per vertex: `(neighbor, edge index)` sorted by neighbor id.
    adjacency: Vec<Vec<(usize, usize)>>,
}

/// Incremental construction of a [`PotentialGraph`].
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    kind: GroupKind,
    num_vertices: usize,
    edges: Vec<Edge>,
    index: HashMap<(usize, usize), usize>,
}

impl GraphBuilder {
    /// Adds an edge with unit weight; `psi` is `ψ_uv` for the orientation given.
    pub fn edge(&mut self, u: usize, v: usize, psi: GroupElement) -> Result<&mut Self> {
        self.weighted_edge(u, v, psi, 1.0)
    }

    pub fn weighted_edge(&mut self, u: usize, v: usize, psi: GroupElement, weight: f64) -> Result<&mut Self> {
        self.kind.ensure_same(psi.kind())?;
        if u >= self.num_vertices || v >= self.num_vertices {
            return Err(TorsorError::InvalidGraph(format!(
                "edge ({u}, {v}) references a vertex outside 0..{}",
                self.num_vertices
            )));
        }
        if u == v {
            return Err(TorsorError::InvalidGraph(format!("self-loop at vertex {u}")));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(TorsorError::InvalidGraph(format!(
                "edge ({u}, {v}) has non-positive weight {weight}"
            )));
        }
        let (a, b, psi) = if u < v { (u, v, psi) } else { (v, u, psi.inverse()) };
        if self.index.contains_key(&(a, b)) {
            return Err(TorsorError::InvalidGraph(format!("duplicate edge ({a}, {b})")));
        }
        self.index.insert((a, b), self.edges.len());
        self.edges.push(Edge {
            u: a,
            v: b,
            psi,
            weight,
        });
        Ok(self)
    }

    pub fn build(self) -> PotentialGraph {
        let mut adjacency = vec![Vec::new(); self.num_vertices];
        for (i, e) in self.edges.iter().enumerate() {
            adjacency[e.u].push((e.v, i));
            adjacency[e.v].push((e.u, i));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        PotentialGraph {
            kind: self.kind,
            num_vertices: self.num_vertices,
            edges: self.edges,
            index: self.index,
            adjacency,
        }
    }
}

/// A BFS spanning forest with group states propagated from each root.
#[derive(Debug, Clone)]
pub(crate) struct SpanningForest {
    /// Per vertex: parent and the edge index used to reach it.
    pub parent: Vec<Option<(usize, usize)>>,
    pub component: Vec<usize>,
    pub roots: Vec<usize>,
    pub tree_edge: Vec<bool>,
    /// Visit order; parents precede children.
    pub order: Vec<usize>,
}

/// Result of [`PotentialGraph::is_consistent`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub consistent: bool,
    /// Largest `distance(ψ_uv·g_v, g_u)` over non-tree edges.
    pub max_residual: f64,
    pub witness: ConsistencyWitness,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConsistencyWitness {
    /// States with `g_u = ψ_uv g_v` on every edge; each forest root is the identity.
    States(Vec<GroupElement>),
    /// The first stored edge whose residual exceeds the tolerance.
    ViolatingEdge { u: usize, v: usize, residual: f64 },
}

impl PotentialGraph {
    pub fn builder(kind: GroupKind, num_vertices: usize) -> Result<GraphBuilder> {
        kind.validate()?;
        Ok(GraphBuilder {
            kind,
            num_vertices,
            edges: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Builds a graph from `(u, v, ψ_uv, weight)` tuples.
    pub fn from_edges<I>(kind: GroupKind, num_vertices: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, GroupElement, f64)>,
    {
        let mut b = Self::builder(kind, num_vertices)?;
        for (u, v, psi, w) in edges {
            b.weighted_edge(u, v, psi, w)?;
        }
        Ok(b.build())
    }

    /// The consistent potential `ψ_uv = g_u · g_v⁻¹` induced by absolute states.
    pub fn from_absolute_states(states: &[GroupElement], edges: &[(usize, usize)]) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| TorsorError::InvalidGraph("no states given".into()))?;
        let kind = first.kind();
        for s in states {
            kind.ensure_same(s.kind())?;
        }
        let mut b = Self::builder(kind, states.len())?;
        for &(u, v) in edges {
            if u >= states.len() || v >= states.len() {
                return Err(TorsorError::InvalidGraph(format!(
                    "edge ({u}, {v}) references a vertex outside 0..{}",
                    states.len()
                )));
            }
            let psi = states[u].compose(&states[v].inverse())?;
            b.edge(u, v, psi)?;
        }
        Ok(b.build())
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges in insertion order, canonical orientation.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// `(neighbor, edge index)` pairs of `v`, sorted by neighbor.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    /// `Σ_{u∼v} w_uv`.
    pub fn weighted_degree(&self, v: usize) -> f64 {
        self.adjacency[v].iter().map(|&(_, e)| self.edges[e].weight).sum()
    }

    /// `Σ_v weighted_degree(v)`, which is `2|E|` at unit weights.
    pub fn volume(&self) -> f64 {
        2.0 * self.edges.iter().map(|e| e.weight).sum::<f64>()
    }

    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.index.get(&(u.min(v), u.max(v))).copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_index(u, v).is_some()
    }

    /// `ψ_uv` for either orientation of an edge.
    pub fn potential(&self, u: usize, v: usize) -> Result<GroupElement> {
        let e = self.edge_index(u, v).ok_or(TorsorError::NotAnEdge { u, v })?;
        let psi = &self.edges[e].psi;
        Ok(if u < v { *psi } else { psi.inverse() })
    }

    /// Same topology and weights, new potentials (given in edge order).
    pub(crate) fn with_potentials(&self, potentials: Vec<GroupElement>) -> PotentialGraph {
        let mut out = self.clone();
        for (e, psi) in out.edges.iter_mut().zip(potentials) {
            e.psi = psi;
        }
        out
    }

    /// Checks `self` and `other` share group, vertex count and undirected edge set.
    pub fn ensure_same_topology(&self, other: &PotentialGraph) -> Result<()> {
        self.kind.ensure_same(other.kind)?;
        if self.num_vertices != other.num_vertices {
            return Err(TorsorError::TopologyMismatch(format!(
                "{} vs {} vertices",
                self.num_vertices, other.num_vertices
            )));
        }
        if self.edges.len() != other.edges.len() {
            return Err(TorsorError::TopologyMismatch(format!(
                "{} vs {} edges",
                self.edges.len(),
                other.edges.len()
            )));
        }
        if let Some(e) = self.edges.iter().find(|e| !other.has_edge(e.u, e.v)) {
            return Err(TorsorError::TopologyMismatch(format!(
                "edge ({}, {}) missing from second graph",
                e.u, e.v
            )));
        }
        Ok(())
    }

    /// Applies a gauge transformation: `ψ'_uv = γ_u⁻¹ ψ_uv γ_v`.
    pub fn apply_gauge(&self, gauge: &Gauge) -> Result<PotentialGraph> {
        gauge.check_against(self)?;
        let potentials = self
            .edges
            .iter()
            .map(|e| gauge[e.u].inverse().compose(&e.psi)?.compose(&gauge[e.v]))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.with_potentials(potentials))
    }

    /// Ordered product `ψ_{v0 v1} ψ_{v1 v2} ⋯ ψ_{v(k-1) v0}` around a closed walk.
    pub fn holonomy(&self, cycle: &[usize]) -> Result<GroupElement> {
        if cycle.len() < 2 {
            return Err(TorsorError::NotACycle("needs at least one step".into()));
        }
        if cycle.first() != cycle.last() {
            return Err(TorsorError::NotACycle(format!(
                "starts at {} but ends at {}",
                cycle[0],
                cycle[cycle.len() - 1]
            )));
        }
        let mut acc = GroupElement::identity(self.kind);
        for w in cycle.windows(2) {
            let psi = self
                .potential(w[0], w[1])
                .map_err(|_| TorsorError::NotACycle(format!("{} and {} are not adjacent", w[0], w[1])))?;
            acc = acc.compose(&psi)?;
        }
        Ok(acc)
    }

    /// BFS spanning forest rooted at the lowest vertex of each component
    /// (or at `preferred_root` for its own component).
    pub(crate) fn spanning_forest(&self, preferred_root: Option<usize>) -> SpanningForest {
        let n = self.num_vertices;
        let mut parent = vec![None; n];
        let mut component = vec![usize::MAX; n];
        let mut tree_edge = vec![false; self.edges.len()];
        let mut roots = Vec::new();
        let mut order = Vec::with_capacity(n);
        let starts = preferred_root.into_iter().chain(0..n);
        for start in starts {
            if component[start] != usize::MAX {
                continue;
            }
            let c = roots.len();
            roots.push(start);
            component[start] = c;
            let mut queue = VecDeque::from([start]);
            while let Some(x) = queue.pop_front() {
                order.push(x);
                for &(y, e) in &self.adjacency[x] {
                    if component[y] == usize::MAX {
                        component[y] = c;
                        parent[y] = Some((x, e));
                        tree_edge[e] = true;
                        queue.push_back(y);
                    }
                }
            }
        }
        SpanningForest {
            parent,
            component,
            roots,
            tree_edge,
            order,
        }
    }

    /// Propagates `g_child = ψ_{child,parent} g_parent` from identity roots.
    pub(crate) fn propagate_states(&self, forest: &SpanningForest) -> Result<Vec<GroupElement>> {
        let mut states = vec![GroupElement::identity(self.kind); self.num_vertices];
        for &x in &forest.order {
            if let Some((p, _)) = forest.parent[x] {
                states[x] = self.potential(x, p)?.compose(&states[p])?;
            }
        }
        Ok(states)
    }

    pub fn is_connected(&self) -> bool {
        self.num_vertices == 0 || self.spanning_forest(None).roots.len() == 1
    }

    /// Decides whether states with `g_u = ψ_uv g_v` on every edge exist.
    pub fn is_consistent(&self, tol: f64) -> Result<ConsistencyReport> {
        let forest = self.spanning_forest(None);
        let states = self.propagate_states(&forest)?;
        let mut max_residual: f64 = 0.0;
        let mut first_violation = None;
        for (i, e) in self.edges.iter().enumerate() {
            if forest.tree_edge[i] {
                continue;
            }
            let residual = distance(&e.psi.compose(&states[e.v])?, &states[e.u])?;
            max_residual = max_residual.max(residual);
            if residual > tol && first_violation.is_none() {
                first_violation = Some((e.u, e.v, residual));
            }
        }
        Ok(match first_violation {
            None => ConsistencyReport {
                consistent: true,
                max_residual,
                witness: ConsistencyWitness::States(states),
            },
            Some((u, v, residual)) => ConsistencyReport {
                consistent: false,
                max_residual,
                witness: ConsistencyWitness::ViolatingEdge { u, v, residual },
            },
        })
    }
}
