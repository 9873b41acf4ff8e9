//! Feature assignments and the associated vector sheaf.
//!
//! A feature assignment `f: V → F` is stored as a dense matrix whose row `v`
//! is `f_v`, expressed in the identity gauge. A global section is an
//! assignment with `f_u = ρ(ψ_uv) f_v` on every edge.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TorsorError};
use crate::groups::{distance, GroupElement, Representation};
use crate::potentialgraph::{Gauge, PotentialGraph};

/// A map `V → F` for a representation `ρ` on `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureAssignment {
    rep: Representation,
    values: DMatrix<f64>,
}

impl FeatureAssignment {
    pub fn new(rep: Representation, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != rep.dim() {
            return Err(TorsorError::DimensionMismatch {
                expected: rep.dim(),
                found: values.ncols(),
            });
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(TorsorError::InvalidArgument("feature values must be finite".into()));
        }
        Ok(Self { rep, values })
    }

    pub fn zeros(rep: Representation, num_vertices: usize) -> Self {
        let dim = rep.dim();
        Self {
            rep,
            values: DMatrix::zeros(num_vertices, dim),
        }
    }

    pub fn from_rows(rep: Representation, rows: &[DVector<f64>]) -> Result<Self> {
        let dim = rep.dim();
        let mut values = DMatrix::zeros(rows.len(), dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(TorsorError::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            values.set_row(i, &r.transpose());
        }
        Self::new(rep, values)
    }

    pub fn rep(&self) -> &Representation {
        &self.rep
    }

    pub fn dim(&self) -> usize {
        self.rep.dim()
    }

    pub fn num_vertices(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn row(&self, v: usize) -> DVector<f64> {
        self.values.row(v).transpose()
    }

    pub fn set_row(&mut self, v: usize, value: &DVector<f64>) {
        self.values.set_row(v, &value.transpose());
    }

    /// Same representation, new values of the same shape.
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        Self::new(self.rep.clone(), values)
    }

    pub(crate) fn check_against(&self, g: &PotentialGraph) -> Result<()> {
        g.kind().ensure_same(self.rep.group())?;
        if self.num_vertices() != g.num_vertices() {
            return Err(TorsorError::DimensionMismatch {
                expected: g.num_vertices(),
                found: self.num_vertices(),
            });
        }
        Ok(())
    }
}

/// `ρ(ψ_uv)` for every stored edge, in edge order.
pub(crate) fn edge_transports(g: &PotentialGraph, rep: &Representation) -> Result<Vec<DMatrix<f64>>> {
    g.edges().iter().map(|e| rep.matrix(&e.psi)).collect()
}

/// Outcome of [`is_global_section`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionCheck {
    pub is_section: bool,
    /// `max_e ‖f_u − ρ(ψ_uv) f_v‖₂`.
    pub max_residual: f64,
}

fn edge_residuals(g: &PotentialGraph, f: &FeatureAssignment) -> Result<Vec<DVector<f64>>> {
    f.check_against(g)?;
    let transports = edge_transports(g, f.rep())?;
    Ok(g.edges()
        .iter()
        .zip(&transports)
        .map(|(e, r)| f.row(e.u) - r * f.row(e.v))
        .collect())
}

pub fn is_global_section(g: &PotentialGraph, f: &FeatureAssignment, tol: f64) -> Result<SectionCheck> {
    let max_residual = edge_residuals(g, f)?.iter().map(|r| r.norm()).fold(0.0, f64::max);
    Ok(SectionCheck {
        is_section: max_residual <= tol,
        max_residual,
    })
}

/// The frustration `η_F = (1/vol) Σ_{u,v} w_uv ‖f_u − ρ(ψ_uv) f_v‖²`, one term per undirected edge.
///
/// `vol` is the weighted degree sum, `2|E|` at unit weights.
pub fn frustration(g: &PotentialGraph, f: &FeatureAssignment) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(TorsorError::EmptyGraph);
    }
    let residuals = edge_residuals(g, f)?;
    let total: f64 = g
        .edges()
        .iter()
        .zip(&residuals)
        .map(|(e, r)| e.weight * r.norm_squared())
        .sum();
    Ok(total / g.volume())
}

/// Exact gradient of [`frustration`] with respect to every entry of `f`.
pub fn frustration_gradient(g: &PotentialGraph, f: &FeatureAssignment) -> Result<DMatrix<f64>> {
    if g.num_edges() == 0 {
        return Err(TorsorError::EmptyGraph);
    }
    f.check_against(g)?;
    let transports = edge_transports(g, f.rep())?;
    let scale = 2.0 / g.volume();
    let mut grad = DMatrix::zeros(f.num_vertices(), f.dim());
    for (e, r) in g.edges().iter().zip(&transports) {
        let residual = f.row(e.u) - r * f.row(e.v);
        let du = &residual * (scale * e.weight);
        // ρ(ψ_vu) = ρ(ψ_uv)ᵀ for orthogonal ρ.
        let dv = r.transpose() * &residual * (-scale * e.weight);
        let mut row_u = grad.row_mut(e.u);
        row_u += du.transpose();
        let mut row_v = grad.row_mut(e.v);
        row_v += dv.transpose();
    }
    Ok(grad)
}

/// Re-expresses features in a new gauge: `f'_v = ρ(γ_v)⁻¹ f_v`.
pub fn apply_gauge_features(f: &FeatureAssignment, gauge: &Gauge) -> Result<FeatureAssignment> {
    f.rep().group().ensure_same(gauge.kind())?;
    if gauge.len() != f.num_vertices() {
        return Err(TorsorError::DimensionMismatch {
            expected: f.num_vertices(),
            found: gauge.len(),
        });
    }
    let mut out = f.clone();
    for v in 0..f.num_vertices() {
        let m = f.rep().matrix(&gauge[v])?;
        out.set_row(v, &(m.transpose() * f.row(v)));
    }
    Ok(out)
}

/// Result of [`transport_from_root`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transported {
    pub features: FeatureAssignment,
    /// Largest edge residual of the result; nonzero only for inconsistent potentials.
    pub max_residual: f64,
}

/// Distances, parents and visit order.
type BfsTree = (Vec<usize>, Vec<Option<usize>>, Vec<usize>);

/// BFS distances and lowest-id parents from `root`.
fn bfs_tree(g: &PotentialGraph, root: usize) -> Result<BfsTree> {
    let n = g.num_vertices();
    if root >= n {
        return Err(TorsorError::InvalidArgument(format!("vertex {root} out of range")));
    }
    let mut dist = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    dist[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(x) = queue.pop_front() {
        order.push(x);
        for &(y, _) in g.neighbors(x) {
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    if order.len() != n {
        return Err(TorsorError::Disconnected);
    }
    let parent = (0..n)
        .map(|v| {
            if v == root {
                return None;
            }
            // Neighbor lists are sorted, so the first hit is the lowest id.
            g.neighbors(v).iter().map(|&(u, _)| u).find(|&u| dist[u] + 1 == dist[v])
        })
        .collect();
    Ok((dist, parent, order))
}

/// Extends a root feature to every vertex along a BFS tree: `f_u = ρ(ψ_{u,parent}) f_parent`.
pub fn transport_from_root(
    g: &PotentialGraph,
    rep: &Representation,
    root: usize,
    f_root: &DVector<f64>,
) -> Result<Transported> {
    g.kind().ensure_same(rep.group())?;
    if f_root.len() != rep.dim() {
        return Err(TorsorError::DimensionMismatch {
            expected: rep.dim(),
            found: f_root.len(),
        });
    }
    let (_, parent, order) = bfs_tree(g, root)?;
    let mut features = FeatureAssignment::zeros(rep.clone(), g.num_vertices());
    features.set_row(root, f_root);
    for &x in &order {
        if let Some(p) = parent[x] {
            let m = rep.matrix(&g.potential(x, p)?)?;
            let value = m * features.row(p);
            features.set_row(x, &value);
        }
    }
    let max_residual = if g.num_edges() == 0 {
        0.0
    } else {
        is_global_section(g, &features, 0.0)?.max_residual
    };
    Ok(Transported { features, max_residual })
}

/// Result of [`align_to_reference`].
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub features: FeatureAssignment,
    /// Largest distance from identity of the fundamental-cycle holonomies seen
    /// from the reference; zero for consistent potentials.
    pub max_holonomy_residual: f64,
}

/// Transports every feature into the frame of reference vertex `r` along BFS
/// shortest paths (lowest-id parent on ties).
///
/// With `Q_r = 1` and `Q_x = Q_parent · ψ_{parent,x}`, the aligned feature is
/// `ρ(Q_x) f_x`. A global section is mapped to the constant assignment `f_r`.
pub fn align_to_reference(g: &PotentialGraph, f: &FeatureAssignment, r: usize) -> Result<Aligned> {
    f.check_against(g)?;
    let (_, parent, order) = bfs_tree(g, r)?;
    let mut path = vec![GroupElement::identity(g.kind()); g.num_vertices()];
    for &x in &order {
        if let Some(p) = parent[x] {
            path[x] = path[p].compose(&g.potential(p, x)?)?;
        }
    }
    let mut out = f.clone();
    for (v, q) in path.iter().enumerate() {
        let m = f.rep().matrix(q)?;
        out.set_row(v, &(m * f.row(v)));
    }
    let mut max_holonomy_residual: f64 = 0.0;
    for e in g.edges() {
        let is_tree = parent[e.v] == Some(e.u) || parent[e.u] == Some(e.v);
        if is_tree {
            continue;
        }
        let h = path[e.u].compose(&e.psi)?.compose(&path[e.v].inverse())?;
        max_holonomy_residual = max_holonomy_residual.max(distance(&h, &GroupElement::identity(g.kind()))?);
    }
    Ok(Aligned {
        features: out,
        max_holonomy_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

/// Columnwise mean or max over vertices.
pub fn pool(f: &FeatureAssignment, mode: PoolMode) -> Result<DVector<f64>> {
    let n = f.num_vertices();
    if n == 0 {
        return Err(TorsorError::InsufficientData("cannot pool an empty assignment".into()));
    }
    let values = f.values();
    Ok(match mode {
        PoolMode::Mean => values.row_sum().transpose() / n as f64,
        PoolMode::Max => DVector::from_iterator(
            f.dim(),
            values
                .column_iter()
                .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        ),
    })
}
