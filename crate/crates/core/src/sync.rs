//! Group and feature synchronization solvers.
//!
//! Group synchronization seeks states `g_v` with `g_u ≈ ψ_uv g_v`; solutions
//! are only defined up to a global right factor `g_v ↦ g_v h`. The group
//! objective used throughout is `Σ_e w_uv · distance(g_u, ψ_uv g_v)²`.
//! Feature synchronization minimizes the frustration over unit-norm feature
//! assignments.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, TorsorError};
use crate::groups::{distance, GroupElement, GroupKind, RepKind, Representation};
use crate::potentialgraph::PotentialGraph;
use crate::sheaf::{edge_transports, frustration, FeatureAssignment};

/// Upper bound on `n^|V|` accepted by [`solve_brute_force`].
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMethod {
    Tree,
    BruteForce,
    Spectral,
    FeatureGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyncPayload {
    States(Vec<GroupElement>),
    Features(FeatureAssignment),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncSolution {
    pub payload: SyncPayload,
    /// Group objective for states, frustration for features.
    pub objective: f64,
    pub method: SyncMethod,
    pub iterations: usize,
}

impl SyncSolution {
    pub fn states(&self) -> Option<&[GroupElement]> {
        match &self.payload {
            SyncPayload::States(s) => Some(s),
            SyncPayload::Features(_) => None,
        }
    }

    pub fn features(&self) -> Option<&FeatureAssignment> {
        match &self.payload {
            SyncPayload::Features(f) => Some(f),
            SyncPayload::States(_) => None,
        }
    }
}

/// `Σ_e w_uv · distance(g_u, ψ_uv g_v)²`.
pub fn group_objective(g: &PotentialGraph, states: &[GroupElement]) -> Result<f64> {
    if states.len() != g.num_vertices() {
        return Err(TorsorError::DimensionMismatch {
            expected: g.num_vertices(),
            found: states.len(),
        });
    }
    let mut total = 0.0;
    for e in g.edges() {
        let d = distance(&states[e.u], &e.psi.compose(&states[e.v])?)?;
        total += e.weight * d * d;
    }
    Ok(total)
}

/// Exact propagation along a BFS tree from `root`, with `g_root = 1`.
pub fn solve_tree(g: &PotentialGraph, root: usize) -> Result<SyncSolution> {
    if root >= g.num_vertices() {
        return Err(TorsorError::InvalidArgument(format!("root {root} out of range")));
    }
    let forest = g.spanning_forest(Some(root));
    if forest.roots.len() != 1 {
        return Err(TorsorError::Disconnected);
    }
    let states = g.propagate_states(&forest)?;
    let objective = group_objective(g, &states)?;
    Ok(SyncSolution {
        payload: SyncPayload::States(states),
        objective,
        method: SyncMethod::Tree,
        iterations: 0,
    })
}

/// Exhaustive minimizer of the group objective for cyclic groups.
///
/// Vertex 0 is pinned to the identity; among minimizers the lexicographically
/// smallest residue tuple wins.
pub fn solve_brute_force(g: &PotentialGraph) -> Result<SyncSolution> {
    let GroupKind::Cyclic(n) = g.kind() else {
        return Err(TorsorError::Unsupported(format!(
            "brute force needs a finite group, got {}",
            g.kind()
        )));
    };
    let nv = g.num_vertices();
    let size = (n as f64).powi(nv as i32);
    if size > BRUTE_FORCE_LIMIT {
        return Err(TorsorError::TooLarge {
            size,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if nv == 0 {
        return Ok(SyncSolution {
            payload: SyncPayload::States(Vec::new()),
            objective: 0.0,
            method: SyncMethod::BruteForce,
            iterations: 0,
        });
    }
    let edges: Vec<(usize, usize, u32, f64)> = g
        .edges()
        .iter()
        .map(|e| (e.u, e.v, e.psi.residue().expect("cyclic"), e.weight))
        .collect();
    let cost = |k: &[u32]| -> f64 {
        edges
            .iter()
            .filter(|&&(u, v, p, _)| k[u] != (p + k[v]) % n)
            .map(|&(_, _, _, w)| w)
            .sum()
    };

    let mut current = vec![0u32; nv];
    let mut best = current.clone();
    let mut best_cost = cost(&current);
    let mut visited = 1usize;
    // Odometer over vertices 1..nv, last vertex fastest, giving lexicographic order.
    'outer: loop {
        let mut i = nv - 1;
        loop {
            if i == 0 {
                break 'outer;
            }
            current[i] += 1;
            if current[i] < n {
                break;
            }
            current[i] = 0;
            i -= 1;
        }
        visited += 1;
        let c = cost(&current);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&current);
        }
    }
    let states = best
        .iter()
        .map(|&k| GroupElement::cyclic(n, k as i64))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyncSolution {
        objective: group_objective(g, &states)?,
        payload: SyncPayload::States(states),
        method: SyncMethod::BruteForce,
        iterations: visited,
    })
}

/// Settings for [`solve_spectral_so2`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub max_iters: usize,
    /// Stop when `‖W Q − Q (QᵀWQ)‖_F` falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-10,
            seed: 0,
        }
    }
}

/// `y = (W + shift·I) x` for the connection matrix with blocks `w_uv R(ψ_uv)` at `(u,v)`.
fn connection_apply(g: &PotentialGraph, blocks: &[DMatrix<f64>], shift: f64, x: &DVector<f64>) -> DVector<f64> {
    let mut y = x * shift;
    for (e, r) in g.edges().iter().zip(blocks) {
        let (u, v) = (2 * e.u, 2 * e.v);
        let xu = x.rows(u, 2);
        let xv = x.rows(v, 2);
        let to_u = r * xv * e.weight;
        let to_v = r.transpose() * xu * e.weight;
        let mut yu = y.rows_mut(u, 2);
        yu += to_u;
        let mut yv = y.rows_mut(v, 2);
        yv += to_v;
    }
    y
}

/// Block width for subspace iteration. Wider blocks converge at the ratio of the
/// first eigenvalue outside the block, which matters on long rings.
const SPECTRAL_BLOCK: usize = 16;

/// Angular synchronization via the top eigenspace of the connection matrix.
///
/// Subspace iteration on `W + d_max·I` (the shift makes every eigenvalue
/// nonnegative) with a block of up to 16 vectors. Rayleigh–Ritz deflates the
/// block to its leading pair, whose residual decides convergence; each vertex's
/// 2-vector in the leading Ritz vector is read as an angle.
pub fn solve_spectral_so2(g: &PotentialGraph, options: SpectralOptions) -> Result<SyncSolution> {
    if g.kind() != GroupKind::So2 {
        return Err(TorsorError::Unsupported(format!(
            "spectral synchronization needs so2, got {}",
            g.kind()
        )));
    }
    if g.num_vertices() == 0 {
        return Err(TorsorError::InvalidArgument("graph has no vertices".into()));
    }
    if !g.is_connected() {
        return Err(TorsorError::Disconnected);
    }
    let n2 = 2 * g.num_vertices();
    let p = SPECTRAL_BLOCK.min(n2);
    let std2 = Representation::standard(GroupKind::So2)?;
    let blocks = edge_transports(g, &std2)?;
    let shift = (0..g.num_vertices()).map(|v| g.weighted_degree(v)).fold(0.0, f64::max);
    let apply = |q: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(n2, q.ncols());
        for j in 0..q.ncols() {
            out.set_column(j, &connection_apply(g, &blocks, shift, &q.column(j).into_owned()));
        }
        out
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let start = DMatrix::from_fn(n2, p, |_, _| StandardNormal.sample(&mut rng));
    let mut q = start.qr().q();

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut lead = DVector::zeros(n2);
    while iterations < options.max_iters {
        iterations += 1;
        let z = apply(&q);
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let eig = h.symmetric_eigen();
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = order.len().min(2);
        residual = order[..top]
            .iter()
            .map(|&k| {
                let y = eig.eigenvectors.column(k);
                (&z * y - &q * y * eig.eigenvalues[k]).norm_squared()
            })
            .sum::<f64>()
            .sqrt();
        lead = &q * eig.eigenvectors.column(order[0]);
        if residual <= options.tol {
            break;
        }
        q = z.qr().q();
    }
    if residual > options.tol {
        return Err(TorsorError::ConvergenceFailure { iterations, residual });
    }
    let a = lead;

    let states = (0..g.num_vertices())
        .map(|v| {
            let (x, y) = (a[2 * v], a[2 * v + 1]);
            if x.hypot(y) < 1e-300 {
                GroupElement::so2(0.0)
            } else {
                GroupElement::so2(y.atan2(x))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyncSolution {
        objective: group_objective(g, &states)?,
        payload: SyncPayload::States(states),
        method: SyncMethod::Spectral,
        iterations,
    })
}

/// Settings for [`solve_feature_sync`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSyncOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop when the frustration falls below this value.
    pub objective_tol: f64,
    /// Stop when one step lowers the frustration by less than this, relative to its value.
    pub stall_tol: f64,
}

impl Default for FeatureSyncOptions {
    fn default() -> Self {
        Self {
            restarts: 4,
            seed: 0,
            max_iters: 50_000,
            objective_tol: 1e-14,
            stall_tol: 1e-15,
        }
    }
}

/// Per-run trace of a feature synchronization restart.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSyncRun {
    pub objective: f64,
    pub history: Vec<f64>,
}

/// Minimizes `η_F` over `‖f‖_F = 1` by projected gradient descent.
///
/// The step `0.45·vol / (2·max weighted degree)` keeps `I − step·∇²η` positive,
/// so each normalized step is a power iteration and the objective never increases.
pub fn solve_feature_sync(
    g: &PotentialGraph,
    rep: &Representation,
    options: FeatureSyncOptions,
) -> Result<SyncSolution> {
    let (solution, _) = solve_feature_sync_traced(g, rep, options)?;
    Ok(solution)
}

/// As [`solve_feature_sync`], also returning the objective history of each restart.
pub fn solve_feature_sync_traced(
    g: &PotentialGraph,
    rep: &Representation,
    options: FeatureSyncOptions,
) -> Result<(SyncSolution, Vec<FeatureSyncRun>)> {
    if g.num_edges() == 0 {
        return Err(TorsorError::EmptyGraph);
    }
    if options.restarts == 0 {
        return Err(TorsorError::InvalidArgument("at least one restart is required".into()));
    }
    g.kind().ensure_same(rep.group())?;
    let transports = edge_transports(g, rep)?;
    let vol = g.volume();
    let max_degree = (0..g.num_vertices()).map(|v| g.weighted_degree(v)).fold(0.0, f64::max);
    let step = 0.45 * vol / (2.0 * max_degree);
    let (n, d) = (g.num_vertices(), rep.dim());

    let objective_of = |f: &DMatrix<f64>| -> f64 {
        g.edges()
            .iter()
            .zip(&transports)
            .map(|(e, r)| e.weight * (f.row(e.u).transpose() - r * f.row(e.v).transpose()).norm_squared())
            .sum::<f64>()
            / vol
    };
    let gradient_of = |f: &DMatrix<f64>| -> DMatrix<f64> {
        let mut grad = DMatrix::zeros(n, d);
        let scale = 2.0 / vol;
        for (e, r) in g.edges().iter().zip(&transports) {
            let res = f.row(e.u).transpose() - r * f.row(e.v).transpose();
            let mut gu = grad.row_mut(e.u);
            gu += (&res * (scale * e.weight)).transpose();
            let mut gv = grad.row_mut(e.v);
            gv -= (r.transpose() * &res * (scale * e.weight)).transpose();
        }
        grad
    };

    let mut runs = Vec::with_capacity(options.restarts);
    let mut best: Option<(f64, usize, DMatrix<f64>, usize)> = None;
    for restart in 0..options.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed.wrapping_mul(0x9E37_79B9).wrapping_add(restart as u64));
        let mut f = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        f /= f.norm();
        let mut value = objective_of(&f);
        let mut history = vec![value];
        let mut iters = 0;
        while iters < options.max_iters && value > options.objective_tol {
            let mut next = &f - gradient_of(&f) * step;
            next /= next.norm();
            let next_value = objective_of(&next);
            iters += 1;
            let stalled = value - next_value <= options.stall_tol * value;
            f = next;
            value = next_value;
            history.push(value);
            if stalled {
                break;
            }
        }
        let better = best
            .as_ref()
            .map_or(true, |(bv, bi, _, _)| (value, restart) < (*bv, *bi));
        if better {
            best = Some((value, restart, f, iters));
        }
        runs.push(FeatureSyncRun {
            objective: value,
            history,
        });
    }
    let (_, _, values, iterations) = best.expect("restarts >= 1");
    let features = FeatureAssignment::new(rep.clone(), values)?;
    let objective = frustration(g, &features)?;
    Ok((
        SyncSolution {
            payload: SyncPayload::Features(features),
            objective,
            method: SyncMethod::FeatureGradient,
            iterations,
        },
        runs,
    ))
}

/// Rounds a standard-representation feature solution to group states.
///
/// Angles are read relative to vertex 0, so an exact section of a consistent
/// potential rounds to exact states. Supported for cyclic groups and SO(2)
/// with the standard representation.
pub fn round_features_to_states(f: &FeatureAssignment) -> Result<Vec<GroupElement>> {
    let kind = f.rep().group();
    if !matches!(f.rep().kind(), RepKind::Standard) || kind == GroupKind::So3 {
        return Err(TorsorError::Unsupported(format!(
            "rounding needs the standard representation of a cyclic group or so2, got {} over {kind}",
            f.rep()
        )));
    }
    let angle = |v: usize| {
        let (x, y) = (f.values()[(v, 0)], f.values()[(v, 1)]);
        (x.hypot(y) > 1e-300).then(|| y.atan2(x))
    };
    let base = (f.num_vertices() > 0).then(|| angle(0)).flatten().unwrap_or(0.0);
    (0..f.num_vertices())
        .map(|v| {
            let rel = angle(v).map_or(0.0, |a| a - base);
            match kind {
                GroupKind::Cyclic(n) => GroupElement::cyclic(n, (rel * n as f64 / TAU).round() as i64),
                _ => GroupElement::so2(rel),
            }
        })
        .collect()
}
