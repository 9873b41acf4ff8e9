//! Intertwiner bases and the gauge-equivariant torsor convolution layer.
//!
//! The layer transports each neighbor feature into the center's frame,
//! averages with edge weights, and applies a kernel `K` from the commutant
//! `{K : K ρ_in(g) = ρ_out(g) K}`:
//!
//! ```text
//! f_out(v) = K (1/c_v) Σ_{u∼v} w_uv ρ_in(ψ_vu) f_in(u),   c_v = Σ_{u∼v} w_uv
//! ```
//!
//! with `f_out(v) = K f_in(v)` at isolated vertices.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TorsorError};
use crate::groups::{sample_element, GroupElement, GroupKind, RepKind, Representation};
use crate::potentialgraph::{Gauge, PotentialGraph};
use crate::sheaf::{apply_gauge_features, edge_transports, FeatureAssignment};

/// Tolerance on `‖K ρ_in(g) − ρ_out(g) K‖_max` for accepted basis elements.
pub const INTERTWINER_TOLERANCE: f64 = 1e-8;

const SINGULAR_THRESHOLD: f64 = 1e-10;
const SO2_SAMPLES: usize = 37;
const SO3_SAMPLES: usize = 64;
const VERIFY_SAMPLES: usize = 256;
const SAMPLE_SEED: u64 = 0x7072_6f6a;
const VERIFY_SEED: u64 = 0x7665_7269;
const MAX_RESAMPLES: usize = 4;

/// Orthonormal basis (Frobenius inner product) of the commutant of two representations.
#[derive(Debug, Clone, PartialEq)]
pub struct IntertwinerBasis {
    rep_in: Representation,
    rep_out: Representation,
    basis: Vec<DMatrix<f64>>,
}

impl IntertwinerBasis {
    pub fn rep_in(&self) -> &Representation {
        &self.rep_in
    }

    pub fn rep_out(&self) -> &Representation {
        &self.rep_out
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.basis
    }

    /// `Σ c_i B_i`.
    pub fn combine(&self, coefficients: &[f64]) -> Result<DMatrix<f64>> {
        if coefficients.len() != self.basis.len() {
            return Err(TorsorError::DimensionMismatch {
                expected: self.basis.len(),
                found: coefficients.len(),
            });
        }
        let mut k = DMatrix::zeros(self.rep_out.dim(), self.rep_in.dim());
        for (c, b) in coefficients.iter().zip(&self.basis) {
            k += b * *c;
        }
        Ok(k)
    }

    /// Coordinates of `k` in the basis; fails if `k` is not in the commutant.
    pub fn project(&self, k: &DMatrix<f64>) -> Result<Vec<f64>> {
        if k.shape() != (self.rep_out.dim(), self.rep_in.dim()) {
            return Err(TorsorError::DimensionMismatch {
                expected: self.rep_out.dim() * self.rep_in.dim(),
                found: k.len(),
            });
        }
        let coefficients: Vec<f64> = self.basis.iter().map(|b| b.dot(k)).collect();
        let residual = (self.combine(&coefficients)? - k).amax();
        if residual > INTERTWINER_TOLERANCE {
            return Err(TorsorError::NotAnIntertwiner { residual });
        }
        Ok(coefficients)
    }

    /// Largest `‖K ρ_in(g) − ρ_out(g) K‖_max` over the basis and the given elements.
    pub fn max_residual(&self, elements: &[GroupElement]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for g in elements {
            let (a, b) = (self.rep_in.matrix(g)?, self.rep_out.matrix(g)?);
            for k in &self.basis {
                worst = worst.max((k * &a - &b * k).amax());
            }
        }
        Ok(worst)
    }
}

fn sampling_set(kind: GroupKind, count: usize, seed: u64) -> Vec<GroupElement> {
    match kind {
        GroupKind::Cyclic(n) => (0..n as i64)
            .map(|k| GroupElement::cyclic(n, k).expect("valid order"))
            .collect(),
        GroupKind::So2 => (0..count)
            .map(|k| GroupElement::so2(TAU * k as f64 / count as f64).expect("finite angle"))
            .collect(),
        GroupKind::So3 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| sample_element(kind, &mut rng)).collect()
        }
    }
}

/// Stacked constraints `(ρ_in(g)ᵀ ⊗ I − I ⊗ ρ_out(g)) vec(K) = 0`, column-major `vec`.
fn constraint_matrix(
    rep_in: &Representation,
    rep_out: &Representation,
    elements: &[GroupElement],
) -> Result<DMatrix<f64>> {
    let (di, dout) = (rep_in.dim(), rep_out.dim());
    let m = di * dout;
    let mut a = DMatrix::zeros(m * elements.len(), m);
    for (s, g) in elements.iter().enumerate() {
        let (ri, ro) = (rep_in.matrix(g)?, rep_out.matrix(g)?);
        let base = s * m;
        // (K ρ_in)_{p,q} = Σ_j K_{p,j} ρ_in_{j,q};  (ρ_out K)_{p,q} = Σ_i ρ_out_{p,i} K_{i,q}.
        for q in 0..di {
            for p in 0..dout {
                let row = base + q * dout + p;
                for j in 0..di {
                    a[(row, j * dout + p)] += ri[(j, q)];
                }
                for i in 0..dout {
                    a[(row, q * dout + i)] -= ro[(p, i)];
                }
            }
        }
    }
    Ok(a)
}

/// Orthonormal null space of `a`, as columns, with singular values at most
/// `SINGULAR_THRESHOLD · max column norm` treated as zero.
fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.ncols();
    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    // Compress tall systems to an m×m triangle before the SVD; singular vectors are unchanged.
    let r = if a.nrows() > m { a.clone().qr().r() } else { a.clone() };
    let svd = r.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let threshold = SINGULAR_THRESHOLD * scale.max(f64::MIN_POSITIVE);
    // `a` has at least m rows, so `v_t` is square.
    let cols: Vec<DVector<f64>> = (0..m)
        .filter(|&i| svd.singular_values[i] <= threshold)
        .map(|i| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Reproducible basis of the span of `n`'s columns: reduced row echelon form,
/// then Gram–Schmidt in order, then the first nonzero entry made positive.
fn canonicalize(n: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let k = n.ncols();
    if k == 0 {
        return Vec::new();
    }
    let mut rows = n.transpose();
    let m = rows.ncols();
    let mut pivot_row = 0;
    for col in 0..m {
        if pivot_row == k {
            break;
        }
        let (best, value) = (pivot_row..k)
            .map(|r| (r, rows[(r, col)].abs()))
            .fold((pivot_row, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if value < 1e-6 {
            continue;
        }
        rows.swap_rows(pivot_row, best);
        let p = rows[(pivot_row, col)];
        let scaled = rows.row(pivot_row) / p;
        rows.set_row(pivot_row, &scaled);
        for r in 0..k {
            if r != pivot_row {
                let factor = rows[(r, col)];
                if factor != 0.0 {
                    let updated = rows.row(r) - &scaled * factor;
                    rows.set_row(r, &updated);
                }
            }
        }
        pivot_row += 1;
    }

    let mut out: Vec<DVector<f64>> = Vec::with_capacity(k);
    for r in 0..k {
        let mut v = rows.row(r).transpose();
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&v);
                v -= q * c;
            }
        }
        let norm = v.norm();
        if norm < 1e-12 {
            continue;
        }
        v /= norm;
        for x in v.iter_mut() {
            if x.abs() < 1e-15 {
                *x = 0.0;
            }
        }
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        out.push(v);
    }
    out
}

/// Numerical commutant of `rep_in` and `rep_out`.
///
/// Constraints are sampled on all elements of a cyclic group, on `2πk/37` for
/// SO(2), and on 64 seeded rotations for SO(3). The result is then verified on
/// 256 fresh elements; on failure the sample set is doubled and the null space
/// recomputed.
pub fn commutant_basis(rep_in: &Representation, rep_out: &Representation) -> Result<IntertwinerBasis> {
    rep_in.group().ensure_same(rep_out.group())?;
    let kind = rep_in.group();
    let (di, dout) = (rep_in.dim(), rep_out.dim());
    let verify = sampling_set(kind, VERIFY_SAMPLES, VERIFY_SEED);
    let mut count = match kind {
        GroupKind::So2 => SO2_SAMPLES,
        _ => SO3_SAMPLES,
    };
    let mut last_residual = f64::INFINITY;
    for attempt in 0..MAX_RESAMPLES {
        let elements = sampling_set(kind, count, SAMPLE_SEED.wrapping_add(attempt as u64));
        let a = constraint_matrix(rep_in, rep_out, &elements)?;
        let basis = canonicalize(&null_space(&a))
            .into_iter()
            .map(|v| DMatrix::from_column_slice(dout, di, v.as_slice()))
            .collect();
        let candidate = IntertwinerBasis {
            rep_in: rep_in.clone(),
            rep_out: rep_out.clone(),
            basis,
        };
        last_residual = candidate.max_residual(&verify)?;
        if last_residual <= INTERTWINER_TOLERANCE {
            return Ok(candidate);
        }
        count *= 2;
    }
    Err(TorsorError::ConvergenceFailure {
        iterations: MAX_RESAMPLES,
        residual: last_residual,
    })
}

/// Vertexwise nonlinearity applied after aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    None,
    /// Entrywise ReLU; only equivariant for permutation representations.
    PointwiseRelu,
    /// [`norm_nonlinearity`] on every top-level block of `rep_out`.
    NormRelu {
        bias: f64,
    },
    /// `rep_out` must start with a `trivial:1` block; its value gates the other channels
    /// through a sigmoid and is passed on unchanged.
    Gated,
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::None => f.write_str("none"),
            Nonlinearity::PointwiseRelu => f.write_str("relu"),
            Nonlinearity::NormRelu { bias } => write!(f, "norm:{bias}"),
            Nonlinearity::Gated => f.write_str("gated"),
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = TorsorError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Nonlinearity::None),
            "relu" => Ok(Nonlinearity::PointwiseRelu),
            "gated" => Ok(Nonlinearity::Gated),
            _ => {
                let bias = s
                    .strip_prefix("norm:")
                    .and_then(|b| b.parse::<f64>().ok())
                    .filter(|b| b.is_finite())
                    .ok_or_else(|| {
                        TorsorError::InvalidArgument(format!(
                            "unknown nonlinearity '{s}', expected none|relu|gated|norm:<b>"
                        ))
                    })?;
                Ok(Nonlinearity::NormRelu { bias })
            }
        }
    }
}

/// `relu(‖f‖ − b) · f/‖f‖`, and zero when `‖f‖ ≤ 1e-12`.
pub fn norm_nonlinearity(f: &DVector<f64>, bias: f64) -> DVector<f64> {
    let norm = f.norm();
    if norm <= 1e-12 {
        return DVector::zeros(f.len());
    }
    f * ((norm - bias).max(0.0) / norm)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out(v) = sigmoid(scalar(v)) · vector(v)`.
pub fn gated_nonlinearity(
    scalar_field: &FeatureAssignment,
    vector_field: &FeatureAssignment,
) -> Result<FeatureAssignment> {
    if !matches!(scalar_field.rep().kind(), RepKind::Trivial(1)) {
        return Err(TorsorError::InvalidRepresentation(format!(
            "gate field must be trivial:1, got {}",
            scalar_field.rep()
        )));
    }
    scalar_field.rep().group().ensure_same(vector_field.rep().group())?;
    if scalar_field.num_vertices() != vector_field.num_vertices() {
        return Err(TorsorError::DimensionMismatch {
            expected: vector_field.num_vertices(),
            found: scalar_field.num_vertices(),
        });
    }
    let mut values = vector_field.values().clone();
    for (v, mut row) in values.row_iter_mut().enumerate() {
        row *= sigmoid(scalar_field.values()[(v, 0)]);
    }
    vector_field.with_values(values)
}

/// A single torsor convolution layer with kernel `K = Σ c_i B_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorsorConvLayer {
    basis: IntertwinerBasis,
    coefficients: Vec<f64>,
    kernel: DMatrix<f64>,
    nonlinearity: Nonlinearity,
}

fn check_nonlinearity(basis: &IntertwinerBasis, nonlinearity: Nonlinearity) -> Result<()> {
    match nonlinearity {
        Nonlinearity::PointwiseRelu if !(basis.rep_in.is_permutation() && basis.rep_out.is_permutation()) => {
            Err(TorsorError::InvalidArgument(format!(
                "pointwise relu needs trivial or regular representations, got {} -> {}",
                basis.rep_in, basis.rep_out
            )))
        }
        Nonlinearity::Gated => match basis.rep_out.blocks().first() {
            Some((_, b)) if basis.rep_out.blocks().len() > 1 && matches!(b.kind(), RepKind::Trivial(1)) => Ok(()),
            _ => Err(TorsorError::InvalidArgument(format!(
                "gated nonlinearity needs rep_out = sum:trivial:1,..., got {}",
                basis.rep_out
            ))),
        },
        Nonlinearity::NormRelu { bias } if !bias.is_finite() => {
            Err(TorsorError::InvalidArgument("norm relu bias must be finite".into()))
        }
        _ => Ok(()),
    }
}

impl TorsorConvLayer {
    pub fn new(basis: IntertwinerBasis, coefficients: Vec<f64>, nonlinearity: Nonlinearity) -> Result<Self> {
        check_nonlinearity(&basis, nonlinearity)?;
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(TorsorError::InvalidArgument("coefficients must be finite".into()));
        }
        let kernel = basis.combine(&coefficients)?;
        Ok(Self {
            basis,
            coefficients,
            kernel,
            nonlinearity,
        })
    }

    /// Coefficients uniform in `[−s, s]`, `s = 1/sqrt(basis dim · dim_in)`.
    pub fn random(basis: IntertwinerBasis, nonlinearity: Nonlinearity, seed: u64) -> Result<Self> {
        let s = 1.0 / ((basis.dim().max(1) * basis.rep_in.dim()) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coefficients = (0..basis.dim()).map(|_| rng.random_range(-s..=s)).collect();
        Self::new(basis, coefficients, nonlinearity)
    }

    /// A layer whose kernel is `k`, which must lie in the commutant.
    pub fn from_matrix(basis: IntertwinerBasis, k: &DMatrix<f64>, nonlinearity: Nonlinearity) -> Result<Self> {
        let coefficients = basis.project(k)?;
        Self::new(basis, coefficients, nonlinearity)
    }

    pub fn basis(&self) -> &IntertwinerBasis {
        &self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn rep_in(&self) -> &Representation {
        &self.basis.rep_in
    }

    pub fn rep_out(&self) -> &Representation {
        &self.basis.rep_out
    }

    pub fn with_nonlinearity(&self, nonlinearity: Nonlinearity) -> Result<Self> {
        Self::new(self.basis.clone(), self.coefficients.clone(), nonlinearity)
    }

    fn activate(&self, y: &mut DVector<f64>) {
        match self.nonlinearity {
            Nonlinearity::None => {}
            Nonlinearity::PointwiseRelu => y.apply(|x| *x = x.max(0.0)),
            Nonlinearity::NormRelu { bias } => {
                for (offset, block) in self.basis.rep_out.blocks() {
                    let part = y.rows(offset, block.dim()).into_owned();
                    y.rows_mut(offset, block.dim())
                        .copy_from(&norm_nonlinearity(&part, bias));
                }
            }
            Nonlinearity::Gated => {
                let gate = sigmoid(y[0]);
                y.rows_mut(1, y.len() - 1).scale_mut(gate);
            }
        }
    }

    pub fn forward(&self, g: &PotentialGraph, f_in: &FeatureAssignment) -> Result<FeatureAssignment> {
        if f_in.rep() != self.rep_in() {
            return Err(TorsorError::InvalidRepresentation(format!(
                "layer expects {}, features carry {}",
                self.rep_in(),
                f_in.rep()
            )));
        }
        g.kind().ensure_same(self.rep_in().group())?;
        if f_in.num_vertices() != g.num_vertices() {
            return Err(TorsorError::DimensionMismatch {
                expected: g.num_vertices(),
                found: f_in.num_vertices(),
            });
        }
        let transports = edge_transports(g, self.rep_in())?;
        let input = f_in.values();
        let mut out = DMatrix::zeros(g.num_vertices(), self.rep_out().dim());
        for v in 0..g.num_vertices() {
            let neighbors = g.neighbors(v);
            let aggregated = if neighbors.is_empty() {
                input.row(v).transpose()
            } else {
                let mut acc = DVector::zeros(self.rep_in().dim());
                let mut c = 0.0;
                for &(u, e) in neighbors {
                    let edge = &g.edges()[e];
                    let fu = input.row(u).transpose();
                    // ρ(ψ_vu) f(u): ψ_vu is the stored potential when v is the lower endpoint.
                    let moved = if edge.u == v {
                        &transports[e] * fu
                    } else {
                        transports[e].tr_mul(&fu)
                    };
                    acc += moved * edge.weight;
                    c += edge.weight;
                }
                acc / c
            };
            let mut y = &self.kernel * aggregated;
            self.activate(&mut y);
            out.set_row(v, &y.transpose());
        }
        FeatureAssignment::new(self.rep_out().clone(), out)
    }
}

/// `max_v ‖forward(ψ^γ, f^γ)(v) − ρ_out(γ_v)⁻¹ forward(ψ, f)(v)‖`.
pub fn check_gauge_equivariance(
    layer: &TorsorConvLayer,
    g: &PotentialGraph,
    f_in: &FeatureAssignment,
    gauge: &Gauge,
) -> Result<f64> {
    let direct = layer.forward(g, f_in)?;
    let expected = apply_gauge_features(&direct, gauge)?;
    let transformed = layer.forward(&g.apply_gauge(gauge)?, &apply_gauge_features(f_in, gauge)?)?;
    Ok((0..g.num_vertices())
        .map(|v| (transformed.row(v) - expected.row(v)).norm())
        .fold(0.0, f64::max))
}
