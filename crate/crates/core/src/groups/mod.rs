//! Structure groups and their orthogonal representations.
//!
//! Three structure groups are supported: the cyclic groups `Z_n`, the planar
//! rotations `SO(2)` and the spatial rotations `SO(3)`. Elements are immutable
//! values with a canonical payload, so equality of payloads is equality of
//! group elements (up to floating point for the continuous groups).

mod rep;

use std::f64::consts::{PI, TAU};
use std::fmt;

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use rep::{RepKind, RepSpec, Representation};

use crate::error::{Result, TorsorError};

/// Tolerance on `RᵀR = I` and `det R = 1` accepted for an SO(3) payload.
pub const SO3_TOLERANCE: f64 = 1e-9;

/// Drift beyond which a composed rotation is re-orthonormalized.
const SO3_DRIFT: f64 = 1e-12;

/// The structure group `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKind {
    /// `Z_n`, written additively on residues `0..n`.
    Cyclic(u32),
    So2,
    So3,
}

impl GroupKind {
    pub fn validate(self) -> Result<Self> {
        match self {
            GroupKind::Cyclic(0) => Err(TorsorError::InvalidElement(
                "cyclic group order must be at least 1".into(),
            )),
            kind => Ok(kind),
        }
    }

    /// Number of elements for finite groups.
    pub fn order(self) -> Option<u32> {
        match self {
            GroupKind::Cyclic(n) => Some(n),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        self.order().is_some()
    }

    pub fn is_abelian(self) -> bool {
        !matches!(self, GroupKind::So3)
    }

    pub(crate) fn ensure_same(self, other: GroupKind) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(TorsorError::GroupKindMismatch {
                expected: self,
                found: other,
            })
        }
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::Cyclic(n) => write!(f, "cyclic({n})"),
            GroupKind::So2 => f.write_str("so2"),
            GroupKind::So3 => f.write_str("so3"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Repr {
    Cyclic { order: u32, residue: u32 },
    So2(f64),
    So3(Matrix3<f64>),
}

/// One element of a structure group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupElement(Repr);

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let a = theta.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

fn orthogonality_drift(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// Modified Gram–Schmidt on the columns, keeping the orientation of the input.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let mut cols = [
        m.column(0).into_owned(),
        m.column(1).into_owned(),
        m.column(2).into_owned(),
    ];
    for i in 0..3 {
        for j in 0..i {
            let proj = cols[i].dot(&cols[j]);
            cols[i] -= cols[j] * proj;
        }
        cols[i] /= cols[i].norm();
    }
    Matrix3::from_columns(&cols)
}

impl GroupElement {
    pub fn cyclic(order: u32, residue: i64) -> Result<Self> {
        if order == 0 {
            return Err(TorsorError::InvalidElement(
                "cyclic group order must be at least 1".into(),
            ));
        }
        let residue = residue.rem_euclid(order as i64) as u32;
        Ok(GroupElement(Repr::Cyclic { order, residue }))
    }

    /// Planar rotation by `theta` radians; the angle is canonicalized to `(-π, π]`.
    pub fn so2(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(TorsorError::InvalidElement(format!("non-finite angle {theta}")));
        }
        Ok(GroupElement(Repr::So2(wrap_angle(theta))))
    }

    /// A rotation matrix; rejected unless orthogonal with unit determinant within [`SO3_TOLERANCE`].
    pub fn so3(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(TorsorError::InvalidElement("non-finite rotation entry".into()));
        }
        let drift = orthogonality_drift(&m);
        if drift > SO3_TOLERANCE {
            return Err(TorsorError::InvalidElement(format!(
                "matrix is not orthogonal (max deviation {drift:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > SO3_TOLERANCE {
            return Err(TorsorError::InvalidElement(format!(
                "rotation determinant {det} is not 1"
            )));
        }
        Ok(GroupElement(Repr::So3(m)))
    }

    /// Rotation about the z axis.
    pub fn rotation_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        GroupElement(Repr::So3(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)))
    }

    /// Rotation by `angle` about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self> {
        let norm = axis.norm();
        if norm.is_nan() || norm <= 0.0 || !angle.is_finite() {
            return Err(TorsorError::InvalidElement("degenerate axis-angle".into()));
        }
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Ok(GroupElement(Repr::So3(*rot.matrix())))
    }

    pub fn identity(kind: GroupKind) -> Self {
        match kind {
            GroupKind::Cyclic(order) => GroupElement(Repr::Cyclic { order, residue: 0 }),
            GroupKind::So2 => GroupElement(Repr::So2(0.0)),
            GroupKind::So3 => GroupElement(Repr::So3(Matrix3::identity())),
        }
    }

    pub fn kind(&self) -> GroupKind {
        match self.0 {
            Repr::Cyclic { order, .. } => GroupKind::Cyclic(order),
            Repr::So2(_) => GroupKind::So2,
            Repr::So3(_) => GroupKind::So3,
        }
    }

    pub fn residue(&self) -> Option<u32> {
        match self.0 {
            Repr::Cyclic { residue, .. } => Some(residue),
            _ => None,
        }
    }

    pub fn angle(&self) -> Option<f64> {
        match self.0 {
            Repr::So2(theta) => Some(theta),
            _ => None,
        }
    }

    pub fn rotation(&self) -> Option<&Matrix3<f64>> {
        match &self.0 {
            Repr::So3(m) => Some(m),
            _ => None,
        }
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        match (&self.0, &other.0) {
            (
                Repr::Cyclic { order, residue: a },
                Repr::Cyclic {
                    order: order_b,
                    residue: b,
                },
            ) if order == order_b => Ok(GroupElement(Repr::Cyclic {
                order: *order,
                residue: ((*a as u64 + *b as u64) % *order as u64) as u32,
            })),
            (Repr::So2(a), Repr::So2(b)) => Ok(GroupElement(Repr::So2(wrap_angle(a + b)))),
            (Repr::So3(a), Repr::So3(b)) => {
                let mut m = a * b;
                if orthogonality_drift(&m) > SO3_DRIFT {
                    m = orthonormalize(&m);
                }
                Ok(GroupElement(Repr::So3(m)))
            }
            _ => Err(TorsorError::GroupKindMismatch {
                expected: self.kind(),
                found: other.kind(),
            }),
        }
    }

    pub fn inverse(&self) -> GroupElement {
        match &self.0 {
            Repr::Cyclic { order, residue } => GroupElement(Repr::Cyclic {
                order: *order,
                residue: (*order - residue) % *order,
            }),
            Repr::So2(theta) => GroupElement(Repr::So2(wrap_angle(-theta))),
            Repr::So3(m) => GroupElement(Repr::So3(m.transpose())),
        }
    }

    /// `a⁻¹ · b`, the element carrying `a` to `b` by right multiplication.
    pub fn between(&self, other: &GroupElement) -> Result<GroupElement> {
        self.inverse().compose(other)
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        distance(self, &GroupElement::identity(self.kind())).is_ok_and(|d| d <= tol)
    }

    /// Rotation angle in `[0, π]` and unit axis of an SO(3) element.
    ///
    /// For angles below `1e-12` the axis is arbitrary and `e_z` is returned.
    pub fn axis_angle(&self) -> Option<(Vector3<f64>, f64)> {
        let m = self.rotation()?;
        let angle = rotation_angle(m);
        let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
        if angle < 1e-12 {
            return Some((Vector3::z(), 0.0));
        }
        if angle < PI - 1e-6 {
            return Some((skew.normalize(), angle));
        }
        // Near π the skew part vanishes; read the axis off the symmetric part (R + I)/2 = a aᵀ.
        let sym = (m + Matrix3::identity()) * 0.5;
        let (col, _) = (0..3)
            .map(|j| (j, sym[(j, j)]))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
        let mut axis = sym.column(col).into_owned();
        axis /= axis.norm();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        Some((axis, angle))
    }
}

fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    sin.atan2(cos)
}

/// Nearest rotation to `m` in Frobenius norm (polar factor with determinant fixed to +1).
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let d = (u * v_t).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d }));
    orthonormalize(&(u * fix * v_t))
}

/// Bi-invariant distance between two elements of the same group.
///
/// Cyclic groups use the discrete metric, SO(2) the wrapped angle difference
/// and SO(3) the geodesic angle of `AᵀB`.
pub fn distance(a: &GroupElement, b: &GroupElement) -> Result<f64> {
    match (&a.0, &b.0) {
        (Repr::Cyclic { order, residue: x }, Repr::Cyclic { order: o2, residue: y }) if order == o2 => {
            Ok(if x == y { 0.0 } else { 1.0 })
        }
        (Repr::So2(x), Repr::So2(y)) => Ok(wrap_angle(x - y).abs()),
        (Repr::So3(x), Repr::So3(y)) => Ok(rotation_angle(&(x.transpose() * y))),
        _ => Err(TorsorError::GroupKindMismatch {
            expected: a.kind(),
            found: b.kind(),
        }),
    }
}

/// Draws a Haar-uniform element from the given generator.
pub fn sample_element<R: Rng + ?Sized>(kind: GroupKind, rng: &mut R) -> GroupElement {
    match kind {
        GroupKind::Cyclic(order) => GroupElement(Repr::Cyclic {
            order,
            residue: rng.random_range(0..order.max(1)),
        }),
        GroupKind::So2 => GroupElement(Repr::So2(wrap_angle(rng.random_range(-PI..PI)))),
        GroupKind::So3 => {
            let q = loop {
                let w: f64 = rng.sample(StandardNormal);
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                let z: f64 = rng.sample(StandardNormal);
                let q = Quaternion::new(w, x, y, z);
                if q.norm() > 1e-8 {
                    break q;
                }
            };
            let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
            GroupElement(Repr::So3(orthonormalize(rot.matrix())))
        }
    }
}

/// Deterministic uniform element for a given seed.
pub fn random_element(kind: GroupKind, seed: u64) -> GroupElement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_element(kind, &mut rng)
}
