use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::{GroupElement, GroupKind};
use crate::error::{Result, TorsorError};

/// Which orthogonal representation is realized.
#[derive(Debug, Clone, PartialEq)]
pub enum RepKind {
    /// `d` copies of the trivial representation.
    Trivial(usize),
    /// `k ↦ (-1)^k` on a cyclic group of even order.
    Sign,
    /// Rotation matrices: 2×2 for `so2` and cyclic groups (angle `2πk/n`), 3×3 for `so3`.
    Standard,
    /// Permutation action of `Z_n` on itself.
    Regular,
    /// Block-diagonal sum. Components are never sums themselves.
    DirectSum(Vec<Representation>),
}

/// An orthogonal representation `ρ: G → O(F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    group: GroupKind,
    kind: RepKind,
    dim: usize,
}

impl Representation {
    pub fn trivial(group: GroupKind, dim: usize) -> Result<Self> {
        group.validate()?;
        if dim == 0 {
            return Err(TorsorError::InvalidRepresentation(
                "trivial representation needs dimension >= 1".into(),
            ));
        }
        Ok(Self {
            group,
            kind: RepKind::Trivial(dim),
            dim,
        })
    }

    pub fn sign(group: GroupKind) -> Result<Self> {
        match group.validate()? {
            GroupKind::Cyclic(n) if n % 2 == 0 => Ok(Self {
                group,
                kind: RepKind::Sign,
                dim: 1,
            }),
            _ => Err(TorsorError::InvalidRepresentation(format!(
                "sign representation needs a cyclic group of even order, got {group}"
            ))),
        }
    }

    pub fn standard(group: GroupKind) -> Result<Self> {
        let dim = match group.validate()? {
            GroupKind::So3 => 3,
            _ => 2,
        };
        Ok(Self {
            group,
            kind: RepKind::Standard,
            dim,
        })
    }

    pub fn regular(group: GroupKind) -> Result<Self> {
        match group.validate()? {
            GroupKind::Cyclic(n) => Ok(Self {
                group,
                kind: RepKind::Regular,
                dim: n as usize,
            }),
            _ => Err(TorsorError::InvalidRepresentation(format!(
                "regular representation is only defined for cyclic groups, got {group}"
            ))),
        }
    }

    /// Direct sum; nested sums are flattened.
    pub fn direct_sum(group: GroupKind, components: Vec<Representation>) -> Result<Self> {
        if components.is_empty() {
            return Err(TorsorError::InvalidRepresentation(
                "direct sum needs at least one component".into(),
            ));
        }
        let mut flat = Vec::with_capacity(components.len());
        for c in components {
            group.ensure_same(c.group)?;
            match c.kind {
                RepKind::DirectSum(inner) => flat.extend(inner),
                _ => flat.push(c),
            }
        }
        let dim = flat.iter().map(|c| c.dim).sum();
        Ok(Self {
            group,
            kind: RepKind::DirectSum(flat),
            dim,
        })
    }

    /// `copies` copies of the standard representation.
    pub fn standard_copies(group: GroupKind, copies: usize) -> Result<Self> {
        if copies == 1 {
            return Self::standard(group);
        }
        let std = Self::standard(group)?;
        Self::direct_sum(group, vec![std; copies])
    }

    pub fn group(&self) -> GroupKind {
        self.group
    }

    pub fn kind(&self) -> &RepKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Top-level blocks as `(offset, component)`; a non-sum is its own single block.
    pub fn blocks(&self) -> Vec<(usize, &Representation)> {
        match &self.kind {
            RepKind::DirectSum(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let o = offset;
                        offset += p.dim;
                        (o, p)
                    })
                    .collect()
            }
            _ => vec![(0, self)],
        }
    }

    /// True when every block acts by permutation matrices (trivial or regular).
    pub fn is_permutation(&self) -> bool {
        match &self.kind {
            RepKind::Trivial(_) | RepKind::Regular => true,
            RepKind::DirectSum(parts) => parts.iter().all(Representation::is_permutation),
            RepKind::Sign | RepKind::Standard => false,
        }
    }

    /// The matrix `ρ(g)`.
    pub fn matrix(&self, g: &GroupElement) -> Result<DMatrix<f64>> {
        self.group.ensure_same(g.kind())?;
        let mut out = DMatrix::zeros(self.dim, self.dim);
        self.fill(g, &mut out, 0);
        Ok(out)
    }

    fn fill(&self, g: &GroupElement, out: &mut DMatrix<f64>, at: usize) {
        match &self.kind {
            RepKind::Trivial(d) => {
                for i in 0..*d {
                    out[(at + i, at + i)] = 1.0;
                }
            }
            RepKind::Sign => {
                let k = g.residue().unwrap_or(0);
                out[(at, at)] = if k % 2 == 0 { 1.0 } else { -1.0 };
            }
            RepKind::Standard => {
                if let Some(r) = g.rotation() {
                    out.view_mut((at, at), (3, 3)).copy_from(r);
                } else {
                    let theta = match (g.angle(), g.residue(), g.kind()) {
                        (Some(t), _, _) => t,
                        (_, Some(k), GroupKind::Cyclic(n)) => TAU * k as f64 / n as f64,
                        _ => unreachable!("kind checked by caller"),
                    };
                    let (s, c) = theta.sin_cos();
                    out[(at, at)] = c;
                    out[(at, at + 1)] = -s;
                    out[(at + 1, at)] = s;
                    out[(at + 1, at + 1)] = c;
                }
            }
            RepKind::Regular => {
                let n = self.dim;
                let k = g.residue().unwrap_or(0) as usize;
                // e_j ↦ e_{j+k}
                for j in 0..n {
                    out[(at + (j + k) % n, at + j)] = 1.0;
                }
            }
            RepKind::DirectSum(parts) => {
                let mut offset = at;
                for p in parts {
                    p.fill(g, out, offset);
                    offset += p.dim;
                }
            }
        }
    }

    /// The group-independent description of this representation.
    pub fn spec(&self) -> RepSpec {
        match &self.kind {
            RepKind::Trivial(d) => RepSpec::Trivial(*d),
            RepKind::Sign => RepSpec::Sign,
            RepKind::Standard => RepSpec::Standard,
            RepKind::Regular => RepSpec::Regular,
            RepKind::DirectSum(parts) => RepSpec::Sum(parts.iter().map(Representation::spec).collect()),
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.spec().fmt(f)
    }
}

/// Textual representation description, independent of the group.
///
/// Grammar: `trivial:<d>` | `sign` | `standard` | `regular` | `sum:<spec>,<spec>,...`.
/// Sums are flat: a `sum:` appearing inside a sum absorbs the remaining items,
/// and the result is flattened, so every string has exactly one meaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RepSpec {
    Trivial(usize),
    Sign,
    Standard,
    Regular,
    Sum(Vec<RepSpec>),
}

impl RepSpec {
    pub fn realize(&self, group: GroupKind) -> Result<Representation> {
        match self {
            RepSpec::Trivial(d) => Representation::trivial(group, *d),
            RepSpec::Sign => Representation::sign(group),
            RepSpec::Standard => Representation::standard(group),
            RepSpec::Regular => Representation::regular(group),
            RepSpec::Sum(parts) => {
                let comps = parts.iter().map(|p| p.realize(group)).collect::<Result<Vec<_>>>()?;
                Representation::direct_sum(group, comps)
            }
        }
    }

    fn parse_atom(s: &str) -> Result<RepSpec> {
        match s {
            "sign" => Ok(RepSpec::Sign),
            "standard" => Ok(RepSpec::Standard),
            "regular" => Ok(RepSpec::Regular),
            _ => {
                if let Some(d) = s.strip_prefix("trivial:") {
                    let d: usize = d
                        .parse()
                        .map_err(|_| TorsorError::InvalidRepresentation(format!("bad trivial dimension in '{s}'")))?;
                    if d == 0 {
                        return Err(TorsorError::InvalidRepresentation(
                            "trivial dimension must be >= 1".into(),
                        ));
                    }
                    Ok(RepSpec::Trivial(d))
                } else {
                    Err(TorsorError::InvalidRepresentation(format!(
                        "unknown representation '{s}'"
                    )))
                }
            }
        }
    }
}

impl FromStr for RepSpec {
    type Err = TorsorError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let Some(rest) = s.strip_prefix("sum:") else {
            return RepSpec::parse_atom(s);
        };
        let items: Vec<&str> = rest.split(',').collect();
        let mut parts = Vec::new();
        let mut i = 0;
        while i < items.len() {
            let item = items[i].trim();
            if item.is_empty() {
                return Err(TorsorError::InvalidRepresentation(format!("empty component in '{s}'")));
            }
            if item.starts_with("sum:") {
                match items[i..].join(",").parse::<RepSpec>()? {
                    RepSpec::Sum(inner) => parts.extend(inner),
                    other => parts.push(other),
                }
                break;
            }
            parts.push(RepSpec::parse_atom(item)?);
            i += 1;
        }
        Ok(RepSpec::Sum(parts))
    }
}

impl fmt::Display for RepSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepSpec::Trivial(d) => write!(f, "trivial:{d}"),
            RepSpec::Sign => f.write_str("sign"),
            RepSpec::Standard => f.write_str("standard"),
            RepSpec::Regular => f.write_str("regular"),
            RepSpec::Sum(parts) => {
                f.write_str("sum:")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}
