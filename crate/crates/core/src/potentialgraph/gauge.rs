use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PotentialGraph;
use crate::error::{Result, TorsorError};
use crate::groups::{sample_element, GroupElement, GroupKind};

/// A per-vertex change of reference frame `γ: V → G`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gauge {
    kind: GroupKind,
    elements: Vec<GroupElement>,
}

impl Gauge {
    pub fn new(kind: GroupKind, elements: Vec<GroupElement>) -> Result<Self> {
        for g in &elements {
            kind.ensure_same(g.kind())?;
        }
        Ok(Self { kind, elements })
    }

    pub fn identity(kind: GroupKind, num_vertices: usize) -> Self {
        Self {
            kind,
            elements: vec![GroupElement::identity(kind); num_vertices],
        }
    }

    pub fn random(kind: GroupKind, num_vertices: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            kind,
            elements: (0..num_vertices).map(|_| sample_element(kind, &mut rng)).collect(),
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn into_elements(self) -> Vec<GroupElement> {
        self.elements
    }

    /// Pointwise inverse `v ↦ γ_v⁻¹`.
    pub fn inverse(&self) -> Gauge {
        Gauge {
            kind: self.kind,
            elements: self.elements.iter().map(GroupElement::inverse).collect(),
        }
    }

    /// Pointwise product `v ↦ self_v · other_v`.
    ///
    /// Applying `self` and then `other` to a potential equals applying `self.then(other)`.
    pub fn then(&self, other: &Gauge) -> Result<Gauge> {
        if self.len() != other.len() {
            return Err(TorsorError::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        let elements = self
            .elements
            .iter()
            .zip(&other.elements)
            .map(|(a, b)| a.compose(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(Gauge {
            kind: self.kind,
            elements,
        })
    }

    pub(crate) fn check_against(&self, graph: &PotentialGraph) -> Result<()> {
        graph.kind().ensure_same(self.kind)?;
        if self.len() != graph.num_vertices() {
            return Err(TorsorError::DimensionMismatch {
                expected: graph.num_vertices(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

impl Index<usize> for Gauge {
    type Output = GroupElement;

    fn index(&self, v: usize) -> &GroupElement {
        &self.elements[v]
    }
}
