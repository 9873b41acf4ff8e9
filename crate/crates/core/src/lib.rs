//! Torsor convolution on graphs with group-valued edge potentials.
//!
//! The crate is organized bottom-up:
//!
//! - [`groups`]: structure groups (`Z_n`, SO(2), SO(3)) and orthogonal representations.
//! - [`potentialgraph`]: graphs with antisymmetric edge potentials `ψ_uv`, gauge
//!   transformations, holonomy, consistency and gauge-equivalence decisions.
//! - [`sheaf`]: feature assignments, the global-section test, the frustration
//!   functional and its gradient, transport and alignment of features.
//! - [`sync`]: group and feature synchronization solvers.
//! - [`conv`]: intertwiner bases and the gauge-equivariant torsor convolution layer.
//! - [`mvdemo`]: a synthetic multi-view pipeline exercising alignment, pooling
//!   and frustration-regularized training.
//! - [`format`]: the line-oriented text formats for graphs, features, states and kernels.

pub mod conv;
pub mod error;
pub mod format;
pub mod groups;
pub mod mvdemo;
pub mod potentialgraph;
pub mod sheaf;
pub mod sync;

pub use error::{Result, TorsorError};
pub use groups::{distance, random_element, GroupElement, GroupKind, RepSpec, Representation};
pub use potentialgraph::{are_gauge_equivalent, Gauge, GaugeMatch, PotentialGraph};
pub use sheaf::FeatureAssignment;
