//! Topology optimization of pressure-driven soft-robot members.
//!
//! A design field is filtered and projected into eroded, intermediate and
//! dilated realizations. Each realization carries its own Darcy pressure
//! field (flow with drainage), the consistent nodal loads derived from it,
//! and two plane-stress elastic solves (actual and dummy load). The worst
//! multi-criteria objective `-s * MSE / SE` over the three realizations is
//! minimized with the method of moving asymptotes under a volume constraint
//! on the dilated design.

pub mod elasticity;
pub mod error;
pub mod fields;
pub mod flow;
pub mod linsolve;
pub mod model;
pub mod optimizer;
pub mod sensitivity;
pub mod shape;
pub mod sparse;

pub use error::{Error, Result};
pub use fields::{DesignField, FilterOperator, Realization, RobustTriplet};
pub use model::{FixedHalf, MeshGrid, ProblemModel, RegionTags, RunConfig};
pub use optimizer::{IterationRecord, OptimizationResult};
