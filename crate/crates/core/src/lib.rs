//! Stochastic-mesh Monte Carlo estimators for unilateral CVA.
//!
//! The crate is organized bottom-up:
//!
//! * [`models`]: Gaussian factor models with exact sampling and closed-form
//!   transition densities of each projected `(macro, contract)` pair.
//! * [`paths`]: maturity-respecting grids and reproducible path families.
//! * [`mesh`]: the stochastic mesh operator with its ε-window.
//! * [`estimators`]: the mesh-valued (`ĉ₁`) and mesh-sign (`ĉ₂`) CVA
//!   estimators, window schedules and reference values.
//! * [`study`]: replication and convergence studies with CSV output.
//!
//! Data-parallel loops go through [`Execution`]; build without the default
//! `parallel` feature for a purely sequential engine.

pub mod error;
pub mod estimators;
pub mod exec;
pub mod kernel;
pub mod mesh;
pub mod models;
pub mod paths;
pub mod study;

pub use error::{MeshError, Result};
pub use estimators::{
    estimate_c1, estimate_c2, nested_mc_oracle, reference_c_brownian, reference_c_delta_brownian,
    CvaProblem, EpsilonSchedule, EstimateResult, HazardLoss, Payoff, Portfolio, Variant,
};
pub use exec::Execution;
pub use mesh::{Branch, MeshContext};
pub use models::{Block, ModelSpec, ProjectedState};
pub use paths::{FamilyTag, GridRule, PathFamily, Partition};
