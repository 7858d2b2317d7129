//! Adaptive Dormand-Prince integration with adjoint-method gradients, where the
//! accept/reject test runs under a pluggable group-weighted (semi)norm.
//!
//! The backward adjoint state is `[a_t | z | a_z | a_θ]`. Only `z` and `a_z` enter
//! the augmented vector field; [`adjoint::make_seminorm`] gives the other two blocks
//! zero weight so they can no longer cause step rejections.

pub mod adjoint;
pub mod error;
pub mod field;
pub mod harness;
pub mod norm;
pub mod solver;
pub mod stats;
pub mod tableau;

pub use adjoint::{
    augmented_dynamics, backprop, backprop_multi, make_default_norm, make_seminorm,
    AdjointPartition, Checkpoint, GradientResult, NormMode,
};
pub use error::{Error, Result};
pub use field::{
    ConfiguredField, FieldSpec, ForcedOscillatorField, LinearField, MlpField, VectorField,
};
pub use norm::{NormGroup, NormSpec};
pub use solver::{integrate, integrate_through, OdeSystem, Solution, SolveObserver, Tolerances};
pub use stats::SolveStats;
