//! Flexible multibody dynamics with exact design sensitivities.
//!
//! The crate simulates assemblies of rigid bodies (natural coordinates),
//! beams (absolute nodal positions and slopes), springs, and dampers with a
//! symplectic variational integrator, computes design gradients of
//! trajectory functionals by a discrete adjoint sweep (with direct
//! differentiation and finite differences as cross-checks), and runs
//! projected-gradient design optimization under an augmented Lagrangian.

pub mod adjoint;
pub mod constraints;
pub mod elements;
pub mod error;
pub mod integrator;
pub mod model;
pub mod objective;
pub mod optimizer;

pub use adjoint::{
    adjoint_gradient, adjoint_gradient_multi, backward_sweep, direct_gradient,
    finite_difference_gradient, max_relative_difference, AdjointSolution, Method,
    SensitivityEntry, SensitivityReport,
};
pub use error::{AssembleError, ModelError, OptimizeError, SensitivityError, SimError};
pub use integrator::{interval_energies, newton_solve, simulate, Trajectory};
pub use model::{parse_model, serialize_model, ModelDefinition, System, ValidationReport};
pub use objective::{BeamStressAggregate, FunctionalPartials, Objective, TrajectoryFunctional};
pub use optimizer::{
    optimize, optimize_model, DesignProblem, MbsDesignProblem, OptimizationHistory,
    OptimizerSettings, StopReason,
};
