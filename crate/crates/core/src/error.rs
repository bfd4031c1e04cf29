use thiserror::Error;

/// Errors raised while parsing or validating a model file.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file is not valid JSON: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("unresolved reference: {0}")]
    UnresolvedReference(String),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Errors raised while assembling a system from a model and a design vector.
#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("non-positive parameter: {0}")]
    NonPositiveParameter(String),
    #[error("degenerate beam element {0}: undeformed length below 1e-9 m")]
    DegenerateBeam(String),
    #[error("rigid body {0}: principal inertias violate the triangle inequality")]
    InertiaTriangle(String),
    #[error("rigid body {0}: initial basis is not orthonormal")]
    NonOrthonormalBasis(String),
    #[error("{0}")]
    Model(#[from] ModelError),
}

/// Errors raised during forward simulation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("Newton iteration did not converge at step {step}: residual {residual:e} after {iters} iterations")]
    NewtonDiverged {
        step: usize,
        iters: usize,
        residual: f64,
    },
    #[error("singular step Jacobian at step {step}")]
    SingularJacobian { step: usize },
    #[error("{0}")]
    Force(#[from] crate::elements::beam::ElementError),
}

/// Errors raised during sensitivity analysis.
#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("singular adjoint system at step {step}")]
    SingularAdjoint { step: usize },
    #[error("singular sensitivity step system at step {step}")]
    SingularStep { step: usize },
    #[error("design variable {id}: initial state moved off the constraint manifold (residual {residual:e})")]
    InconsistentInitialState { id: String, residual: f64 },
    #[error("forward simulation failed while perturbing {id}: {source}")]
    PerturbedSimulation {
        id: String,
        #[source]
        source: SimError,
    },
    #[error("{0}")]
    Assemble(#[from] AssembleError),
    #[error("{0}")]
    Sim(#[from] SimError),
}

/// Errors raised by the design optimizer.
#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("simulation failed at the current design: {0}")]
    Evaluation(String),
    #[error("{0}")]
    Sensitivity(#[from] SensitivityError),
}
