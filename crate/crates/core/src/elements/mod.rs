//! Per-element kinematics, mass matrices, generalized forces, and their
//! derivatives with respect to design parameters.
//!
//! All element routines are pure functions of their inputs and return
//! quantities in the element's local coordinate ordering; scattering into
//! global indices is the assembler's job.

pub mod beam;
pub mod rigid;
pub mod spring;

use nalgebra::{DVector, Vector3};

/// A material point that generalized forces and constraints can attach to.
///
/// Every attachment's position is an affine function of the global state with
/// Jacobian blocks that are scalar multiples of the 3x3 identity, so the
/// Jacobian is represented as `(dof, coefficient)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum PointHandle {
    /// A beam node whose position dofs start at `dof`.
    BeamNode { dof: usize },
    /// A material point on a rigid body whose 12 dofs start at `dof`,
    /// given in the body frame.
    RigidLocal { dof: usize, local: Vector3<f64> },
    /// A fixed point in the inertial frame.
    Ground { position: Vector3<f64> },
}

impl PointHandle {
    /// Columns of the position Jacobian as `(dof, coefficient)` pairs, each
    /// standing for `coefficient * I3` over `q[dof..dof+3]`.
    pub fn jacobian_cols(&self) -> Vec<(usize, f64)> {
        match self {
            PointHandle::BeamNode { dof } => vec![(*dof, 1.0)],
            PointHandle::RigidLocal { dof, local } => vec![
                (*dof, 1.0),
                (dof + 3, local.x),
                (dof + 6, local.y),
                (dof + 9, local.z),
            ],
            PointHandle::Ground { .. } => Vec::new(),
        }
    }

    /// Global position of the attachment for state `q`.
    pub fn position(&self, q: &DVector<f64>) -> Vector3<f64> {
        match self {
            PointHandle::Ground { position } => *position,
            _ => {
                let mut r = Vector3::zeros();
                for (dof, c) in self.jacobian_cols() {
                    r += c * q.fixed_rows::<3>(dof);
                }
                r
            }
        }
    }

    /// Velocity of the attachment for generalized velocity `v` (same linear
    /// map as `position`, without the ground offset).
    pub fn velocity(&self, v: &DVector<f64>) -> Vector3<f64> {
        let mut r = Vector3::zeros();
        for (dof, c) in self.jacobian_cols() {
            r += c * v.fixed_rows::<3>(dof);
        }
        r
    }

    /// Accumulates `Jᵀ w` into `out`, where `J = ∂r/∂q` for this attachment.
    pub fn scatter(&self, w: &Vector3<f64>, out: &mut DVector<f64>) {
        for (dof, c) in self.jacobian_cols() {
            let mut block = out.fixed_rows_mut::<3>(dof);
            block += c * w;
        }
    }

    /// Dof index of the rigid basis-vector block `axis` (0..3), if this is a
    /// rigid attachment.
    pub fn rigid_basis_dof(&self, axis: usize) -> Option<usize> {
        match self {
            PointHandle::RigidLocal { dof, .. } => Some(dof + 3 + 3 * axis),
            _ => None,
        }
    }
}
