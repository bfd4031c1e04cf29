//! Rigid bodies in natural coordinates: center-of-mass position plus three
//! local basis vectors (12 dofs, ordering `[r_cm, e1, e2, e3]`), with the
//! frame orthonormality enforced as constraints elsewhere.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;

/// Rigid body parameters. The local frame must sit at the center of mass and
/// be aligned with the principal axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBody {
    pub mass: f64,
    pub inertia: [f64; 3],
}

impl RigidBody {
    pub fn triangle_inequalities_hold(&self) -> bool {
        let [i1, i2, i3] = self.inertia;
        i1 + i2 >= i3 && i2 + i3 >= i1 && i1 + i3 >= i2
    }

    /// Block coefficients of the diagonal mass matrix:
    /// `m` and the three half inertia sums.
    pub fn mass_blocks(&self) -> [f64; 4] {
        let [i1, i2, i3] = self.inertia;
        [
            self.mass,
            0.5 * (i2 + i3 - i1),
            0.5 * (i1 + i3 - i2),
            0.5 * (i1 + i2 - i3),
        ]
    }

    pub fn mass_matrix(&self) -> Mat12 {
        let blocks = self.mass_blocks();
        let mut m = Mat12::zeros();
        for (b, coeff) in blocks.iter().enumerate() {
            for k in 0..3 {
                m[(3 * b + k, 3 * b + k)] = *coeff;
            }
        }
        m
    }

    /// Gradient of the gravity potential: nonzero only on the translational
    /// block.
    pub fn gravity_gradient(&self, nu: &Vector3<f64>) -> Vec12 {
        let mut out = Vec12::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&(-self.mass * nu));
        out
    }
}

/// Global position of the material point `local` for body state `q`.
pub fn point_position(q: &Vec12, local: &Vector3<f64>) -> Vector3<f64> {
    let r_cm = q.fixed_rows::<3>(0);
    let e1 = q.fixed_rows::<3>(3);
    let e2 = q.fixed_rows::<3>(6);
    let e3 = q.fixed_rows::<3>(9);
    Vector3::from(r_cm) + local.x * e1 + local.y * e2 + local.z * e3
}

/// Natural-coordinate velocity for a rigid motion `(v_cm, omega)` of a body
/// whose basis vectors are the columns of `basis`.
pub fn natural_velocity(v_cm: &Vector3<f64>, omega: &Vector3<f64>, basis: &Matrix3<f64>) -> Vec12 {
    let mut out = Vec12::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(v_cm);
    for k in 0..3 {
        let e: Vector3<f64> = basis.column(k).into();
        out.fixed_rows_mut::<3>(3 + 3 * k)
            .copy_from(&omega.cross(&e));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equal_inertias_give_half_blocks() {
        let b = RigidBody {
            mass: 1.0,
            inertia: [2.0, 2.0, 2.0],
        };
        assert_eq!(b.mass_blocks(), [1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn unequal_inertia_blocks() {
        let b = RigidBody {
            mass: 1.0,
            inertia: [3.0, 2.0, 2.0],
        };
        assert_eq!(b.mass_blocks(), [1.0, 0.5, 1.5, 1.5]);
    }

    #[test]
    fn translational_block_is_mass() {
        let b = RigidBody {
            mass: 2.0,
            inertia: [1.0, 1.0, 1.0],
        };
        let m = b.mass_matrix();
        for k in 0..3 {
            assert_eq!(m[(k, k)], 2.0);
        }
    }

    #[test]
    fn triangle_inequality_detection() {
        let bad = RigidBody {
            mass: 1.0,
            inertia: [10.0, 1.0, 1.0],
        };
        assert!(!bad.triangle_inequalities_hold());
    }

    #[test]
    fn point_position_identity_and_rotated() {
        let mut q = Vec12::zeros();
        q.fixed_rows_mut::<3>(0)
            .copy_from(&Vector3::new(1.0, 2.0, 3.0));
        // identity frame
        q[3] = 1.0;
        q[7] = 1.0;
        q[11] = 1.0;
        assert_eq!(
            point_position(&q, &Vector3::zeros()),
            Vector3::new(1.0, 2.0, 3.0)
        );
        assert_eq!(
            point_position(&q, &Vector3::new(1.0, 0.0, 0.0)),
            Vector3::new(2.0, 2.0, 3.0)
        );
        // frame rotated 90 degrees about Z: e1 = +Y, e2 = -X
        let mut qr = Vec12::zeros();
        qr.fixed_rows_mut::<3>(0)
            .copy_from(&Vector3::new(1.0, 2.0, 3.0));
        qr.fixed_rows_mut::<3>(3)
            .copy_from(&Vector3::new(0.0, 1.0, 0.0));
        qr.fixed_rows_mut::<3>(6)
            .copy_from(&Vector3::new(-1.0, 0.0, 0.0));
        qr[11] = 1.0;
        let p = point_position(&qr, &Vector3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p.x, 1.0);
        assert_abs_diff_eq!(p.y, 3.0);
        assert_abs_diff_eq!(p.z, 3.0);
    }

    #[test]
    fn gravity_gradient_chassis_weight() {
        let b = RigidBody {
            mass: 300.0,
            inertia: [55.0, 230.0, 270.0],
        };
        let g = b.gravity_gradient(&Vector3::new(0.0, 0.0, -9.81));
        assert_abs_diff_eq!(g[2], 2943.0, epsilon = 1e-9);
        for k in 3..12 {
            assert_eq!(g[k], 0.0);
        }
        assert_eq!(b.gravity_gradient(&Vector3::zeros()), Vec12::zeros());
    }

    #[test]
    fn natural_velocity_reproduces_rigid_kinetic_energy() {
        let b = RigidBody {
            mass: 3.0,
            inertia: [0.4, 0.7, 0.9],
        };
        let v = Vector3::new(0.3, -0.2, 1.1);
        let omega = Vector3::new(0.5, 1.3, -0.7);
        let qdot = natural_velocity(&v, &omega, &Matrix3::identity());
        let ke_natural = 0.5 * (b.mass_matrix() * qdot).dot(&qdot);
        let ke_rigid = 0.5 * b.mass * v.norm_squared()
            + 0.5
                * (b.inertia[0] * omega.x * omega.x
                    + b.inertia[1] * omega.y * omega.y
                    + b.inertia[2] * omega.z * omega.z);
        assert_abs_diff_eq!(ke_natural, ke_rigid, epsilon = 1e-12);
    }
}
