//! Linear springs and viscous dampers acting between two attachment points.
//!
//! Both force laws reduce to the same block-quadratic form in the attachment
//! Jacobians; the spring applies it to positions (scaled by relative
//! elongation), the damper to velocities.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::beam::ElementError;
use super::PointHandle;

/// Columns of the relative-position Jacobian `∂(r_a - r_b)/∂q` as
/// `(dof, coefficient)` pairs.
fn signed_cols(a: &PointHandle, b: &PointHandle) -> Vec<(usize, f64)> {
    let mut cols = a.jacobian_cols();
    cols.extend(b.jacobian_cols().into_iter().map(|(d, c)| (d, -c)));
    cols
}

/// Design shift of a spring's parameters induced by one design variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpringDelta {
    pub dstiffness: f64,
    pub dnatural_length: f64,
    /// Shift of the rigid-side local attachment coordinates (zero for other
    /// attachment kinds).
    pub dlocal_a: Vector3<f64>,
    pub dlocal_b: Vector3<f64>,
    /// Shift of a ground attachment point.
    pub dground_a: Vector3<f64>,
    pub dground_b: Vector3<f64>,
}

impl SpringDelta {
    pub fn is_zero(&self) -> bool {
        self.dstiffness == 0.0
            && self.dnatural_length == 0.0
            && self.dlocal_a == Vector3::zeros()
            && self.dlocal_b == Vector3::zeros()
            && self.dground_a == Vector3::zeros()
            && self.dground_b == Vector3::zeros()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spring {
    pub a: PointHandle,
    pub b: PointHandle,
    pub stiffness: f64,
    pub natural_length: f64,
}

impl Spring {
    pub fn current_length(&self, q: &DVector<f64>) -> f64 {
        (self.a.position(q) - self.b.position(q)).norm()
    }

    pub fn energy(&self, q: &DVector<f64>) -> f64 {
        let stretch = self.current_length(q) - self.natural_length;
        0.5 * self.stiffness * stretch * stretch
    }

    /// Accumulates the potential gradient `∂U/∂q` into `out`.
    pub fn accumulate_gradient(
        &self,
        q: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> Result<(), ElementError> {
        let d = self.a.position(q) - self.b.position(q);
        let lt = d.norm();
        if lt <= 0.0 {
            return Err(ElementError::ZeroSpringLength);
        }
        let coef = self.stiffness * (lt - self.natural_length) / lt;
        let w = coef * d;
        for (dof, c) in signed_cols(&self.a, &self.b) {
            let mut block = out.fixed_rows_mut::<3>(dof);
            block += c * w;
        }
        Ok(())
    }

    /// Accumulates the state Jacobian of the gradient into `kmat`.
    pub fn accumulate_stiffness(
        &self,
        q: &DVector<f64>,
        kmat: &mut DMatrix<f64>,
    ) -> Result<(), ElementError> {
        let d = self.a.position(q) - self.b.position(q);
        let lt = d.norm();
        if lt <= 0.0 {
            return Err(ElementError::ZeroSpringLength);
        }
        let dir = d / lt;
        let coef = self.stiffness * (lt - self.natural_length) / lt;
        let rank1 = self.stiffness * self.natural_length / lt;
        let block: Matrix3<f64> =
            coef * Matrix3::identity() + rank1 * dir * dir.transpose();
        let cols = signed_cols(&self.a, &self.b);
        for (i, ci) in &cols {
            for (j, cj) in &cols {
                let mut view = kmat.fixed_view_mut::<3, 3>(*i, *j);
                view += (ci * cj) * block;
            }
        }
        Ok(())
    }

    /// Accumulates the explicit design shift of the gradient at fixed state.
    pub fn accumulate_gradient_delta(
        &self,
        q: &DVector<f64>,
        delta: &SpringDelta,
        out: &mut DVector<f64>,
    ) -> Result<(), ElementError> {
        let d = self.a.position(q) - self.b.position(q);
        let lt = d.norm();
        if lt <= 0.0 {
            return Err(ElementError::ZeroSpringLength);
        }
        // shift of the relative position at fixed q
        let mut dd = delta.dground_a - delta.dground_b;
        for k in 0..3 {
            if delta.dlocal_a[k] != 0.0 {
                if let Some(dof) = self.a.rigid_basis_dof(k) {
                    dd += delta.dlocal_a[k] * Vector3::from(q.fixed_rows::<3>(dof));
                }
            }
            if delta.dlocal_b[k] != 0.0 {
                if let Some(dof) = self.b.rigid_basis_dof(k) {
                    dd -= delta.dlocal_b[k] * Vector3::from(q.fixed_rows::<3>(dof));
                }
            }
        }
        let dlt = d.dot(&dd) / lt;
        let coef = self.stiffness * (lt - self.natural_length) / lt;
        let dcoef = delta.dstiffness * (1.0 - self.natural_length / lt)
            + self.stiffness
                * (self.natural_length / (lt * lt) * dlt - delta.dnatural_length / lt);
        let w = dcoef * d + coef * dd;
        for (dof, c) in signed_cols(&self.a, &self.b) {
            let mut block = out.fixed_rows_mut::<3>(dof);
            block += c * w;
        }
        // Jacobian columns themselves shift with the local attachment points
        for k in 0..3 {
            if delta.dlocal_a[k] != 0.0 {
                if let Some(dof) = self.a.rigid_basis_dof(k) {
                    let mut block = out.fixed_rows_mut::<3>(dof);
                    block += coef * delta.dlocal_a[k] * d;
                }
            }
            if delta.dlocal_b[k] != 0.0 {
                if let Some(dof) = self.b.rigid_basis_dof(k) {
                    let mut block = out.fixed_rows_mut::<3>(dof);
                    block -= coef * delta.dlocal_b[k] * d;
                }
            }
        }
        Ok(())
    }
}

/// Design shift of a damper's parameters induced by one design variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DamperDelta {
    pub ddamping: f64,
    pub dlocal_a: Vector3<f64>,
    pub dlocal_b: Vector3<f64>,
}

impl DamperDelta {
    pub fn is_zero(&self) -> bool {
        self.ddamping == 0.0
            && self.dlocal_a == Vector3::zeros()
            && self.dlocal_b == Vector3::zeros()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Damper {
    pub a: PointHandle,
    pub b: PointHandle,
    pub damping: f64,
}

impl Damper {
    /// Accumulates `c JᵀJ` into the global damping matrix; the damper force
    /// is `-D qdot`.
    pub fn accumulate_damping(&self, dmat: &mut DMatrix<f64>) {
        let cols = signed_cols(&self.a, &self.b);
        for (i, ci) in &cols {
            for (j, cj) in &cols {
                let v = self.damping * ci * cj;
                for k in 0..3 {
                    dmat[(i + k, j + k)] += v;
                }
            }
        }
    }

    /// Accumulates the design shift of the damping matrix.
    pub fn accumulate_damping_delta(&self, delta: &DamperDelta, dmat: &mut DMatrix<f64>) {
        let cols = signed_cols(&self.a, &self.b);
        if delta.ddamping != 0.0 {
            for (i, ci) in &cols {
                for (j, cj) in &cols {
                    let v = delta.ddamping * ci * cj;
                    for k in 0..3 {
                        dmat[(i + k, j + k)] += v;
                    }
                }
            }
        }
        // column shifts from moving local attachment points
        let mut dcols: Vec<(usize, f64)> = Vec::new();
        for k in 0..3 {
            if delta.dlocal_a[k] != 0.0 {
                if let Some(dof) = self.a.rigid_basis_dof(k) {
                    dcols.push((dof, delta.dlocal_a[k]));
                }
            }
            if delta.dlocal_b[k] != 0.0 {
                if let Some(dof) = self.b.rigid_basis_dof(k) {
                    dcols.push((dof, -delta.dlocal_b[k]));
                }
            }
        }
        for (i, dci) in &dcols {
            for (j, cj) in &cols {
                let v = self.damping * dci * cj;
                for k in 0..3 {
                    dmat[(i + k, j + k)] += v;
                    dmat[(j + k, i + k)] += v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn two_node_spring(k: f64, l0: f64) -> Spring {
        Spring {
            a: PointHandle::BeamNode { dof: 0 },
            b: PointHandle::BeamNode { dof: 6 },
            stiffness: k,
            natural_length: l0,
        }
    }

    #[test]
    fn force_vanishes_at_natural_length() {
        let s = two_node_spring(100.0, 1.0);
        let mut q = DVector::zeros(12);
        q[6] = -1.0;
        let mut out = DVector::zeros(12);
        s.accumulate_gradient(&q, &mut out).unwrap();
        assert_abs_diff_eq!(out.amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn coincident_endpoints_are_singular() {
        let s = two_node_spring(100.0, 1.0);
        let q = DVector::zeros(12);
        let mut out = DVector::zeros(12);
        assert_eq!(
            s.accumulate_gradient(&q, &mut out),
            Err(ElementError::ZeroSpringLength)
        );
    }

    #[test]
    fn gradient_matches_energy_fd() {
        let mut rng = StdRng::seed_from_u64(11);
        // mixed rigid/beam/ground attachments
        let springs = vec![
            two_node_spring(100.0, 0.7),
            Spring {
                a: PointHandle::RigidLocal {
                    dof: 0,
                    local: Vector3::new(0.3, -0.2, 0.5),
                },
                b: PointHandle::BeamNode { dof: 12 },
                stiffness: 55.0,
                natural_length: 0.4,
            },
            Spring {
                a: PointHandle::BeamNode { dof: 12 },
                b: PointHandle::Ground {
                    position: Vector3::new(0.1, 0.2, -0.4),
                },
                stiffness: 80.0,
                natural_length: 0.9,
            },
        ];
        for s in springs {
            for _ in 0..30 {
                let q = DVector::from_fn(18, |_, _| rng.gen_range(0.2..1.2));
                let mut f = DVector::zeros(18);
                s.accumulate_gradient(&q, &mut f).unwrap();
                let step = 1e-6;
                for k in 0..18 {
                    let mut qp = q.clone();
                    let mut qm = q.clone();
                    qp[k] += step;
                    qm[k] -= step;
                    let fd = (s.energy(&qp) - s.energy(&qm)) / (2.0 * step);
                    assert_abs_diff_eq!(f[k], fd, epsilon = 1e-6 * f.amax().max(1.0));
                }
            }
        }
    }

    #[test]
    fn stiffness_matches_gradient_fd() {
        let s = Spring {
            a: PointHandle::RigidLocal {
                dof: 0,
                local: Vector3::new(0.3, -0.2, 0.5),
            },
            b: PointHandle::BeamNode { dof: 12 },
            stiffness: 55.0,
            natural_length: 0.4,
        };
        let mut rng = StdRng::seed_from_u64(5);
        let q = DVector::from_fn(18, |_, _| rng.gen_range(0.2..1.2));
        let mut kmat = DMatrix::zeros(18, 18);
        s.accumulate_stiffness(&q, &mut kmat).unwrap();
        let step = 1e-6;
        for k in 0..18 {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += step;
            qm[k] -= step;
            let mut fp = DVector::zeros(18);
            let mut fm = DVector::zeros(18);
            s.accumulate_gradient(&qp, &mut fp).unwrap();
            s.accumulate_gradient(&qm, &mut fm).unwrap();
            let col = (fp - fm) / (2.0 * step);
            for r in 0..18 {
                assert_abs_diff_eq!(kmat[(r, k)], col[r], epsilon = 1e-5 * kmat.amax());
            }
        }
    }

    #[test]
    fn spring_delta_matches_fd() {
        let base = Spring {
            a: PointHandle::RigidLocal {
                dof: 0,
                local: Vector3::new(0.3, -0.2, 0.5),
            },
            b: PointHandle::BeamNode { dof: 12 },
            stiffness: 55.0,
            natural_length: 0.4,
        };
        let mut rng = StdRng::seed_from_u64(17);
        let q = DVector::from_fn(18, |_, _| rng.gen_range(0.2..1.2));
        let step = 1e-6;

        // stiffness, natural length, and a local-point shift along e2
        let cases: Vec<(SpringDelta, Spring, Spring)> = vec![
            (
                SpringDelta {
                    dstiffness: 1.0,
                    ..Default::default()
                },
                Spring {
                    stiffness: base.stiffness + step,
                    ..base.clone()
                },
                Spring {
                    stiffness: base.stiffness - step,
                    ..base.clone()
                },
            ),
            (
                SpringDelta {
                    dnatural_length: 1.0,
                    ..Default::default()
                },
                Spring {
                    natural_length: base.natural_length + step,
                    ..base.clone()
                },
                Spring {
                    natural_length: base.natural_length - step,
                    ..base.clone()
                },
            ),
            (
                SpringDelta {
                    dlocal_a: Vector3::new(0.0, 1.0, 0.0),
                    ..Default::default()
                },
                Spring {
                    a: PointHandle::RigidLocal {
                        dof: 0,
                        local: Vector3::new(0.3, -0.2 + step, 0.5),
                    },
                    ..base.clone()
                },
                Spring {
                    a: PointHandle::RigidLocal {
                        dof: 0,
                        local: Vector3::new(0.3, -0.2 - step, 0.5),
                    },
                    ..base.clone()
                },
            ),
        ];
        for (delta, plus, minus) in cases {
            let mut an = DVector::zeros(18);
            base.accumulate_gradient_delta(&q, &delta, &mut an).unwrap();
            let mut fp = DVector::zeros(18);
            let mut fm = DVector::zeros(18);
            plus.accumulate_gradient(&q, &mut fp).unwrap();
            minus.accumulate_gradient(&q, &mut fm).unwrap();
            let fd = (fp - fm) / (2.0 * step);
            assert!(
                (an.clone() - fd).amax() <= 1e-5 * an.amax().max(1e-6),
                "delta mismatch for {delta:?}"
            );
        }
    }

    #[test]
    fn damper_matrix_annihilates_rigid_translation() {
        let d = Damper {
            a: PointHandle::BeamNode { dof: 0 },
            b: PointHandle::BeamNode { dof: 6 },
            damping: 3.0,
        };
        let mut dmat = DMatrix::zeros(12, 12);
        d.accumulate_damping(&mut dmat);
        // equal endpoint velocities produce no force
        let mut v = DVector::zeros(12);
        v.fixed_rows_mut::<3>(0)
            .copy_from(&Vector3::new(1.0, 2.0, 3.0));
        v.fixed_rows_mut::<3>(6)
            .copy_from(&Vector3::new(1.0, 2.0, 3.0));
        assert_abs_diff_eq!((&dmat * &v).amax(), 0.0, epsilon = 1e-14);
        // relative velocity does
        v.fixed_rows_mut::<3>(6).copy_from(&Vector3::zeros());
        assert!((&dmat * &v).amax() > 1.0);
    }

    #[test]
    fn zero_damping_gives_zero_matrix() {
        let d = Damper {
            a: PointHandle::BeamNode { dof: 0 },
            b: PointHandle::BeamNode { dof: 6 },
            damping: 0.0,
        };
        let mut dmat = DMatrix::zeros(12, 12);
        d.accumulate_damping(&mut dmat);
        assert_eq!(dmat.amax(), 0.0);
    }

    #[test]
    fn damper_delta_matches_fd() {
        let base = Damper {
            a: PointHandle::RigidLocal {
                dof: 0,
                local: Vector3::new(0.3, -0.2, 0.5),
            },
            b: PointHandle::BeamNode { dof: 12 },
            damping: 7.0,
        };
        let step = 1e-6;
        let delta = DamperDelta {
            ddamping: 1.0,
            dlocal_a: Vector3::new(1.0, 0.0, 0.0),
            dlocal_b: Vector3::zeros(),
        };
        let plus = Damper {
            a: PointHandle::RigidLocal {
                dof: 0,
                local: Vector3::new(0.3 + step, -0.2, 0.5),
            },
            damping: 7.0 + step,
            ..base.clone()
        };
        let minus = Damper {
            a: PointHandle::RigidLocal {
                dof: 0,
                local: Vector3::new(0.3 - step, -0.2, 0.5),
            },
            damping: 7.0 - step,
            ..base.clone()
        };
        let mut an = DMatrix::zeros(18, 18);
        base.accumulate_damping_delta(&delta, &mut an);
        let mut dp = DMatrix::zeros(18, 18);
        let mut dm = DMatrix::zeros(18, 18);
        plus.accumulate_damping(&mut dp);
        minus.accumulate_damping(&mut dm);
        let fd = (dp - dm) / (2.0 * step);
        assert!((an - fd).amax() <= 1e-6);
    }
}
