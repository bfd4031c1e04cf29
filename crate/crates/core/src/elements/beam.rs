//! Two-noded Euler-Bernoulli beam element described by absolute nodal
//! positions and slopes.
//!
//! Local ordering is `[r_i, dr_i/dx, r_j, dr_j/dx]` (12 dofs). The element's
//! mass matrix is constant; elastic forces split into an axial part driven by
//! the element-averaged quadratic strain and a constant bending stiffness, so
//! both derive exactly from a potential.

use nalgebra::{Matrix4, SMatrix, SVector, Vector3};
use thiserror::Error;

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;

#[derive(Debug, Error, PartialEq)]
pub enum ElementError {
    #[error("shape coordinate {0} outside [0, 1]")]
    ShapeOutOfRange(f64),
    #[error("spring endpoints coincide (zero current length)")]
    ZeroSpringLength,
}

/// Cubic Hermite shape values `(s1, s2, s3, s4)` at `xi = x/l`.
pub fn shape_values(xi: f64, l: f64) -> Result<[f64; 4], ElementError> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(ElementError::ShapeOutOfRange(xi));
    }
    let xi2 = xi * xi;
    let xi3 = xi2 * xi;
    Ok([
        1.0 - 3.0 * xi2 + 2.0 * xi3,
        l * (xi - 2.0 * xi2 + xi3),
        3.0 * xi2 - 2.0 * xi3,
        l * (xi3 - xi2),
    ])
}

/// First derivatives of the shape values with respect to the material
/// coordinate `x`.
pub fn shape_dx(xi: f64, l: f64) -> Result<[f64; 4], ElementError> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(ElementError::ShapeOutOfRange(xi));
    }
    let xi2 = xi * xi;
    Ok([
        (-6.0 * xi + 6.0 * xi2) / l,
        1.0 - 4.0 * xi + 3.0 * xi2,
        (6.0 * xi - 6.0 * xi2) / l,
        3.0 * xi2 - 2.0 * xi,
    ])
}

/// Expands a 4x4 coefficient matrix into the 12x12 block form `c_ij * I3`.
fn expand4(c: &Matrix4<f64>) -> Mat12 {
    let mut out = Mat12::zeros();
    for bi in 0..4 {
        for bj in 0..4 {
            let v = c[(bi, bj)];
            for k in 0..3 {
                out[(3 * bi + k, 3 * bj + k)] = v;
            }
        }
    }
    out
}

fn mass_coeffs(l: f64) -> Matrix4<f64> {
    Matrix4::new(
        156.0,
        22.0 * l,
        54.0,
        -13.0 * l,
        22.0 * l,
        4.0 * l * l,
        13.0 * l,
        -3.0 * l * l,
        54.0,
        13.0 * l,
        156.0,
        -22.0 * l,
        -13.0 * l,
        -3.0 * l * l,
        -22.0 * l,
        4.0 * l * l,
    )
}

/// `∫ S'ᵀS' dx` over the element (per identity block).
fn axial_coeffs(l: f64) -> Matrix4<f64> {
    Matrix4::new(
        6.0 / (5.0 * l),
        0.1,
        -6.0 / (5.0 * l),
        0.1,
        0.1,
        2.0 * l / 15.0,
        -0.1,
        -l / 30.0,
        -6.0 / (5.0 * l),
        -0.1,
        6.0 / (5.0 * l),
        -0.1,
        0.1,
        -l / 30.0,
        -0.1,
        2.0 * l / 15.0,
    )
}

fn axial_coeffs_dl(l: f64) -> Matrix4<f64> {
    let a = -6.0 / (5.0 * l * l);
    Matrix4::new(
        a,
        0.0,
        -a,
        0.0,
        0.0,
        2.0 / 15.0,
        0.0,
        -1.0 / 30.0,
        -a,
        0.0,
        a,
        0.0,
        0.0,
        -1.0 / 30.0,
        0.0,
        2.0 / 15.0,
    )
}

/// `∫ S''ᵀS'' dx` over the element (per identity block).
fn bending_coeffs(l: f64) -> Matrix4<f64> {
    let l2 = l * l;
    let l3 = l2 * l;
    Matrix4::new(
        12.0 / l3,
        6.0 / l2,
        -12.0 / l3,
        6.0 / l2,
        6.0 / l2,
        4.0 / l,
        -6.0 / l2,
        2.0 / l,
        -12.0 / l3,
        -6.0 / l2,
        12.0 / l3,
        -6.0 / l2,
        6.0 / l2,
        2.0 / l,
        -6.0 / l2,
        4.0 / l,
    )
}

fn bending_coeffs_dl(l: f64) -> Matrix4<f64> {
    let l2 = l * l;
    let l3 = l2 * l;
    let l4 = l3 * l;
    Matrix4::new(
        -36.0 / l4,
        -12.0 / l3,
        36.0 / l4,
        -12.0 / l3,
        -12.0 / l3,
        -4.0 / l2,
        12.0 / l3,
        -2.0 / l2,
        36.0 / l4,
        12.0 / l3,
        -36.0 / l4,
        12.0 / l3,
        -12.0 / l3,
        -2.0 / l2,
        12.0 / l3,
        -4.0 / l2,
    )
}

/// Shift of an element's scalar parameters induced by one design variable
/// (chain factors already applied).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BeamParamDelta {
    pub dlength: f64,
    pub ddensity: f64,
    pub darea: f64,
    pub dsecond_moment: f64,
    pub dyoungs: f64,
}

impl BeamParamDelta {
    pub fn is_zero(&self) -> bool {
        self.dlength == 0.0
            && self.ddensity == 0.0
            && self.darea == 0.0
            && self.dsecond_moment == 0.0
            && self.dyoungs == 0.0
    }
}

/// Beam element parameters. `length` is the undeformed length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamElement {
    pub length: f64,
    pub area: f64,
    pub second_moment: f64,
    pub youngs_modulus: f64,
    pub density: f64,
    /// Use the cross-section area (scaled by the axial strain) in place of
    /// the second moment in the bending stiffness, matching an alternative
    /// published form. Off by default.
    pub literal_transverse: bool,
}

impl BeamElement {
    /// Consistent mass matrix `(rho A l / 420) * [...]`.
    pub fn mass_matrix(&self) -> Mat12 {
        expand4(&(self.density * self.area * self.length / 420.0 * mass_coeffs(self.length)))
    }

    fn mass_matrix_dl(&self) -> Mat12 {
        let c = self.density * self.area / 420.0;
        let l = self.length;
        let m = Matrix4::new(
            156.0,
            44.0 * l,
            54.0,
            -26.0 * l,
            44.0 * l,
            12.0 * l * l,
            26.0 * l,
            -9.0 * l * l,
            54.0,
            26.0 * l,
            156.0,
            -44.0 * l,
            -26.0 * l,
            -9.0 * l * l,
            -44.0 * l,
            12.0 * l * l,
        );
        expand4(&(c * m))
    }

    /// Mass-matrix shift for a design-parameter shift.
    pub fn mass_matrix_delta(&self, d: &BeamParamDelta) -> Mat12 {
        let mut out = Mat12::zeros();
        if d.dlength != 0.0 {
            out += d.dlength * self.mass_matrix_dl();
        }
        if d.ddensity != 0.0 || d.darea != 0.0 {
            out += (d.ddensity / self.density + d.darea / self.area) * self.mass_matrix();
        }
        out
    }

    /// Gradient of the gravity potential with respect to the element dofs.
    pub fn gravity_gradient(&self, nu: &Vector3<f64>) -> Vec12 {
        let c = -self.density * self.area * self.length / 12.0;
        let l = self.length;
        let mut out = Vec12::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&(6.0 * c * nu));
        out.fixed_rows_mut::<3>(3).copy_from(&(l * c * nu));
        out.fixed_rows_mut::<3>(6).copy_from(&(6.0 * c * nu));
        out.fixed_rows_mut::<3>(9).copy_from(&(-l * c * nu));
        out
    }

    pub fn gravity_gradient_delta(&self, nu: &Vector3<f64>, d: &BeamParamDelta) -> Vec12 {
        let mut out = Vec12::zeros();
        if d.dlength != 0.0 {
            let c = -self.density * self.area / 12.0;
            let l = self.length;
            out.fixed_rows_mut::<3>(0).copy_from(&(6.0 * c * nu));
            out.fixed_rows_mut::<3>(3).copy_from(&(2.0 * l * c * nu));
            out.fixed_rows_mut::<3>(6).copy_from(&(6.0 * c * nu));
            out.fixed_rows_mut::<3>(9).copy_from(&(-2.0 * l * c * nu));
            out *= d.dlength;
        }
        if d.ddensity != 0.0 || d.darea != 0.0 {
            out += (d.ddensity / self.density + d.darea / self.area) * self.gravity_gradient(nu);
        }
        out
    }

    /// Constant axial strain from the chord length, `|r_j - r_i|/l - 1`.
    /// Used for stress reporting.
    pub fn chord_strain(&self, q: &Vec12) -> f64 {
        let chord = q.fixed_rows::<3>(6) - q.fixed_rows::<3>(0);
        chord.norm() / self.length - 1.0
    }

    /// Gradient of the chord strain with respect to the element dofs.
    pub fn chord_strain_gradient(&self, q: &Vec12) -> Vec12 {
        let chord = q.fixed_rows::<3>(6) - q.fixed_rows::<3>(0);
        let norm = chord.norm();
        let mut out = Vec12::zeros();
        if norm > 0.0 {
            let dir = chord / (norm * self.length);
            out.fixed_rows_mut::<3>(0).copy_from(&-dir);
            out.fixed_rows_mut::<3>(6).copy_from(&dir);
        }
        out
    }

    /// Explicit length-derivative of the chord strain at fixed dofs.
    pub fn chord_strain_dl(&self, q: &Vec12) -> f64 {
        -(1.0 + self.chord_strain(q)) / self.length
    }

    fn axial_integral(&self) -> Mat12 {
        expand4(&axial_coeffs(self.length))
    }

    /// Element-averaged quadratic axial strain `(qᵀWq - l) / (2l)` with
    /// `W = ∫S'ᵀS'dx`. Reduces to the chord strain for small deformation and
    /// makes the axial force an exact potential gradient.
    pub fn mean_axial_strain(&self, q: &Vec12) -> f64 {
        let w = self.axial_integral();
        ((w * q).dot(q) - self.length) / (2.0 * self.length)
    }

    /// Elastic potential energy (axial + bending).
    pub fn elastic_energy(&self, q: &Vec12) -> f64 {
        let e = self.mean_axial_strain(q);
        let axial = 0.5 * self.youngs_modulus * self.area * self.length * e * e;
        let b = expand4(&bending_coeffs(self.length));
        let bend_quad = (b * q).dot(q);
        let bending = if self.literal_transverse {
            0.5 * self.youngs_modulus * self.area * e * bend_quad
        } else {
            0.5 * self.youngs_modulus * self.second_moment * bend_quad
        };
        axial + bending
    }

    /// Gradient of the elastic energy with respect to the element dofs.
    pub fn elastic_force(&self, q: &Vec12) -> Vec12 {
        let w = self.axial_integral();
        let wq = w * q;
        let e = (wq.dot(q) - self.length) / (2.0 * self.length);
        let b = expand4(&bending_coeffs(self.length));
        let bq = b * q;
        if self.literal_transverse {
            self.youngs_modulus * self.area * (e * wq + e * bq)
        } else {
            self.youngs_modulus * self.area * e * wq + self.youngs_modulus * self.second_moment * bq
        }
    }

    /// State Jacobian of `elastic_force`.
    pub fn elastic_stiffness(&self, q: &Vec12) -> Mat12 {
        let w = self.axial_integral();
        let wq = w * q;
        let e = (wq.dot(q) - self.length) / (2.0 * self.length);
        let de = wq / self.length;
        let b = expand4(&bending_coeffs(self.length));
        let ea = self.youngs_modulus * self.area;
        if self.literal_transverse {
            let bq = b * q;
            ea * (e * (w + b) + (wq + bq) * de.transpose())
        } else {
            ea * (e * w + wq * de.transpose()) + self.youngs_modulus * self.second_moment * b
        }
    }

    /// Explicit shift of the elastic force for a design-parameter shift, at
    /// fixed element dofs.
    pub fn elastic_force_delta(&self, q: &Vec12, d: &BeamParamDelta) -> Vec12 {
        let l = self.length;
        let w = self.axial_integral();
        let wq = w * q;
        let e = (wq.dot(q) - l) / (2.0 * l);
        let b = expand4(&bending_coeffs(l));
        let bq = b * q;
        let ea = self.youngs_modulus * self.area;

        let mut out = Vec12::zeros();
        if d.dlength != 0.0 {
            let wdl = expand4(&axial_coeffs_dl(l));
            let bdl = expand4(&bending_coeffs_dl(l));
            let de_dl = ((wdl * q).dot(q) - 1.0) / (2.0 * l) - e / l;
            let mut f_dl = ea * (de_dl * wq + e * (wdl * q));
            if self.literal_transverse {
                f_dl += ea * (de_dl * bq + e * (bdl * q));
            } else {
                f_dl += self.youngs_modulus * self.second_moment * (bdl * q);
            }
            out += d.dlength * f_dl;
        }
        if d.dyoungs != 0.0 {
            out += d.dyoungs / self.youngs_modulus * self.elastic_force(q);
        }
        if d.darea != 0.0 {
            let mut f_da = ea / self.area * e * wq;
            if self.literal_transverse {
                f_da += ea / self.area * e * bq;
            }
            out += d.darea * f_da;
        }
        if d.dsecond_moment != 0.0 && !self.literal_transverse {
            out += d.dsecond_moment * self.youngs_modulus * bq;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_element() -> BeamElement {
        BeamElement {
            length: 0.7,
            area: 2.5e-3,
            second_moment: 5.2e-7,
            youngs_modulus: 1.0e7,
            density: 4000.0,
            literal_transverse: false,
        }
    }

    fn random_state(rng: &mut StdRng) -> Vec12 {
        Vec12::from_fn(|_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn shape_endpoints_interpolate() {
        assert_eq!(shape_values(0.0, 2.0).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(shape_values(1.0, 2.0).unwrap(), [0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn shape_midpoint() {
        let s = shape_values(0.5, 1.0).unwrap();
        assert_abs_diff_eq!(s[0], 0.5);
        assert_abs_diff_eq!(s[1], 0.125);
        assert_abs_diff_eq!(s[2], 0.5);
        assert_abs_diff_eq!(s[3], -0.125);
    }

    #[test]
    fn shape_rejects_out_of_range() {
        assert!(shape_values(-0.1, 1.0).is_err());
        assert!(shape_values(1.1, 1.0).is_err());
    }

    #[test]
    fn shape_partition_of_unity() {
        for k in 0..=1000 {
            let xi = k as f64 / 1000.0;
            let s = shape_values(xi, 3.7).unwrap();
            assert!((s[0] + s[2] - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn mass_reference_entry() {
        // rho*A*l = 420 makes the leading entry exactly 156
        let e = BeamElement {
            length: 1.0,
            area: 1.0,
            second_moment: 1.0,
            youngs_modulus: 1.0,
            density: 420.0,
            literal_transverse: false,
        };
        assert_abs_diff_eq!(e.mass_matrix()[(0, 0)], 156.0);
    }

    #[test]
    fn mass_pendulum_element_entry() {
        let e = BeamElement {
            length: 0.24,
            area: 0.0025,
            second_moment: 5.208333e-7,
            youngs_modulus: 1.0e7,
            density: 4000.0,
            literal_transverse: false,
        };
        assert_abs_diff_eq!(e.mass_matrix()[(0, 0)], 0.891429, epsilon = 1e-6);
    }

    #[test]
    fn mass_symmetric_and_psd() {
        let e = test_element();
        let m = e.mass_matrix();
        assert_eq!(m, m.transpose());
        let norm = m.norm();
        let eig = nalgebra::SymmetricEigen::new(m).eigenvalues;
        for v in eig.iter() {
            assert!(*v >= -1e-12 * norm);
        }
    }

    #[test]
    fn axial_and_bending_integrals_match_quadrature() {
        // 5-point Gauss-Legendre is exact for the quartic integrands.
        let xs = [
            0.5 - 0.453089922969332 * 1.0,
            0.5 - 0.269234655052841 * 1.0,
            0.5,
            0.5 + 0.269234655052841 * 1.0,
            0.5 + 0.453089922969332 * 1.0,
        ];
        let ws = [
            0.118463442528095,
            0.239314335249683,
            0.284444444444444,
            0.239314335249683,
            0.118463442528095,
        ];
        let l = 1.3;
        let mut w_quad = Matrix4::zeros();
        for (xi, wgt) in xs.iter().zip(ws.iter()) {
            let d = shape_dx(*xi, l).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    w_quad[(i, j)] += wgt * l * d[i] * d[j];
                }
            }
        }
        let w = axial_coeffs(l);
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(w[(i, j)], w_quad[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn chord_strain_examples() {
        let e = test_element();
        let l = e.length;
        let mut q = Vec12::zeros();
        q.fixed_rows_mut::<3>(6).copy_from(&Vector3::new(l, 0.0, 0.0));
        assert_abs_diff_eq!(e.chord_strain(&q), 0.0);
        q.fixed_rows_mut::<3>(6)
            .copy_from(&Vector3::new(1.01 * l, 0.0, 0.0));
        assert_abs_diff_eq!(e.chord_strain(&q), 0.01, epsilon = 1e-12);
        q.fixed_rows_mut::<3>(6).copy_from(&Vector3::zeros());
        assert_abs_diff_eq!(e.chord_strain(&q), -1.0);
    }

    fn straight_state(l: f64) -> Vec12 {
        let mut q = Vec12::zeros();
        q[3] = 1.0;
        q[6] = l;
        q[9] = 1.0;
        q
    }

    #[test]
    fn straight_element_is_force_free() {
        let e = test_element();
        let q = straight_state(e.length);
        assert_abs_diff_eq!(e.mean_axial_strain(&q), 0.0, epsilon = 1e-14);
        assert!(e.elastic_force(&q).norm() <= 1e-9 * e.youngs_modulus * e.area);
    }

    #[test]
    fn zero_state_gives_zero_force() {
        let e = test_element();
        assert_eq!(e.elastic_force(&Vec12::zeros()), Vec12::zeros());
    }

    #[test]
    fn elastic_force_is_energy_gradient() {
        let e = test_element();
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..100 {
            let q = random_state(&mut rng);
            let f = e.elastic_force(&q);
            let step = 1e-6 * (1.0 + q.amax());
            let mut max_rel = 0.0f64;
            for k in 0..12 {
                let mut qp = q;
                let mut qm = q;
                qp[k] += step;
                qm[k] -= step;
                let fd = (e.elastic_energy(&qp) - e.elastic_energy(&qm)) / (2.0 * step);
                let scale = f.amax().max(1e-9);
                max_rel = max_rel.max((f[k] - fd).abs() / scale);
            }
            assert!(max_rel <= 1e-6, "gradient mismatch {max_rel}");
        }
    }

    #[test]
    fn transverse_force_matches_energy_for_tip_perturbation() {
        let e = test_element();
        let q0 = straight_state(e.length);
        let mut q = q0;
        q[7] += 0.01; // transverse shift of r_j
        let f = e.elastic_force(&q);
        let step = 1e-7;
        for k in 0..12 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += step;
            qm[k] -= step;
            let fd = (e.elastic_energy(&qp) - e.elastic_energy(&qm)) / (2.0 * step);
            assert_relative_eq!(f[k], fd, epsilon = 1e-6 * f.amax().max(1.0));
        }
    }

    #[test]
    fn elastic_stiffness_matches_force_fd() {
        let e = test_element();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let q = random_state(&mut rng);
            let kmat = e.elastic_stiffness(&q);
            let step = 1e-6;
            let scale = kmat.amax().max(1.0);
            for k in 0..12 {
                let mut qp = q;
                let mut qm = q;
                qp[k] += step;
                qm[k] -= step;
                let col = (e.elastic_force(&qp) - e.elastic_force(&qm)) / (2.0 * step);
                for r in 0..12 {
                    assert_abs_diff_eq!(kmat[(r, k)], col[r], epsilon = 1e-5 * scale);
                }
            }
        }
    }

    #[test]
    fn gravity_gradient_values() {
        let e = BeamElement {
            length: 1.0,
            area: 1.0,
            second_moment: 1.0,
            youngs_modulus: 1.0,
            density: 12.0,
            literal_transverse: false,
        };
        let nu = Vector3::new(0.0, 0.0, -9.81);
        let g = e.gravity_gradient(&nu);
        assert_abs_diff_eq!(g[5], 9.81, epsilon = 1e-12);
        assert_abs_diff_eq!(g[11], -9.81, epsilon = 1e-12);
        // translational blocks together carry minus the total weight
        let total = g.fixed_rows::<3>(0) + g.fixed_rows::<3>(6);
        assert_abs_diff_eq!(total[2], 12.0 * 9.81, epsilon = 1e-12);
        assert_eq!(e.gravity_gradient(&Vector3::zeros()), Vec12::zeros());
    }

    #[test]
    fn design_deltas_match_fd() {
        let base = test_element();
        let mut rng = StdRng::seed_from_u64(3);
        let q = random_state(&mut rng);
        let nu = Vector3::new(0.1, -9.81, 0.4);

        // length
        let dl = 1e-7 * base.length;
        let mut ep = base;
        ep.length += dl;
        let mut em = base;
        em.length -= dl;
        let delta = BeamParamDelta {
            dlength: 1.0,
            ..Default::default()
        };
        let m_fd = (ep.mass_matrix() - em.mass_matrix()) / (2.0 * dl);
        let m_an = base.mass_matrix_delta(&delta);
        assert!((m_fd - m_an).amax() <= 1e-7 * m_an.amax().max(1.0));
        let f_fd = (ep.elastic_force(&q) - em.elastic_force(&q)) / (2.0 * dl);
        let f_an = base.elastic_force_delta(&q, &delta);
        assert!((f_fd - f_an).amax() <= 1e-6 * f_an.amax().max(1.0));
        let g_fd = (ep.gravity_gradient(&nu) - em.gravity_gradient(&nu)) / (2.0 * dl);
        let g_an = base.gravity_gradient_delta(&nu, &delta);
        assert!((g_fd - g_an).amax() <= 1e-7 * g_an.amax().max(1.0));

        // modulus, area, second moment, density together
        let scalar_cases: [(BeamParamDelta, fn(&mut BeamElement, f64)); 4] = [
            (
                BeamParamDelta {
                    dyoungs: 1.0,
                    ..Default::default()
                },
                |e, d| e.youngs_modulus += d,
            ),
            (
                BeamParamDelta {
                    darea: 1.0,
                    ..Default::default()
                },
                |e, d| e.area += d,
            ),
            (
                BeamParamDelta {
                    dsecond_moment: 1.0,
                    ..Default::default()
                },
                |e, d| e.second_moment += d,
            ),
            (
                BeamParamDelta {
                    ddensity: 1.0,
                    ..Default::default()
                },
                |e, d| e.density += d,
            ),
        ];
        for (delta, bump) in scalar_cases {
            let step = 1e-6
                * (1.0
                    + base.youngs_modulus.abs().max(base.area.abs())
                    + base.second_moment.abs()
                    + base.density.abs());
            let mut ep = base;
            bump(&mut ep, step);
            let mut em = base;
            bump(&mut em, -step);
            let f_fd = (ep.elastic_force(&q) - em.elastic_force(&q)) / (2.0 * step);
            let f_an = base.elastic_force_delta(&q, &delta);
            assert!(
                (f_fd - f_an).amax() <= 1e-6 * f_an.amax().max(1e-9),
                "elastic delta mismatch for {delta:?}"
            );
            let m_fd = (ep.mass_matrix() - em.mass_matrix()) / (2.0 * step);
            let m_an = base.mass_matrix_delta(&delta);
            assert!((m_fd - m_an).amax() <= 1e-6 * m_an.amax().max(1e-9));
            let g_fd = (ep.gravity_gradient(&nu) - em.gravity_gradient(&nu)) / (2.0 * step);
            let g_an = base.gravity_gradient_delta(&nu, &delta);
            assert!((g_fd - g_an).amax() <= 1e-6 * g_an.amax().max(1e-9));
        }
    }

    #[test]
    fn untouched_element_has_zero_deltas() {
        let e = test_element();
        let q = Vec12::from_fn(|i, _| i as f64 * 0.1);
        let d = BeamParamDelta::default();
        assert_eq!(e.mass_matrix_delta(&d), Mat12::zeros());
        assert_eq!(e.elastic_force_delta(&q, &d), Vec12::zeros());
    }
}
