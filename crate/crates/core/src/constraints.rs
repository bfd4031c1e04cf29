//! Holonomic constraint blocks, their analytic Jacobians, and the bilinear
//! second-derivative contractions needed by the implicit solver and the
//! sensitivity sweeps.
//!
//! All blocks are at most bilinear in the generalized coordinates, so the
//! Jacobian is linear in `q` and every second derivative is constant.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::elements::PointHandle;

/// Harmonic motion `amplitude * sin(angular_frequency * t)` applied to one
/// component of a ground anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicMotion {
    pub component: usize,
    pub amplitude: f64,
    pub angular_frequency: f64,
}

impl HarmonicMotion {
    pub fn offset(&self, t: f64) -> f64 {
        self.amplitude * (self.angular_frequency * t).sin()
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.amplitude * self.angular_frequency * (self.angular_frequency * t).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintBlock {
    /// Orthonormality of a rigid body's basis vectors; 6 rows ordered
    /// `[e1·e1-1, e2·e2-1, e3·e3-1, e1·e2, e1·e3, e2·e3]`.
    InternalOrthonormality { dof: usize },
    /// Coincidence of two attachment points; 3 rows `r_a - r_b`.
    Spherical { a: PointHandle, b: PointHandle },
    /// Slope direction of a beam node frozen in a rigid body's frame;
    /// 3 rows `Rᵀ s - reference` with `R = [e1 e2 e3]`.
    Welded {
        rigid_dof: usize,
        slope_dof: usize,
        reference: Vector3<f64>,
    },
    /// Selected components of an attachment pinned to an anchor point,
    /// optionally with harmonic motion on one component.
    GroundAnchor {
        target: PointHandle,
        components: Vec<usize>,
        anchor: Vector3<f64>,
        motion: Option<HarmonicMotion>,
    },
}

impl ConstraintBlock {
    pub fn rows(&self) -> usize {
        match self {
            ConstraintBlock::InternalOrthonormality { .. } => 6,
            ConstraintBlock::Spherical { .. } | ConstraintBlock::Welded { .. } => 3,
            ConstraintBlock::GroundAnchor { components, .. } => components.len(),
        }
    }
}

/// Explicit design shift of one constraint block for one design variable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintDelta {
    pub block: usize,
    /// Anchor-point shift of a ground anchor.
    pub danchor: Vector3<f64>,
    /// Local-point shift of the rigid-side attachment (spherical `a`, or the
    /// anchor target).
    pub dlocal_a: Vector3<f64>,
    /// Local-point shift of spherical side `b`.
    pub dlocal_b: Vector3<f64>,
    /// Shift of a fixed ground attachment on either spherical side.
    pub dground_a: Vector3<f64>,
    pub dground_b: Vector3<f64>,
    /// Shift of a welded block's frozen reference.
    pub dreference: Vector3<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    blocks: Vec<ConstraintBlock>,
    offsets: Vec<usize>,
    rows: usize,
    ndof: usize,
}

fn basis(q: &DVector<f64>, dof: usize, k: usize) -> Vector3<f64> {
    Vector3::from(q.fixed_rows::<3>(dof + 3 + 3 * k))
}

impl ConstraintSet {
    pub fn new(ndof: usize, blocks: Vec<ConstraintBlock>) -> Self {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut rows = 0;
        for b in &blocks {
            offsets.push(rows);
            rows += b.rows();
        }
        ConstraintSet {
            blocks,
            offsets,
            rows,
            ndof,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn blocks(&self) -> &[ConstraintBlock] {
        &self.blocks
    }

    pub fn block_offset(&self, idx: usize) -> usize {
        self.offsets[idx]
    }

    pub fn evaluate(&self, q: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut g = DVector::zeros(self.rows);
        for (b, off) in self.blocks.iter().zip(&self.offsets) {
            match b {
                ConstraintBlock::InternalOrthonormality { dof } => {
                    let e1 = basis(q, *dof, 0);
                    let e2 = basis(q, *dof, 1);
                    let e3 = basis(q, *dof, 2);
                    g[*off] = e1.dot(&e1) - 1.0;
                    g[off + 1] = e2.dot(&e2) - 1.0;
                    g[off + 2] = e3.dot(&e3) - 1.0;
                    g[off + 3] = e1.dot(&e2);
                    g[off + 4] = e1.dot(&e3);
                    g[off + 5] = e2.dot(&e3);
                }
                ConstraintBlock::Spherical { a, b } => {
                    let d = a.position(q) - b.position(q);
                    g.fixed_rows_mut::<3>(*off).copy_from(&d);
                }
                ConstraintBlock::Welded {
                    rigid_dof,
                    slope_dof,
                    reference,
                } => {
                    let s = Vector3::from(q.fixed_rows::<3>(*slope_dof));
                    for k in 0..3 {
                        g[off + k] = basis(q, *rigid_dof, k).dot(&s) - reference[k];
                    }
                }
                ConstraintBlock::GroundAnchor {
                    target,
                    components,
                    anchor,
                    motion,
                } => {
                    let r = target.position(q);
                    for (row, c) in components.iter().enumerate() {
                        let mut val = r[*c] - anchor[*c];
                        if let Some(m) = motion {
                            if m.component == *c {
                                val -= m.offset(t);
                            }
                        }
                        g[off + row] = val;
                    }
                }
            }
        }
        g
    }

    /// `∂g/∂t`, nonzero only on anchor rows with prescribed motion.
    pub fn time_partial(&self, t: f64) -> DVector<f64> {
        let mut gt = DVector::zeros(self.rows);
        for (b, off) in self.blocks.iter().zip(&self.offsets) {
            if let ConstraintBlock::GroundAnchor {
                components, motion, ..
            } = b
            {
                if let Some(m) = motion {
                    for (row, c) in components.iter().enumerate() {
                        if m.component == *c {
                            gt[off + row] = -m.rate(t);
                        }
                    }
                }
            }
        }
        gt
    }

    pub fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.rows, self.ndof);
        for (b, off) in self.blocks.iter().zip(&self.offsets) {
            match b {
                ConstraintBlock::InternalOrthonormality { dof } => {
                    let e: [Vector3<f64>; 3] =
                        [basis(q, *dof, 0), basis(q, *dof, 1), basis(q, *dof, 2)];
                    let pairs = [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 0, 1), (4, 0, 2), (5, 1, 2)];
                    for (row, i, j) in pairs {
                        if i == j {
                            for k in 0..3 {
                                jac[(off + row, dof + 3 + 3 * i + k)] = 2.0 * e[i][k];
                            }
                        } else {
                            for k in 0..3 {
                                jac[(off + row, dof + 3 + 3 * i + k)] = e[j][k];
                                jac[(off + row, dof + 3 + 3 * j + k)] = e[i][k];
                            }
                        }
                    }
                }
                ConstraintBlock::Spherical { a, b } => {
                    for (dof, c) in a.jacobian_cols() {
                        for k in 0..3 {
                            jac[(off + k, dof + k)] += c;
                        }
                    }
                    for (dof, c) in b.jacobian_cols() {
                        for k in 0..3 {
                            jac[(off + k, dof + k)] -= c;
                        }
                    }
                }
                ConstraintBlock::Welded {
                    rigid_dof,
                    slope_dof,
                    ..
                } => {
                    let s = Vector3::from(q.fixed_rows::<3>(*slope_dof));
                    for row in 0..3 {
                        let e = basis(q, *rigid_dof, row);
                        for k in 0..3 {
                            jac[(off + row, rigid_dof + 3 + 3 * row + k)] = s[k];
                            jac[(off + row, slope_dof + k)] = e[k];
                        }
                    }
                }
                ConstraintBlock::GroundAnchor {
                    target, components, ..
                } => {
                    for (row, c) in components.iter().enumerate() {
                        for (dof, coef) in target.jacobian_cols() {
                            jac[(off + row, dof + c)] += coef;
                        }
                    }
                }
            }
        }
        jac
    }

    /// Directional derivative of the Jacobian along `v`: `(∂G/∂q)·v`.
    /// Constant in `q` because every block is at most bilinear.
    pub fn jacobian_directional(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.rows, self.ndof);
        for (b, off) in self.blocks.iter().zip(&self.offsets) {
            match b {
                ConstraintBlock::InternalOrthonormality { dof } => {
                    let e: [Vector3<f64>; 3] =
                        [basis(v, *dof, 0), basis(v, *dof, 1), basis(v, *dof, 2)];
                    let pairs = [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 0, 1), (4, 0, 2), (5, 1, 2)];
                    for (row, i, j) in pairs {
                        if i == j {
                            for k in 0..3 {
                                jac[(off + row, dof + 3 + 3 * i + k)] = 2.0 * e[i][k];
                            }
                        } else {
                            for k in 0..3 {
                                jac[(off + row, dof + 3 + 3 * i + k)] = e[j][k];
                                jac[(off + row, dof + 3 + 3 * j + k)] = e[i][k];
                            }
                        }
                    }
                }
                ConstraintBlock::Welded {
                    rigid_dof,
                    slope_dof,
                    ..
                } => {
                    let s = Vector3::from(v.fixed_rows::<3>(*slope_dof));
                    for row in 0..3 {
                        let e = basis(v, *rigid_dof, row);
                        for k in 0..3 {
                            jac[(off + row, rigid_dof + 3 + 3 * row + k)] = s[k];
                            jac[(off + row, slope_dof + k)] = e[k];
                        }
                    }
                }
                ConstraintBlock::Spherical { .. } | ConstraintBlock::GroundAnchor { .. } => {}
            }
        }
        jac
    }

    /// `Σ_k λ_k ∇²g_k`, the multiplier-weighted constraint curvature.
    pub fn hessian_lambda(&self, lam: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.ndof, self.ndof);
        for (b, off) in self.blocks.iter().zip(&self.offsets) {
            match b {
                ConstraintBlock::InternalOrthonormality { dof } => {
                    let pairs = [(0, 0, 0), (1, 1, 1), (2, 2, 2), (3, 0, 1), (4, 0, 2), (5, 1, 2)];
                    for (row, i, j) in pairs {
                        let l = lam[off + row];
                        if l == 0.0 {
                            continue;
                        }
                        let bi = dof + 3 + 3 * i;
                        let bj = dof + 3 + 3 * j;
                        if i == j {
                            for k in 0..3 {
                                h[(bi + k, bi + k)] += 2.0 * l;
                            }
                        } else {
                            for k in 0..3 {
                                h[(bi + k, bj + k)] += l;
                                h[(bj + k, bi + k)] += l;
                            }
                        }
                    }
                }
                ConstraintBlock::Welded {
                    rigid_dof,
                    slope_dof,
                    ..
                } => {
                    for row in 0..3 {
                        let l = lam[off + row];
                        if l == 0.0 {
                            continue;
                        }
                        let be = rigid_dof + 3 + 3 * row;
                        for k in 0..3 {
                            h[(be + k, slope_dof + k)] += l;
                            h[(slope_dof + k, be + k)] += l;
                        }
                    }
                }
                ConstraintBlock::Spherical { .. } | ConstraintBlock::GroundAnchor { .. } => {}
            }
        }
        h
    }

    /// Explicit design derivative `∂g/∂a_i` assembled from per-block shifts.
    pub fn design_derivative(
        &self,
        q: &DVector<f64>,
        deltas: &[ConstraintDelta],
    ) -> DVector<f64> {
        let mut dg = DVector::zeros(self.rows);
        for delta in deltas {
            let off = self.offsets[delta.block];
            match &self.blocks[delta.block] {
                ConstraintBlock::GroundAnchor {
                    target, components, ..
                } => {
                    for (row, c) in components.iter().enumerate() {
                        let mut val = -delta.danchor[*c];
                        for k in 0..3 {
                            if delta.dlocal_a[k] != 0.0 {
                                if let Some(dof) = target.rigid_basis_dof(k) {
                                    val += delta.dlocal_a[k] * q[dof + c];
                                }
                            }
                        }
                        dg[off + row] += val;
                    }
                }
                ConstraintBlock::Spherical { a, b } => {
                    let mut val = delta.dground_a - delta.dground_b;
                    for k in 0..3 {
                        if delta.dlocal_a[k] != 0.0 {
                            if let Some(dof) = a.rigid_basis_dof(k) {
                                val += delta.dlocal_a[k] * Vector3::from(q.fixed_rows::<3>(dof));
                            }
                        }
                        if delta.dlocal_b[k] != 0.0 {
                            if let Some(dof) = b.rigid_basis_dof(k) {
                                val -= delta.dlocal_b[k] * Vector3::from(q.fixed_rows::<3>(dof));
                            }
                        }
                    }
                    let mut rows = dg.fixed_rows_mut::<3>(off);
                    rows += val;
                }
                ConstraintBlock::Welded { .. } => {
                    let mut rows = dg.fixed_rows_mut::<3>(off);
                    rows -= delta.dreference;
                }
                ConstraintBlock::InternalOrthonormality { .. } => {}
            }
        }
        dg
    }

    /// Explicit design derivative of `Gᵀλ`, accumulated into `out`.
    /// Nonzero only where a rigid local attachment point shifts.
    pub fn design_jacobian_transpose_lambda(
        &self,
        deltas: &[ConstraintDelta],
        lam: &DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        for delta in deltas {
            let off = self.offsets[delta.block];
            match &self.blocks[delta.block] {
                ConstraintBlock::Spherical { a, b } => {
                    let lam_block = Vector3::from(lam.fixed_rows::<3>(off));
                    for k in 0..3 {
                        if delta.dlocal_a[k] != 0.0 {
                            if let Some(dof) = a.rigid_basis_dof(k) {
                                let mut block = out.fixed_rows_mut::<3>(dof);
                                block += delta.dlocal_a[k] * lam_block;
                            }
                        }
                        if delta.dlocal_b[k] != 0.0 {
                            if let Some(dof) = b.rigid_basis_dof(k) {
                                let mut block = out.fixed_rows_mut::<3>(dof);
                                block -= delta.dlocal_b[k] * lam_block;
                            }
                        }
                    }
                }
                ConstraintBlock::GroundAnchor {
                    target, components, ..
                } => {
                    for (row, c) in components.iter().enumerate() {
                        for k in 0..3 {
                            if delta.dlocal_a[k] != 0.0 {
                                if let Some(dof) = target.rigid_basis_dof(k) {
                                    out[dof + c] += delta.dlocal_a[k] * lam[off + row];
                                }
                            }
                        }
                    }
                }
                _ => {}
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

    fn sample_set() -> (ConstraintSet, usize) {
        // one rigid body (dofs 0..12) and two beam nodes (12..18, 18..24)
        let ndof = 24;
        let set = ConstraintSet::new(
            ndof,
            vec![
                ConstraintBlock::InternalOrthonormality { dof: 0 },
                ConstraintBlock::Spherical {
                    a: PointHandle::RigidLocal {
                        dof: 0,
                        local: Vector3::new(0.4, -0.1, 0.2),
                    },
                    b: PointHandle::BeamNode { dof: 12 },
                },
                ConstraintBlock::Welded {
                    rigid_dof: 0,
                    slope_dof: 15,
                    reference: Vector3::new(1.0, 0.0, 0.0),
                },
                ConstraintBlock::GroundAnchor {
                    target: PointHandle::BeamNode { dof: 18 },
                    components: vec![0, 1, 2],
                    anchor: Vector3::new(0.3, 0.3, 0.3),
                    motion: Some(HarmonicMotion {
                        component: 2,
                        amplitude: 0.05,
                        angular_frequency: 6.0,
                    }),
                },
            ],
        );
        (set, ndof)
    }

    fn orthonormal_rigid_state(ndof: usize) -> DVector<f64> {
        let mut q = DVector::zeros(ndof);
        q[3] = 1.0;
        q[7] = 1.0;
        q[11] = 1.0;
        q
    }

    #[test]
    fn orthonormal_frame_has_zero_internal_residual() {
        let (set, ndof) = sample_set();
        let mut q = orthonormal_rigid_state(ndof);
        // make the spherical and welded and anchor rows zero too
        let attach = Vector3::new(0.4, -0.1, 0.2);
        q.fixed_rows_mut::<3>(12).copy_from(&attach);
        q.fixed_rows_mut::<3>(15)
            .copy_from(&Vector3::new(1.0, 0.0, 0.0));
        q.fixed_rows_mut::<3>(18)
            .copy_from(&Vector3::new(0.3, 0.3, 0.3));
        let g = set.evaluate(&q, 0.0);
        assert_abs_diff_eq!(g.amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn jacobian_matches_fd() {
        let (set, ndof) = sample_set();
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..100 {
            let q = DVector::from_fn(ndof, |_, _| rng.gen_range(-1.0..1.0));
            let jac = set.jacobian(&q);
            let step = 1e-6 * (1.0 + q.amax());
            for k in 0..ndof {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += step;
                qm[k] -= step;
                let col = (set.evaluate(&qp, 0.0) - set.evaluate(&qm, 0.0)) / (2.0 * step);
                for r in 0..set.rows() {
                    assert_abs_diff_eq!(jac[(r, k)], col[r], epsilon = 1e-6 * (1.0 + jac.amax()));
                }
            }
        }
    }

    #[test]
    fn internal_jacobian_row_structure() {
        let (set, ndof) = sample_set();
        let mut rng = StdRng::seed_from_u64(2);
        let q = DVector::from_fn(ndof, |_, _| rng.gen_range(-1.0..1.0));
        let jac = set.jacobian(&q);
        // first row is 2 e1 on the e1 columns and zero elsewhere
        for k in 0..ndof {
            let expect = if (3..6).contains(&k) { 2.0 * q[k] } else { 0.0 };
            assert_abs_diff_eq!(jac[(0, k)], expect);
        }
    }

    #[test]
    fn linear_rows_have_constant_jacobian() {
        let (set, ndof) = sample_set();
        let mut rng = StdRng::seed_from_u64(9);
        let q1 = DVector::from_fn(ndof, |_, _| rng.gen_range(-1.0..1.0));
        let q2 = DVector::from_fn(ndof, |_, _| rng.gen_range(-1.0..1.0));
        let j1 = set.jacobian(&q1);
        let j2 = set.jacobian(&q2);
        // spherical rows 6..9 and anchor rows 12..15
        for r in (6..9).chain(12..15) {
            for k in 0..ndof {
                assert_eq!(j1[(r, k)], j2[(r, k)]);
            }
        }
    }

    #[test]
    fn directional_jacobian_matches_fd() {
        let (set, ndof) = sample_set();
        let mut rng = StdRng::seed_from_u64(31);
        let q = DVector::from_fn(ndof, |_, _| rng.gen_range(-1.0..1.0));
        let v = DVector::from_fn(ndof, |_, _| rng.gen_range(-1.0..1.0));
        let dir = set.jacobian_directional(&v);
        let step = 1e-6;
        let fd = (set.jacobian(&(&q + step * &v)) - set.jacobian(&(&q - step * &v)))
            / (2.0 * step);
        assert!((dir.clone() - fd).amax() <= 1e-5 * (1.0 + dir.amax()));
        // zero direction gives the zero matrix
        assert_eq!(
            set.jacobian_directional(&DVector::zeros(ndof)).amax(),
            0.0
        );
    }

    #[test]
    fn hessian_lambda_matches_directional_transpose() {
        let (set, ndof) = sample_set();
        let mut rng = StdRng::seed_from_u64(37);
        let v = DVector::from_fn(ndof, |_, _| rng.gen_range(-1.0..1.0));
        let lam = DVector::from_fn(set.rows(), |_, _| rng.gen_range(-1.0..1.0));
        // (Σ λ_k ∇²g_k) v == [(∂G/∂q)·v]ᵀ λ
        let h = set.hessian_lambda(&lam);
        let lhs = &h * &v;
        let rhs = set.jacobian_directional(&v).transpose() * &lam;
        assert!((lhs - rhs).amax() <= 1e-12);
        // and the contraction is symmetric
        assert!((h.clone() - h.transpose()).amax() == 0.0);
    }

    #[test]
    fn anchor_motion_time_partial() {
        let (set, _) = sample_set();
        let gt = set.time_partial(0.0);
        // only the moving z row is nonzero, with rate -A*omega at t = 0
        assert_abs_diff_eq!(gt[14], -0.3, epsilon = 1e-12);
        assert_eq!(gt.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn spec_anchor_design_row_pattern() {
        // anchor whose position follows a bound node coordinate: -1 row
        let (set, ndof) = sample_set();
        let q = orthonormal_rigid_state(ndof);
        let deltas = vec![ConstraintDelta {
            block: 3,
            danchor: Vector3::new(1.0, 0.0, 0.0),
            ..Default::default()
        }];
        let dg = set.design_derivative(&q, &deltas);
        assert_eq!(dg[12], -1.0);
        assert_eq!(dg.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn design_rows_zero_without_deltas() {
        let (set, ndof) = sample_set();
        let q = orthonormal_rigid_state(ndof);
        assert_eq!(set.design_derivative(&q, &[]).amax(), 0.0);
    }

    #[test]
    fn rigid_local_shift_matches_fd() {
        // moving the rigid-side local point of the spherical joint
        let ndof = 18;
        let local = Vector3::new(0.4, -0.1, 0.2);
        let build = |loc: Vector3<f64>| {
            ConstraintSet::new(
                ndof,
                vec![ConstraintBlock::Spherical {
                    a: PointHandle::RigidLocal { dof: 0, local: loc },
                    b: PointHandle::BeamNode { dof: 12 },
                }],
            )
        };
        let set = build(local);
        let mut rng = StdRng::seed_from_u64(41);
        let q = DVector::from_fn(ndof, |_, _| rng.gen_range(-1.0..1.0));
        let lam = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let chi = Vector3::new(0.3, -0.7, 0.2);
        let step = 1e-6;
        let setp = build(local + step * chi);
        let setm = build(local - step * chi);

        let deltas = vec![ConstraintDelta {
            block: 0,
            dlocal_a: chi,
            ..Default::default()
        }];
        let dg = set.design_derivative(&q, &deltas);
        let dg_fd = (setp.evaluate(&q, 0.0) - setm.evaluate(&q, 0.0)) / (2.0 * step);
        assert!((dg.clone() - dg_fd).amax() <= 1e-8);

        let mut dgtl = DVector::zeros(ndof);
        set.design_jacobian_transpose_lambda(&deltas, &lam, &mut dgtl);
        let fd = (setp.jacobian(&q).transpose() * &lam - setm.jacobian(&q).transpose() * &lam)
            / (2.0 * step);
        assert!((dgtl - fd).amax() <= 1e-8);
    }
}
