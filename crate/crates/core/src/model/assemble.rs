//! Assembly of a parsed model and a design vector into a simulatable system:
//! global dof layout, constant mass matrix, constraint and force registries,
//! initial state, and the per-design-variable derivative hooks.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::constraints::{ConstraintBlock, ConstraintDelta, ConstraintSet, HarmonicMotion};
use crate::elements::beam::{BeamElement, BeamParamDelta, ElementError, Vec12};
use crate::elements::rigid::{self, RigidBody};
use crate::elements::spring::{Damper, DamperDelta, Spring, SpringDelta};
use crate::elements::PointHandle;
use crate::error::{AssembleError, ModelError};
use crate::objective::Objective;

use super::{
    AttachmentSpec, BeamProperty, BodySpec, CrossSectionSpec, DesignVarKind, JointSpec,
    ModelDefinition, ObjectiveSpec, OptConstraintSpec, OptimizationSpec,
};

const DEGENERATE_LENGTH: f64 = 1e-9;
const ORTHONORMALITY_TOL: f64 = 1e-9;
const IC_RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SimSettings {
    pub time_step: f64,
    pub duration: f64,
    pub alpha: f64,
    pub newton_tol: f64,
    pub max_newton_iters: usize,
}

impl SimSettings {
    pub fn step_count(&self) -> usize {
        (self.duration / self.time_step).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone)]
pub struct BeamElementInstance {
    pub element: BeamElement,
    pub dof_i: usize,
    pub dof_j: usize,
}

impl BeamElementInstance {
    pub fn gather(&self, q: &DVector<f64>) -> Vec12 {
        let mut out = Vec12::zeros();
        out.fixed_rows_mut::<6>(0)
            .copy_from(&q.fixed_rows::<6>(self.dof_i));
        out.fixed_rows_mut::<6>(6)
            .copy_from(&q.fixed_rows::<6>(self.dof_j));
        out
    }

    pub fn scatter(&self, v: &Vec12, out: &mut DVector<f64>) {
        {
            let mut bi = out.fixed_rows_mut::<6>(self.dof_i);
            bi += v.fixed_rows::<6>(0);
        }
        let mut bj = out.fixed_rows_mut::<6>(self.dof_j);
        bj += v.fixed_rows::<6>(6);
    }

    pub fn scatter_matrix(&self, m: &nalgebra::SMatrix<f64, 12, 12>, out: &mut DMatrix<f64>) {
        let map = |k: usize| if k < 6 { self.dof_i + k } else { self.dof_j + k - 6 };
        for r in 0..12 {
            let gr = map(r);
            for c in 0..12 {
                out[(gr, map(c))] += m[(r, c)];
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RigidInstance {
    pub id: String,
    pub body: RigidBody,
    pub dof: usize,
    pub basis: Matrix3<f64>,
}

#[derive(Debug, Clone)]
pub struct BeamBodyInfo {
    pub id: String,
    pub elements: Vec<usize>,
}

/// Everything one design variable touches, with chain factors applied.
#[derive(Debug, Clone, Default)]
pub struct BindingEffects {
    pub id: String,
    /// Sparse `∂q0/∂a_i`.
    pub dq0: Vec<(usize, f64)>,
    pub beams: Vec<(usize, BeamParamDelta)>,
    pub springs: Vec<(usize, SpringDelta)>,
    pub dampers: Vec<(usize, DamperDelta)>,
    pub constraints: Vec<ConstraintDelta>,
}

#[derive(Debug, Clone)]
pub struct DesignInfo {
    pub ids: Vec<String>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// The design vector this system was assembled at.
    pub values: DVector<f64>,
}

#[derive(Debug, Clone)]
pub enum ResolvedOptConstraint {
    MinBeamLength { beam_body: usize, min: f64 },
    MaxStress { beam_body: usize, limit: f64 },
}

/// Initial-condition validation report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub g_residual: f64,
    pub gdot_residual: f64,
    pub pass: bool,
}

/// Where an attachment's parameters come from, for design chains.
#[derive(Debug, Clone, PartialEq)]
enum AttachSource {
    /// Beam node carrying dofs.
    BeamNode(String),
    /// Rigid material point following the initial position of a node/point.
    RigidAtNode(String),
    /// Fixed point from the standalone points table.
    GroundPoint(String),
    /// Fully literal attachment.
    Fixed,
}

#[derive(Debug, Clone)]
struct SpringMeta {
    a: AttachSource,
    b: AttachSource,
    derived_l0: bool,
}

#[derive(Debug, Clone)]
struct DamperMeta {
    a: AttachSource,
    b: AttachSource,
}

#[derive(Debug, Clone)]
enum BlockMeta {
    Internal,
    Spherical { a: AttachSource, b: AttachSource },
    Welded,
    GroundAnchor {
        target: AttachSource,
        anchor_from: Option<String>,
    },
}

struct NodeRecord {
    dof: usize,
    beam_body: usize,
    declared: Vector3<f64>,
    current: Vector3<f64>,
    explicit_slope: Option<Vector3<f64>>,
    first_element: Option<usize>,
}

pub struct System {
    ndof: usize,
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    gravity: Vector3<f64>,
    gravity_gradient: DVector<f64>,
    pub beam_elements: Vec<BeamElementInstance>,
    pub beam_bodies: Vec<BeamBodyInfo>,
    pub rigid_bodies: Vec<RigidInstance>,
    pub springs: Vec<Spring>,
    pub dampers: Vec<Damper>,
    constraints: ConstraintSet,
    q0: DVector<f64>,
    qdot0: DVector<f64>,
    bindings: Vec<BindingEffects>,
    mass_deltas: Vec<Option<DMatrix<f64>>>,
    damping_deltas: Vec<Option<DMatrix<f64>>>,
    design: DesignInfo,
    pub settings: SimSettings,
    pub objective: Objective,
    pub opt_constraints: Vec<ResolvedOptConstraint>,
    pub opt_settings: Option<OptimizationSpec>,
}

struct Assembler {
    nodes: HashMap<String, NodeRecord>,
    node_order: Vec<String>,
    points_current: HashMap<String, Vector3<f64>>,
    rigid_by_id: HashMap<String, usize>,
    beam_by_id: HashMap<String, usize>,
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn component_index(name: &str) -> usize {
    match name {
        "x" => 0,
        "y" => 1,
        _ => 2,
    }
}

impl Assembler {
    fn node_current(&self, id: &str) -> Option<Vector3<f64>> {
        self.nodes
            .get(id)
            .map(|n| n.current)
            .or_else(|| self.points_current.get(id).copied())
    }
}

impl System {
    /// Assembles the model at its declared design values.
    pub fn assemble_initial(model: &ModelDefinition) -> Result<System, AssembleError> {
        System::assemble(model, &model.initial_design())
    }

    /// Assembles the model at design vector `a` (one entry per declared
    /// design variable, in declaration order).
    pub fn assemble(model: &ModelDefinition, a: &DVector<f64>) -> Result<System, AssembleError> {
        model.validate()?;
        if a.len() != model.design_variables.len() {
            return Err(AssembleError::Model(ModelError::Invalid(format!(
                "design vector has {} entries, expected {}",
                a.len(),
                model.design_variables.len()
            ))));
        }

        // --- dof layout and node records -------------------------------
        let mut asm = Assembler {
            nodes: HashMap::new(),
            node_order: Vec::new(),
            points_current: HashMap::new(),
            rigid_by_id: HashMap::new(),
            beam_by_id: HashMap::new(),
        };
        let mut ndof = 0usize;
        let mut rigid_bodies = Vec::new();
        let mut beam_body_specs = Vec::new();
        for body in &model.bodies {
            match body {
                BodySpec::Rigid(r) => {
                    let basis = match &r.basis {
                        Some(rows) => {
                            Matrix3::from_columns(&[v3(&rows[0]), v3(&rows[1]), v3(&rows[2])])
                        }
                        None => Matrix3::identity(),
                    };
                    for i in 0..3 {
                        for j in 0..3 {
                            let dot = basis.column(i).dot(&basis.column(j));
                            let target = if i == j { 1.0 } else { 0.0 };
                            if (dot - target).abs() > ORTHONORMALITY_TOL {
                                return Err(AssembleError::NonOrthonormalBasis(r.id.clone()));
                            }
                        }
                    }
                    if !(r.mass > 0.0) {
                        return Err(AssembleError::NonPositiveParameter(format!(
                            "rigid body '{}': mass",
                            r.id
                        )));
                    }
                    let body = RigidBody {
                        mass: r.mass,
                        inertia: r.inertia,
                    };
                    if !body.triangle_inequalities_hold() {
                        return Err(AssembleError::InertiaTriangle(r.id.clone()));
                    }
                    asm.rigid_by_id.insert(r.id.clone(), rigid_bodies.len());
                    rigid_bodies.push(RigidInstance {
                        id: r.id.clone(),
                        body,
                        dof: ndof,
                        basis,
                    });
                    ndof += 12;
                }
                BodySpec::Beam(b) => {
                    let beam_body = beam_body_specs.len();
                    asm.beam_by_id.insert(b.id.clone(), beam_body);
                    for n in &b.nodes {
                        asm.nodes.insert(
                            n.id.clone(),
                            NodeRecord {
                                dof: ndof,
                                beam_body,
                                declared: v3(&n.position),
                                current: v3(&n.position),
                                explicit_slope: n.slope.as_ref().map(v3),
                                first_element: None,
                            },
                        );
                        asm.node_order.push(n.id.clone());
                        ndof += 6;
                    }
                    beam_body_specs.push(b);
                }
            }
        }
        for p in &model.points {
            asm.points_current.insert(p.id.clone(), v3(&p.position));
        }

        // --- apply the design vector ------------------------------------
        let mut spring_overrides: HashMap<String, f64> = HashMap::new();
        let mut damper_overrides: HashMap<String, f64> = HashMap::new();
        let mut beam_prop_overrides: HashMap<(usize, BeamProperty), f64> = HashMap::new();
        for (var, value) in model.design_variables.iter().zip(a.iter()) {
            match &var.kind {
                DesignVarKind::NodePositionX { node }
                | DesignVarKind::NodePositionY { node }
                | DesignVarKind::NodePositionZ { node } => {
                    let c = match &var.kind {
                        DesignVarKind::NodePositionX { .. } => 0,
                        DesignVarKind::NodePositionY { .. } => 1,
                        _ => 2,
                    };
                    if let Some(rec) = asm.nodes.get_mut(node) {
                        rec.current[c] = *value;
                    } else if let Some(p) = asm.points_current.get_mut(node) {
                        p[c] = *value;
                    }
                }
                DesignVarKind::SpringConstant { force } => {
                    spring_overrides.insert(force.clone(), *value);
                }
                DesignVarKind::DampingCoefficient { force } => {
                    damper_overrides.insert(force.clone(), *value);
                }
                DesignVarKind::BeamProperty { body, property } => {
                    beam_prop_overrides.insert((asm.beam_by_id[body], *property), *value);
                }
            }
        }

        // --- beam elements ----------------------------------------------
        let mut beam_elements: Vec<BeamElementInstance> = Vec::new();
        let mut beam_bodies = Vec::new();
        let mut element_nodes: Vec<(String, String)> = Vec::new();
        for (beam_body, spec) in beam_body_specs.iter().enumerate() {
            let mut density = spec.density;
            let mut youngs = spec.youngs_modulus;
            let (mut area, mut second_moment) = spec.cross_section.properties();
            if let Some(d) = beam_prop_overrides.get(&(beam_body, BeamProperty::Density)) {
                density = *d;
            }
            if let Some(e) = beam_prop_overrides.get(&(beam_body, BeamProperty::YoungsModulus)) {
                youngs = *e;
            }
            if let Some(w) = beam_prop_overrides.get(&(beam_body, BeamProperty::CrossSectionWidth))
            {
                area = w * w;
                second_moment = w.powi(4) / 12.0;
            }
            for name in ["density", "youngs_modulus", "area", "second_moment"] {
                let value = match name {
                    "density" => density,
                    "youngs_modulus" => youngs,
                    "area" => area,
                    _ => second_moment,
                };
                if !(value > 0.0) {
                    return Err(AssembleError::NonPositiveParameter(format!(
                        "beam '{}': {name}",
                        spec.id
                    )));
                }
            }
            let mut indices = Vec::new();
            for [ni, nj] in &spec.elements {
                let pi = asm.nodes[ni].current;
                let pj = asm.nodes[nj].current;
                let length = (pj - pi).norm();
                if length < DEGENERATE_LENGTH {
                    return Err(AssembleError::DegenerateBeam(format!(
                        "{} [{ni} -> {nj}]",
                        spec.id
                    )));
                }
                let idx = beam_elements.len();
                beam_elements.push(BeamElementInstance {
                    element: BeamElement {
                        length,
                        area,
                        second_moment,
                        youngs_modulus: youngs,
                        density,
                        literal_transverse: model.simulation.strain_scaled_bending,
                    },
                    dof_i: asm.nodes[ni].dof,
                    dof_j: asm.nodes[nj].dof,
                });
                element_nodes.push((ni.clone(), nj.clone()));
                for end in [ni, nj] {
                    let rec = asm.nodes.get_mut(end).unwrap();
                    if rec.first_element.is_none() {
                        rec.first_element = Some(idx);
                    }
                }
                indices.push(idx);
            }
            beam_bodies.push(BeamBodyInfo {
                id: spec.id.clone(),
                elements: indices,
            });
        }

        // --- initial state -----------------------------------------------
        let chord = |nodes: &HashMap<String, NodeRecord>, elem: usize, declared: bool| {
            let (ref ni, ref nj) = element_nodes[elem];
            let (pi, pj) = if declared {
                (nodes[ni].declared, nodes[nj].declared)
            } else {
                (nodes[ni].current, nodes[nj].current)
            };
            (pj - pi).normalize()
        };
        let mut q0 = DVector::zeros(ndof);
        for r in &rigid_bodies {
            let spec = model
                .bodies
                .iter()
                .find_map(|b| match b {
                    BodySpec::Rigid(s) if s.id == r.id => Some(s),
                    _ => None,
                })
                .unwrap();
            q0.fixed_rows_mut::<3>(r.dof).copy_from(&v3(&spec.cm_position));
            for k in 0..3 {
                q0.fixed_rows_mut::<3>(r.dof + 3 + 3 * k)
                    .copy_from(&Vector3::from(r.basis.column(k)));
            }
        }
        for id in &asm.node_order {
            let rec = &asm.nodes[id];
            q0.fixed_rows_mut::<3>(rec.dof).copy_from(&rec.current);
            let slope = match rec.explicit_slope {
                Some(s) => s,
                None => chord(&asm.nodes, rec.first_element.expect("node in an element"), false),
            };
            q0.fixed_rows_mut::<3>(rec.dof + 3).copy_from(&slope);
        }

        // Initial velocities are evaluated at the declared geometry so the
        // prescription stays independent of the design vector.
        let mut qdot0 = DVector::zeros(ndof);
        for r in &rigid_bodies {
            let spec = model
                .bodies
                .iter()
                .find_map(|b| match b {
                    BodySpec::Rigid(s) if s.id == r.id => Some(s),
                    _ => None,
                })
                .unwrap();
            if let Some(vel) = &spec.initial_velocity {
                let qd = rigid::natural_velocity(&v3(&vel.linear), &v3(&vel.angular), &r.basis);
                for k in 0..12 {
                    qdot0[r.dof + k] = qd[k];
                }
            }
        }
        for (beam_body, spec) in beam_body_specs.iter().enumerate() {
            if let Some(vel) = &spec.initial_velocity {
                let linear = v3(&vel.linear);
                let omega = v3(&vel.angular);
                let about = vel
                    .about
                    .as_ref()
                    .map(v3)
                    .unwrap_or_else(|| v3(&spec.nodes[0].position));
                for n in &spec.nodes {
                    let rec = &asm.nodes[&n.id];
                    debug_assert_eq!(rec.beam_body, beam_body);
                    let rdot = linear + omega.cross(&(rec.declared - about));
                    qdot0.fixed_rows_mut::<3>(rec.dof).copy_from(&rdot);
                    let slope_decl = match rec.explicit_slope {
                        Some(s) => s,
                        None => chord(&asm.nodes, rec.first_element.unwrap(), true),
                    };
                    qdot0
                        .fixed_rows_mut::<3>(rec.dof + 3)
                        .copy_from(&omega.cross(&slope_decl));
                }
            }
        }

        // --- mass matrix and gravity ------------------------------------
        let gravity = v3(&model.simulation.gravity);
        let mut mass = DMatrix::zeros(ndof, ndof);
        let mut gravity_gradient = DVector::zeros(ndof);
        for r in &rigid_bodies {
            let mb = r.body.mass_matrix();
            for i in 0..12 {
                for j in 0..12 {
                    if mb[(i, j)] != 0.0 {
                        mass[(r.dof + i, r.dof + j)] += mb[(i, j)];
                    }
                }
            }
            let gg = r.body.gravity_gradient(&gravity);
            for k in 0..12 {
                gravity_gradient[r.dof + k] += gg[k];
            }
        }
        for inst in &beam_elements {
            inst.scatter_matrix(&inst.element.mass_matrix(), &mut mass);
            inst.scatter(&inst.element.gravity_gradient(&gravity), &mut gravity_gradient);
        }

        // --- attachments ---------------------------------------------------
        let resolve = |spec: &AttachmentSpec| -> Result<(PointHandle, AttachSource), AssembleError> {
            match spec {
                AttachmentSpec::Node { node } => Ok((
                    PointHandle::BeamNode {
                        dof: asm.nodes[node].dof,
                    },
                    AttachSource::BeamNode(node.clone()),
                )),
                AttachmentSpec::BodyAtNode { body, at_node } => {
                    let r = &rigid_bodies[asm.rigid_by_id[body]];
                    let p = asm.node_current(at_node).ok_or_else(|| {
                        ModelError::UnresolvedReference(format!("node or point '{at_node}'"))
                    })?;
                    let cm = Vector3::from(q0.fixed_rows::<3>(r.dof));
                    let local = r.basis.transpose() * (p - cm);
                    Ok((
                        PointHandle::RigidLocal { dof: r.dof, local },
                        AttachSource::RigidAtNode(at_node.clone()),
                    ))
                }
                AttachmentSpec::BodyLocal { body, local_point } => {
                    let r = &rigid_bodies[asm.rigid_by_id[body]];
                    Ok((
                        PointHandle::RigidLocal {
                            dof: r.dof,
                            local: v3(local_point),
                        },
                        AttachSource::Fixed,
                    ))
                }
                AttachmentSpec::Ground { ground } => Ok((
                    PointHandle::Ground {
                        position: v3(ground),
                    },
                    AttachSource::Fixed,
                )),
                AttachmentSpec::Point { point } => Ok((
                    PointHandle::Ground {
                        position: asm.points_current[point],
                    },
                    AttachSource::GroundPoint(point.clone()),
                )),
            }
        };

        // --- constraints ---------------------------------------------------
        let mut blocks = Vec::new();
        let mut block_meta = Vec::new();
        for r in &rigid_bodies {
            blocks.push(ConstraintBlock::InternalOrthonormality { dof: r.dof });
            block_meta.push(BlockMeta::Internal);
        }
        for joint in &model.joints {
            match joint {
                JointSpec::Spherical { a, b } => {
                    let (ha, sa) = resolve(a)?;
                    let (hb, sb) = resolve(b)?;
                    blocks.push(ConstraintBlock::Spherical { a: ha, b: hb });
                    block_meta.push(BlockMeta::Spherical { a: sa, b: sb });
                }
                JointSpec::Welded { body, node } => {
                    let rec = &asm.nodes[node];
                    let (hb, sb) = resolve(&AttachmentSpec::BodyAtNode {
                        body: body.clone(),
                        at_node: node.clone(),
                    })?;
                    blocks.push(ConstraintBlock::Spherical {
                        a: PointHandle::BeamNode { dof: rec.dof },
                        b: hb,
                    });
                    block_meta.push(BlockMeta::Spherical {
                        a: AttachSource::BeamNode(node.clone()),
                        b: sb,
                    });
                    let rigid_dof = rigid_bodies[asm.rigid_by_id[body]].dof;
                    let slope_dof = rec.dof + 3;
                    let s0 = Vector3::from(q0.fixed_rows::<3>(slope_dof));
                    let mut reference = Vector3::zeros();
                    for k in 0..3 {
                        reference[k] =
                            Vector3::from(q0.fixed_rows::<3>(rigid_dof + 3 + 3 * k)).dot(&s0);
                    }
                    blocks.push(ConstraintBlock::Welded {
                        rigid_dof,
                        slope_dof,
                        reference,
                    });
                    block_meta.push(BlockMeta::Welded);
                }
                JointSpec::GroundAnchor {
                    target,
                    components,
                    anchor,
                    motion,
                } => {
                    let (ht, st) = resolve(target)?;
                    let comps: Vec<usize> = components
                        .as_ref()
                        .map(|cs| cs.iter().map(|c| component_index(c)).collect())
                        .unwrap_or_else(|| vec![0, 1, 2]);
                    let anchor_from = if anchor.is_none() {
                        match &st {
                            AttachSource::BeamNode(n) | AttachSource::RigidAtNode(n) => {
                                Some(n.clone())
                            }
                            _ => None,
                        }
                    } else {
                        None
                    };
                    let anchor_pos = match anchor {
                        Some(p) => v3(p),
                        None => ht.position(&q0),
                    };
                    let motion = match motion {
                        Some(m) => {
                            let mc = component_index(&m.component);
                            if !comps.contains(&mc) {
                                return Err(AssembleError::Model(ModelError::Invalid(
                                    "anchor motion component is not constrained".into(),
                                )));
                            }
                            Some(HarmonicMotion {
                                component: mc,
                                amplitude: m.amplitude,
                                angular_frequency: m.angular_frequency,
                            })
                        }
                        None => None,
                    };
                    blocks.push(ConstraintBlock::GroundAnchor {
                        target: ht,
                        components: comps,
                        anchor: anchor_pos,
                        motion,
                    });
                    block_meta.push(BlockMeta::GroundAnchor {
                        target: st,
                        anchor_from,
                    });
                }
            }
        }
        let constraints = ConstraintSet::new(ndof, blocks);

        // --- force elements -------------------------------------------------
        let mut springs = Vec::new();
        let mut spring_meta = Vec::new();
        let mut dampers = Vec::new();
        let mut damper_meta = Vec::new();
        for f in &model.forces {
            match f {
                super::ForceSpec::Spring {
                    id,
                    a,
                    b,
                    stiffness,
                    natural_length,
                } => {
                    let (ha, sa) = resolve(a)?;
                    let (hb, sb) = resolve(b)?;
                    let k = spring_overrides.get(id).copied().unwrap_or(*stiffness);
                    let derived = natural_length.is_none();
                    let l0 = match natural_length {
                        Some(l) => *l,
                        None => (ha.position(&q0) - hb.position(&q0)).norm(),
                    };
                    if !(l0 > 0.0) {
                        return Err(AssembleError::NonPositiveParameter(format!(
                            "spring '{id}': natural length"
                        )));
                    }
                    springs.push(Spring {
                        a: ha,
                        b: hb,
                        stiffness: k,
                        natural_length: l0,
                    });
                    spring_meta.push(SpringMeta {
                        a: sa,
                        b: sb,
                        derived_l0: derived,
                    });
                }
                super::ForceSpec::Damper { id, a, b, damping } => {
                    let (ha, sa) = resolve(a)?;
                    let (hb, sb) = resolve(b)?;
                    let c = damper_overrides.get(id).copied().unwrap_or(*damping);
                    dampers.push(Damper {
                        a: ha,
                        b: hb,
                        damping: c,
                    });
                    damper_meta.push(DamperMeta { a: sa, b: sb });
                }
            }
        }
        let mut damping = DMatrix::zeros(ndof, ndof);
        for d in &dampers {
            d.accumulate_damping(&mut damping);
        }

        // --- objective -------------------------------------------------------
        let objective = match &model.objective {
            ObjectiveSpec::TrackedDisplacementSquared { target } => {
                let (handle, _) = resolve(target)?;
                Objective::TrackedDisplacementSquared { handle }
            }
            ObjectiveSpec::TipDeflection {
                tip_node,
                root_node,
                plane_normal,
                ..
            } => {
                let root = &asm.nodes[root_node];
                let tip = &asm.nodes[tip_node];
                Objective::TipDeflection {
                    root_pos_dof: root.dof,
                    root_slope_dof: root.dof + 3,
                    tip_pos_dof: tip.dof,
                    normal: v3(plane_normal).normalize(),
                }
            }
        };

        let opt_constraints = model
            .optimization
            .iter()
            .flat_map(|o| o.constraints.iter())
            .map(|c| match c {
                OptConstraintSpec::MinBeamLength { body, min } => {
                    ResolvedOptConstraint::MinBeamLength {
                        beam_body: asm.beam_by_id[body],
                        min: *min,
                    }
                }
                OptConstraintSpec::MaxStress { body, limit } => ResolvedOptConstraint::MaxStress {
                    beam_body: asm.beam_by_id[body],
                    limit: *limit,
                },
            })
            .collect();

        // --- design-derivative hooks -----------------------------------------
        let constraint_jac_q0 = constraints.jacobian(&q0);
        let mut bindings = Vec::new();
        for (var, _value) in model.design_variables.iter().zip(a.iter()) {
            let mut eff = BindingEffects {
                id: var.id.clone(),
                ..Default::default()
            };
            match &var.kind {
                DesignVarKind::NodePositionX { node }
                | DesignVarKind::NodePositionY { node }
                | DesignVarKind::NodePositionZ { node } => {
                    let c = match &var.kind {
                        DesignVarKind::NodePositionX { .. } => 0,
                        DesignVarKind::NodePositionY { .. } => 1,
                        _ => 2,
                    };
                    let mut unit = Vector3::zeros();
                    unit[c] = 1.0;
                    let is_beam_node = asm.nodes.contains_key(node);

                    if is_beam_node {
                        let rec = &asm.nodes[node];
                        eff.dq0.push((rec.dof + c, 1.0));
                        // default slopes of nodes whose defining chord moves
                        for mid in &asm.node_order {
                            let mrec = &asm.nodes[mid];
                            if mrec.explicit_slope.is_some() {
                                continue;
                            }
                            let e = mrec.first_element.unwrap();
                            let (ref ni, ref nj) = element_nodes[e];
                            if ni != node && nj != node {
                                continue;
                            }
                            let sign = if nj == node { 1.0 } else { -1.0 };
                            let inst = &beam_elements[e];
                            let l = inst.element.length;
                            let s = Vector3::from(q0.fixed_rows::<3>(mrec.dof + 3));
                            for k in 0..3 {
                                let dk = if k == c { 1.0 } else { 0.0 };
                                let val = sign * (dk - s[k] * s[c]) / l;
                                if val != 0.0 {
                                    eff.dq0.push((mrec.dof + 3 + k, val));
                                }
                            }
                        }
                        // undeformed lengths of incident elements
                        for (e, (ni, nj)) in element_nodes.iter().enumerate() {
                            if ni != node && nj != node {
                                continue;
                            }
                            let inst = &beam_elements[e];
                            let pi = asm.nodes[ni].current;
                            let pj = asm.nodes[nj].current;
                            let dir = (pj - pi) / inst.element.length;
                            let sign = if nj == node { 1.0 } else { -1.0 };
                            eff.beams.push((
                                e,
                                BeamParamDelta {
                                    dlength: sign * dir[c],
                                    ..Default::default()
                                },
                            ));
                        }
                    }

                    // shift of an attachment position at t = 0 along this
                    // variable, used for derived natural lengths and anchors
                    let dpos = |src: &AttachSource| -> f64 {
                        match src {
                            AttachSource::BeamNode(n)
                            | AttachSource::RigidAtNode(n)
                            | AttachSource::GroundPoint(n) => {
                                if n == node {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            AttachSource::Fixed => 0.0,
                        }
                    };

                    for (si, (spring, meta)) in springs.iter().zip(&spring_meta).enumerate() {
                        let mut delta = SpringDelta::default();
                        let da = dpos(&meta.a);
                        let db = dpos(&meta.b);
                        if meta.derived_l0 && (da != 0.0 || db != 0.0) {
                            let d0 = (spring.a.position(&q0) - spring.b.position(&q0))
                                / spring.natural_length;
                            delta.dnatural_length = d0[c] * (da - db);
                        }
                        if da != 0.0 {
                            match &meta.a {
                                AttachSource::RigidAtNode(_) => {
                                    let basis = rigid_basis(&rigid_bodies, &spring.a);
                                    delta.dlocal_a = basis.transpose() * unit;
                                }
                                AttachSource::GroundPoint(_) => delta.dground_a = unit,
                                _ => {}
                            }
                        }
                        if db != 0.0 {
                            match &meta.b {
                                AttachSource::RigidAtNode(_) => {
                                    let basis = rigid_basis(&rigid_bodies, &spring.b);
                                    delta.dlocal_b = basis.transpose() * unit;
                                }
                                AttachSource::GroundPoint(_) => delta.dground_b = unit,
                                _ => {}
                            }
                        }
                        if !delta.is_zero() {
                            eff.springs.push((si, delta));
                        }
                    }
                    for (di, (damper, meta)) in dampers.iter().zip(&damper_meta).enumerate() {
                        let mut delta = DamperDelta::default();
                        if dpos(&meta.a) != 0.0 {
                            if let AttachSource::RigidAtNode(_) = &meta.a {
                                delta.dlocal_a =
                                    rigid_basis(&rigid_bodies, &damper.a).transpose() * unit;
                            }
                        }
                        if dpos(&meta.b) != 0.0 {
                            if let AttachSource::RigidAtNode(_) = &meta.b {
                                delta.dlocal_b =
                                    rigid_basis(&rigid_bodies, &damper.b).transpose() * unit;
                            }
                        }
                        if !delta.is_zero() {
                            eff.dampers.push((di, delta));
                        }
                    }

                    for (bi, (block, meta)) in
                        constraints.blocks().iter().zip(&block_meta).enumerate()
                    {
                        match meta {
                            BlockMeta::Spherical { a: sa, b: sb } => {
                                let mut delta = ConstraintDelta {
                                    block: bi,
                                    ..Default::default()
                                };
                                let (ha, hb) = match block {
                                    ConstraintBlock::Spherical { a, b } => (a, b),
                                    _ => unreachable!(),
                                };
                                if dpos(sa) != 0.0 {
                                    match sa {
                                        AttachSource::RigidAtNode(_) => {
                                            delta.dlocal_a =
                                                rigid_basis(&rigid_bodies, ha).transpose() * unit;
                                        }
                                        AttachSource::GroundPoint(_) => delta.dground_a = unit,
                                        _ => {}
                                    }
                                }
                                if dpos(sb) != 0.0 {
                                    match sb {
                                        AttachSource::RigidAtNode(_) => {
                                            delta.dlocal_b =
                                                rigid_basis(&rigid_bodies, hb).transpose() * unit;
                                        }
                                        AttachSource::GroundPoint(_) => delta.dground_b = unit,
                                        _ => {}
                                    }
                                }
                                if delta != (ConstraintDelta {
                                    block: bi,
                                    ..Default::default()
                                }) {
                                    eff.constraints.push(delta);
                                }
                            }
                            BlockMeta::GroundAnchor {
                                target,
                                anchor_from,
                            } => {
                                let mut delta = ConstraintDelta {
                                    block: bi,
                                    ..Default::default()
                                };
                                if anchor_from.as_deref() == Some(node.as_str()) {
                                    delta.danchor = unit;
                                }
                                if dpos(target) != 0.0 {
                                    if let AttachSource::RigidAtNode(_) = target {
                                        let ht = match block {
                                            ConstraintBlock::GroundAnchor { target, .. } => target,
                                            _ => unreachable!(),
                                        };
                                        delta.dlocal_a =
                                            rigid_basis(&rigid_bodies, ht).transpose() * unit;
                                    }
                                }
                                if delta != (ConstraintDelta {
                                    block: bi,
                                    ..Default::default()
                                }) {
                                    eff.constraints.push(delta);
                                }
                            }
                            _ => {}
                        }
                    }
                }
                DesignVarKind::SpringConstant { force } => {
                    let idx = model
                        .forces
                        .iter()
                        .filter(|f| matches!(f, super::ForceSpec::Spring { .. }))
                        .position(|f| f.id() == force)
                        .unwrap();
                    eff.springs.push((
                        idx,
                        SpringDelta {
                            dstiffness: 1.0,
                            ..Default::default()
                        },
                    ));
                }
                DesignVarKind::DampingCoefficient { force } => {
                    let idx = model
                        .forces
                        .iter()
                        .filter(|f| matches!(f, super::ForceSpec::Damper { .. }))
                        .position(|f| f.id() == force)
                        .unwrap();
                    eff.dampers.push((
                        idx,
                        DamperDelta {
                            ddamping: 1.0,
                            ..Default::default()
                        },
                    ));
                }
                DesignVarKind::BeamProperty { body, property } => {
                    let beam_body = asm.beam_by_id[body];
                    let delta = match property {
                        BeamProperty::Density => BeamParamDelta {
                            ddensity: 1.0,
                            ..Default::default()
                        },
                        BeamProperty::YoungsModulus => BeamParamDelta {
                            dyoungs: 1.0,
                            ..Default::default()
                        },
                        BeamProperty::CrossSectionWidth => {
                            let w = beam_prop_overrides
                                .get(&(beam_body, BeamProperty::CrossSectionWidth))
                                .copied()
                                .unwrap_or(match beam_body_specs[beam_body].cross_section {
                                    CrossSectionSpec::Square { width } => width,
                                    _ => unreachable!("validated square section"),
                                });
                            BeamParamDelta {
                                darea: 2.0 * w,
                                dsecond_moment: w * w * w / 3.0,
                                ..Default::default()
                            }
                        }
                    };
                    for e in &beam_bodies[beam_body].elements {
                        eff.beams.push((*e, delta));
                    }
                }
            }

            // welded references are frozen from the design-dependent initial
            // configuration; chain their shift through dq0
            if !eff.dq0.is_empty() {
                for (bi, block) in constraints.blocks().iter().enumerate() {
                    if matches!(block, ConstraintBlock::Welded { .. }) {
                        let off = constraints.block_offset(bi);
                        let mut dref = Vector3::zeros();
                        for k in 0..3 {
                            for (dof, val) in &eff.dq0 {
                                dref[k] += constraint_jac_q0[(off + k, *dof)] * val;
                            }
                        }
                        if dref != Vector3::zeros() {
                            eff.constraints.push(ConstraintDelta {
                                block: bi,
                                dreference: dref,
                                ..Default::default()
                            });
                        }
                    }
                }
            }

            bindings.push(eff);
        }

        // dense per-binding mass and damping shifts
        let mut mass_deltas = Vec::new();
        let mut damping_deltas = Vec::new();
        for eff in &bindings {
            if eff.beams.is_empty() {
                mass_deltas.push(None);
            } else {
                let mut dm = DMatrix::zeros(ndof, ndof);
                for (e, delta) in &eff.beams {
                    let inst = &beam_elements[*e];
                    inst.scatter_matrix(&inst.element.mass_matrix_delta(delta), &mut dm);
                }
                mass_deltas.push(Some(dm));
            }
            if eff.dampers.is_empty() {
                damping_deltas.push(None);
            } else {
                let mut dd = DMatrix::zeros(ndof, ndof);
                for (di, delta) in &eff.dampers {
                    dampers[*di].accumulate_damping_delta(delta, &mut dd);
                }
                damping_deltas.push(Some(dd));
            }
        }

        let design = DesignInfo {
            ids: model.design_variables.iter().map(|v| v.id.clone()).collect(),
            lower: DVector::from_iterator(
                model.design_variables.len(),
                model.design_variables.iter().map(|v| v.lower),
            ),
            upper: DVector::from_iterator(
                model.design_variables.len(),
                model.design_variables.iter().map(|v| v.upper),
            ),
            values: a.clone(),
        };

        Ok(System {
            ndof,
            mass,
            damping,
            gravity,
            gravity_gradient,
            beam_elements,
            beam_bodies,
            rigid_bodies,
            springs,
            dampers,
            constraints,
            q0,
            qdot0,
            bindings,
            mass_deltas,
            damping_deltas,
            design,
            settings: SimSettings {
                time_step: model.simulation.time_step,
                duration: model.simulation.duration,
                alpha: model.simulation.alpha,
                newton_tol: model.simulation.newton_tol,
                max_newton_iters: model.simulation.max_newton_iters,
            },
            objective,
            opt_constraints,
            opt_settings: model.optimization.clone(),
        })
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn constraint_rows(&self) -> usize {
        self.constraints.rows()
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn q0(&self) -> &DVector<f64> {
        &self.q0
    }

    pub fn qdot0(&self) -> &DVector<f64> {
        &self.qdot0
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    pub fn design(&self) -> &DesignInfo {
        &self.design
    }

    pub fn bindings(&self) -> &[BindingEffects] {
        &self.bindings
    }

    pub fn kinetic_energy(&self, v: &DVector<f64>) -> f64 {
        0.5 * (&self.mass * v).dot(v)
    }

    /// Total potential energy (elastic + gravity + springs).
    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        let mut u = self.gravity_gradient.dot(q);
        for inst in &self.beam_elements {
            u += inst.element.elastic_energy(&inst.gather(q));
        }
        for s in &self.springs {
            u += s.energy(q);
        }
        u
    }

    /// Gradient of the total potential energy.
    pub fn potential_gradient(&self, q: &DVector<f64>) -> Result<DVector<f64>, ElementError> {
        let mut out = self.gravity_gradient.clone();
        for inst in &self.beam_elements {
            inst.scatter(&inst.element.elastic_force(&inst.gather(q)), &mut out);
        }
        for s in &self.springs {
            s.accumulate_gradient(q, &mut out)?;
        }
        Ok(out)
    }

    /// Hessian of the total potential energy (tangent stiffness).
    pub fn stiffness(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, ElementError> {
        let mut out = DMatrix::zeros(self.ndof, self.ndof);
        for inst in &self.beam_elements {
            inst.scatter_matrix(&inst.element.elastic_stiffness(&inst.gather(q)), &mut out);
        }
        for s in &self.springs {
            s.accumulate_stiffness(q, &mut out)?;
        }
        Ok(out)
    }

    /// Explicit design shift of the potential gradient at fixed state.
    pub fn potential_gradient_delta(
        &self,
        q: &DVector<f64>,
        binding: usize,
    ) -> Result<DVector<f64>, ElementError> {
        let eff = &self.bindings[binding];
        let mut out = DVector::zeros(self.ndof);
        for (e, delta) in &eff.beams {
            let inst = &self.beam_elements[*e];
            let qe = inst.gather(q);
            inst.scatter(&inst.element.elastic_force_delta(&qe, delta), &mut out);
            inst.scatter(&inst.element.gravity_gradient_delta(&self.gravity, delta), &mut out);
        }
        for (si, delta) in &eff.springs {
            self.springs[*si].accumulate_gradient_delta(q, delta, &mut out)?;
        }
        Ok(out)
    }

    pub fn mass_delta(&self, binding: usize) -> Option<&DMatrix<f64>> {
        self.mass_deltas[binding].as_ref()
    }

    pub fn damping_delta(&self, binding: usize) -> Option<&DMatrix<f64>> {
        self.damping_deltas[binding].as_ref()
    }

    /// Explicit design derivative of the constraint values.
    pub fn constraint_design_rows(&self, q: &DVector<f64>, binding: usize) -> DVector<f64> {
        self.constraints
            .design_derivative(q, &self.bindings[binding].constraints)
    }

    /// Explicit design derivative of `Gᵀλ`, accumulated into `out`.
    pub fn constraint_design_jt_lambda(
        &self,
        binding: usize,
        lam: &DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        self.constraints.design_jacobian_transpose_lambda(
            &self.bindings[binding].constraints,
            lam,
            out,
        );
    }

    /// Sparse `∂q0/∂a_i`.
    pub fn dq0(&self, binding: usize) -> &[(usize, f64)] {
        &self.bindings[binding].dq0
    }

    pub fn dq0_dense(&self, binding: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.ndof);
        for (dof, v) in self.dq0(binding) {
            out[*dof] += v;
        }
        out
    }

    /// Reports the initial constraint residual and the initial velocity's
    /// tangency residual `G(q0) qdot0`. Prescribed anchor motion rates are
    /// boundary inputs, not part of the check; the first implicit step
    /// absorbs them.
    pub fn validate_initial_conditions(&self) -> ValidationReport {
        let g = self.constraints.evaluate(&self.q0, 0.0);
        let gdot = self.constraints.jacobian(&self.q0) * &self.qdot0;
        let g_residual = g.amax();
        let gdot_residual = gdot.amax();
        ValidationReport {
            g_residual,
            gdot_residual,
            pass: g_residual <= IC_RESIDUAL_TOL && gdot_residual <= IC_RESIDUAL_TOL,
        }
    }

    /// Residual of the design-consistency identity at t = 0:
    /// `∂g0/∂a_i + G(q0) ∂q0/∂a_i = 0`.
    pub fn design_consistency_residual(&self, binding: usize) -> f64 {
        let dg = self.constraint_design_rows(&self.q0, binding);
        let jac = self.constraints.jacobian(&self.q0);
        let r = dg + jac * self.dq0_dense(binding);
        r.amax()
    }
}

fn rigid_basis(rigids: &[RigidInstance], handle: &PointHandle) -> Matrix3<f64> {
    if let PointHandle::RigidLocal { dof, .. } = handle {
        for r in rigids {
            if r.dof == *dof {
                return r.basis;
            }
        }
    }
    Matrix3::identity()
}
