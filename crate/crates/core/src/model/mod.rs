//! Declarative model files: bodies, joints, force elements, design-variable
//! bindings, and simulation/optimization settings. All units are SI.

mod assemble;

pub use assemble::{
    BeamBodyInfo, BeamElementInstance, BindingEffects, DesignInfo, ResolvedOptConstraint,
    RigidInstance, SimSettings, System, ValidationReport,
};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelDefinition {
    pub bodies: Vec<BodySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joints: Vec<JointSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forces: Vec<ForceSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub design_variables: Vec<DesignVarSpec>,
    pub simulation: SimulationSpec,
    pub objective: ObjectiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BodySpec {
    Rigid(RigidBodySpec),
    Beam(BeamSpec),
}

impl BodySpec {
    pub fn id(&self) -> &str {
        match self {
            BodySpec::Rigid(r) => &r.id,
            BodySpec::Beam(b) => &b.id,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RigidBodySpec {
    pub id: String,
    pub mass: f64,
    /// Principal moments of inertia about the local frame axes.
    pub inertia: [f64; 3],
    pub cm_position: [f64; 3],
    /// Basis vectors `[e1, e2, e3]` of the local frame; identity if omitted.
    /// Must be orthonormal and aligned with the principal axes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_velocity: Option<RigidVelocitySpec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct RigidVelocitySpec {
    #[serde(default)]
    pub linear: [f64; 3],
    #[serde(default)]
    pub angular: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BeamSpec {
    pub id: String,
    pub nodes: Vec<BeamNodeSpec>,
    /// Elements as `[node_i, node_j]` pairs.
    pub elements: Vec<[String; 2]>,
    pub youngs_modulus: f64,
    pub density: f64,
    pub cross_section: CrossSectionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_velocity: Option<FieldVelocitySpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BeamNodeSpec {
    pub id: String,
    pub position: [f64; 3],
    /// Nodal slope; defaults to the unit chord direction of the first
    /// element incident to the node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CrossSectionSpec {
    Square { width: f64 },
    HollowCircle { outer_radius: f64, inner_radius: f64 },
    Values { area: f64, second_moment: f64 },
}

impl CrossSectionSpec {
    /// `(area, second moment of area)`.
    pub fn properties(&self) -> (f64, f64) {
        match *self {
            CrossSectionSpec::Square { width } => {
                (width * width, width.powi(4) / 12.0)
            }
            CrossSectionSpec::HollowCircle {
                outer_radius,
                inner_radius,
            } => {
                let pi = std::f64::consts::PI;
                (
                    pi * (outer_radius * outer_radius - inner_radius * inner_radius),
                    pi / 4.0 * (outer_radius.powi(4) - inner_radius.powi(4)),
                )
            }
            CrossSectionSpec::Values {
                area,
                second_moment,
            } => (area, second_moment),
        }
    }
}

/// A rigid-motion field applied to every node of a beam at t = 0. Nodal
/// velocities are `linear + angular x (r - about)` and slope rates are
/// `angular x slope`, both evaluated at the declared (reference) geometry.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct FieldVelocitySpec {
    #[serde(default)]
    pub linear: [f64; 3],
    #[serde(default)]
    pub angular: [f64; 3],
    /// Rotation center; defaults to the beam's first declared node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub about: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PointSpec {
    pub id: String,
    pub position: [f64; 3],
}

/// An attachment point referenced by joints, force elements, and objectives.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum AttachmentSpec {
    /// A beam node.
    Node { node: String },
    /// A material point on a rigid body placed at the initial position of a
    /// named node or standalone point (the local coordinates follow it).
    BodyAtNode { body: String, at_node: String },
    /// A material point on a rigid body given in body-frame coordinates.
    BodyLocal { body: String, local_point: [f64; 3] },
    /// A fixed point in the inertial frame.
    Ground { ground: [f64; 3] },
    /// A named standalone point (fixed in the inertial frame).
    Point { point: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JointSpec {
    Spherical {
        a: AttachmentSpec,
        b: AttachmentSpec,
    },
    /// Spherical attachment of a beam node to a rigid body plus the node's
    /// slope direction frozen in the body frame.
    Welded { body: String, node: String },
    GroundAnchor {
        target: AttachmentSpec,
        /// Subset of `["x", "y", "z"]`; all three if omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        components: Option<Vec<String>>,
        /// Anchor position; defaults to the target's initial position.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor: Option<[f64; 3]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        motion: Option<MotionSpec>,
    },
}

/// Harmonic anchor motion `amplitude * sin(angular_frequency * t)` added to
/// one anchor component.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MotionSpec {
    pub component: String,
    pub amplitude: f64,
    pub angular_frequency: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ForceSpec {
    Spring {
        id: String,
        a: AttachmentSpec,
        b: AttachmentSpec,
        stiffness: f64,
        /// Natural length; defaults to the initial distance between the
        /// attachment points.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        natural_length: Option<f64>,
    },
    Damper {
        id: String,
        a: AttachmentSpec,
        b: AttachmentSpec,
        damping: f64,
    },
}

impl ForceSpec {
    pub fn id(&self) -> &str {
        match self {
            ForceSpec::Spring { id, .. } | ForceSpec::Damper { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DesignVarSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: DesignVarKind,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignVarKind {
    /// Initial global coordinate of a beam node or standalone point.
    NodePositionX { node: String },
    NodePositionY { node: String },
    NodePositionZ { node: String },
    SpringConstant { force: String },
    DampingCoefficient { force: String },
    BeamProperty {
        body: String,
        property: BeamProperty,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "snake_case")]
pub enum BeamProperty {
    Density,
    YoungsModulus,
    /// Width of a square cross-section (drives area and second moment).
    CrossSectionWidth,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulationSpec {
    /// Total simulated time T in seconds.
    pub duration: f64,
    /// Step size h in seconds.
    pub time_step: f64,
    /// Quadrature blend for the discrete Lagrangian; 0.5 is second order.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub gravity: [f64; 3],
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_max_newton_iters")]
    pub max_newton_iters: usize,
    /// Replace the bending stiffness EI by EA times the axial strain, for
    /// comparison against an alternative published stiffness form.
    #[serde(default)]
    pub strain_scaled_bending: bool,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_newton_tol() -> f64 {
    1e-10
}

fn default_max_newton_iters() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    /// Integral of the squared displacement of a tracked material point from
    /// its initial position.
    TrackedDisplacementSquared { target: AttachmentSpec },
    /// Terminal transverse tip deflection of a beam, measured in the frame
    /// whose origin is the root node and whose first axis follows the root
    /// slope; positive along `plane_normal x slope`.
    TipDeflection {
        beam: String,
        tip_node: String,
        root_node: String,
        plane_normal: [f64; 3],
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimizationSpec {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_opt_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<OptConstraintSpec>,
}

fn default_max_iters() -> usize {
    60
}

fn default_opt_tolerance() -> f64 {
    1e-6
}

fn default_initial_step() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OptConstraintSpec {
    /// Undeformed length of every element of a beam stays above `min`.
    MinBeamLength { body: String, min: f64 },
    /// Axial stress magnitude of every element of a beam stays below
    /// `limit`, aggregated over the trajectory by a smoothed maximum.
    MaxStress { body: String, limit: f64 },
}

/// Parses and validates a model file.
pub fn parse_model(text: &str) -> Result<ModelDefinition, ModelError> {
    let model: ModelDefinition = serde_json::from_str(text)?;
    model.validate()?;
    Ok(model)
}

/// Serializes a model back to pretty-printed JSON.
pub fn serialize_model(model: &ModelDefinition) -> String {
    serde_json::to_string_pretty(model).expect("model serialization cannot fail")
}

impl ModelDefinition {
    fn node_exists(&self, id: &str) -> bool {
        self.bodies.iter().any(|b| match b {
            BodySpec::Beam(beam) => beam.nodes.iter().any(|n| n.id == id),
            _ => false,
        }) || self.points.iter().any(|p| p.id == id)
    }

    fn rigid_exists(&self, id: &str) -> bool {
        self.bodies
            .iter()
            .any(|b| matches!(b, BodySpec::Rigid(r) if r.id == id))
    }

    fn beam_exists(&self, id: &str) -> bool {
        self.bodies
            .iter()
            .any(|b| matches!(b, BodySpec::Beam(beam) if beam.id == id))
    }

    fn check_attachment(&self, a: &AttachmentSpec, ctx: &str) -> Result<(), ModelError> {
        match a {
            AttachmentSpec::Node { node } => {
                let is_beam_node = self.bodies.iter().any(|b| match b {
                    BodySpec::Beam(beam) => beam.nodes.iter().any(|n| n.id == *node),
                    _ => false,
                });
                if !is_beam_node {
                    return Err(ModelError::UnresolvedReference(format!(
                        "{ctx}: beam node '{node}'"
                    )));
                }
            }
            AttachmentSpec::BodyAtNode { body, at_node } => {
                if !self.rigid_exists(body) {
                    return Err(ModelError::UnresolvedReference(format!(
                        "{ctx}: rigid body '{body}'"
                    )));
                }
                if !self.node_exists(at_node) {
                    return Err(ModelError::UnresolvedReference(format!(
                        "{ctx}: node or point '{at_node}'"
                    )));
                }
            }
            AttachmentSpec::BodyLocal { body, .. } => {
                if !self.rigid_exists(body) {
                    return Err(ModelError::UnresolvedReference(format!(
                        "{ctx}: rigid body '{body}'"
                    )));
                }
            }
            AttachmentSpec::Point { point } => {
                if !self.points.iter().any(|p| p.id == *point) {
                    return Err(ModelError::UnresolvedReference(format!(
                        "{ctx}: point '{point}'"
                    )));
                }
            }
            AttachmentSpec::Ground { .. } => {}
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sim = &self.simulation;
        if !(sim.time_step > 0.0) {
            return Err(ModelError::Invalid("time_step must be positive".into()));
        }
        if sim.duration < sim.time_step {
            return Err(ModelError::Invalid(
                "duration must be at least one time_step".into(),
            ));
        }
        if !(0.0..=1.0).contains(&sim.alpha) {
            return Err(ModelError::Invalid("alpha must lie in [0, 1]".into()));
        }
        if !(sim.newton_tol > 0.0) {
            return Err(ModelError::Invalid("newton_tol must be positive".into()));
        }

        let mut ids = std::collections::HashSet::new();
        for b in &self.bodies {
            if !ids.insert(b.id().to_string()) {
                return Err(ModelError::Invalid(format!("duplicate body id '{}'", b.id())));
            }
        }
        let mut node_ids = std::collections::HashSet::new();
        for b in &self.bodies {
            if let BodySpec::Beam(beam) = b {
                if beam.nodes.len() < 2 {
                    return Err(ModelError::Invalid(format!(
                        "beam '{}' needs at least two nodes",
                        beam.id
                    )));
                }
                if beam.elements.is_empty() {
                    return Err(ModelError::Invalid(format!(
                        "beam '{}' declares no elements",
                        beam.id
                    )));
                }
                for n in &beam.nodes {
                    if !node_ids.insert(n.id.clone()) {
                        return Err(ModelError::Invalid(format!("duplicate node id '{}'", n.id)));
                    }
                }
                for [i, j] in &beam.elements {
                    for end in [i, j] {
                        if !beam.nodes.iter().any(|n| n.id == *end) {
                            return Err(ModelError::UnresolvedReference(format!(
                                "beam '{}': element end '{end}'",
                                beam.id
                            )));
                        }
                    }
                }
            }
        }
        for p in &self.points {
            if !node_ids.insert(p.id.clone()) {
                return Err(ModelError::Invalid(format!("duplicate point id '{}'", p.id)));
            }
        }

        for (k, j) in self.joints.iter().enumerate() {
            match j {
                JointSpec::Spherical { a, b } => {
                    self.check_attachment(a, &format!("joint {k}"))?;
                    self.check_attachment(b, &format!("joint {k}"))?;
                }
                JointSpec::Welded { body, node } => {
                    if !self.rigid_exists(body) {
                        return Err(ModelError::UnresolvedReference(format!(
                            "joint {k}: rigid body '{body}'"
                        )));
                    }
                    let is_beam_node = self.bodies.iter().any(|b| match b {
                        BodySpec::Beam(beam) => beam.nodes.iter().any(|n| n.id == *node),
                        _ => false,
                    });
                    if !is_beam_node {
                        return Err(ModelError::UnresolvedReference(format!(
                            "joint {k}: beam node '{node}'"
                        )));
                    }
                }
                JointSpec::GroundAnchor {
                    target,
                    components,
                    motion,
                    ..
                } => {
                    self.check_attachment(target, &format!("joint {k}"))?;
                    if matches!(target, AttachmentSpec::Ground { .. } | AttachmentSpec::Point { .. })
                    {
                        return Err(ModelError::Invalid(format!(
                            "joint {k}: ground anchor target must carry dofs"
                        )));
                    }
                    if let Some(cs) = components {
                        for c in cs {
                            if !matches!(c.as_str(), "x" | "y" | "z") {
                                return Err(ModelError::Invalid(format!(
                                    "joint {k}: unknown component '{c}'"
                                )));
                            }
                        }
                    }
                    if let Some(m) = motion {
                        if !matches!(m.component.as_str(), "x" | "y" | "z") {
                            return Err(ModelError::Invalid(format!(
                                "joint {k}: unknown motion component '{}'",
                                m.component
                            )));
                        }
                    }
                }
            }
        }

        let mut force_ids = std::collections::HashSet::new();
        for f in &self.forces {
            if !force_ids.insert(f.id().to_string()) {
                return Err(ModelError::Invalid(format!(
                    "duplicate force id '{}'",
                    f.id()
                )));
            }
            match f {
                ForceSpec::Spring {
                    id,
                    a,
                    b,
                    stiffness,
                    natural_length,
                } => {
                    self.check_attachment(a, &format!("spring '{id}'"))?;
                    self.check_attachment(b, &format!("spring '{id}'"))?;
                    if *stiffness < 0.0 {
                        return Err(ModelError::Invalid(format!(
                            "spring '{id}': stiffness must be nonnegative"
                        )));
                    }
                    if let Some(l0) = natural_length {
                        if !(*l0 > 0.0) {
                            return Err(ModelError::Invalid(format!(
                                "spring '{id}': natural_length must be positive"
                            )));
                        }
                    }
                }
                ForceSpec::Damper { id, a, b, damping } => {
                    self.check_attachment(a, &format!("damper '{id}'"))?;
                    self.check_attachment(b, &format!("damper '{id}'"))?;
                    if *damping < 0.0 {
                        return Err(ModelError::Invalid(format!(
                            "damper '{id}': damping must be nonnegative"
                        )));
                    }
                }
            }
        }

        let mut var_ids = std::collections::HashSet::new();
        for v in &self.design_variables {
            if !var_ids.insert(v.id.clone()) {
                return Err(ModelError::Invalid(format!(
                    "duplicate design variable id '{}'",
                    v.id
                )));
            }
            if v.lower > v.upper {
                return Err(ModelError::Invalid(format!(
                    "design variable '{}': lower bound exceeds upper bound",
                    v.id
                )));
            }
            match &v.kind {
                DesignVarKind::NodePositionX { node }
                | DesignVarKind::NodePositionY { node }
                | DesignVarKind::NodePositionZ { node } => {
                    if !self.node_exists(node) {
                        return Err(ModelError::UnresolvedReference(format!(
                            "design variable '{}': node '{node}'",
                            v.id
                        )));
                    }
                }
                DesignVarKind::SpringConstant { force } => {
                    if !self
                        .forces
                        .iter()
                        .any(|f| matches!(f, ForceSpec::Spring { id, .. } if id == force))
                    {
                        return Err(ModelError::UnresolvedReference(format!(
                            "design variable '{}': spring '{force}'",
                            v.id
                        )));
                    }
                }
                DesignVarKind::DampingCoefficient { force } => {
                    if !self
                        .forces
                        .iter()
                        .any(|f| matches!(f, ForceSpec::Damper { id, .. } if id == force))
                    {
                        return Err(ModelError::UnresolvedReference(format!(
                            "design variable '{}': damper '{force}'",
                            v.id
                        )));
                    }
                }
                DesignVarKind::BeamProperty { body, property } => {
                    if !self.beam_exists(body) {
                        return Err(ModelError::UnresolvedReference(format!(
                            "design variable '{}': beam '{body}'",
                            v.id
                        )));
                    }
                    if *property == BeamProperty::CrossSectionWidth {
                        let square = self.bodies.iter().any(|b| {
                            matches!(b, BodySpec::Beam(beam) if beam.id == *body
                                && matches!(beam.cross_section, CrossSectionSpec::Square { .. }))
                        });
                        if !square {
                            return Err(ModelError::Invalid(format!(
                                "design variable '{}': cross_section_width needs a square section",
                                v.id
                            )));
                        }
                    }
                }
            }
        }

        match &self.objective {
            ObjectiveSpec::TrackedDisplacementSquared { target } => {
                self.check_attachment(target, "objective")?;
                if matches!(target, AttachmentSpec::Ground { .. } | AttachmentSpec::Point { .. }) {
                    return Err(ModelError::Invalid(
                        "objective: tracked point must carry dofs".into(),
                    ));
                }
            }
            ObjectiveSpec::TipDeflection {
                beam,
                tip_node,
                root_node,
                ..
            } => {
                if !self.beam_exists(beam) {
                    return Err(ModelError::UnresolvedReference(format!(
                        "objective: beam '{beam}'"
                    )));
                }
                for n in [tip_node, root_node] {
                    if !self.node_exists(n) {
                        return Err(ModelError::UnresolvedReference(format!(
                            "objective: node '{n}'"
                        )));
                    }
                }
            }
        }

        if let Some(opt) = &self.optimization {
            for c in &opt.constraints {
                let (OptConstraintSpec::MinBeamLength { body, .. }
                | OptConstraintSpec::MaxStress { body, .. }) = c;
                if !self.beam_exists(body) {
                    return Err(ModelError::UnresolvedReference(format!(
                        "optimization constraint: beam '{body}'"
                    )));
                }
            }
        }

        Ok(())
    }

    /// Initial value of a design variable, read from the declared model.
    pub fn design_initial_value(&self, kind: &DesignVarKind) -> f64 {
        match kind {
            DesignVarKind::NodePositionX { node } => self.node_position(node)[0],
            DesignVarKind::NodePositionY { node } => self.node_position(node)[1],
            DesignVarKind::NodePositionZ { node } => self.node_position(node)[2],
            DesignVarKind::SpringConstant { force } => self
                .forces
                .iter()
                .find_map(|f| match f {
                    ForceSpec::Spring { id, stiffness, .. } if id == force => Some(*stiffness),
                    _ => None,
                })
                .expect("validated spring reference"),
            DesignVarKind::DampingCoefficient { force } => self
                .forces
                .iter()
                .find_map(|f| match f {
                    ForceSpec::Damper { id, damping, .. } if id == force => Some(*damping),
                    _ => None,
                })
                .expect("validated damper reference"),
            DesignVarKind::BeamProperty { body, property } => {
                let beam = self
                    .bodies
                    .iter()
                    .find_map(|b| match b {
                        BodySpec::Beam(beam) if beam.id == *body => Some(beam),
                        _ => None,
                    })
                    .expect("validated beam reference");
                match property {
                    BeamProperty::Density => beam.density,
                    BeamProperty::YoungsModulus => beam.youngs_modulus,
                    BeamProperty::CrossSectionWidth => match beam.cross_section {
                        CrossSectionSpec::Square { width } => width,
                        _ => unreachable!("validated square section"),
                    },
                }
            }
        }
    }

    fn node_position(&self, id: &str) -> [f64; 3] {
        for b in &self.bodies {
            if let BodySpec::Beam(beam) = b {
                for n in &beam.nodes {
                    if n.id == id {
                        return n.position;
                    }
                }
            }
        }
        for p in &self.points {
            if p.id == id {
                return p.position;
            }
        }
        panic!("validated node reference '{id}'")
    }

    /// The declared design vector (initial values of all bindings).
    pub fn initial_design(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(
            self.design_variables.len(),
            self.design_variables
                .iter()
                .map(|v| self.design_initial_value(&v.kind)),
        )
    }

    /// Writes a design vector back into the declared entities.
    pub fn apply_design(&mut self, a: &nalgebra::DVector<f64>) {
        assert_eq!(a.len(), self.design_variables.len());
        let vars = self.design_variables.clone();
        for (v, value) in vars.iter().zip(a.iter()) {
            match &v.kind {
                DesignVarKind::NodePositionX { node } => self.set_node_position(node, 0, *value),
                DesignVarKind::NodePositionY { node } => self.set_node_position(node, 1, *value),
                DesignVarKind::NodePositionZ { node } => self.set_node_position(node, 2, *value),
                DesignVarKind::SpringConstant { force } => {
                    for f in &mut self.forces {
                        if let ForceSpec::Spring { id, stiffness, .. } = f {
                            if id == force {
                                *stiffness = *value;
                            }
                        }
                    }
                }
                DesignVarKind::DampingCoefficient { force } => {
                    for f in &mut self.forces {
                        if let ForceSpec::Damper { id, damping, .. } = f {
                            if id == force {
                                *damping = *value;
                            }
                        }
                    }
                }
                DesignVarKind::BeamProperty { body, property } => {
                    for b in &mut self.bodies {
                        if let BodySpec::Beam(beam) = b {
                            if beam.id == *body {
                                match property {
                                    BeamProperty::Density => beam.density = *value,
                                    BeamProperty::YoungsModulus => beam.youngs_modulus = *value,
                                    BeamProperty::CrossSectionWidth => {
                                        beam.cross_section =
                                            CrossSectionSpec::Square { width: *value }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn set_node_position(&mut self, id: &str, component: usize, value: f64) {
        for b in &mut self.bodies {
            if let BodySpec::Beam(beam) = b {
                for n in &mut beam.nodes {
                    if n.id == id {
                        n.position[component] = value;
                        return;
                    }
                }
            }
        }
        for p in &mut self.points {
            if p.id == id {
                p.position[component] = value;
                return;
            }
        }
    }
}
