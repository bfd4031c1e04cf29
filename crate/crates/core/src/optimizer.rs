//! Gradient-based constrained design optimization: an augmented-Lagrangian
//! treatment of inequality constraints around a projected-gradient descent
//! with backtracking line search.

use std::io::Write;

use nalgebra::DVector;

use crate::adjoint::{adjoint_gradient_multi, SensitivityReport};
use crate::error::OptimizeError;
use crate::integrator::simulate;
use crate::model::{ModelDefinition, ResolvedOptConstraint, System};
use crate::objective::{BeamStressAggregate, TrajectoryFunctional};

/// Smoothing exponent for the trajectory maximum of stress magnitudes.
pub const STRESS_SMOOTHING_EXPONENT: f64 = 40.0;

/// Values of the objective and of every inequality constraint `c_j(a) <= 0`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub constraints: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GradientEvaluation {
    pub objective: f64,
    pub gradient: DVector<f64>,
    pub constraints: Vec<f64>,
    pub constraint_gradients: Vec<DVector<f64>>,
}

/// A box-bounded design problem with inequality constraints.
pub trait DesignProblem {
    fn initial(&self) -> DVector<f64>;
    fn bounds(&self) -> (DVector<f64>, DVector<f64>);
    fn evaluate(&mut self, a: &DVector<f64>) -> Result<Evaluation, OptimizeError>;
    fn evaluate_with_gradients(
        &mut self,
        a: &DVector<f64>,
    ) -> Result<GradientEvaluation, OptimizeError>;
}

#[derive(Debug, Clone)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Absolute objective-improvement threshold of the stopping rule.
    pub tolerance: f64,
    /// Consecutive sub-threshold improvements required to stop.
    pub consecutive: usize,
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_cap: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iters: 60,
            tolerance: 1e-6,
            consecutive: 5,
            initial_step: 1e-2,
            max_backtracks: 30,
            penalty_initial: 10.0,
            penalty_growth: 5.0,
            penalty_cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    /// Objective improvement stayed below tolerance for the required number
    /// of consecutive iterations.
    Converged,
    MaxIterations,
    /// Evaluation failed at the current iterate; the history is partial.
    Aborted(String),
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub phi: f64,
    pub grad_norm: f64,
    pub max_violation: f64,
    pub step: f64,
    pub accepted: bool,
    pub design: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct OptimizationHistory {
    pub iterations: Vec<IterationRecord>,
    pub final_design: DVector<f64>,
    pub stop: StopReason,
}

impl OptimizationHistory {
    /// CSV export: `iter, phi, grad_norm, max_violation, step, accepted,
    /// a_0..a_{n-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let nvars = self.final_design.len();
        let mut header = String::from("iter, phi, grad_norm, max_violation, step, accepted");
        for i in 0..nvars {
            header.push_str(&format!(", a_{i}"));
        }
        writeln!(w, "{header}")?;
        for r in &self.iterations {
            let mut row = format!(
                "{}, {:.16e}, {:.16e}, {:.16e}, {:.16e}, {}",
                r.iter, r.phi, r.grad_norm, r.max_violation, r.step, r.accepted as u8
            );
            for v in r.design.iter() {
                row.push_str(&format!(", {v:.16e}"));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

fn clip(a: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(a.len(), |i, _| a[i].clamp(lower[i], upper[i]))
}

/// Augmented-Lagrangian value for inequality constraints `c_j <= 0`.
pub fn augmented_value(objective: f64, constraints: &[f64], multipliers: &[f64], rho: f64) -> f64 {
    let mut v = objective;
    for (c, lam) in constraints.iter().zip(multipliers) {
        let t = (lam + rho * c).max(0.0);
        v += (t * t - lam * lam) / (2.0 * rho);
    }
    v
}

/// Gradient of `augmented_value` at fixed multipliers and penalty.
pub fn augmented_gradient(
    geval: &GradientEvaluation,
    multipliers: &[f64],
    rho: f64,
) -> DVector<f64> {
    let mut g = geval.gradient.clone();
    for ((c, lam), dc) in geval
        .constraints
        .iter()
        .zip(multipliers)
        .zip(&geval.constraint_gradients)
    {
        let t = (lam + rho * c).max(0.0);
        if t > 0.0 {
            g += t * dc;
        }
    }
    g
}

/// One projected descent trial: `clip(a - step * gradient)`.
pub fn descent_step(
    a: &DVector<f64>,
    gradient: &DVector<f64>,
    step: f64,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    clip(&(a - step * gradient), lower, upper)
}

/// Runs the optimization loop until the stopping rule fires or the iteration
/// budget is exhausted.
pub fn optimize<P: DesignProblem>(
    problem: &mut P,
    settings: &OptimizerSettings,
) -> OptimizationHistory {
    let (lower, upper) = problem.bounds();
    let mut a = clip(&problem.initial(), &lower, &upper);
    let mut multipliers: Vec<f64> = Vec::new();
    let mut rho = settings.penalty_initial;
    let mut violation_at_last_update = f64::INFINITY;
    let mut prev_phi: Option<f64> = None;
    let mut small_improvements = 0usize;
    let mut iterations = Vec::new();

    for iter in 0..settings.max_iters {
        let geval = match problem.evaluate_with_gradients(&a) {
            Ok(g) => g,
            Err(e) => {
                return OptimizationHistory {
                    iterations,
                    final_design: a,
                    stop: StopReason::Aborted(e.to_string()),
                }
            }
        };
        if multipliers.len() != geval.constraints.len() {
            multipliers = vec![0.0; geval.constraints.len()];
        }
        let aug = augmented_value(geval.objective, &geval.constraints, &multipliers, rho);
        let g_aug = augmented_gradient(&geval, &multipliers, rho);
        let grad_norm = g_aug.amax();
        let max_violation = geval
            .constraints
            .iter()
            .fold(0.0f64, |acc, c| acc.max(*c))
            .max(0.0);

        let mut accepted = false;
        let mut used_step = 0.0;
        let mut next = a.clone();
        if grad_norm > 0.0 {
            let mut step = settings.initial_step;
            for _ in 0..=settings.max_backtracks {
                let trial = descent_step(&a, &g_aug, step, &lower, &upper);
                if trial == a {
                    step *= 0.5;
                    continue;
                }
                if let Ok(ev) = problem.evaluate(&trial) {
                    let aug_trial =
                        augmented_value(ev.objective, &ev.constraints, &multipliers, rho);
                    if aug_trial < aug {
                        accepted = true;
                        used_step = step;
                        next = trial;
                        break;
                    }
                }
                step *= 0.5;
            }
        }

        iterations.push(IterationRecord {
            iter,
            phi: geval.objective,
            grad_norm,
            max_violation,
            step: used_step,
            accepted,
            design: a.clone(),
        });

        // stopping rule on the raw objective improvement
        if let Some(prev) = prev_phi {
            if (prev - geval.objective).abs() < settings.tolerance {
                small_improvements += 1;
            } else {
                small_improvements = 0;
            }
        }
        prev_phi = Some(geval.objective);
        if small_improvements >= settings.consecutive {
            return OptimizationHistory {
                iterations,
                final_design: a,
                stop: StopReason::Converged,
            };
        }

        if accepted {
            a = next;
            if max_violation > 0.0 {
                update_multipliers(&mut multipliers, &geval.constraints, rho);
            }
        } else {
            // stalled iteration: refresh multipliers and raise the penalty
            update_multipliers(&mut multipliers, &geval.constraints, rho);
            if max_violation > 0.5 * violation_at_last_update {
                rho = (rho * settings.penalty_growth).min(settings.penalty_cap);
            }
            violation_at_last_update = max_violation.max(f64::MIN_POSITIVE);
        }
    }

    OptimizationHistory {
        iterations,
        final_design: a,
        stop: StopReason::MaxIterations,
    }
}

fn update_multipliers(multipliers: &mut [f64], constraints: &[f64], rho: f64) {
    for (lam, c) in multipliers.iter_mut().zip(constraints) {
        *lam = (*lam + rho * c).max(0.0);
    }
}

/// The multibody design problem: objective and constraint values come from a
/// forward simulation, gradients from one shared backward sweep.
pub struct MbsDesignProblem {
    model: ModelDefinition,
    pub forward_count: usize,
    pub sweep_count: usize,
}

impl MbsDesignProblem {
    pub fn new(model: ModelDefinition) -> Self {
        MbsDesignProblem {
            model,
            forward_count: 0,
            sweep_count: 0,
        }
    }

    pub fn model(&self) -> &ModelDefinition {
        &self.model
    }

    fn min_length_rows(sys: &System) -> Vec<(usize, f64)> {
        let mut rows = Vec::new();
        for c in &sys.opt_constraints {
            if let ResolvedOptConstraint::MinBeamLength { beam_body, min } = c {
                for e in &sys.beam_bodies[*beam_body].elements {
                    rows.push((*e, *min));
                }
            }
        }
        rows
    }

    fn stress_functionals(sys: &System) -> Vec<BeamStressAggregate> {
        sys.opt_constraints
            .iter()
            .filter_map(|c| match c {
                ResolvedOptConstraint::MaxStress { beam_body, limit } => Some(BeamStressAggregate {
                    elements: sys.beam_bodies[*beam_body].elements.clone(),
                    limit: *limit,
                    exponent: STRESS_SMOOTHING_EXPONENT,
                }),
                _ => None,
            })
            .collect()
    }
}

impl DesignProblem for MbsDesignProblem {
    fn initial(&self) -> DVector<f64> {
        self.model.initial_design()
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let lower = DVector::from_iterator(
            self.model.design_variables.len(),
            self.model.design_variables.iter().map(|v| v.lower),
        );
        let upper = DVector::from_iterator(
            self.model.design_variables.len(),
            self.model.design_variables.iter().map(|v| v.upper),
        );
        (lower, upper)
    }

    fn evaluate(&mut self, a: &DVector<f64>) -> Result<Evaluation, OptimizeError> {
        let sys =
            System::assemble(&self.model, a).map_err(|e| OptimizeError::Evaluation(e.to_string()))?;
        let traj = simulate(&sys).map_err(|e| OptimizeError::Evaluation(e.to_string()))?;
        self.forward_count += 1;
        let objective = sys.objective.value(&sys, &traj);
        let mut constraints = Vec::new();
        for (e, min) in Self::min_length_rows(&sys) {
            constraints.push(min - sys.beam_elements[e].element.length);
        }
        for f in Self::stress_functionals(&sys) {
            constraints.push(f.value(&sys, &traj) - f.limit);
        }
        Ok(Evaluation {
            objective,
            constraints,
        })
    }

    fn evaluate_with_gradients(
        &mut self,
        a: &DVector<f64>,
    ) -> Result<GradientEvaluation, OptimizeError> {
        let sys =
            System::assemble(&self.model, a).map_err(|e| OptimizeError::Evaluation(e.to_string()))?;
        let traj = simulate(&sys).map_err(|e| OptimizeError::Evaluation(e.to_string()))?;
        self.forward_count += 1;
        let nvars = a.len();

        let stress = Self::stress_functionals(&sys);
        let mut functionals: Vec<&dyn TrajectoryFunctional> = vec![&sys.objective];
        for f in &stress {
            functionals.push(f);
        }
        let reports: Vec<SensitivityReport> = adjoint_gradient_multi(&sys, &traj, &functionals)?;
        self.sweep_count += 1;

        let objective = sys.objective.value(&sys, &traj);
        let gradient = reports[0].gradient();

        let mut constraints = Vec::new();
        let mut constraint_gradients = Vec::new();
        for (e, min) in Self::min_length_rows(&sys) {
            constraints.push(min - sys.beam_elements[e].element.length);
            let mut grad = DVector::zeros(nvars);
            for (i, eff) in sys.bindings().iter().enumerate() {
                for (be, delta) in &eff.beams {
                    if *be == e {
                        grad[i] -= delta.dlength;
                    }
                }
            }
            constraint_gradients.push(grad);
        }
        for (f, report) in stress.iter().zip(reports.iter().skip(1)) {
            constraints.push(f.value(&sys, &traj) - f.limit);
            constraint_gradients.push(report.gradient());
        }

        Ok(GradientEvaluation {
            objective,
            gradient,
            constraints,
            constraint_gradients,
        })
    }
}

/// Optimizer settings drawn from a model's optimization section.
pub fn settings_from_model(model: &ModelDefinition) -> OptimizerSettings {
    let mut s = OptimizerSettings::default();
    if let Some(opt) = &model.optimization {
        s.max_iters = opt.max_iters;
        s.tolerance = opt.tolerance;
        s.initial_step = opt.initial_step;
    }
    s
}

/// Optimizes a model and returns the history together with a copy of the
/// model carrying the optimized design values.
pub fn optimize_model(model: &ModelDefinition) -> (OptimizationHistory, ModelDefinition) {
    let settings = settings_from_model(model);
    let mut problem = MbsDesignProblem::new(model.clone());
    let history = optimize(&mut problem, &settings);
    let mut optimized = model.clone();
    optimized.apply_design(&history.final_design);
    (history, optimized)
}
