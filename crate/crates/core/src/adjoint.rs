//! Design-sensitivity analysis of discrete trajectory functionals.
//!
//! Three routes are provided: the adjoint method (one backward sweep for all
//! design variables), direct differentiation (one forward sensitivity sweep
//! per variable, sharing step factorizations), and central finite
//! differences (two full simulations per variable). The adjoint and direct
//! routes differentiate the same discrete residuals, so they agree to solver
//! precision; finite differences are fully independent.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{SensitivityError, SimError};
use crate::integrator::{simulate, solve_checked, Scheme, Trajectory};
use crate::model::{ModelDefinition, System};
use crate::objective::{FunctionalPartials, TrajectoryFunctional};

const CONSISTENCY_TOL: f64 = 1e-8;

/// Adjoint vectors from the backward sweep: `mu[n]` pairs with the dynamic
/// residual of step `n` (n = 0..N-1) and `eta[k]` with the constraint rows
/// at time k+1 (k = 0..N-1).
#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub mu: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Adjoint,
    Direct,
    FiniteDifference,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Adjoint => "adjoint",
            Method::Direct => "direct",
            Method::FiniteDifference => "fd",
        }
    }
}

/// Per-variable total derivative with its additive breakdown
/// (`gradient = explicit + mu_term + eta_term + q0_term + qdot0_term`).
#[derive(Debug, Clone)]
pub struct SensitivityEntry {
    pub id: String,
    pub method: Method,
    pub gradient: f64,
    pub explicit: f64,
    pub mu_term: f64,
    pub eta_term: f64,
    pub q0_term: f64,
    pub qdot0_term: f64,
}

#[derive(Debug, Clone)]
pub struct SensitivityReport {
    pub entries: Vec<SensitivityEntry>,
}

impl SensitivityReport {
    pub fn gradient(&self) -> DVector<f64> {
        DVector::from_iterator(self.entries.len(), self.entries.iter().map(|e| e.gradient))
    }

    pub fn gradient_of(&self, id: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.gradient)
    }

    /// CSV export: `variable_id, method, gradient, term_explicit, term_mu,
    /// term_eta, term_q0, term_qdot0`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "variable_id, method, gradient, term_explicit, term_mu, term_eta, term_q0, term_qdot0"
        )?;
        for e in &self.entries {
            writeln!(
                w,
                "{}, {}, {:.16e}, {:.16e}, {:.16e}, {:.16e}, {:.16e}, {:.16e}",
                e.id,
                e.method.label(),
                e.gradient,
                e.explicit,
                e.mu_term,
                e.eta_term,
                e.q0_term,
                e.qdot0_term
            )?;
        }
        Ok(())
    }
}

/// Rolling caches for the step-coefficient matrices built from a stored
/// trajectory; the sweeps touch each step once, so two slots suffice.
struct StepOps<'a> {
    scheme: Scheme<'a>,
    traj: &'a Trajectory,
    stiffness_cache: Vec<(usize, DMatrix<f64>)>,
    jacobian_cache: Vec<(usize, DMatrix<f64>)>,
}

impl<'a> StepOps<'a> {
    fn new(sys: &'a System, traj: &'a Trajectory) -> Self {
        StepOps {
            scheme: Scheme::with_step(sys, traj.h),
            traj,
            stiffness_cache: Vec::new(),
            jacobian_cache: Vec::new(),
        }
    }

    fn mid(&self, n: usize) -> DVector<f64> {
        self.scheme.mid(&self.traj.q[n], &self.traj.q[n + 1])
    }

    fn vel(&self, n: usize) -> DVector<f64> {
        self.scheme.vel(&self.traj.q[n], &self.traj.q[n + 1])
    }

    /// Tangent stiffness at the midpoint of interval `n` (cached).
    fn stiffness(&mut self, n: usize) -> Result<DMatrix<f64>, SimError> {
        if let Some((_, k)) = self.stiffness_cache.iter().find(|(i, _)| *i == n) {
            return Ok(k.clone());
        }
        let k = self.scheme.sys.stiffness(&self.mid(n))?;
        if self.stiffness_cache.len() >= 2 {
            self.stiffness_cache.remove(0);
        }
        self.stiffness_cache.push((n, k.clone()));
        Ok(k)
    }

    /// Constraint Jacobian at stored state `n` (cached).
    fn constraint_jacobian(&mut self, n: usize) -> DMatrix<f64> {
        if let Some((_, j)) = self.jacobian_cache.iter().find(|(i, _)| *i == n) {
            return j.clone();
        }
        let j = self.scheme.sys.constraints().jacobian(&self.traj.q[n]);
        if self.jacobian_cache.len() >= 2 {
            self.jacobian_cache.remove(0);
        }
        self.jacobian_cache.push((n, j.clone()));
        j
    }

    /// `∂c_n/∂q_{n+1}`.
    fn dc_dqnext(&mut self, n: usize) -> Result<DMatrix<f64>, SimError> {
        let sys = self.scheme.sys;
        let h = self.scheme.h;
        let alpha = self.scheme.alpha;
        let k = self.stiffness(n)?;
        let mut j;
        if n == 0 {
            j = sys.mass() / h;
            j += h * (1.0 - alpha) * alpha * k;
            j += 0.5 * sys.damping();
        } else {
            j = -(sys.mass() / h);
            j -= h * (1.0 - alpha) * alpha * k;
            j -= 0.5 * sys.damping();
        }
        Ok(j)
    }

    /// `∂c_n/∂q_n` (for n = 0 this is the derivative with respect to the
    /// fixed initial state).
    fn dc_dqself(&mut self, n: usize) -> Result<DMatrix<f64>, SimError> {
        let sys = self.scheme.sys;
        let h = self.scheme.h;
        let alpha = self.scheme.alpha;
        let oma = 1.0 - alpha;
        let lam = &self.traj.lambda[n];
        if n == 0 {
            let k = self.stiffness(0)?;
            let mut j = -(sys.mass() / h);
            j += h * oma * oma * k;
            j += 0.5 * h * sys.constraints().hessian_lambda(lam);
            j -= 0.5 * sys.damping();
            Ok(j)
        } else {
            let k_lead = self.stiffness(n)?;
            let k_trail = self.stiffness(n - 1)?;
            let mut j = 2.0 * (sys.mass() / h);
            j -= h * oma * oma * k_lead;
            j -= h * alpha * alpha * k_trail;
            j -= 0.5 * h * sys.constraints().hessian_lambda(lam);
            Ok(j)
        }
    }

    /// `∂c_n/∂q_{n-1}` for `n >= 1`.
    fn dc_dqprev(&mut self, n: usize) -> Result<DMatrix<f64>, SimError> {
        let sys = self.scheme.sys;
        let h = self.scheme.h;
        let alpha = self.scheme.alpha;
        let k = self.stiffness(n - 1)?;
        let mut j = -(sys.mass() / h);
        j -= h * alpha * (1.0 - alpha) * k;
        j += 0.5 * sys.damping();
        Ok(j)
    }

    /// `(∂c_n/∂λ_n)ᵀ = sign (h/2) G(q_n)`, as an l x m matrix.
    fn dc_dlam_t(&mut self, n: usize) -> DMatrix<f64> {
        let sign = self.scheme.lambda_sign(n);
        sign * 0.5 * self.scheme.h * self.constraint_jacobian(n)
    }

    /// Explicit design partials `∂c_n/∂a_i` for every binding, as columns.
    fn dc_da(&mut self, n: usize) -> Result<DMatrix<f64>, SimError> {
        let sys = self.scheme.sys;
        let h = self.scheme.h;
        let alpha = self.scheme.alpha;
        let nvars = sys.bindings().len();
        let m = sys.ndof();
        let mut out = DMatrix::zeros(m, nvars);
        let mid_lead = self.mid(n);
        let v_lead = self.vel(n);
        let (mid_trail, v_trail) = if n >= 1 {
            (Some(self.mid(n - 1)), Some(self.vel(n - 1)))
        } else {
            (None, None)
        };
        let inertia_vec: DVector<f64> = if n == 0 {
            (&self.traj.q[1] - &self.traj.q[0]) / h - &self.traj.qdot0
        } else {
            (2.0 * &self.traj.q[n] - &self.traj.q[n + 1] - &self.traj.q[n - 1]) / h
        };
        for i in 0..nvars {
            let mut col = DVector::zeros(m);
            if let Some(dm) = sys.mass_delta(i) {
                col += dm * &inertia_vec;
            }
            let dp_lead = sys
                .potential_gradient_delta(&mid_lead, i)
                .map_err(SimError::from)?;
            if n == 0 {
                col += h * (1.0 - alpha) * dp_lead;
            } else {
                col -= h * (1.0 - alpha) * dp_lead;
                let dp_trail = sys
                    .potential_gradient_delta(mid_trail.as_ref().unwrap(), i)
                    .map_err(SimError::from)?;
                col -= h * alpha * dp_trail;
            }
            if let Some(dd) = sys.damping_delta(i) {
                if n == 0 {
                    col += 0.5 * h * (dd * &v_lead);
                } else {
                    col -= 0.5 * h * (dd * (&v_lead + v_trail.as_ref().unwrap()));
                }
            }
            // constraint term sign (h/2) dGᵀ λ_n
            let mut dgt = DVector::zeros(m);
            sys.constraint_design_jt_lambda(i, &self.traj.lambda[n], &mut dgt);
            col += self.scheme.lambda_sign(n) * 0.5 * h * dgt;
            out.set_column(i, &col);
        }
        Ok(out)
    }

    /// Explicit design partials `∂g/∂a_i` at stored state `n`, as columns.
    fn dg_da(&self, n: usize) -> DMatrix<f64> {
        let sys = self.scheme.sys;
        let nvars = sys.bindings().len();
        let l = sys.constraint_rows();
        let mut out = DMatrix::zeros(l, nvars);
        for i in 0..nvars {
            out.set_column(i, &sys.constraint_design_rows(&self.traj.q[n], i));
        }
        out
    }
}

/// Solves the adjoint systems backward for one or more functionals at once
/// (they share every step factorization).
pub fn backward_sweep(
    sys: &System,
    traj: &Trajectory,
    partials: &[&FunctionalPartials],
) -> Result<Vec<AdjointSolution>, SensitivityError> {
    let m = sys.ndof();
    let l = sys.constraint_rows();
    let n_steps = traj.steps();
    let nfun = partials.len();
    let mut ops = StepOps::new(sys, traj);

    let mut solutions: Vec<AdjointSolution> = (0..nfun)
        .map(|_| AdjointSolution {
            mu: vec![DVector::zeros(m); n_steps],
            eta: vec![DVector::zeros(l); n_steps],
        })
        .collect();

    // reverse order: n = N, N-1, ..., 1 solves for (mu_{n-1}, eta_n)
    for n in (1..=n_steps).rev() {
        let mut a = DMatrix::zeros(m + l, m + l);
        a.view_mut((0, 0), (m, m))
            .copy_from(&ops.dc_dqnext(n - 1)?.transpose());
        a.view_mut((0, m), (m, l))
            .copy_from(&ops.constraint_jacobian(n).transpose());
        a.view_mut((m, 0), (l, m)).copy_from(&ops.dc_dlam_t(n - 1));

        let mut rhs = DMatrix::zeros(m + l, nfun);
        let correction_self = if n <= n_steps - 1 {
            Some(ops.dc_dqself(n)?.transpose())
        } else {
            None
        };
        let correction_next = if n + 1 <= n_steps - 1 {
            Some(ops.dc_dqprev(n + 1)?.transpose())
        } else {
            None
        };
        for (f, p) in partials.iter().enumerate() {
            let mut rq = p.dq[n].clone();
            if let Some(cs) = &correction_self {
                rq -= cs * &solutions[f].mu[n];
            }
            if let Some(cn) = &correction_next {
                rq -= cn * &solutions[f].mu[n + 1];
            }
            rhs.view_mut((0, f), (m, 1)).copy_from(&rq);
            rhs.view_mut((m, f), (l, 1)).copy_from(&p.dlambda[n - 1]);
        }

        let sol = solve_checked(a, &rhs).ok_or(SensitivityError::SingularAdjoint { step: n })?;
        for f in 0..nfun {
            solutions[f].mu[n - 1] = sol.view((0, f), (m, 1)).column(0).into_owned();
            solutions[f].eta[n - 1] = sol.view((m, f), (l, 1)).column(0).into_owned();
        }
    }
    Ok(solutions)
}

/// Contracts adjoint vectors with the explicit design partials into the
/// total derivative for every design variable.
pub fn assemble_gradient(
    sys: &System,
    traj: &Trajectory,
    adj: &AdjointSolution,
    partials: &FunctionalPartials,
) -> Result<SensitivityReport, SensitivityError> {
    let nvars = sys.bindings().len();
    let n_steps = traj.steps();
    let mut ops = StepOps::new(sys, traj);

    for i in 0..nvars {
        let r = sys.design_consistency_residual(i);
        if r > CONSISTENCY_TOL {
            return Err(SensitivityError::InconsistentInitialState {
                id: sys.bindings()[i].id.clone(),
                residual: r,
            });
        }
    }

    let mut mu_term = DVector::zeros(nvars);
    let mut eta_term = DVector::zeros(nvars);
    for n in 0..n_steps {
        let dc = ops.dc_da(n)?;
        mu_term -= dc.transpose() * &adj.mu[n];
        let dg = ops.dg_da(n + 1);
        eta_term -= dg.transpose() * &adj.eta[n];
    }

    // initial-state coupling
    let mut w0 = partials.dq[0].clone();
    w0 -= ops.dc_dqself(0)?.transpose() * &adj.mu[0];
    if n_steps >= 2 {
        w0 -= ops.dc_dqprev(1)?.transpose() * &adj.mu[1];
    }
    let mut wdot0 = partials.dqdot0.clone();
    // ∂c_0/∂qdot0 = -M
    wdot0 += sys.mass().transpose() * &adj.mu[0];

    let mut entries = Vec::with_capacity(nvars);
    for i in 0..nvars {
        let q0_term: f64 = sys.dq0(i).iter().map(|(dof, v)| w0[*dof] * v).sum();
        let qdot0_term = 0.0 * wdot0[0]; // ∂qdot0/∂a is zero by construction
        let explicit = partials.da[i];
        let gradient = explicit + mu_term[i] + eta_term[i] + q0_term + qdot0_term;
        entries.push(SensitivityEntry {
            id: sys.bindings()[i].id.clone(),
            method: Method::Adjoint,
            gradient,
            explicit,
            mu_term: mu_term[i],
            eta_term: eta_term[i],
            q0_term,
            qdot0_term,
        });
    }
    Ok(SensitivityReport { entries })
}

/// Adjoint gradients of several functionals over one trajectory, sharing the
/// backward sweep factorizations.
pub fn adjoint_gradient_multi(
    sys: &System,
    traj: &Trajectory,
    functionals: &[&dyn TrajectoryFunctional],
) -> Result<Vec<SensitivityReport>, SensitivityError> {
    let partials: Vec<FunctionalPartials> =
        functionals.iter().map(|f| f.partials(sys, traj)).collect();
    let refs: Vec<&FunctionalPartials> = partials.iter().collect();
    let solutions = backward_sweep(sys, traj, &refs)?;
    partials
        .iter()
        .zip(&solutions)
        .map(|(p, adj)| assemble_gradient(sys, traj, adj, p))
        .collect()
}

pub fn adjoint_gradient(
    sys: &System,
    traj: &Trajectory,
    functional: &dyn TrajectoryFunctional,
) -> Result<SensitivityReport, SensitivityError> {
    Ok(adjoint_gradient_multi(sys, traj, &[functional])?.remove(0))
}

/// Direct differentiation: forward-propagates state and multiplier
/// sensitivities for all design variables (one linear solve per step with a
/// shared factorization) and contracts them with the functional partials.
pub fn direct_gradient(
    sys: &System,
    traj: &Trajectory,
    functional: &dyn TrajectoryFunctional,
) -> Result<SensitivityReport, SensitivityError> {
    let m = sys.ndof();
    let l = sys.constraint_rows();
    let nvars = sys.bindings().len();
    let n_steps = traj.steps();
    let partials = functional.partials(sys, traj);
    let mut ops = StepOps::new(sys, traj);

    for i in 0..nvars {
        let r = sys.design_consistency_residual(i);
        if r > CONSISTENCY_TOL {
            return Err(SensitivityError::InconsistentInitialState {
                id: sys.bindings()[i].id.clone(),
                residual: r,
            });
        }
    }

    // s_0 = ∂q0/∂a
    let mut s_prev: DMatrix<f64> = DMatrix::zeros(m, nvars);
    let mut s_curr = DMatrix::zeros(m, nvars);
    for i in 0..nvars {
        for (dof, v) in sys.dq0(i) {
            s_curr[(*dof, i)] += v;
        }
    }

    let mut gradient = partials.da.clone();
    gradient += s_curr.transpose() * &partials.dq[0];

    for n in 0..n_steps {
        let mut a = DMatrix::zeros(m + l, m + l);
        a.view_mut((0, 0), (m, m)).copy_from(&ops.dc_dqnext(n)?);
        a.view_mut((0, m), (m, l))
            .copy_from(&ops.dc_dlam_t(n).transpose());
        a.view_mut((m, 0), (l, m)).copy_from(&ops.constraint_jacobian(n + 1));

        let mut rhs = ops.dc_da(n)?;
        if n == 0 {
            rhs += ops.dc_dqself(0)? * &s_curr;
        } else {
            rhs += ops.dc_dqprev(n)? * &s_prev;
            rhs += ops.dc_dqself(n)? * &s_curr;
        }
        let mut stacked = DMatrix::zeros(m + l, nvars);
        stacked.view_mut((0, 0), (m, nvars)).copy_from(&(-rhs));
        stacked
            .view_mut((m, 0), (l, nvars))
            .copy_from(&(-ops.dg_da(n + 1)));

        let sol =
            solve_checked(a, &stacked).ok_or(SensitivityError::SingularStep { step: n })?;
        let s_next = sol.view((0, 0), (m, nvars)).into_owned();
        let sigma = sol.view((m, 0), (l, nvars)).into_owned();

        gradient += s_next.transpose() * &partials.dq[n + 1];
        gradient += sigma.transpose() * &partials.dlambda[n];

        s_prev = std::mem::replace(&mut s_curr, s_next);
    }

    let entries = (0..nvars)
        .map(|i| SensitivityEntry {
            id: sys.bindings()[i].id.clone(),
            method: Method::Direct,
            gradient: gradient[i],
            explicit: gradient[i],
            mu_term: 0.0,
            eta_term: 0.0,
            q0_term: 0.0,
            qdot0_term: 0.0,
        })
        .collect();
    Ok(SensitivityReport { entries })
}

/// Central finite differences with step `1e-6 * (1 + |a_i|)`, re-assembling
/// and re-simulating the model at each perturbed design. Returns the report
/// and the number of simulations run.
pub fn finite_difference_gradient(
    model: &ModelDefinition,
    a: &DVector<f64>,
    value_of: &dyn Fn(&System, &Trajectory) -> f64,
) -> Result<(SensitivityReport, usize), SensitivityError> {
    let nvars = model.design_variables.len();
    let mut entries = Vec::with_capacity(nvars);
    let mut sims = 0usize;
    for i in 0..nvars {
        let id = model.design_variables[i].id.clone();
        let step = 1e-6 * (1.0 + a[i].abs());
        let mut values = [0.0; 2];
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut ap = a.clone();
            ap[i] += sign * step;
            let sys = System::assemble(model, &ap)?;
            let traj = simulate(&sys).map_err(|e| SensitivityError::PerturbedSimulation {
                id: id.clone(),
                source: e,
            })?;
            sims += 1;
            values[k] = value_of(&sys, &traj);
        }
        let gradient = (values[0] - values[1]) / (2.0 * step);
        entries.push(SensitivityEntry {
            id,
            method: Method::FiniteDifference,
            gradient,
            explicit: gradient,
            mu_term: 0.0,
            eta_term: 0.0,
            q0_term: 0.0,
            qdot0_term: 0.0,
        });
    }
    Ok((SensitivityReport { entries }, sims))
}

/// Largest pairwise relative disagreement between two reports,
/// `max_i |x_i - y_i| / max(1, |y_i|)`.
pub fn max_relative_difference(x: &SensitivityReport, y: &SensitivityReport) -> f64 {
    x.entries
        .iter()
        .zip(&y.entries)
        .map(|(a, b)| (a.gradient - b.gradient).abs() / b.gradient.abs().max(1.0))
        .fold(0.0, f64::max)
}
