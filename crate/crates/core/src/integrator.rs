//! Forward simulation with a symplectic variational scheme: a momentum-
//! matching initialization solve followed by implicit two-point steps, each
//! solved by Newton iteration on the stacked dynamic and constraint residual.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::SimError;
use crate::model::System;

/// Time-indexed simulation result: `q[n]` for `n = 0..=N`, multipliers
/// `lambda[n]` for `n = 0..N`, and the prescribed initial velocity.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub h: f64,
    pub q: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub qdot0: DVector<f64>,
}

impl Trajectory {
    /// Number of intervals N.
    pub fn steps(&self) -> usize {
        self.lambda.len()
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.h
    }

    /// A copy containing only the first `steps` intervals.
    pub fn truncated(&self, steps: usize) -> Trajectory {
        assert!(steps >= 1 && steps <= self.steps());
        Trajectory {
            h: self.h,
            q: self.q[..=steps].to_vec(),
            lambda: self.lambda[..steps].to_vec(),
            qdot0: self.qdot0.clone(),
        }
    }

    /// CSV export: header `t, q_0.., lambda_0..`, one row per stored state,
    /// full double precision. The final row has no multipliers and is
    /// zero-padded.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.q[0].len();
        let l = self.lambda.first().map_or(0, |v| v.len());
        let mut header = String::from("t");
        for i in 0..m {
            header.push_str(&format!(", q_{i}"));
        }
        for i in 0..l {
            header.push_str(&format!(", lambda_{i}"));
        }
        writeln!(w, "{header}")?;
        for n in 0..self.q.len() {
            let mut row = format!("{:.16e}", self.time(n));
            for v in self.q[n].iter() {
                row.push_str(&format!(", {v:.16e}"));
            }
            for i in 0..l {
                let v = if n < self.lambda.len() {
                    self.lambda[n][i]
                } else {
                    0.0
                };
                row.push_str(&format!(", {v:.16e}"));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

/// Discretization coefficients shared by the forward solver and the
/// sensitivity sweeps.
pub(crate) struct Scheme<'a> {
    pub sys: &'a System,
    pub h: f64,
    pub alpha: f64,
}

impl<'a> Scheme<'a> {
    pub fn new(sys: &'a System) -> Self {
        Scheme {
            sys,
            h: sys.settings.time_step,
            alpha: sys.settings.alpha,
        }
    }

    pub fn with_step(sys: &'a System, h: f64) -> Self {
        Scheme {
            sys,
            h,
            alpha: sys.settings.alpha,
        }
    }

    pub fn mid(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        (1.0 - self.alpha) * qa + self.alpha * qb
    }

    pub fn vel(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        (qb - qa) / self.h
    }

    /// Dynamic rows of the initialization residual (momentum matching).
    pub fn initial_dynamic_residual(
        &self,
        q0: &DVector<f64>,
        q1: &DVector<f64>,
        lam0: &DVector<f64>,
        qdot0: &DVector<f64>,
    ) -> Result<DVector<f64>, SimError> {
        let sys = self.sys;
        let h = self.h;
        let mid = self.mid(q0, q1);
        let v = self.vel(q0, q1);
        let mut r = sys.mass() * &((q1 - q0) / h - qdot0);
        r += h * (1.0 - self.alpha) * sys.potential_gradient(&mid)?;
        r += 0.5 * h * (sys.constraints().jacobian(q0).transpose() * lam0);
        r += 0.5 * h * (sys.damping() * &v);
        Ok(r)
    }

    /// Dynamic rows of the two-point step residual.
    pub fn step_dynamic_residual(
        &self,
        qprev: &DVector<f64>,
        qn: &DVector<f64>,
        qnext: &DVector<f64>,
        lam: &DVector<f64>,
    ) -> Result<DVector<f64>, SimError> {
        let sys = self.sys;
        let h = self.h;
        let mid_n = self.mid(qn, qnext);
        let mid_p = self.mid(qprev, qn);
        let mut r = sys.mass() * &((2.0 * qn - qnext - qprev) / h);
        r -= h * (1.0 - self.alpha) * sys.potential_gradient(&mid_n)?;
        r -= h * self.alpha * sys.potential_gradient(&mid_p)?;
        r -= 0.5 * h * (sys.constraints().jacobian(qn).transpose() * lam);
        r -= 0.5 * (sys.damping() * &(qnext - qprev));
        Ok(r)
    }

    /// `∂c_0/∂q_1`.
    pub fn initial_dnext(&self, mid0: &DVector<f64>) -> Result<DMatrix<f64>, SimError> {
        let sys = self.sys;
        let h = self.h;
        let mut j = sys.mass() / h;
        j += h * (1.0 - self.alpha) * self.alpha * sys.stiffness(mid0)?;
        j += 0.5 * sys.damping();
        Ok(j)
    }

    /// `∂c_0/∂q_0`.
    pub fn initial_dself(
        &self,
        mid0: &DVector<f64>,
        lam0: &DVector<f64>,
    ) -> Result<DMatrix<f64>, SimError> {
        let sys = self.sys;
        let h = self.h;
        let oma = 1.0 - self.alpha;
        let mut j = -(sys.mass() / h);
        j += h * oma * oma * sys.stiffness(mid0)?;
        j += 0.5 * h * sys.constraints().hessian_lambda(lam0);
        j -= 0.5 * sys.damping();
        Ok(j)
    }

    /// `∂c_n/∂q_{n+1}` for `n >= 1`, from the stiffness at the leading
    /// interval midpoint.
    pub fn step_dnext(&self, mid_n: &DVector<f64>) -> Result<DMatrix<f64>, SimError> {
        let sys = self.sys;
        let h = self.h;
        let mut j = -(sys.mass() / h);
        j -= h * (1.0 - self.alpha) * self.alpha * sys.stiffness(mid_n)?;
        j -= 0.5 * sys.damping();
        Ok(j)
    }

    /// `∂c_n/∂q_n` for `n >= 1`.
    pub fn step_dself(
        &self,
        mid_n: &DVector<f64>,
        mid_prev: &DVector<f64>,
        lam: &DVector<f64>,
    ) -> Result<DMatrix<f64>, SimError> {
        let sys = self.sys;
        let h = self.h;
        let oma = 1.0 - self.alpha;
        let mut j = 2.0 * (sys.mass() / h);
        j -= h * oma * oma * sys.stiffness(mid_n)?;
        j -= h * self.alpha * self.alpha * sys.stiffness(mid_prev)?;
        j -= 0.5 * h * sys.constraints().hessian_lambda(lam);
        Ok(j)
    }

    /// `∂c_n/∂q_{n-1}` for `n >= 1`, from the stiffness at the trailing
    /// interval midpoint.
    pub fn step_dprev(&self, mid_prev: &DVector<f64>) -> Result<DMatrix<f64>, SimError> {
        let sys = self.sys;
        let h = self.h;
        let mut j = -(sys.mass() / h);
        j -= h * self.alpha * (1.0 - self.alpha) * sys.stiffness(mid_prev)?;
        j += 0.5 * sys.damping();
        Ok(j)
    }

    /// Sign of the `(h/2) Gᵀλ` term in the dynamic residual of step `n`.
    pub fn lambda_sign(&self, n: usize) -> f64 {
        if n == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Dense LU solve with a pivot-ratio singularity guard.
pub(crate) fn solve_checked(a: DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let lu = a.lu();
    let u = lu.u();
    let n = u.nrows().min(u.ncols());
    let mut umax = 0.0f64;
    let mut umin = f64::INFINITY;
    for i in 0..n {
        let v = u[(i, i)].abs();
        umax = umax.max(v);
        umin = umin.min(v);
    }
    if !(umin > 1e-14 * umax) {
        return None;
    }
    lu.solve(b)
}

pub(crate) fn solve_checked_vec(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let cols = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    solve_checked(a, &cols).map(|m| DVector::from_column_slice(m.as_slice()))
}

/// Newton iteration on a square nonlinear system. Returns the solution and
/// the iteration count; the guard triggers on singular Jacobians.
pub fn newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    guess: DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<(DVector<f64>, usize), SimError>
where
    R: FnMut(&DVector<f64>) -> Result<DVector<f64>, SimError>,
    J: FnMut(&DVector<f64>) -> Result<DMatrix<f64>, SimError>,
{
    let mut x = guess;
    let mut r = residual(&x)?;
    for iter in 0..max_iters {
        if r.amax() <= tol {
            return Ok((x, iter));
        }
        let j = jacobian(&x)?;
        let dx = solve_checked_vec(j, &r).ok_or(SimError::SingularJacobian { step: 0 })?;
        x -= dx;
        r = residual(&x)?;
    }
    if r.amax() <= tol {
        Ok((x, max_iters))
    } else {
        Err(SimError::NewtonDiverged {
            step: 0,
            iters: max_iters,
            residual: r.amax(),
        })
    }
}

fn tag_step(e: SimError, step: usize) -> SimError {
    match e {
        SimError::SingularJacobian { .. } => SimError::SingularJacobian { step },
        SimError::NewtonDiverged {
            iters, residual, ..
        } => SimError::NewtonDiverged {
            step,
            iters,
            residual,
        },
        other => other,
    }
}

/// Runs the forward simulation over the system's configured horizon.
pub fn simulate(sys: &System) -> Result<Trajectory, SimError> {
    let scheme = Scheme::new(sys);
    let m = sys.ndof();
    let l = sys.constraint_rows();
    let n_steps = sys.settings.step_count();
    let h = scheme.h;
    let tol = sys.settings.newton_tol;
    let max_iters = sys.settings.max_newton_iters;

    let q0 = sys.q0().clone();
    let qdot0 = sys.qdot0().clone();

    let mut qs: Vec<DVector<f64>> = Vec::with_capacity(n_steps + 1);
    let mut lams: Vec<DVector<f64>> = Vec::with_capacity(n_steps);
    qs.push(q0.clone());

    let split = |z: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        (z.rows(0, m).into_owned(), z.rows(m, l).into_owned())
    };
    let join = |q: &DVector<f64>, lam: &DVector<f64>| -> DVector<f64> {
        let mut z = DVector::zeros(m + l);
        z.rows_mut(0, m).copy_from(q);
        z.rows_mut(m, l).copy_from(lam);
        z
    };

    // initialization solve for (q_1, lambda_0)
    {
        let g0_jac_t = sys.constraints().jacobian(&q0).transpose();
        let guess_q = &q0 + h * &qdot0;
        let guess = join(&guess_q, &DVector::zeros(l));
        let residual = |z: &DVector<f64>| -> Result<DVector<f64>, SimError> {
            let (q1, lam0) = split(z);
            let mut r = DVector::zeros(m + l);
            r.rows_mut(0, m)
                .copy_from(&scheme.initial_dynamic_residual(&q0, &q1, &lam0, &qdot0)?);
            r.rows_mut(m, l)
                .copy_from(&sys.constraints().evaluate(&q1, h));
            Ok(r)
        };
        let jacobian = |z: &DVector<f64>| -> Result<DMatrix<f64>, SimError> {
            let (q1, _) = split(z);
            let mid = scheme.mid(&q0, &q1);
            let mut j = DMatrix::zeros(m + l, m + l);
            j.view_mut((0, 0), (m, m))
                .copy_from(&scheme.initial_dnext(&mid)?);
            j.view_mut((0, m), (m, l)).copy_from(&(0.5 * h * &g0_jac_t));
            j.view_mut((m, 0), (l, m))
                .copy_from(&sys.constraints().jacobian(&q1));
            Ok(j)
        };
        let (z, _) =
            newton_solve(residual, jacobian, guess, tol, max_iters).map_err(|e| tag_step(e, 0))?;
        let (q1, lam0) = split(&z);
        qs.push(q1);
        lams.push(lam0);
    }

    for n in 1..n_steps {
        let qprev = qs[n - 1].clone();
        let qn = qs[n].clone();
        let t_next = (n + 1) as f64 * h;
        let gn_jac_t = sys.constraints().jacobian(&qn).transpose();
        let guess = join(&(2.0 * &qn - &qprev), &lams[n - 1].clone());
        let residual = |z: &DVector<f64>| -> Result<DVector<f64>, SimError> {
            let (qnext, lam) = split(z);
            let mut r = DVector::zeros(m + l);
            r.rows_mut(0, m)
                .copy_from(&scheme.step_dynamic_residual(&qprev, &qn, &qnext, &lam)?);
            r.rows_mut(m, l)
                .copy_from(&sys.constraints().evaluate(&qnext, t_next));
            Ok(r)
        };
        let jacobian = |z: &DVector<f64>| -> Result<DMatrix<f64>, SimError> {
            let (qnext, _) = split(z);
            let mid = scheme.mid(&qn, &qnext);
            let mut j = DMatrix::zeros(m + l, m + l);
            j.view_mut((0, 0), (m, m)).copy_from(&scheme.step_dnext(&mid)?);
            j.view_mut((0, m), (m, l))
                .copy_from(&(-0.5 * h * &gn_jac_t));
            j.view_mut((m, 0), (l, m))
                .copy_from(&sys.constraints().jacobian(&qnext));
            Ok(j)
        };
        let (z, _) =
            newton_solve(residual, jacobian, guess, tol, max_iters).map_err(|e| tag_step(e, n))?;
        let (qnext, lam) = split(&z);
        qs.push(qnext);
        lams.push(lam);
    }

    Ok(Trajectory {
        h,
        q: qs,
        lambda: lams,
        qdot0,
    })
}

/// Total energy sampled at interval midpoints: kinetic from the divided
/// difference, potential at the blended configuration.
pub fn interval_energies(sys: &System, traj: &Trajectory) -> Vec<f64> {
    let scheme = Scheme::with_step(sys, traj.h);
    (0..traj.steps())
        .map(|n| {
            let v = scheme.vel(&traj.q[n], &traj.q[n + 1]);
            let mid = scheme.mid(&traj.q[n], &traj.q[n + 1]);
            sys.kinetic_energy(&v) + sys.potential_energy(&mid)
        })
        .collect()
}

/// Pre-step discrete momentum at time n (unconstrained contributions only).
pub fn pre_momentum(sys: &System, traj: &Trajectory, n: usize) -> DVector<f64> {
    let scheme = Scheme::with_step(sys, traj.h);
    let v = scheme.vel(&traj.q[n], &traj.q[n + 1]);
    let mid = scheme.mid(&traj.q[n], &traj.q[n + 1]);
    sys.mass() * &v
        + traj.h * (1.0 - scheme.alpha) * sys.potential_gradient(&mid).expect("valid state")
        + 0.5 * traj.h * (sys.damping() * &v)
}

/// Post-step discrete momentum at time n (unconstrained contributions only).
pub fn post_momentum(sys: &System, traj: &Trajectory, n: usize) -> DVector<f64> {
    let scheme = Scheme::with_step(sys, traj.h);
    let v = scheme.vel(&traj.q[n - 1], &traj.q[n]);
    let mid = scheme.mid(&traj.q[n - 1], &traj.q[n]);
    sys.mass() * &v
        - traj.h * scheme.alpha * sys.potential_gradient(&mid).expect("valid state")
        - 0.5 * traj.h * (sys.damping() * &v)
}
