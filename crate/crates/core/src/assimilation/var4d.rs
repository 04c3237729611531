//! Strong- and weak-constraint 4DVar over one assimilation window.
//!
//! The weak-constraint cost augments the control vector with a model-error
//! tendency `eta`, constant over the window and applied once per model step:
//!
//!   J(x0, eta) = 1/2 |x0 - x0b|^2_B-1
//!              + 1/2 sum_k |H(x_k) - y_k|^2_R-1
//!              + 1/2 |eta - eta_b|^2_Q-1
//!
//! Gradients come from an adjoint sweep that accumulates both d/dx0 and
//! d/deta (eta enters every step). Minimization is Gauss-Newton with CG on
//! the linearized subproblem; for linear dynamics the first outer iteration
//! already solves the quadratic exactly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::covariance::RealizedCovariance;
use crate::dynamics::{Dynamics, State, Trajectory};
use crate::error::{Error, Result};
use crate::observing::{ObservationBatch, ObservationOperator};

/// Weak-constraint term: background tendency, its covariance, and the set
/// of state components that carry a model-error control variable.
pub struct ModelErrorTerm<'a> {
    /// Background tendency eta_b, full state dimension, zero outside the mask.
    pub eta_background: State,
    /// Covariance over the active components only.
    pub q: &'a RealizedCovariance,
    /// Indices of active components, strictly increasing.
    pub active: &'a [usize],
}

pub struct WindowProblem<'a> {
    pub dynamics: &'a Dynamics,
    pub steps: usize,
    pub x0_background: &'a State,
    pub b: &'a RealizedCovariance,
    pub batches: &'a [ObservationBatch],
    pub h: &'a ObservationOperator,
    pub r: &'a RealizedCovariance,
    /// `None` runs strong-constraint 4DVar (eta frozen at zero, no Q term).
    pub model_error: Option<ModelErrorTerm<'a>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub outer_iterations: usize,
    pub cg_iterations: usize,
    pub initial_grad_norm: f64,
    pub final_grad_norm: f64,
    pub final_cost: f64,
}

#[derive(Debug, Clone)]
pub struct WindowSolution {
    pub x0_analysis: State,
    /// Full-dimension analysed tendency; exactly zero outside the mask and
    /// identically zero in strong-constraint mode.
    pub eta_analysis: State,
    pub stats: SolverStats,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub outer_loops: usize,
    /// Target relative reduction of the gradient norm (vs the prior point).
    pub grad_reduction: f64,
    pub max_cg_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            outer_loops: 3,
            grad_reduction: 1e-8,
            max_cg_iterations: 400,
        }
    }
}

impl<'a> WindowProblem<'a> {
    fn dim(&self) -> usize {
        self.x0_background.len()
    }

    fn n_active(&self) -> usize {
        self.model_error.as_ref().map_or(0, |m| m.active.len())
    }

    fn expand_eta(&self, eta_active: &DVector<f64>) -> State {
        let mut full = State::zeros(self.dim());
        if let Some(me) = &self.model_error {
            for (slot, &i) in me.active.iter().enumerate() {
                full[i] = eta_active[slot];
            }
        }
        full
    }

    fn restrict_eta(&self, full: &State) -> DVector<f64> {
        match &self.model_error {
            Some(me) => DVector::from_iterator(me.active.len(), me.active.iter().map(|&i| full[i])),
            None => DVector::zeros(0),
        }
    }

    /// Observation-term gradient contribution at window step `t`,
    /// `Hᵀ R⁻¹ (H x_t - y)` summed over the batches valid at `t`.
    fn obs_grad_at(&self, t: usize, x_t: &State) -> Result<State> {
        let mut g = State::zeros(self.dim());
        for batch in self.batches.iter().filter(|b| b.time_within_window == t) {
            let misfit = self.h.apply(x_t) - &batch.values;
            g += self.h.apply_transpose(&self.r.solve(&misfit)?);
        }
        Ok(g)
    }

    /// Cost and gradients at `(x0, eta_full)`. `eta_full` must be zero
    /// outside the mask.
    pub fn cost_grad(&self, x0: &State, eta_full: &State) -> Result<(f64, State, State)> {
        let traj = self.dynamics.step_or_initial(x0, eta_full, self.steps)?;
        let cost = self.cost_of_trajectory(x0, eta_full, &traj)?;
        if !cost.is_finite() {
            return Err(Error::Blowup { step: self.steps });
        }

        // adjoint sweep, accumulating d/dx0 and d/deta
        let mut lambda = State::zeros(self.dim());
        let mut grad_eta_acc = State::zeros(self.dim());
        for k in (1..=self.steps).rev() {
            lambda += self.obs_grad_at(k, &traj.states[k])?;
            grad_eta_acc += &lambda;
            lambda = self.dynamics.adjoint_once(&traj.states[k - 1], &lambda)?;
        }
        lambda += self.obs_grad_at(0, &traj.states[0])?;

        let dx = x0 - self.x0_background;
        let grad_x0 = self.b.solve(&dx)? + lambda;

        let grad_eta = match &self.model_error {
            Some(me) => {
                let deta = self.restrict_eta(eta_full) - self.restrict_eta(&me.eta_background);
                let prior = me.q.solve(&deta)?;
                self.expand_eta(&(self.restrict_eta(&grad_eta_acc) + prior))
            }
            None => State::zeros(self.dim()),
        };
        Ok((cost, grad_x0, grad_eta))
    }

    fn cost_of_trajectory(&self, x0: &State, eta_full: &State, traj: &Trajectory) -> Result<f64> {
        let dx = x0 - self.x0_background;
        let mut cost = 0.5 * self.b.quad_form(&dx)?;
        for batch in self.batches {
            let misfit = self.h.apply(&traj.states[batch.time_within_window]) - &batch.values;
            cost += 0.5 * misfit.dot(&self.r.solve(&misfit)?);
        }
        if let Some(me) = &self.model_error {
            let deta = self.restrict_eta(eta_full) - self.restrict_eta(&me.eta_background);
            cost += 0.5 * me.q.quad_form(&deta)?;
        }
        Ok(cost)
    }

    /// Gauss-Newton Hessian applied to a packed increment, linearized about
    /// `traj`. Exact Hessian for linear dynamics.
    fn hessian_vec(&self, traj: &Trajectory, delta: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.dim();
        let dx0 = State::from_column_slice(&delta.as_slice()[..d]);
        let deta_active = DVector::from_column_slice(&delta.as_slice()[d..]);
        let deta_full = self.expand_eta(&deta_active);

        // tangent-linear sweep
        let mut dxs = Vec::with_capacity(self.steps + 1);
        dxs.push(dx0.clone());
        for k in 0..self.steps {
            let next = self.dynamics.tlm_once(&traj.states[k], &dxs[k])? + &deta_full;
            dxs.push(next);
        }

        // adjoint sweep on Hᵀ R⁻¹ H dx_k
        let mut lambda = State::zeros(d);
        let mut geta_acc = State::zeros(d);
        for k in (1..=self.steps).rev() {
            lambda += self.obs_hessian_at(k, &dxs[k])?;
            geta_acc += &lambda;
            lambda = self.dynamics.adjoint_once(&traj.states[k - 1], &lambda)?;
        }
        lambda += self.obs_hessian_at(0, &dxs[0])?;

        let gx0 = self.b.solve(&dx0)? + lambda;
        let mut out = DVector::zeros(delta.len());
        out.rows_mut(0, d).copy_from(&gx0);
        if let Some(me) = &self.model_error {
            let geta = self.restrict_eta(&geta_acc) + me.q.solve(&deta_active)?;
            out.rows_mut(d, me.active.len()).copy_from(&geta);
        }
        Ok(out)
    }

    fn obs_hessian_at(&self, t: usize, dx_t: &State) -> Result<State> {
        let mut g = State::zeros(self.dim());
        for _batch in self.batches.iter().filter(|b| b.time_within_window == t) {
            let v = self.h.apply(dx_t);
            g += self.h.apply_transpose(&self.r.solve(&v)?);
        }
        Ok(g)
    }

    fn pack_grad(&self, grad_x0: &State, grad_eta_full: &State) -> DVector<f64> {
        let d = self.dim();
        let mut g = DVector::zeros(d + self.n_active());
        g.rows_mut(0, d).copy_from(grad_x0);
        if self.n_active() > 0 {
            g.rows_mut(d, self.n_active())
                .copy_from(&self.restrict_eta(grad_eta_full));
        }
        g
    }

    /// Minimize the window cost. Returns the analysis, the analysed tendency
    /// (zero in strong-constraint mode) and solver statistics.
    pub fn solve(&self, opts: SolveOptions) -> Result<WindowSolution> {
        let d = self.dim();
        let mut x0 = self.x0_background.clone();
        let mut eta_full = self
            .model_error
            .as_ref()
            .map_or_else(|| State::zeros(d), |me| me.eta_background.clone());

        let (mut cost, gx, ge) = self.cost_grad(&x0, &eta_full)?;
        let mut grad = self.pack_grad(&gx, &ge);
        let initial_grad_norm = grad.norm();
        let target = initial_grad_norm * opts.grad_reduction;

        let mut cg_total = 0;
        let mut outer = 0;
        while outer < opts.outer_loops && grad.norm() > target && grad.norm() > 1e-300 {
            outer += 1;
            let traj = self.dynamics.step_or_initial(&x0, &eta_full, self.steps)?;
            let (step, iters) = cg_solve(
                |v| self.hessian_vec(&traj, v),
                &(-&grad),
                opts.max_cg_iterations,
                1e-12,
            )?;
            cg_total += iters;

            // step halving: never accept an increase in the nonlinear cost
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let x0_try =
                    &x0 + State::from_column_slice(&step.as_slice()[..d]) * alpha;
                let eta_try = &eta_full
                    + self.expand_eta(&DVector::from_column_slice(&step.as_slice()[d..]))
                        * alpha;
                match self.cost_grad(&x0_try, &eta_try) {
                    Ok((c, gx, ge)) if c <= cost * (1.0 + 1e-12) + 1e-300 => {
                        x0 = x0_try;
                        eta_full = eta_try;
                        cost = c;
                        grad = self.pack_grad(&gx, &ge);
                        accepted = true;
                        break;
                    }
                    _ => alpha *= 0.5,
                }
            }
            if !accepted {
                break; // stuck at a numerical floor; report where we are
            }
        }

        Ok(WindowSolution {
            x0_analysis: x0,
            eta_analysis: eta_full,
            stats: SolverStats {
                outer_iterations: outer,
                cg_iterations: cg_total,
                initial_grad_norm,
                final_grad_norm: grad.norm(),
                final_cost: cost,
            },
        })
    }
}

impl Dynamics {
    /// Like [`Dynamics::step`] but tolerant of zero-step windows, which
    /// degenerate to the initial state only.
    pub(crate) fn step_or_initial(
        &self,
        x: &State,
        eta: &State,
        n_steps: usize,
    ) -> Result<Trajectory> {
        if n_steps == 0 {
            return Ok(Trajectory {
                states: vec![x.clone()],
            });
        }
        self.step(x, eta, n_steps)
    }
}

/// Conjugate gradients on `A x = rhs` with SPD operator `A` given as a
/// matrix-vector closure. Returns the solution and the iteration count.
fn cg_solve<F>(
    mut apply: F,
    rhs: &DVector<f64>,
    max_iterations: usize,
    rel_tol: f64,
) -> Result<(DVector<f64>, usize)>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = DVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for iter in 0..max_iterations {
        if rs.sqrt() <= rel_tol * rhs_norm {
            return Ok((x, iter));
        }
        let ap = apply(&p)?;
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NoConvergence(format!(
                "CG curvature {pap:.3e} not positive at iteration {iter}"
            )));
        }
        let alpha = rs / pap;
        x += &p * alpha;
        r -= ap * alpha;
        let rs_new = r.dot(&r);
        p = &r + &p * (rs_new / rs);
        rs = rs_new;
    }
    if rs.sqrt() <= 1e-6 * rhs_norm {
        // good enough for an inner loop; outer Gauss-Newton iterations mop up
        return Ok((x, max_iterations));
    }
    Err(Error::NoConvergence(format!(
        "CG residual {:.3e} after {} iterations (rhs norm {:.3e})",
        rs.sqrt(),
        max_iterations,
        rhs_norm
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceSpec;
    use crate::observing::ObservationOperatorSpec;
    use crate::rng::{stream, StreamDomain};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_cov(dim: usize) -> RealizedCovariance {
        CovarianceSpec::diagonal(1.0).realize(dim, 1.0).unwrap()
    }

    fn batch(t: usize, values: Vec<f64>) -> ObservationBatch {
        ObservationBatch {
            cycle_index: 0,
            time_within_window: t,
            values: DVector::from_vec(values),
        }
    }

    #[test]
    fn scalar_closed_form_analysis() {
        // J = x0^2/2 + eta^2/2 + (x0 + eta - 3)^2/2 has its minimum at
        // x0 = eta = 1
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::identity(1, 1),
        };
        let b = unit_cov(1);
        let q = unit_cov(1);
        let r = unit_cov(1);
        let h = ObservationOperatorSpec::Full.realize(1).unwrap();
        let x0b = State::zeros(1);
        let batches = vec![batch(1, vec![3.0])];
        let problem = WindowProblem {
            dynamics: &dynamics,
            steps: 1,
            x0_background: &x0b,
            b: &b,
            batches: &batches,
            h: &h,
            r: &r,
            model_error: Some(ModelErrorTerm {
                eta_background: State::zeros(1),
                q: &q,
                active: &[0],
            }),
        };
        let sol = problem.solve(SolveOptions::default()).unwrap();
        assert_relative_eq!(sol.x0_analysis[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.eta_analysis[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn no_observations_returns_the_prior() {
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::identity(2, 2) * 0.9,
        };
        let b = unit_cov(2);
        let q = unit_cov(2);
        let r = unit_cov(2);
        let h = ObservationOperatorSpec::Full.realize(2).unwrap();
        let x0b = State::from_vec(vec![0.3, -0.7]);
        let eta_b = State::from_vec(vec![0.1, 0.2]);
        let problem = WindowProblem {
            dynamics: &dynamics,
            steps: 1,
            x0_background: &x0b,
            b: &b,
            batches: &[],
            h: &h,
            r: &r,
            model_error: Some(ModelErrorTerm {
                eta_background: eta_b.clone(),
                q: &q,
                active: &[0, 1],
            }),
        };
        let sol = problem.solve(SolveOptions::default()).unwrap();
        assert_relative_eq!((sol.x0_analysis - x0b).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((sol.eta_analysis - eta_b).norm(), 0.0, epsilon = 1e-12);
    }

    fn fd_check(dynamics: &Dynamics, dim: usize, steps: usize, fd: f64, tol: f64, seed: u64) {
        let mut rng = stream(seed, StreamDomain::Diagnostics, 0);
        let mut draw = |n: usize| {
            State::from_fn(n, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.3 * z
            })
        };
        let b = unit_cov(dim);
        let q = unit_cov(dim);
        let h = ObservationOperatorSpec::Full.realize(dim).unwrap();
        let r = unit_cov(dim);
        let x0b = draw(dim);
        let eta_b = draw(dim);
        let batches: Vec<_> = (1..=steps)
            .map(|t| batch(t, draw(dim).iter().copied().collect()))
            .collect();
        let active: Vec<usize> = (0..dim).collect();
        let problem = WindowProblem {
            dynamics,
            steps,
            x0_background: &x0b,
            b: &b,
            batches: &batches,
            h: &h,
            r: &r,
            model_error: Some(ModelErrorTerm {
                eta_background: eta_b,
                q: &q,
                active: &active,
            }),
        };
        let x0 = draw(dim);
        let eta = draw(dim);
        let (_, gx, ge) = problem.cost_grad(&x0, &eta).unwrap();
        for i in 0..dim {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[i] += fd;
            xm[i] -= fd;
            let (cp, _, _) = problem.cost_grad(&xp, &eta).unwrap();
            let (cm, _, _) = problem.cost_grad(&xm, &eta).unwrap();
            let fd_grad = (cp - cm) / (2.0 * fd);
            let rel = (gx[i] - fd_grad).abs() / (1.0 + fd_grad.abs());
            assert!(rel < tol, "x0[{i}]: adjoint {} vs FD {fd_grad}", gx[i]);

            let mut ep = eta.clone();
            let mut em = eta.clone();
            ep[i] += fd;
            em[i] -= fd;
            let (cp, _, _) = problem.cost_grad(&x0, &ep).unwrap();
            let (cm, _, _) = problem.cost_grad(&x0, &em).unwrap();
            let fd_grad = (cp - cm) / (2.0 * fd);
            let rel = (ge[i] - fd_grad).abs() / (1.0 + fd_grad.abs());
            assert!(rel < tol, "eta[{i}]: adjoint {} vs FD {fd_grad}", ge[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences_linear() {
        let mut rng = stream(7, StreamDomain::Diagnostics, 1);
        for seed in 0..5 {
            let m = DMatrix::from_fn(3, 3, |_, _| -> f64 {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.4 * z
            });
            fd_check(&Dynamics::Linear { matrix: m }, 3, 2, 1e-6, 1e-6, seed);
        }
    }

    #[test]
    fn gradients_match_finite_differences_lorenz96() {
        let dynamics = Dynamics::Lorenz96 { forcing: 8.0, dt: 0.01 };
        for seed in 10..13 {
            fd_check(&dynamics, 6, 3, 1e-5, 1e-4, seed);
        }
    }

    #[test]
    fn linear_problem_reaches_gradient_target() {
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::from_row_slice(2, 2, &[0.8, 0.1, -0.2, 0.7]),
        };
        let b = unit_cov(2);
        let q = unit_cov(2);
        let r = unit_cov(2);
        let h = ObservationOperatorSpec::Full.realize(2).unwrap();
        let x0b = State::from_vec(vec![0.5, -0.4]);
        let batches = vec![batch(1, vec![1.2, -0.3])];
        let problem = WindowProblem {
            dynamics: &dynamics,
            steps: 1,
            x0_background: &x0b,
            b: &b,
            batches: &batches,
            h: &h,
            r: &r,
            model_error: Some(ModelErrorTerm {
                eta_background: State::zeros(2),
                q: &q,
                active: &[0, 1],
            }),
        };
        let sol = problem.solve(SolveOptions::default()).unwrap();
        assert!(
            sol.stats.final_grad_norm <= 1e-8 * sol.stats.initial_grad_norm,
            "reduction {:.3e}",
            sol.stats.final_grad_norm / sol.stats.initial_grad_norm
        );
    }

    #[test]
    fn tiny_q_pins_eta_to_its_background() {
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::identity(1, 1),
        };
        let b = unit_cov(1);
        let q = CovarianceSpec::diagonal(1e-12).realize(1, 1.0).unwrap();
        let r = unit_cov(1);
        let h = ObservationOperatorSpec::Full.realize(1).unwrap();
        let x0b = State::zeros(1);
        let batches = vec![batch(1, vec![3.0])];
        let problem = WindowProblem {
            dynamics: &dynamics,
            steps: 1,
            x0_background: &x0b,
            b: &b,
            batches: &batches,
            h: &h,
            r: &r,
            model_error: Some(ModelErrorTerm {
                eta_background: State::from_vec(vec![0.25]),
                q: &q,
                active: &[0],
            }),
        };
        let sol = problem.solve(SolveOptions::default()).unwrap();
        assert!((sol.eta_analysis[0] - 0.25).abs() < 1e-6);
        // and the state absorbs what the strong-constraint solution would:
        // J = x0^2/2 + (x0 + 0.25 - 3)^2/2 at minimum x0 = 2.75 / 2
        assert_relative_eq!(sol.x0_analysis[0], 2.75 / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn strong_constraint_keeps_eta_zero() {
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::identity(2, 2),
        };
        let b = unit_cov(2);
        let r = unit_cov(2);
        let h = ObservationOperatorSpec::Full.realize(2).unwrap();
        let x0b = State::zeros(2);
        let batches = vec![batch(1, vec![1.0, -2.0])];
        let problem = WindowProblem {
            dynamics: &dynamics,
            steps: 1,
            x0_background: &x0b,
            b: &b,
            batches: &batches,
            h: &h,
            r: &r,
            model_error: None,
        };
        let sol = problem.solve(SolveOptions::default()).unwrap();
        assert_eq!(sol.eta_analysis, State::zeros(2));
        // plain static-gain analysis: x0 = y/2 componentwise
        assert_relative_eq!(sol.x0_analysis[0], 0.5, epsilon = 1e-10);
        assert_relative_eq!(sol.x0_analysis[1], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn masked_components_stay_exactly_zero() {
        let dynamics = Dynamics::Linear {
            matrix: DMatrix::identity(3, 3) * 0.9,
        };
        let b = unit_cov(3);
        let q = unit_cov(1);
        let r = unit_cov(3);
        let h = ObservationOperatorSpec::Full.realize(3).unwrap();
        let x0b = State::zeros(3);
        let batches = vec![batch(1, vec![1.0, 2.0, -1.0])];
        let problem = WindowProblem {
            dynamics: &dynamics,
            steps: 1,
            x0_background: &x0b,
            b: &b,
            batches: &batches,
            h: &h,
            r: &r,
            model_error: Some(ModelErrorTerm {
                eta_background: State::zeros(3),
                q: &q,
                active: &[1],
            }),
        };
        let sol = problem.solve(SolveOptions::default()).unwrap();
        assert_eq!(sol.eta_analysis[0], 0.0);
        assert_eq!(sol.eta_analysis[2], 0.0);
        assert!(sol.eta_analysis[1].abs() > 1e-3);
    }
}
