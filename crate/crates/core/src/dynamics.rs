//! Toy prognostic models with tangent-linear and adjoint operators.
//!
//! Two dynamics variants: an arbitrary linear map applied once per step, and
//! Lorenz-96 integrated with classical RK4. In both cases the model-error
//! tendency `eta` is a constant additive term applied once per step, outside
//! the RK4 stages, so the tangent linear of one step with respect to `eta`
//! is the identity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = DVector<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dynamics {
    Linear { matrix: DMatrix<f64> },
    Lorenz96 { forcing: f64, dt: f64 },
}

/// One model trajectory: the state before each step plus the final state.
/// `states.len() == n_steps + 1`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }
}

impl Dynamics {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Dynamics::Linear { matrix } => {
                if matrix.nrows() != dim || matrix.ncols() != dim {
                    return Err(Error::Dimension(format!(
                        "linear dynamics matrix is {}x{}, state dimension is {}",
                        matrix.nrows(),
                        matrix.ncols(),
                        dim
                    )));
                }
                if matrix.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Config("non-finite entry in dynamics matrix".into()));
                }
            }
            Dynamics::Lorenz96 { forcing, dt } => {
                if dim < 4 {
                    return Err(Error::Config(format!(
                        "Lorenz-96 needs dimension >= 4, got {dim}"
                    )));
                }
                if !forcing.is_finite() {
                    return Err(Error::Config("non-finite Lorenz-96 forcing".into()));
                }
                if *dt <= 0.0 || !dt.is_finite() {
                    return Err(Error::Config(format!("Lorenz-96 dt must be > 0, got {dt}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Dynamics::Linear { .. })
    }

    /// Advance one step: `x' = F(x) + eta`.
    fn step_once(&self, x: &State, eta: &State) -> State {
        match self {
            Dynamics::Linear { matrix } => matrix * x + eta,
            Dynamics::Lorenz96 { forcing, dt } => rk4_step(x, *forcing, *dt) + eta,
        }
    }

    /// Advance `n_steps` steps with the constant per-step tendency `eta`,
    /// recording the trajectory.
    pub fn step(&self, x: &State, eta: &State, n_steps: usize) -> Result<Trajectory> {
        assert!(n_steps >= 1, "n_steps must be >= 1");
        if x.len() != eta.len() {
            return Err(Error::Dimension(format!(
                "state dimension {} vs tendency dimension {}",
                x.len(),
                eta.len()
            )));
        }
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(x.clone());
        for k in 0..n_steps {
            let next = self.step_once(&states[k], eta);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Blowup { step: k });
            }
            states.push(next);
        }
        Ok(Trajectory { states })
    }

    /// Tangent linear of one step about base state `x`, applied to `dx`
    /// (derivative with respect to the state only; `eta` enters additively).
    pub fn tlm_once(&self, x: &State, dx: &State) -> Result<State> {
        if x.len() != dx.len() {
            return Err(Error::Dimension(
                "trajectory/perturbation dimension mismatch".into(),
            ));
        }
        Ok(match self {
            Dynamics::Linear { matrix } => matrix * dx,
            Dynamics::Lorenz96 { forcing, dt } => rk4_tlm(x, dx, *forcing, *dt),
        })
    }

    /// Exact transpose of [`Dynamics::tlm_once`].
    pub fn adjoint_once(&self, x: &State, dy: &State) -> Result<State> {
        if x.len() != dy.len() {
            return Err(Error::Dimension(
                "trajectory/adjoint dimension mismatch".into(),
            ));
        }
        Ok(match self {
            Dynamics::Linear { matrix } => matrix.transpose() * dy,
            Dynamics::Lorenz96 { forcing, dt } => rk4_adjoint(x, dy, *forcing, *dt),
        })
    }

    /// Tangent linear over a whole recorded trajectory.
    pub fn tlm(&self, traj: &Trajectory, dx: &State) -> Result<State> {
        let mut v = dx.clone();
        for k in 0..traj.n_steps() {
            v = self.tlm_once(&traj.states[k], &v)?;
        }
        Ok(v)
    }

    /// Adjoint over a whole recorded trajectory (reverse sweep).
    pub fn adjoint(&self, traj: &Trajectory, dy: &State) -> Result<State> {
        let mut w = dy.clone();
        for k in (0..traj.n_steps()).rev() {
            w = self.adjoint_once(&traj.states[k], &w)?;
        }
        Ok(w)
    }

    /// Dense window-integrated tangent linear about `traj` (column by column).
    pub fn window_tlm_matrix(&self, traj: &Trajectory) -> Result<DMatrix<f64>> {
        let d = traj.initial().len();
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            let col = self.tlm(traj, &e)?;
            m.set_column(j, &col);
        }
        Ok(m)
    }
}

fn l96_tendency(x: &State, forcing: f64) -> State {
    let n = x.len();
    State::from_fn(n, |i, _| {
        let im2 = (i + n - 2) % n;
        let im1 = (i + n - 1) % n;
        let ip1 = (i + 1) % n;
        (x[ip1] - x[im2]) * x[im1] - x[i] + forcing
    })
}

/// Jacobian of the Lorenz-96 tendency applied to `v`.
fn l96_jacobian(x: &State, v: &State) -> State {
    let n = x.len();
    State::from_fn(n, |i, _| {
        let im2 = (i + n - 2) % n;
        let im1 = (i + n - 1) % n;
        let ip1 = (i + 1) % n;
        (v[ip1] - v[im2]) * x[im1] + (x[ip1] - x[im2]) * v[im1] - v[i]
    })
}

/// Transpose of [`l96_jacobian`] applied to `w`.
fn l96_jacobian_t(x: &State, w: &State) -> State {
    let n = x.len();
    let mut out = State::zeros(n);
    for i in 0..n {
        let im2 = (i + n - 2) % n;
        let im1 = (i + n - 1) % n;
        let ip1 = (i + 1) % n;
        out[ip1] += w[i] * x[im1];
        out[im2] -= w[i] * x[im1];
        out[im1] += w[i] * (x[ip1] - x[im2]);
        out[i] -= w[i];
    }
    out
}

fn rk4_step(x: &State, forcing: f64, dt: f64) -> State {
    let k1 = l96_tendency(x, forcing);
    let k2 = l96_tendency(&(x + &k1 * (dt / 2.0)), forcing);
    let k3 = l96_tendency(&(x + &k2 * (dt / 2.0)), forcing);
    let k4 = l96_tendency(&(x + &k3 * dt), forcing);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

fn rk4_stages(x: &State, forcing: f64, dt: f64) -> [State; 4] {
    let k1 = l96_tendency(x, forcing);
    let x2 = x + &k1 * (dt / 2.0);
    let k2 = l96_tendency(&x2, forcing);
    let x3 = x + &k2 * (dt / 2.0);
    let k3 = l96_tendency(&x3, forcing);
    let x4 = x + &k3 * dt;
    // return the stage base points; stage slopes are recomputed on demand
    [x.clone(), x2, x3, x4]
}

fn rk4_tlm(x: &State, dx: &State, forcing: f64, dt: f64) -> State {
    let [x1, x2, x3, x4] = rk4_stages(x, forcing, dt);
    let dk1 = l96_jacobian(&x1, dx);
    let dk2 = l96_jacobian(&x2, &(dx + &dk1 * (dt / 2.0)));
    let dk3 = l96_jacobian(&x3, &(dx + &dk2 * (dt / 2.0)));
    let dk4 = l96_jacobian(&x4, &(dx + &dk3 * dt));
    dx + (dk1 + dk2 * 2.0 + dk3 * 2.0 + dk4) * (dt / 6.0)
}

fn rk4_adjoint(x: &State, dy: &State, forcing: f64, dt: f64) -> State {
    let [x1, x2, x3, x4] = rk4_stages(x, forcing, dt);
    let mut vbar = dy.clone();
    let mut k1bar = dy * (dt / 6.0);
    let mut k2bar = dy * (dt / 3.0);
    let mut k3bar = dy * (dt / 3.0);
    let k4bar = dy * (dt / 6.0);

    let t4 = l96_jacobian_t(&x4, &k4bar);
    vbar += &t4;
    k3bar += &t4 * dt;

    let t3 = l96_jacobian_t(&x3, &k3bar);
    vbar += &t3;
    k2bar += &t3 * (dt / 2.0);

    let t2 = l96_jacobian_t(&x2, &k2bar);
    vbar += &t2;
    k1bar += &t2 * (dt / 2.0);

    let t1 = l96_jacobian_t(&x1, &k1bar);
    vbar += &t1;
    vbar
}
