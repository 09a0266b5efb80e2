//! Fixed-step classic Runge-Kutta integration of the reduced-order model.

use crate::error::{Error, Result};
use crate::rom::{PllState, StateDerivative, SystemParams};

/// Autonomous two-dimensional vector field.
pub trait VectorField {
    fn eval(&self, state: PllState) -> StateDerivative;
}

impl VectorField for SystemParams {
    #[inline]
    fn eval(&self, state: PllState) -> StateDerivative {
        self.rhs(0.0, state)
    }
}

impl<F: Fn(PllState) -> StateDerivative> VectorField for F {
    fn eval(&self, state: PllState) -> StateDerivative {
        self(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Integration step (s).
    pub dt: f64,
    /// Store every `sample_every`-th step.
    pub sample_every: usize,
    /// Horizon (s).
    pub max_time: f64,
    /// `|omega|` above which the trajectory is marked diverged (rad/s).
    pub blowup_omega: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            sample_every: 10,
            max_time: 1.0,
            blowup_omega: 500.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.max_time >= self.dt) {
            return Err(Error::InvalidConfig(format!(
                "max_time ({}) must be >= dt ({})",
                self.max_time, self.dt
            )));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidConfig("sample_every must be >= 1".into()));
        }
        if !(self.blowup_omega > 0.0) {
            return Err(Error::InvalidConfig("blowup_omega must be > 0".into()));
        }
        Ok(())
    }

    /// Number of whole steps covering `max_time`.
    pub fn steps(&self) -> usize {
        (self.max_time / self.dt).round().max(1.0) as usize
    }
}

/// Sampled solution of the reduced-order model.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PllState>,
    pub params: SystemParams,
    /// Time at which `|omega|` first exceeded the blow-up bound.
    pub diverged_at: Option<f64>,
}

impl Trajectory {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn final_state(&self) -> PllState {
        *self.states.last().expect("trajectory holds the initial state")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One classic four-stage Runge-Kutta step.
#[inline]
pub fn rk4_step<F: VectorField + ?Sized>(field: &F, state: PllState, dt: f64) -> PllState {
    let k1 = field.eval(state);
    let s2 = PllState::new(
        state.delta + 0.5 * dt * k1.d_delta,
        state.omega + 0.5 * dt * k1.d_omega,
    );
    let k2 = field.eval(s2);
    let s3 = PllState::new(
        state.delta + 0.5 * dt * k2.d_delta,
        state.omega + 0.5 * dt * k2.d_omega,
    );
    let k3 = field.eval(s3);
    let s4 = PllState::new(state.delta + dt * k3.d_delta, state.omega + dt * k3.d_omega);
    let k4 = field.eval(s4);
    PllState::new(
        state.delta + dt / 6.0 * (k1.d_delta + 2.0 * k2.d_delta + 2.0 * k3.d_delta + k4.d_delta),
        state.omega + dt / 6.0 * (k1.d_omega + 2.0 * k2.d_omega + 2.0 * k3.d_omega + k4.d_omega),
    )
}

/// Integrates the model from `x0` over `config.max_time`.
///
/// Integration stops early, with `diverged_at` set, once `|omega|` exceeds
/// the blow-up bound; the offending state is kept as the last sample.
pub fn integrate(x0: PllState, params: &SystemParams, config: &IntegratorConfig) -> Result<Trajectory> {
    config.validate()?;
    let steps = config.steps();
    let mut times = Vec::with_capacity(steps / config.sample_every + 2);
    let mut states = Vec::with_capacity(steps / config.sample_every + 2);
    times.push(0.0);
    states.push(x0);
    let mut state = x0;
    let mut diverged_at = None;
    for k in 1..=steps {
        state = rk4_step(params, state, config.dt);
        let blown = !(state.omega.abs() <= config.blowup_omega);
        if k % config.sample_every == 0 || k == steps || blown {
            times.push(k as f64 * config.dt);
            states.push(state);
        }
        if blown {
            diverged_at = Some(k as f64 * config.dt);
            break;
        }
    }
    Ok(Trajectory {
        times,
        states,
        params: *params,
        diverged_at,
    })
}

/// Every solver step of a trajectory, used to evaluate the solution at
/// arbitrary times by a final partial step from the preceding node.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub dt: f64,
    pub states: Vec<PllState>,
    pub params: SystemParams,
    pub diverged_at: Option<f64>,
}

impl DenseSolution {
    pub fn solve(x0: PllState, params: &SystemParams, dt: f64, max_time: f64, blowup_omega: f64) -> Self {
        let steps = (max_time / dt).round().max(1.0) as usize;
        let mut states = Vec::with_capacity(steps + 1);
        states.push(x0);
        let mut state = x0;
        let mut diverged_at = None;
        for k in 1..=steps {
            state = rk4_step(params, state, dt);
            states.push(state);
            if !(state.omega.abs() <= blowup_omega) {
                diverged_at = Some(k as f64 * dt);
                break;
            }
        }
        Self {
            dt,
            states,
            params: *params,
            diverged_at,
        }
    }

    /// Last time covered by the stored steps.
    pub fn end_time(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }

    /// Solver state at time `t` (clamped to the covered range).
    pub fn state_at(&self, t: f64) -> PllState {
        let (k, rem) = split_time(t.clamp(0.0, self.end_time()), self.dt);
        let k = k.min(self.states.len() - 1);
        if rem > 0.0 {
            rk4_step(&self.params, self.states[k], rem)
        } else {
            self.states[k]
        }
    }
}

/// Splits `t` into whole steps of `dt` and a non-negative remainder.
/// Times within `1e-9` steps of the grid snap onto it.
pub fn split_time(t: f64, dt: f64) -> (usize, f64) {
    let ratio = t / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() < 1e-9 {
        return (nearest as usize, 0.0);
    }
    let k = ratio.floor();
    (k as usize, t - k * dt)
}

/// Solution at time `t` from `x0`: whole RK4 steps then one partial step.
pub fn flow_map<F: VectorField + ?Sized>(field: &F, x0: PllState, t: f64, dt: f64) -> PllState {
    let (k, rem) = split_time(t, dt);
    let mut state = x0;
    for _ in 0..k {
        state = rk4_step(field, state, dt);
    }
    if rem > 0.0 {
        state = rk4_step(field, state, rem);
    }
    state
}
