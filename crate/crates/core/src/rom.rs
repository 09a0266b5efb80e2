//! Reduced-order model of an SRF-PLL after fault clearance.
//!
//! The PLL angle misalignment `delta` and frequency deviation `omega` obey a
//! swing equation
//!
//! ```text
//! d(delta)/dt = omega
//! M d(omega)/dt = T_m - T_e(delta) - D(delta) omega
//! ```
//!
//! with `M = 1 - k_p L_g i_d`, `T_m = k_i (r_Lg i_q + L_g i_d w_g)`,
//! `T_e = k_i V_g sin(delta)` and `D = k_p V_g cos(delta) - k_i L_g i_d`.
//! The grid impedance `(r_Lg, L_g)` is a base value multiplied by the scale
//! factor `alpha`, so the X/R ratio is fixed while grid strength varies.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Smallest admissible `|M|` before the dynamics are treated as ill-posed.
pub const MIN_INERTIA: f64 = 1e-6;

/// X/R ratio of the grid-side inductor.
pub const GRID_X_OVER_R: f64 = 16.3;

/// Default grid inductance at `alpha = 1`, in per unit of the converter base.
pub const DEFAULT_L_G_PU: f64 = 0.3;

/// PLL state `[delta, omega]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PllState {
    /// Angle misalignment between PLL frame and grid frame (rad).
    pub delta: f64,
    /// PLL frequency deviation (rad/s).
    pub omega: f64,
}

impl PllState {
    pub const fn new(delta: f64, omega: f64) -> Self {
        Self { delta, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.omega.is_finite()
    }

    /// Same state with `delta` mapped into `[-pi, pi)`.
    pub fn wrapped(self) -> Self {
        Self {
            delta: wrap_angle(self.delta),
            omega: self.omega,
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.delta, self.omega]
    }
}

impl From<[f64; 2]> for PllState {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

/// Time derivative of a [`PllState`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    /// d(delta)/dt (rad/s).
    pub d_delta: f64,
    /// d(omega)/dt (rad/s^2).
    pub d_omega: f64,
}

impl StateDerivative {
    pub fn as_array(&self) -> [f64; 2] {
        [self.d_delta, self.d_omega]
    }
}

/// Swing-equation coefficients at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingCoefficients {
    pub m: f64,
    pub t_m: f64,
    pub t_e: f64,
    pub d: f64,
}

/// Equilibrium reached after fault clearance. `omega_eq` is always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumPoint {
    pub delta_eq: f64,
    pub omega_eq: f64,
}

impl EquilibriumPoint {
    pub fn state(&self) -> PllState {
        PllState::new(self.delta_eq, self.omega_eq)
    }
}

/// Maps an angle into `[-pi, pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2*pi
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Base quantities used to convert the per-unit ratings of the converter
/// into the physical units the swing equation is evaluated in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBase {
    /// Rated apparent power (VA).
    pub s_base: f64,
    /// Nominal grid voltage, line-to-neutral peak (V).
    pub v_base: f64,
    /// Rated frequency (Hz).
    pub f0: f64,
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self {
            s_base: 12e6,
            v_base: 690.0,
            f0: 50.0,
        }
    }
}

impl PerUnitBase {
    /// Peak phase current base, `2 S / (3 V)` (A).
    pub fn i_base(&self) -> f64 {
        2.0 * self.s_base / (3.0 * self.v_base)
    }

    /// Impedance base (ohm).
    pub fn z_base(&self) -> f64 {
        self.v_base / self.i_base()
    }

    /// Synchronous angular frequency (rad/s).
    pub fn omega_base(&self) -> f64 {
        2.0 * PI * self.f0
    }

    /// Inductance base (H).
    pub fn l_base(&self) -> f64 {
        self.z_base() / self.omega_base()
    }
}

/// Electrical and control parameters of the PLL-grid system.
///
/// Fields are private so every instance is validated: `V_g > 0`, `k_i > 0`,
/// `k_p >= 0`, `alpha > 0` and `|M| >= MIN_INERTIA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    k_p: f64,
    k_i: f64,
    v_g: f64,
    r_lg_base: f64,
    l_g_base: f64,
    i_d: f64,
    i_q: f64,
    omega_g: f64,
    alpha: f64,
}

/// Raw parameter values, used to build a validated [`SystemParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawParams {
    pub k_p: f64,
    pub k_i: f64,
    pub v_g: f64,
    /// Grid resistance at `alpha = 1`.
    pub r_lg: f64,
    /// Grid inductance at `alpha = 1`.
    pub l_g: f64,
    pub i_d: f64,
    pub i_q: f64,
    pub omega_g: f64,
    pub alpha: f64,
}

impl SystemParams {
    pub fn new(raw: RawParams) -> Result<Self> {
        let all = [
            raw.k_p, raw.k_i, raw.v_g, raw.r_lg, raw.l_g, raw.i_d, raw.i_q, raw.omega_g, raw.alpha,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if raw.v_g <= 0.0 {
            return Err(Error::InvalidParams(format!("V_g must be > 0, got {}", raw.v_g)));
        }
        if raw.k_i <= 0.0 {
            return Err(Error::InvalidParams(format!("k_i must be > 0, got {}", raw.k_i)));
        }
        if raw.k_p < 0.0 {
            return Err(Error::InvalidParams(format!("k_p must be >= 0, got {}", raw.k_p)));
        }
        if raw.alpha <= 0.0 {
            return Err(Error::InvalidAlpha(raw.alpha));
        }
        let params = Self {
            k_p: raw.k_p,
            k_i: raw.k_i,
            v_g: raw.v_g,
            r_lg_base: raw.r_lg,
            l_g_base: raw.l_g,
            i_d: raw.i_d,
            i_q: raw.i_q,
            omega_g: raw.omega_g,
            alpha: raw.alpha,
        };
        params.check_inertia()?;
        Ok(params)
    }

    /// Converter and grid parameters of the wind-turbine benchmark: 12 MVA,
    /// 690 V, 50 Hz, PLL gains `(0.025, 1.5)`, pre-disturbance currents
    /// `(1.0, -0.1)` pu and an X/R ratio of 16.3 with `L_g = l_g_pu` at
    /// `alpha = 1`.
    pub fn benchmark(l_g_pu: f64) -> Result<Self> {
        Self::from_per_unit(PerUnitBase::default(), 0.025, 1.5, l_g_pu, 1.0, -0.1)
    }

    /// Builds physical-unit parameters from per-unit ratings.
    pub fn from_per_unit(
        base: PerUnitBase,
        k_p: f64,
        k_i: f64,
        l_g_pu: f64,
        i_d_pu: f64,
        i_q_pu: f64,
    ) -> Result<Self> {
        let l_g = l_g_pu * base.l_base();
        let r_lg = l_g_pu / GRID_X_OVER_R * base.z_base();
        Self::new(RawParams {
            k_p,
            k_i,
            v_g: base.v_base,
            r_lg,
            l_g,
            i_d: i_d_pu * base.i_base(),
            i_q: i_q_pu * base.i_base(),
            omega_g: base.omega_base(),
            alpha: 1.0,
        })
    }

    fn check_inertia(&self) -> Result<()> {
        let m = self.inertia();
        if m.abs() < MIN_INERTIA {
            return Err(Error::IllPosed { inertia: m });
        }
        Ok(())
    }

    pub fn raw(&self) -> RawParams {
        RawParams {
            k_p: self.k_p,
            k_i: self.k_i,
            v_g: self.v_g,
            r_lg: self.r_lg_base,
            l_g: self.l_g_base,
            i_d: self.i_d,
            i_q: self.i_q,
            omega_g: self.omega_g,
            alpha: self.alpha,
        }
    }

    pub fn k_p(&self) -> f64 {
        self.k_p
    }
    pub fn k_i(&self) -> f64 {
        self.k_i
    }
    pub fn v_g(&self) -> f64 {
        self.v_g
    }
    pub fn i_d(&self) -> f64 {
        self.i_d
    }
    pub fn i_q(&self) -> f64 {
        self.i_q
    }
    pub fn omega_g(&self) -> f64 {
        self.omega_g
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn r_lg_base(&self) -> f64 {
        self.r_lg_base
    }
    pub fn l_g_base(&self) -> f64 {
        self.l_g_base
    }

    /// Grid resistance after impedance scaling.
    pub fn r_lg(&self) -> f64 {
        self.alpha * self.r_lg_base
    }

    /// Grid inductance after impedance scaling.
    pub fn l_g(&self) -> f64 {
        self.alpha * self.l_g_base
    }

    pub fn inertia(&self) -> f64 {
        1.0 - self.k_p * self.l_g() * self.i_d
    }

    pub fn mechanical_torque(&self) -> f64 {
        self.k_i * (self.r_lg() * self.i_q + self.l_g() * self.i_d * self.omega_g)
    }

    /// `T_m / (k_i V_g)`; an equilibrium exists iff its magnitude is at most one.
    pub fn equilibrium_ratio(&self) -> f64 {
        (self.r_lg() * self.i_q + self.l_g() * self.i_d * self.omega_g) / self.v_g
    }

    /// Same parameters with impedance scale `alpha` applied to the base
    /// resistance and inductance.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidAlpha(alpha));
        }
        let scaled = Self { alpha, ..*self };
        scaled.check_inertia()?;
        Ok(scaled)
    }

    /// Swing-equation coefficients at `state`.
    pub fn swing_coefficients(&self, state: PllState) -> SwingCoefficients {
        let l_g = self.l_g();
        let (sin_d, cos_d) = state.delta.sin_cos();
        SwingCoefficients {
            m: 1.0 - self.k_p * l_g * self.i_d,
            t_m: self.k_i * (self.r_lg() * self.i_q + l_g * self.i_d * self.omega_g),
            t_e: self.k_i * self.v_g * sin_d,
            d: self.k_p * self.v_g * cos_d - self.k_i * l_g * self.i_d,
        }
    }

    /// State derivative. The system is autonomous; `_t` is accepted for
    /// signature compatibility with time-dependent solvers.
    #[inline]
    pub fn rhs(&self, _t: f64, state: PllState) -> StateDerivative {
        let c = self.swing_coefficients(state);
        StateDerivative {
            d_delta: state.omega,
            d_omega: (c.t_m - c.t_e - c.d * state.omega) / c.m,
        }
    }

    /// Stable equilibrium on the principal branch of `arcsin`.
    /// Jacobian of the right-hand side with respect to `(delta, omega)`,
    /// rows `(d_delta, d_omega)`.
    pub fn jacobian(&self, state: PllState) -> [[f64; 2]; 2] {
        let c = self.swing_coefficients(state);
        let (sin_d, cos_d) = state.delta.sin_cos();
        let dd = (-self.k_i * self.v_g * cos_d + self.k_p * self.v_g * sin_d * state.omega) / c.m;
        [[0.0, 1.0], [dd, -c.d / c.m]]
    }

    pub fn equilibrium(&self) -> Result<EquilibriumPoint> {
        let ratio = self.equilibrium_ratio();
        if !(ratio.abs() <= 1.0) {
            return Err(Error::NoEquilibrium { ratio });
        }
        Ok(EquilibriumPoint {
            delta_eq: ratio.asin(),
            omega_eq: 0.0,
        })
    }
}

/// Free-function form of [`SystemParams::swing_coefficients`].
pub fn swing_coefficients(params: &SystemParams, state: PllState) -> SwingCoefficients {
    params.swing_coefficients(state)
}

/// Free-function form of [`SystemParams::rhs`].
pub fn rhs(t: f64, state: PllState, params: &SystemParams) -> StateDerivative {
    params.rhs(t, state)
}

/// Free-function form of [`SystemParams::equilibrium`].
pub fn equilibrium(params: &SystemParams) -> Result<EquilibriumPoint> {
    params.equilibrium()
}

/// Free-function form of [`SystemParams::with_alpha`].
pub fn scale_impedance(params: &SystemParams, alpha: f64) -> Result<SystemParams> {
    params.with_alpha(alpha)
}
