//! Cascaded flight control: an outer position loop that commands a desired
//! thrust direction, and an incremental inner loop that tracks it.
//!
//! The outer loop is shared by every inner-loop implementation. It turns
//! position and velocity errors into a desired acceleration, converts that
//! into a unit thrust-axis direction in the inertial frame, and differentiates
//! the direction numerically so the inner loop can feed the rotation of the
//! reference axis forward.

mod indi;

pub use indi::{
    effectiveness_nominal, effectiveness_pair, effectiveness_single, increment_pair,
    lateral_pseudo_input, output_y2, vertical_pseudo_input, ControlDiagnostics, InnerLoop,
};

use serde::{Deserialize, Serialize};

use crate::math::{self, Vec3};
use crate::sim::{Autopilot, SensorFrame, SimState};
use crate::stability::{self, StabilityError};
use crate::vehicle::{FailureConfig, ModelError, VehicleParams};

/// Errors raised while configuring or running the cascaded controller.
#[derive(Debug, thiserror::Error)]
pub enum ControllerError {
    /// A gain or filter parameter is outside its valid range.
    #[error("invalid controller parameter: {0}")]
    BadParameter(&'static str),
    /// The commanded acceleration cancels gravity, leaving the thrust
    /// direction undefined.
    #[error("desired thrust direction is undefined: acceleration cancels gravity")]
    DegenerateDirection,
    /// The control effectiveness matrix cannot be inverted reliably.
    #[error("control effectiveness is singular ({0})")]
    SingularEffectiveness(&'static str),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Math(#[from] math::MathError),
}

/// Gains for the outer position loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterGains {
    /// Proportional gain on horizontal position error, 1/s^2.
    pub k_p: f64,
    /// Integral gain on horizontal position error, 1/s^3.
    pub k_i: f64,
    /// Derivative gain on horizontal velocity error, 1/s.
    pub k_d: f64,
    /// Clamp on the integral contribution, m/s^2.
    pub integral_limit: f64,
}

impl Default for OuterGains {
    fn default() -> Self {
        Self { k_p: 1.0, k_i: 0.1, k_d: 1.0, integral_limit: 2.0 }
    }
}

/// Gains for the inner attitude and altitude loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerGains {
    /// Proportional gain on the lateral outputs, 1/s^2.
    pub k_ap: f64,
    /// Derivative gain on the lateral output rates, 1/s.
    pub k_ad: f64,
    /// Proportional gain on altitude error, 1/s^2.
    pub k_zp: f64,
    /// Derivative gain on vertical speed error, 1/s.
    pub k_zd: f64,
    /// Heading proportional gain, 1/s (four-rotor mode only).
    pub k_yaw_p: f64,
    /// Heading damping gain, dimensionless (four-rotor mode only).
    pub k_yaw_d: f64,
    /// Yaw-rate tracking gain, 1/s (four-rotor mode only).
    pub k_yaw_rate: f64,
}

impl Default for InnerGains {
    fn default() -> Self {
        Self {
            k_ap: 50.0,
            k_ad: 30.0,
            k_zp: 15.0,
            k_zd: 10.0,
            k_yaw_p: 5.0,
            k_yaw_d: 1.0,
            k_yaw_rate: 10.0,
        }
    }
}

impl InnerGains {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let core = [self.k_ap, self.k_ad, self.k_zp, self.k_zd];
        if core.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(ControllerError::BadParameter(
                "attitude and altitude gains must be positive",
            ));
        }
        let yaw = [self.k_yaw_p, self.k_yaw_d, self.k_yaw_rate];
        if yaw.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(ControllerError::BadParameter("yaw gains must be non-negative"));
        }
        Ok(())
    }
}

/// Second-order low-pass settings shared by every synchronization filter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    /// Cutoff frequency in Hz.
    pub cutoff_hz: f64,
    /// Damping ratio.
    pub damping: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self { cutoff_hz: 15.0, damping: 0.707 }
    }
}

/// Position, velocity, and acceleration reference for one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionReference {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
    /// Heading reference in radians, used only when all rotors run.
    pub yaw: f64,
}

impl PositionReference {
    pub fn hold(pos: Vec3) -> Self {
        Self { pos, vel: Vec3::zeros(), acc: Vec3::zeros(), yaw: 0.0 }
    }
}

/// Output of the outer loop consumed by an inner loop each attitude tick.
#[derive(Debug, Clone, Copy)]
pub struct AttitudeCommand {
    /// Desired thrust-axis direction in the inertial frame, unit norm.
    pub n_d: Vec3,
    /// Time derivative of `n_d` in the inertial frame.
    pub n_d_rate: Vec3,
    /// Altitude reference (inertial Z, positive down), m.
    pub z_ref: f64,
    /// Vertical speed reference, m/s.
    pub vz_ref: f64,
    /// Vertical acceleration feedforward, m/s^2.
    pub az_ref: f64,
    /// Heading reference, rad.
    pub yaw_ref: f64,
}

impl AttitudeCommand {
    /// Level hover at the given altitude.
    pub fn level(z_ref: f64) -> Self {
        Self {
            n_d: Vec3::new(0.0, 0.0, -1.0),
            n_d_rate: Vec3::zeros(),
            z_ref,
            vz_ref: 0.0,
            az_ref: 0.0,
            yaw_ref: 0.0,
        }
    }
}

/// Converts a desired acceleration into the unit thrust-axis direction that
/// realizes it, given that rotor thrust points along the negative body Z axis.
///
/// Returns an error when the desired acceleration cancels gravity, which
/// leaves the direction undefined.
pub fn direction_from_accel(a_ref: Vec3, gravity: f64) -> Result<Vec3, ControllerError> {
    let f = a_ref - Vec3::new(0.0, 0.0, gravity);
    let norm = f.norm();
    if norm < 1e-6 {
        return Err(ControllerError::DegenerateDirection);
    }
    Ok(f / norm)
}

/// Outer position loop: PID on horizontal position plus altitude reference
/// passthrough, producing an [`AttitudeCommand`].
#[derive(Debug, Clone)]
pub struct OuterLoop {
    gains: OuterGains,
    gravity: f64,
    integral: Vec3,
    n_d: Vec3,
    n_d_rate: Vec3,
    last_t: Option<f64>,
    degenerate_holds: u64,
}

impl OuterLoop {
    pub fn new(gains: OuterGains, gravity: f64) -> Result<Self, ControllerError> {
        let positive = [gains.k_p, gains.k_d];
        if positive.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(ControllerError::BadParameter(
                "outer proportional and derivative gains must be positive",
            ));
        }
        if !gains.k_i.is_finite() || gains.k_i < 0.0 || !gains.integral_limit.is_finite() {
            return Err(ControllerError::BadParameter("outer integral settings are invalid"));
        }
        if !(gravity > 0.0) {
            return Err(ControllerError::BadParameter("gravity must be positive"));
        }
        Ok(Self {
            gains,
            gravity,
            integral: Vec3::zeros(),
            n_d: Vec3::new(0.0, 0.0, -1.0),
            n_d_rate: Vec3::zeros(),
            last_t: None,
            degenerate_holds: 0,
        })
    }

    /// Runs one position tick and updates the stored thrust-axis direction.
    pub fn tick(&mut self, t: f64, pos: Vec3, vel: Vec3, reference: &PositionReference) {
        let dt = match self.last_t {
            Some(prev) if t > prev => t - prev,
            _ => 0.0,
        };
        self.last_t = Some(t);

        let e_pos = pos - reference.pos;
        let e_vel = vel - reference.vel;
        let g = &self.gains;
        if g.k_i > 0.0 && dt > 0.0 {
            let limit = g.integral_limit / g.k_i;
            for axis in 0..2 {
                self.integral[axis] =
                    (self.integral[axis] + e_pos[axis] * dt).clamp(-limit, limit);
            }
        }

        let a_ref = Vec3::new(
            -g.k_p * e_pos.x - g.k_d * e_vel.x - g.k_i * self.integral.x + reference.acc.x,
            -g.k_p * e_pos.y - g.k_d * e_vel.y - g.k_i * self.integral.y + reference.acc.y,
            reference.acc.z,
        );

        match direction_from_accel(a_ref, self.gravity) {
            Ok(n_d) => {
                self.n_d_rate = if dt > 0.0 { (n_d - self.n_d) / dt } else { Vec3::zeros() };
                self.n_d = n_d;
            }
            Err(_) => {
                self.degenerate_holds += 1;
                self.n_d_rate = Vec3::zeros();
            }
        }
    }

    /// Latest attitude command for the inner loop.
    pub fn command(&self, reference: &PositionReference) -> AttitudeCommand {
        AttitudeCommand {
            n_d: self.n_d,
            n_d_rate: self.n_d_rate,
            z_ref: reference.pos.z,
            vz_ref: reference.vel.z,
            az_ref: reference.acc.z,
            yaw_ref: reference.yaw,
        }
    }

    /// Desired thrust-axis direction from the most recent tick.
    pub fn direction(&self) -> Vec3 {
        self.n_d
    }

    /// Number of ticks on which the direction was held because the desired
    /// acceleration cancelled gravity.
    pub fn degenerate_holds(&self) -> u64 {
        self.degenerate_holds
    }

    /// Clears integrator state and the held direction.
    pub fn reset(&mut self) {
        self.integral = Vec3::zeros();
        self.n_d = Vec3::new(0.0, 0.0, -1.0);
        self.n_d_rate = Vec3::zeros();
        self.last_t = None;
    }
}

/// Full cascaded controller: outer position loop plus incremental inner loop.
///
/// Implements [`Autopilot`] so it can be dropped into the simulation loop.
/// The position reference is fixed at construction; mission logic that moves
/// the reference over time wraps this type and forwards ticks.
pub struct CascadedController {
    outer: OuterLoop,
    inner: InnerLoop,
    reference: PositionReference,
    failure: FailureConfig,
    params: VehicleParams,
    inner_gains: InnerGains,
    filter: FilterSettings,
    ctrl_dt: f64,
    chi: f64,
}

impl CascadedController {
    pub fn new(
        params: &VehicleParams,
        failure: FailureConfig,
        outer_gains: OuterGains,
        inner_gains: InnerGains,
        filter: FilterSettings,
        chi: f64,
        ctrl_dt: f64,
        reference: PositionReference,
    ) -> Result<Self, ControllerError> {
        let outer = OuterLoop::new(outer_gains, params.gravity)?;
        let inner = InnerLoop::new(params, failure, inner_gains, filter, chi, ctrl_dt)?;
        Ok(Self {
            outer,
            inner,
            reference,
            failure,
            params: params.clone(),
            inner_gains,
            filter,
            ctrl_dt,
            chi,
        })
    }

    pub fn set_reference(&mut self, reference: PositionReference) {
        self.reference = reference;
    }

    /// Swap the lateral output direction in flight. The inner loop is
    /// rebuilt and re-primes its filters on the next tick; the outer loop
    /// keeps its state.
    pub fn retarget_axis(&mut self, chi: f64) -> Result<(), ControllerError> {
        self.inner = InnerLoop::new(
            &self.params,
            self.failure,
            self.inner_gains,
            self.filter,
            chi,
            self.ctrl_dt,
        )?;
        self.chi = chi;
        Ok(())
    }

    pub fn reference(&self) -> &PositionReference {
        &self.reference
    }

    pub fn inner(&self) -> &InnerLoop {
        &self.inner
    }

    pub fn outer(&self) -> &OuterLoop {
        &self.outer
    }
}

impl Autopilot for CascadedController {
    fn position_tick(&mut self, t: f64, frame: &SensorFrame) {
        self.outer.tick(t, frame.pos_held, frame.vel, &self.reference);
    }

    fn control_tick(&mut self, _t: f64, frame: &SensorFrame) -> [f64; 4] {
        let command = self.outer.command(&self.reference);
        self.inner.step(frame, &command).omega_cmd
    }

    fn target_direction(&self) -> Vec3 {
        self.outer.direction()
    }

    fn position_reference(&self) -> Vec3 {
        self.reference.pos
    }

    fn internal_signals(&self, state: &SimState) -> ([f64; 3], f64) {
        trace_signals(
            &self.params,
            &self.failure,
            self.chi,
            self.outer.direction(),
            state,
        )
    }
}

/// Internal lateral coordinates recorded in trace columns: the normal-form
/// eta block and scalar lateral output for the two-rotor configuration, or
/// the raw reduced-attitude components and yaw rate otherwise.
pub fn trace_signals(
    params: &VehicleParams,
    failure: &FailureConfig,
    chi: f64,
    n_d: Vec3,
    state: &SimState,
) -> ([f64; 3], f64) {
    let h = state.rot.transpose() * n_d;
    match failure {
        FailureConfig::DoubleOpposing { .. } => {
            let inner = stability::InnerState {
                z: state.pos.z,
                vz: state.vel.z,
                h1: h.x,
                h2: h.y,
                p: state.omega.x,
                q: state.omega.y,
                r: state.omega.z,
            };
            match stability::to_normal_form(params, failure.s_l(), failure.s_n(), chi, &inner) {
                Ok(nf) => (nf.eta, nf.xi[2]),
                Err(_) => ([f64::NAN; 3], f64::NAN),
            }
        }
        _ => ([h.x, h.y, state.omega.z], h.x),
    }
}
