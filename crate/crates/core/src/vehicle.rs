//! Rigid-body quadrotor model: geometric constants, rotor force/moment
//! mapping, first-order rotor lag and aerodynamic disturbance inputs.
//!
//! Axes: body z points down (thrust acts along -z_B), inertial z aligns with
//! gravity. Rotors are numbered 1..4; the pairs {1,3} and {2,4} sit on
//! opposite arms and spin with opposite handedness.

use crate::math::{Mat3, Vec3};
use serde::{Deserialize, Serialize};

/// Sign of each rotor's contribution to the roll moment (x_B).
pub const ROLL_SIGN: [f64; 4] = [1.0, -1.0, -1.0, 1.0];
/// Sign of each rotor's contribution to the pitch moment (y_B).
pub const PITCH_SIGN: [f64; 4] = [1.0, 1.0, -1.0, -1.0];
/// Sign of each rotor's drag-torque contribution to the yaw moment (z_B).
/// Also the sign pattern of the rotor spin gyroscopic sum.
pub const YAW_SIGN: [f64; 4] = [1.0, -1.0, 1.0, -1.0];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("vehicle parameter `{0}` must be positive")]
    NonPositiveParam(&'static str),
    #[error("rotor speed limits must satisfy 0 <= omega_min < omega_max")]
    BadSpeedLimits,
    #[error("rotor command is not finite")]
    NonFiniteCommand,
    #[error("invalid failure configuration: {0}")]
    BadFailure(&'static str),
}

/// Physical constants of the vehicle.
///
/// Defaults describe the small 410 g research quadrotor used throughout the
/// test suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Vehicle mass [kg].
    pub mass: f64,
    /// Diagonal inertia, x_B axis [kg m^2].
    pub inertia_x: f64,
    /// Diagonal inertia, y_B axis [kg m^2].
    pub inertia_y: f64,
    /// Diagonal inertia, z_B axis [kg m^2].
    pub inertia_z: f64,
    /// Rotor spin inertia [kg m^2].
    pub rotor_inertia: f64,
    /// Arm length from center to rotor [m].
    pub arm_length: f64,
    /// Arm azimuth angle beta [rad]; rotor arms sit at +-beta from y_B.
    pub arm_angle: f64,
    /// Aerodynamic yaw damping coefficient gamma [N m s].
    pub yaw_damping: f64,
    /// Thrust coefficient kappa [N/(rad/s)^2]: thrust_i = kappa * omega_i^2.
    pub thrust_coeff: f64,
    /// Drag-torque to thrust ratio sigma [m]: rotor torque = sigma * thrust.
    pub torque_ratio: f64,
    /// Rotor first-order time constant [s].
    pub rotor_tau: f64,
    /// Minimum sustained rotor speed [rad/s].
    pub omega_min: f64,
    /// Maximum rotor speed [rad/s].
    pub omega_max: f64,
    /// Gravitational acceleration [m/s^2].
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.410,
            inertia_x: 1.45e-3,
            inertia_y: 1.26e-3,
            inertia_z: 2.52e-3,
            rotor_inertia: 8.0e-6,
            arm_length: 0.145,
            arm_angle: 52.6f64.to_radians(),
            yaw_damping: 1.5e-3,
            thrust_coeff: 1.9e-6,
            torque_ratio: 0.01,
            rotor_tau: 0.030,
            omega_min: 200.0,
            omega_max: 1256.0,
            gravity: 9.81,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            (self.mass, "mass"),
            (self.inertia_x, "inertia_x"),
            (self.inertia_y, "inertia_y"),
            (self.inertia_z, "inertia_z"),
            (self.rotor_inertia, "rotor_inertia"),
            (self.arm_length, "arm_length"),
            (self.arm_angle, "arm_angle"),
            (self.yaw_damping, "yaw_damping"),
            (self.thrust_coeff, "thrust_coeff"),
            (self.torque_ratio, "torque_ratio"),
            (self.rotor_tau, "rotor_tau"),
            (self.gravity, "gravity"),
        ];
        for (v, name) in checks {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::NonPositiveParam(name));
            }
        }
        if !(self.omega_min >= 0.0 && self.omega_min < self.omega_max) {
            return Err(ModelError::BadSpeedLimits);
        }
        Ok(())
    }

    pub fn inertia_diag(&self) -> Vec3 {
        Vec3::new(self.inertia_x, self.inertia_y, self.inertia_z)
    }

    /// Roll effectiveness [rad/s^2 per (rad/s)^2]: kappa b sin(beta) / I_x.
    pub fn g_p(&self) -> f64 {
        self.thrust_coeff * self.arm_length * self.arm_angle.sin() / self.inertia_x
    }

    /// Pitch effectiveness: kappa b cos(beta) / I_y.
    pub fn g_q(&self) -> f64 {
        self.thrust_coeff * self.arm_length * self.arm_angle.cos() / self.inertia_y
    }

    /// Yaw effectiveness: sigma kappa / I_z.
    pub fn g_r(&self) -> f64 {
        self.torque_ratio * self.thrust_coeff / self.inertia_z
    }

    /// Rotor speed at which a pair of rotors carries the full weight.
    pub fn hover_speed_pair(&self) -> f64 {
        (self.mass * self.gravity / (2.0 * self.thrust_coeff)).sqrt()
    }

    /// Rotor speed at which all four rotors carry the full weight.
    pub fn hover_speed_quad(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.thrust_coeff)).sqrt()
    }
}

/// Which rotors remain operational.
///
/// Rotor indices are 1-based. A double failure must remove an opposing pair,
/// leaving either {1,3} (lateral sign +1, remaining handedness -1) or {2,4}
/// (lateral sign -1, remaining handedness +1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FailureConfig {
    Nominal,
    /// One rotor lost; the other three remain active.
    SingleRotor { failed: usize },
    /// Two opposing rotors lost; `active_pair` identifies the survivors.
    DoubleOpposing { active_pair: (usize, usize) },
}

impl FailureConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            FailureConfig::Nominal => Ok(()),
            FailureConfig::SingleRotor { failed } => {
                if (1..=4).contains(failed) {
                    Ok(())
                } else {
                    Err(ModelError::BadFailure("failed rotor index must be 1..4"))
                }
            }
            FailureConfig::DoubleOpposing { active_pair } => match active_pair {
                (1, 3) | (2, 4) => Ok(()),
                _ => Err(ModelError::BadFailure(
                    "active pair must be (1, 3) or (2, 4)",
                )),
            },
        }
    }

    /// Mask of active rotors, index 0 = rotor 1.
    pub fn active_mask(&self) -> [bool; 4] {
        match self {
            FailureConfig::Nominal => [true; 4],
            FailureConfig::SingleRotor { failed } => {
                let mut m = [true; 4];
                m[failed - 1] = false;
                m
            }
            FailureConfig::DoubleOpposing { active_pair: (a, b) } => {
                let mut m = [false; 4];
                m[a - 1] = true;
                m[b - 1] = true;
                m
            }
        }
    }

    /// Active rotor indices (1-based, ascending).
    pub fn active_rotors(&self) -> Vec<usize> {
        self.active_mask()
            .iter()
            .enumerate()
            .filter_map(|(i, on)| on.then_some(i + 1))
            .collect()
    }

    pub fn n_active(&self) -> usize {
        self.active_mask().iter().filter(|&&b| b).count()
    }

    /// Lateral sign s_l: +1 when the load-bearing pair is {1,3}, -1 for {2,4}.
    ///
    /// For a single failure the load-bearing pair is the surviving opposing
    /// pair; for the nominal vehicle the value is conventional (+1).
    pub fn s_l(&self) -> f64 {
        match self.strong_pair() {
            (1, 3) => 1.0,
            _ => -1.0,
        }
    }

    /// Handedness s_n of the load-bearing pair: -1 counterclockwise ({1,3}),
    /// +1 clockwise ({2,4}).
    pub fn s_n(&self) -> f64 {
        match self.strong_pair() {
            (1, 3) => -1.0,
            _ => 1.0,
        }
    }

    /// The opposing pair that carries the weight in the failed configuration.
    pub fn strong_pair(&self) -> (usize, usize) {
        match self {
            FailureConfig::Nominal => (1, 3),
            FailureConfig::SingleRotor { failed } => match failed {
                2 | 4 => (1, 3),
                _ => (2, 4),
            },
            FailureConfig::DoubleOpposing { active_pair } => *active_pair,
        }
    }
}

/// Rotor speed states with first-order lag toward saturated commands.
#[derive(Debug, Clone)]
pub struct RotorBank {
    /// Current rotor speeds [rad/s]; inactive rotors are pinned to zero.
    pub speeds: [f64; 4],
    /// Last saturated commands [rad/s].
    pub last_cmd: [f64; 4],
    active: [bool; 4],
}

impl RotorBank {
    pub fn new(failure: &FailureConfig, initial: [f64; 4]) -> Self {
        let active = failure.active_mask();
        let mut speeds = [0.0; 4];
        for i in 0..4 {
            if active[i] {
                speeds[i] = initial[i];
            }
        }
        Self { speeds, last_cmd: speeds, active }
    }

    pub fn active(&self) -> [bool; 4] {
        self.active
    }

    /// Saturate a command vector to the rotor envelope, zeroing inactive
    /// rotors. Rejects non-finite commands.
    pub fn saturate(
        &self,
        params: &VehicleParams,
        cmd: [f64; 4],
    ) -> Result<[f64; 4], ModelError> {
        let mut out = [0.0; 4];
        for i in 0..4 {
            if !cmd[i].is_finite() {
                return Err(ModelError::NonFiniteCommand);
            }
            if self.active[i] {
                out[i] = cmd[i].clamp(params.omega_min, params.omega_max);
            }
        }
        Ok(out)
    }

    /// Advance speeds one step of the first-order lag
    /// `omega += dt/tau (sat(cmd) - omega)`.
    pub fn step(
        &mut self,
        params: &VehicleParams,
        cmd: [f64; 4],
        dt: f64,
    ) -> Result<(), ModelError> {
        let sat = self.saturate(params, cmd)?;
        let k = dt / params.rotor_tau;
        for i in 0..4 {
            if self.active[i] {
                self.speeds[i] += k * (sat[i] - self.speeds[i]);
            } else {
                self.speeds[i] = 0.0;
            }
        }
        self.last_cmd = sat;
        Ok(())
    }

    /// Rotor angular accelerations implied by the current lag state [rad/s^2].
    pub fn accels(&self, params: &VehicleParams) -> [f64; 4] {
        let mut a = [0.0; 4];
        for i in 0..4 {
            if self.active[i] {
                a[i] = (self.last_cmd[i] - self.speeds[i]) / params.rotor_tau;
            }
        }
        a
    }

    /// True when every active rotor command sits on a saturation rail.
    pub fn all_pinned(&self, params: &VehicleParams) -> bool {
        let eps = 1e-9;
        self.active.iter().enumerate().all(|(i, &on)| {
            !on || (self.last_cmd[i] - params.omega_min).abs() < eps
                || (self.last_cmd[i] - params.omega_max).abs() < eps
        })
    }
}

/// Total rotor + aerodynamic force in the body frame [N].
///
/// Rotor thrust acts along -z_B: `[0, 0, -kappa sum omega_i^2] + f_aero`.
pub fn body_force(params: &VehicleParams, speeds: &[f64; 4], f_aero: &Vec3) -> Vec3 {
    let thrust: f64 = speeds.iter().map(|w| params.thrust_coeff * w * w).sum();
    Vec3::new(f_aero.x, f_aero.y, -thrust + f_aero.z)
}

/// Total body moment [N m]: rotor thrust moments, rotor drag torques, rotor
/// gyroscopic coupling, aerodynamic yaw damping and external disturbance.
pub fn body_moment(
    params: &VehicleParams,
    speeds: &[f64; 4],
    rotor_accels: &[f64; 4],
    omega: &Vec3,
    m_aero: &Vec3,
) -> Vec3 {
    let kb_s = params.thrust_coeff * params.arm_length * params.arm_angle.sin();
    let kb_c = params.thrust_coeff * params.arm_length * params.arm_angle.cos();
    let ks = params.thrust_coeff * params.torque_ratio;

    let mut m = Vec3::zeros();
    let mut spin_sum = 0.0;
    let mut accel_sum = 0.0;
    for i in 0..4 {
        let w2 = speeds[i] * speeds[i];
        m.x += ROLL_SIGN[i] * kb_s * w2;
        m.y += PITCH_SIGN[i] * kb_c * w2;
        m.z += YAW_SIGN[i] * ks * w2;
        spin_sum += YAW_SIGN[i] * speeds[i];
        accel_sum += YAW_SIGN[i] * rotor_accels[i];
    }
    // gyroscopic coupling of the net rotor spin with the body rates
    m.x += params.rotor_inertia * omega.y * spin_sum;
    m.y -= params.rotor_inertia * omega.x * spin_sum;
    m.z += params.rotor_inertia * accel_sum;
    // aerodynamic yaw damping
    m.z -= params.yaw_damping * omega.z;
    m + m_aero
}

/// Aerodynamic disturbance model: body-frame linear drag against the relative
/// airflow plus a configurable external moment (bias, sinusoid, and a term
/// proportional to the in-plane airflow for wind-coupled moments).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeroDisturbance {
    /// Diagonal body-frame drag coefficients [N s/m].
    pub drag_coeff: [f64; 3],
    /// Constant body-frame moment bias [N m].
    pub moment_bias: [f64; 3],
    /// Sinusoidal body-frame moment amplitude [N m].
    pub moment_sin_amp: [f64; 3],
    /// Sinusoid frequency [Hz].
    pub moment_sin_freq_hz: f64,
    /// Sinusoid phase [rad].
    pub moment_sin_phase: f64,
    /// Moment per unit in-plane relative airflow [N m s/m], applied about the
    /// axis perpendicular to the airflow (rotor in-plane effects).
    pub wind_moment_coeff: f64,
}

impl Default for AeroDisturbance {
    fn default() -> Self {
        Self {
            drag_coeff: [0.0; 3],
            moment_bias: [0.0; 3],
            moment_sin_amp: [0.0; 3],
            moment_sin_freq_hz: 0.0,
            moment_sin_phase: 0.0,
            wind_moment_coeff: 0.0,
        }
    }
}

impl AeroDisturbance {
    /// Evaluate (force, moment) in the body frame for inertial velocity `vel`
    /// and inertial wind `wind` at time `t`.
    pub fn eval(&self, rot: &Mat3, vel: &Vec3, wind: &Vec3, t: f64) -> (Vec3, Vec3) {
        let v_rel_b = rot.transpose() * (vel - wind);
        let force = Vec3::new(
            -self.drag_coeff[0] * v_rel_b.x,
            -self.drag_coeff[1] * v_rel_b.y,
            -self.drag_coeff[2] * v_rel_b.z,
        );
        let s = (2.0 * std::f64::consts::PI * self.moment_sin_freq_hz * t
            + self.moment_sin_phase)
            .sin();
        let mut moment = Vec3::new(
            self.moment_bias[0] + self.moment_sin_amp[0] * s,
            self.moment_bias[1] + self.moment_sin_amp[1] * s,
            self.moment_bias[2] + self.moment_sin_amp[2] * s,
        );
        if self.wind_moment_coeff != 0.0 {
            // axis perpendicular to the in-plane airflow component
            moment += self.wind_moment_coeff * v_rel_b.cross(&Vec3::new(0.0, 0.0, 1.0));
        }
        (force, moment)
    }

    pub fn is_zero(&self) -> bool {
        self.drag_coeff == [0.0; 3]
            && self.moment_bias == [0.0; 3]
            && self.moment_sin_amp == [0.0; 3]
            && self.wind_moment_coeff == 0.0
    }
}
