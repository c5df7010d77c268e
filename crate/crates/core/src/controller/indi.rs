//! Incremental inner loop: altitude and reduced-attitude tracking through
//! rotor speed increments.
//!
//! Each control tick the loop compares the desired output accelerations
//! (pseudo-inputs) against filtered measured accelerations and converts the
//! difference into increments of the squared rotor speeds through the
//! current control effectiveness. New commands are the filtered squared
//! speed measurements plus the increments, so unmodeled moments enter the
//! loop through the acceleration measurements instead of a model.
//!
//! Measurement channels and the squared-speed channels pass through
//! identical second-order low-pass filters so that both sides of the
//! increment see the same phase lag.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use super::{AttitudeCommand, ControllerError, FilterSettings, InnerGains};
use crate::math::{self, LowPassFilter2};
use crate::sim::SensorFrame;
use crate::vehicle::{FailureConfig, VehicleParams, PITCH_SIGN, ROLL_SIGN, YAW_SIGN};

/// Lateral output for the two-rotor configuration: the component of the
/// reduced attitude along the signed output direction `chi` [rad].
pub fn output_y2(h1: f64, h2: f64, chi: f64) -> f64 {
    h1 * chi.cos() + h2 * chi.sin()
}

/// Desired vertical acceleration from altitude and climb-rate errors.
pub fn vertical_pseudo_input(
    gains: &InnerGains,
    z_err: f64,
    vz_err: f64,
    az_ref: f64,
) -> f64 {
    -gains.k_zp * z_err - gains.k_zd * vz_err + az_ref
}

/// Desired lateral output acceleration from the output and its rate.
pub fn lateral_pseudo_input(gains: &InnerGains, y: f64, ydot: f64) -> f64 {
    -gains.k_ap * y - gains.k_ad * ydot
}

fn check_axis_visibility(r33_f: f64, h3_f: f64) -> Result<(), ControllerError> {
    if r33_f.abs() < 1e-3 || h3_f.abs() < 1e-3 {
        return Err(ControllerError::SingularEffectiveness(
            "thrust axis near horizontal",
        ));
    }
    Ok(())
}

/// Vertical and lateral control effectiveness `(b1, b2)` for the two-rotor
/// configuration, per unit of squared rotor speed.
///
/// With the surviving rotors ordered by ascending index the effectiveness
/// matrix is `[[b1, b1], [b2, -b2]]` for either surviving pair: the vertical
/// channel sees both rotors equally while the lateral output sees them in
/// opposition. `r33_f` and `h3_f` are the filtered vertical components of
/// the attitude and of the reduced attitude.
pub fn effectiveness_pair(
    params: &VehicleParams,
    r33_f: f64,
    h3_f: f64,
    chi_abs: f64,
) -> Result<(f64, f64), ControllerError> {
    check_axis_visibility(r33_f, h3_f)?;
    let zeta = params.g_q().atan2(params.g_p());
    if (chi_abs - zeta).sin().abs() < 1e-6 {
        return Err(ControllerError::SingularEffectiveness(
            "lateral output direction aligned with the uncontrollable axis",
        ));
    }
    let b1 = -params.thrust_coeff * r33_f / params.mass;
    let b2 = h3_f * (params.g_p() * chi_abs.sin() - params.g_q() * chi_abs.cos());
    Ok((b1, b2))
}

/// Squared-speed increments for the two-rotor configuration given the
/// acceleration errors `(d1, d2)` on the vertical and lateral channels.
///
/// Closed-form inverse of `[[b1, b1], [b2, -b2]]`; when both errors are zero
/// the increments are exactly zero.
pub fn increment_pair(b1: f64, b2: f64, d1: f64, d2: f64) -> (f64, f64) {
    let common = d1 / (2.0 * b1);
    let differential = d2 / (2.0 * b2);
    (common + differential, common - differential)
}

/// Control effectiveness for three surviving rotors (ascending 1-based
/// indices): rows map squared-speed increments to vertical acceleration and
/// to the accelerations of the two reduced-attitude components.
pub fn effectiveness_single(
    params: &VehicleParams,
    r33_f: f64,
    h3_f: f64,
    rotors: [usize; 3],
) -> Result<Matrix3<f64>, ControllerError> {
    check_axis_visibility(r33_f, h3_f)?;
    let b1 = -params.thrust_coeff * r33_f / params.mass;
    let (g_p, g_q) = (params.g_p(), params.g_q());
    let mut b = Matrix3::zeros();
    for (col, rotor) in rotors.iter().enumerate() {
        let i = rotor - 1;
        b[(0, col)] = b1;
        b[(1, col)] = -h3_f * g_q * PITCH_SIGN[i];
        b[(2, col)] = h3_f * g_p * ROLL_SIGN[i];
    }
    Ok(b)
}

/// Control effectiveness for the nominal vehicle: the three rows of the
/// three-rotor case plus the yaw-rate channel.
pub fn effectiveness_nominal(
    params: &VehicleParams,
    r33_f: f64,
    h3_f: f64,
) -> Result<Matrix4<f64>, ControllerError> {
    check_axis_visibility(r33_f, h3_f)?;
    let b1 = -params.thrust_coeff * r33_f / params.mass;
    let (g_p, g_q, g_r) = (params.g_p(), params.g_q(), params.g_r());
    let mut b = Matrix4::zeros();
    for i in 0..4 {
        b[(0, i)] = b1;
        b[(1, i)] = -h3_f * g_q * PITCH_SIGN[i];
        b[(2, i)] = h3_f * g_p * ROLL_SIGN[i];
        b[(3, i)] = g_r * YAW_SIGN[i];
    }
    Ok(b)
}

fn solve3(b: &Matrix3<f64>, d: Vector3<f64>) -> Option<Vector3<f64>> {
    let scale = b.row(0).norm() * b.row(1).norm() * b.row(2).norm();
    if b.determinant().abs() < 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return None;
    }
    b.lu().solve(&d)
}

fn solve4(b: &Matrix4<f64>, d: Vector4<f64>) -> Option<Vector4<f64>> {
    let scale =
        b.row(0).norm() * b.row(1).norm() * b.row(2).norm() * b.row(3).norm();
    if b.determinant().abs() < 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return None;
    }
    b.lu().solve(&d)
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    /// Two surviving opposing rotors (0-based indices, ascending) tracking
    /// the lateral output along the signed direction `chi`.
    Pair { first: usize, second: usize, chi: f64, chi_abs: f64 },
    /// Three surviving rotors (1-based indices, ascending).
    Single { rotors: [usize; 3] },
    /// All four rotors: full attitude plus yaw-rate control.
    Nominal,
}

struct FilterBank {
    az: LowPassFilter2,
    r33: LowPassFilter2,
    h3: LowPassFilter2,
    ydot: [LowPassFilter2; 2],
    yaw_rate: LowPassFilter2,
    u: [LowPassFilter2; 4],
}

impl FilterBank {
    fn new(settings: &FilterSettings, dt: f64) -> Result<Self, ControllerError> {
        let omega_c = 2.0 * std::f64::consts::PI * settings.cutoff_hz;
        let mk = || LowPassFilter2::new(omega_c, settings.damping, dt);
        Ok(Self {
            az: mk()?,
            r33: mk()?,
            h3: mk()?,
            ydot: [mk()?, mk()?],
            yaw_rate: mk()?,
            u: [mk()?, mk()?, mk()?, mk()?],
        })
    }
}

/// Everything one control tick produced, for logging and tests.
#[derive(Debug, Clone, Copy)]
pub struct ControlDiagnostics {
    /// Rotor speed commands [rad/s]; inactive slots are zero.
    pub omega_cmd: [f64; 4],
    /// Squared-speed commands after saturation [(rad/s)^2].
    pub u_cmd: [f64; 4],
    /// Filtered squared-speed measurements [(rad/s)^2].
    pub u_f: [f64; 4],
    /// Pseudo-inputs per output channel; unused channels are zero.
    pub nu: [f64; 4],
    /// Filtered output accelerations per channel.
    pub y_ddot_f: [f64; 4],
    /// True when the effectiveness inversion was skipped and the previous
    /// command repeated.
    pub held: bool,
}

/// Incremental inner loop over squared rotor speeds.
pub struct InnerLoop {
    params: VehicleParams,
    gains: InnerGains,
    dt: f64,
    mode: Mode,
    active: [bool; 4],
    filters: FilterBank,
    prev_ydot_f: [f64; 2],
    prev_yaw_rate_f: f64,
    last_cmd: [f64; 4],
    last_u_cmd: [f64; 4],
    primed: bool,
    held_ticks: u64,
}

impl InnerLoop {
    /// Builds the loop for one failure configuration.
    ///
    /// `chi_abs` selects the controlled lateral direction in the two-rotor
    /// configuration [rad] and is ignored otherwise. `dt` is the control
    /// period [s].
    pub fn new(
        params: &VehicleParams,
        failure: FailureConfig,
        gains: InnerGains,
        filter: FilterSettings,
        chi_abs: f64,
        dt: f64,
    ) -> Result<Self, ControllerError> {
        params.validate()?;
        failure.validate()?;
        gains.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(ControllerError::BadParameter("control period must be positive"));
        }
        let mode = match failure {
            FailureConfig::DoubleOpposing { active_pair: (a, b) } => {
                if !chi_abs.is_finite() {
                    return Err(ControllerError::BadParameter(
                        "lateral output direction must be finite",
                    ));
                }
                let zeta = params.g_q().atan2(params.g_p());
                if (chi_abs - zeta).sin().abs() < 1e-6 {
                    return Err(ControllerError::SingularEffectiveness(
                        "lateral output direction aligned with the uncontrollable axis",
                    ));
                }
                Mode::Pair {
                    first: a - 1,
                    second: b - 1,
                    chi: failure.s_l() * chi_abs,
                    chi_abs,
                }
            }
            FailureConfig::SingleRotor { .. } => {
                let active = failure.active_rotors();
                Mode::Single { rotors: [active[0], active[1], active[2]] }
            }
            FailureConfig::Nominal => Mode::Nominal,
        };
        Ok(Self {
            params: params.clone(),
            gains,
            dt,
            mode,
            active: failure.active_mask(),
            filters: FilterBank::new(&filter, dt)?,
            prev_ydot_f: [0.0; 2],
            prev_yaw_rate_f: 0.0,
            last_cmd: [0.0; 4],
            last_u_cmd: [0.0; 4],
            primed: false,
            held_ticks: 0,
        })
    }

    /// Ticks on which the inversion was skipped and the last command held.
    pub fn held_ticks(&self) -> u64 {
        self.held_ticks
    }

    /// Clears filter and command memory; the next step re-primes from the
    /// measurements it receives.
    pub fn reset(&mut self) {
        self.primed = false;
        self.held_ticks = 0;
    }

    /// Runs one control tick.
    pub fn step(&mut self, frame: &SensorFrame, cmd: &AttitudeCommand) -> ControlDiagnostics {
        let g = self.params.gravity;
        let gains = self.gains;
        let h = frame.rot.transpose() * cmd.n_d;
        let (p, q, r) = (frame.gyro.x, frame.gyro.y, frame.gyro.z);
        let r33 = frame.rot[(2, 2)];
        let az = frame.specific_force.z;

        let lambda = frame.rot.transpose() * cmd.n_d_rate;
        let (y_lat, ydot_raw) = match self.mode {
            Mode::Pair { chi, .. } => {
                let (sc, cc) = chi.sin_cos();
                let y2 = output_y2(h.x, h.y, chi);
                let eta1 = -h.x * sc + h.y * cc;
                let y2dot =
                    h.z * (p * sc - q * cc) + r * eta1 + lambda.x * cc + lambda.y * sc;
                ([y2, 0.0], [y2dot, 0.0])
            }
            _ => {
                let h1dot = r * h.y - q * h.z + lambda.x;
                let h2dot = p * h.z - r * h.x + lambda.y;
                ([h.x, h.y], [h1dot, h2dot])
            }
        };

        let mut u_meas = [0.0; 4];
        for i in 0..4 {
            if self.active[i] {
                u_meas[i] = frame.rotor_speeds[i] * frame.rotor_speeds[i];
            }
        }

        if !self.primed {
            self.filters.az.reset_to(az);
            self.filters.r33.reset_to(r33);
            self.filters.h3.reset_to(h.z);
            self.filters.ydot[0].reset_to(ydot_raw[0]);
            self.filters.ydot[1].reset_to(ydot_raw[1]);
            self.filters.yaw_rate.reset_to(r);
            for i in 0..4 {
                self.filters.u[i].reset_to(u_meas[i]);
            }
            self.prev_ydot_f = ydot_raw;
            self.prev_yaw_rate_f = r;
            for i in 0..4 {
                self.last_cmd[i] = if self.active[i] { frame.rotor_speeds[i] } else { 0.0 };
            }
            self.last_u_cmd = u_meas;
            self.primed = true;
        }

        let az_f = self.filters.az.update(az);
        let r33_f = self.filters.r33.update(r33);
        let h3_f = self.filters.h3.update(h.z);
        let ydot_f = [
            self.filters.ydot[0].update(ydot_raw[0]),
            self.filters.ydot[1].update(ydot_raw[1]),
        ];
        let yaw_rate_f = self.filters.yaw_rate.update(r);
        let mut u_f = [0.0; 4];
        for i in 0..4 {
            u_f[i] = self.filters.u[i].update(u_meas[i]);
        }

        let ydd_vertical = az_f * r33_f + g;
        let ydd_lat = [
            (ydot_f[0] - self.prev_ydot_f[0]) / self.dt,
            (ydot_f[1] - self.prev_ydot_f[1]) / self.dt,
        ];
        let ydd_yaw = (yaw_rate_f - self.prev_yaw_rate_f) / self.dt;
        self.prev_ydot_f = ydot_f;
        self.prev_yaw_rate_f = yaw_rate_f;

        let nu1 = vertical_pseudo_input(
            &gains,
            frame.pos_held.z - cmd.z_ref,
            frame.vel.z - cmd.vz_ref,
            cmd.az_ref,
        );

        let mut nu = [nu1, 0.0, 0.0, 0.0];
        let mut y_ddot_f = [ydd_vertical, 0.0, 0.0, 0.0];
        let mut du = [0.0; 4];
        let solved = match self.mode {
            Mode::Pair { first, second, chi_abs, .. } => {
                nu[1] = lateral_pseudo_input(&gains, y_lat[0], ydot_raw[0]);
                y_ddot_f[1] = ydd_lat[0];
                match effectiveness_pair(&self.params, r33_f, h3_f, chi_abs) {
                    Ok((b1, b2)) => {
                        let (da, db) = increment_pair(
                            b1,
                            b2,
                            nu[0] - y_ddot_f[0],
                            nu[1] - y_ddot_f[1],
                        );
                        du[first] = da;
                        du[second] = db;
                        true
                    }
                    Err(_) => false,
                }
            }
            Mode::Single { rotors } => {
                nu[1] = lateral_pseudo_input(&gains, y_lat[0], ydot_raw[0]);
                nu[2] = lateral_pseudo_input(&gains, y_lat[1], ydot_raw[1]);
                y_ddot_f[1] = ydd_lat[0];
                y_ddot_f[2] = ydd_lat[1];
                match effectiveness_single(&self.params, r33_f, h3_f, rotors) {
                    Ok(b) => {
                        let d = Vector3::new(
                            nu[0] - y_ddot_f[0],
                            nu[1] - y_ddot_f[1],
                            nu[2] - y_ddot_f[2],
                        );
                        match solve3(&b, d) {
                            Some(x) => {
                                for (k, rotor) in rotors.iter().enumerate() {
                                    du[rotor - 1] = x[k];
                                }
                                true
                            }
                            None => false,
                        }
                    }
                    Err(_) => false,
                }
            }
            Mode::Nominal => {
                nu[1] = lateral_pseudo_input(&gains, y_lat[0], ydot_raw[0]);
                nu[2] = lateral_pseudo_input(&gains, y_lat[1], ydot_raw[1]);
                let yaw = frame.rot[(1, 0)].atan2(frame.rot[(0, 0)]);
                let yaw_err = math::wrap_angle(yaw - cmd.yaw_ref);
                let r_ref = -gains.k_yaw_p * yaw_err - gains.k_yaw_d * r;
                nu[3] = -gains.k_yaw_rate * (r - r_ref);
                y_ddot_f[1] = ydd_lat[0];
                y_ddot_f[2] = ydd_lat[1];
                y_ddot_f[3] = ydd_yaw;
                match effectiveness_nominal(&self.params, r33_f, h3_f) {
                    Ok(b) => {
                        let d = Vector4::new(
                            nu[0] - y_ddot_f[0],
                            nu[1] - y_ddot_f[1],
                            nu[2] - y_ddot_f[2],
                            nu[3] - y_ddot_f[3],
                        );
                        match solve4(&b, d) {
                            Some(x) => {
                                du[..4].copy_from_slice(x.as_slice());
                                true
                            }
                            None => false,
                        }
                    }
                    Err(_) => false,
                }
            }
        };

        if solved {
            let u_min = self.params.omega_min * self.params.omega_min;
            let u_max = self.params.omega_max * self.params.omega_max;
            let mut u_cmd = [0.0; 4];
            let mut omega_cmd = [0.0; 4];
            for i in 0..4 {
                if self.active[i] {
                    u_cmd[i] = (u_f[i] + du[i]).clamp(u_min, u_max);
                    omega_cmd[i] = u_cmd[i].sqrt();
                }
            }
            self.last_cmd = omega_cmd;
            self.last_u_cmd = u_cmd;
            ControlDiagnostics {
                omega_cmd,
                u_cmd,
                u_f,
                nu,
                y_ddot_f,
                held: false,
            }
        } else {
            self.held_ticks += 1;
            ControlDiagnostics {
                omega_cmd: self.last_cmd,
                u_cmd: self.last_u_cmd,
                u_f,
                nu,
                y_ddot_f,
                held: true,
            }
        }
    }
}
