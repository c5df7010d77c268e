//! 6-DOF rigid-body propagation, sensor sampling, loss-of-control detection
//! and trace logging.
//!
//! Physics advances with a classical RK4 step over the full state (position,
//! velocity, rotation matrix entries, body rates); the rotation block is
//! re-orthonormalized after every step, which keeps the integrator at fourth
//! order while holding the SO(3) defect at rounding level. Rotor speeds are
//! held over each physics step and advanced by their first-order lag
//! afterwards.

use crate::math::{orthonormalize, orthonormality_error, skew, Mat3, Vec3};
use crate::vehicle::{
    body_force, body_moment, AeroDisturbance, FailureConfig, ModelError, RotorBank,
    VehicleParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("simulator state became non-finite at t = {t:.4} s")]
    NonFiniteState { t: f64 },
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Timing, noise and loss-of-control settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Physics step [s].
    pub dt: f64,
    /// Inner control loop rate [Hz]; must divide the physics rate.
    pub ctrl_rate: f64,
    /// Position loop / position measurement rate [Hz].
    pub pos_rate: f64,
    /// Trace decimation rate [Hz]; must divide the physics rate.
    pub log_rate: f64,
    /// Gyro noise, standard deviation per axis [rad/s].
    pub gyro_noise_std: f64,
    /// Accelerometer (specific force) noise per axis [m/s^2].
    pub accel_noise_std: f64,
    /// Rotor speed measurement noise [rad/s].
    pub rotor_noise_std: f64,
    /// RNG seed for sensor noise.
    pub seed: u64,
    /// Loss of control: lateral misalignment |(h1, h2)| threshold.
    pub tilt_limit: f64,
    /// Time the tilt threshold must persist before declaring a crash [s].
    pub tilt_hold_s: f64,
    /// Loss of control: position error threshold [m].
    pub pos_err_limit: f64,
    /// Time all rotor commands must sit pinned on a saturation rail [s].
    pub sat_hold_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 5e-4,
            ctrl_rate: 500.0,
            pos_rate: 120.0,
            log_rate: 100.0,
            gyro_noise_std: 0.0,
            accel_noise_std: 0.0,
            rotor_noise_std: 0.0,
            seed: 0,
            tilt_limit: 0.95,
            tilt_hold_s: 0.3,
            pos_err_limit: 10.0,
            sat_hold_s: 1.0,
        }
    }
}

impl SimConfig {
    /// Physics steps per control tick; errors unless the rates nest.
    pub fn ctrl_every(&self) -> Result<usize, SimError> {
        Self::divisor(self.dt, self.ctrl_rate, "ctrl_rate")
    }

    /// Physics steps per logged row.
    pub fn log_every(&self) -> Result<usize, SimError> {
        Self::divisor(self.dt, self.log_rate, "log_rate")
    }

    fn divisor(dt: f64, rate: f64, name: &str) -> Result<usize, SimError> {
        if !(dt > 0.0) || !(rate > 0.0) {
            return Err(SimError::BadConfig(format!(
                "dt and {name} must be positive"
            )));
        }
        let exact = 1.0 / (rate * dt);
        let n = exact.round();
        if n < 1.0 || (exact - n).abs() > 1e-6 {
            return Err(SimError::BadConfig(format!(
                "{name} = {rate} Hz does not divide the physics rate {} Hz",
                1.0 / dt
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.ctrl_every()?;
        self.log_every()?;
        if !(self.pos_rate > 0.0) {
            return Err(SimError::BadConfig("pos_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Full simulator state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    /// Inertial position [m], z down.
    pub pos: Vec3,
    /// Inertial velocity [m/s].
    pub vel: Vec3,
    /// Body-to-inertial rotation.
    pub rot: Mat3,
    /// Body rates [rad/s].
    pub omega: Vec3,
    pub rotors: RotorBank,
}

impl SimState {
    /// Spinning relaxed-hover equilibrium for the failed configurations, or
    /// level hover for the nominal vehicle.
    pub fn at_equilibrium(params: &VehicleParams, failure: &FailureConfig, pos: Vec3) -> Self {
        let (speeds, yaw_rate) = equilibrium_rotors(params, failure);
        Self {
            t: 0.0,
            pos,
            vel: Vec3::zeros(),
            rot: Mat3::identity(),
            omega: Vec3::new(0.0, 0.0, yaw_rate),
            rotors: RotorBank::new(failure, speeds),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().all(|v| v.is_finite())
            && self.vel.iter().all(|v| v.is_finite())
            && self.rot.iter().all(|v| v.is_finite())
            && self.omega.iter().all(|v| v.is_finite())
            && self.rotors.speeds.iter().all(|v| v.is_finite())
    }
}

/// Rotor speeds and yaw rate that balance weight and yaw torque for the
/// given failure configuration.
pub fn equilibrium_rotors(params: &VehicleParams, failure: &FailureConfig) -> ([f64; 4], f64) {
    let kappa = params.thrust_coeff;
    match failure {
        FailureConfig::Nominal => {
            let w = params.hover_speed_quad();
            ([w; 4], 0.0)
        }
        FailureConfig::DoubleOpposing { active_pair: (a, b) } => {
            let w = params.hover_speed_pair();
            let mut speeds = [0.0; 4];
            speeds[a - 1] = w;
            speeds[b - 1] = w;
            let yaw_rate =
                -failure.s_n() * params.mass * params.gravity * params.torque_ratio
                    / params.yaw_damping;
            (speeds, yaw_rate)
        }
        FailureConfig::SingleRotor { failed } => {
            // the rotor opposite the failed one idles at the lower limit;
            // the strong pair carries the remaining weight
            let weak = match failed {
                1 => 3,
                2 => 4,
                3 => 1,
                _ => 2,
            };
            let w_min = params.omega_min;
            let residual = params.mass * params.gravity / kappa - w_min * w_min;
            let w = (residual / 2.0).max(0.0).sqrt();
            let mut speeds = [0.0; 4];
            for rotor in failure.active_rotors() {
                speeds[rotor - 1] = if rotor == weak { w_min } else { w };
            }
            let torque_sum: f64 = (0..4)
                .map(|i| crate::vehicle::YAW_SIGN[i] * speeds[i] * speeds[i])
                .sum();
            let yaw_rate = kappa * params.torque_ratio * torque_sum / params.yaw_damping;
            (speeds, yaw_rate)
        }
    }
}

/// One sensor sample handed to the controller.
#[derive(Debug, Clone)]
pub struct SensorFrame {
    /// Body rates [rad/s], noise applied.
    pub gyro: Vec3,
    /// Body-frame specific force [m/s^2], noise applied. Reads -g on z at
    /// level hover.
    pub specific_force: Vec3,
    /// Rotor speeds [rad/s], noise applied, inactive rotors read zero.
    pub rotor_speeds: [f64; 4],
    /// Position held at the last position-loop measurement [m].
    pub pos_held: Vec3,
    /// Attitude estimate (truth passthrough; estimation is out of scope).
    pub rot: Mat3,
    /// Velocity estimate (truth passthrough).
    pub vel: Vec3,
}

/// Controller interface driven by the scenario runner.
pub trait Autopilot {
    /// Position-loop tick at the position rate.
    fn position_tick(&mut self, t: f64, frame: &SensorFrame);
    /// Inner-loop tick at the control rate; returns rotor speed commands
    /// [rad/s] for all four slots (inactive slots ignored).
    fn control_tick(&mut self, t: f64, frame: &SensorFrame) -> [f64; 4];
    /// Unit vector the controller currently aims the thrust axis at
    /// (inertial frame); used for misalignment monitoring and trace columns.
    fn target_direction(&self) -> Vec3;
    /// Current position reference for divergence checks [m].
    fn position_reference(&self) -> Vec3;
    /// Internal lateral coordinates (eta, y2) for trace columns.
    fn internal_signals(&self, state: &SimState) -> ([f64; 3], f64) {
        let _ = state;
        ([0.0; 3], 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashCause {
    /// Sustained lateral misalignment of the thrust axis.
    TiltDivergence,
    /// Position error beyond the configured bound.
    PositionDivergence,
    /// All rotor commands pinned at a saturation rail for too long.
    ActuatorPinned,
}

impl std::fmt::Display for CrashCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CrashCause::TiltDivergence => "tilt_divergence",
            CrashCause::PositionDivergence => "position_divergence",
            CrashCause::ActuatorPinned => "actuator_pinned",
        };
        f.write_str(s)
    }
}

/// One decimated trace sample.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: f64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub omega: Vec3,
    /// Target direction expressed in the body frame.
    pub h: Vec3,
    /// Internal lateral coordinates.
    pub eta: [f64; 3],
    /// Controlled lateral output.
    pub y2: f64,
    pub omega_cmd: [f64; 4],
    pub omega_act: [f64; 4],
    /// Signed wind speed along the wind axis [m/s].
    pub wind: f64,
    pub crashed: bool,
}

/// Complete run record.
#[derive(Debug, Clone)]
pub struct TraceLog {
    pub rows: Vec<TraceRow>,
    pub crashed: bool,
    pub crash_cause: Option<CrashCause>,
    pub crash_time: Option<f64>,
    /// Worst SO(3) defect observed over the run.
    pub max_ortho_error: f64,
}

/// Derivative of the rigid-body state for fixed rotor speeds.
#[allow(clippy::too_many_arguments)]
pub fn dynamics_deriv(
    params: &VehicleParams,
    vel: &Vec3,
    rot: &Mat3,
    omega: &Vec3,
    speeds: &[f64; 4],
    rotor_accels: &[f64; 4],
    aero: &AeroDisturbance,
    wind: &Vec3,
    t: f64,
) -> (Vec3, Vec3, Mat3, Vec3) {
    let (f_aero, m_aero) = aero.eval(rot, vel, wind, t);
    let force = body_force(params, speeds, &f_aero);
    let moment = body_moment(params, speeds, rotor_accels, omega, &m_aero);
    let inertia = params.inertia_diag();
    let ang_mom = Vec3::new(
        inertia.x * omega.x,
        inertia.y * omega.y,
        inertia.z * omega.z,
    );
    let domega_raw = -omega.cross(&ang_mom) + moment;
    let dpos = *vel;
    let dvel = Vec3::new(0.0, 0.0, params.gravity) + rot * force / params.mass;
    let drot = rot * skew(omega);
    let domega = Vec3::new(
        domega_raw.x / inertia.x,
        domega_raw.y / inertia.y,
        domega_raw.z / inertia.z,
    );
    (dpos, dvel, drot, domega)
}

/// Advance the rigid-body block one RK4 step with rotor speeds held, then
/// advance the rotor lag toward `cmd`.
pub fn sim_step(
    state: &mut SimState,
    params: &VehicleParams,
    aero: &AeroDisturbance,
    cmd: [f64; 4],
    wind_at: &dyn Fn(f64) -> Vec3,
    dt: f64,
) -> Result<(), SimError> {
    let speeds = state.rotors.speeds;
    let accels = state.rotors.accels(params);
    let t0 = state.t;

    let f = |vel: &Vec3, rot: &Mat3, omega: &Vec3, t: f64| {
        dynamics_deriv(
            params,
            vel,
            rot,
            omega,
            &speeds,
            &accels,
            aero,
            &wind_at(t),
            t,
        )
    };

    let (p0, v0, r0, w0) = (state.pos, state.vel, state.rot, state.omega);
    let k1 = f(&v0, &r0, &w0, t0);
    let half = dt / 2.0;
    let k2 = f(
        &(v0 + k1.1 * half),
        &(r0 + k1.2 * half),
        &(w0 + k1.3 * half),
        t0 + half,
    );
    let k3 = f(
        &(v0 + k2.1 * half),
        &(r0 + k2.2 * half),
        &(w0 + k2.3 * half),
        t0 + half,
    );
    let k4 = f(&(v0 + k3.1 * dt), &(r0 + k3.2 * dt), &(w0 + k3.3 * dt), t0 + dt);

    let w = dt / 6.0;
    state.pos = p0 + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * w;
    state.vel = v0 + (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * w;
    state.rot = orthonormalize(&(r0 + (k1.2 + k2.2 * 2.0 + k3.2 * 2.0 + k4.2) * w));
    state.omega = w0 + (k1.3 + k2.3 * 2.0 + k3.3 * 2.0 + k4.3) * w;
    state.t = t0 + dt;

    state.rotors.step(params, cmd, dt)?;
    if !state.is_finite() {
        return Err(SimError::NonFiniteState { t: state.t });
    }
    Ok(())
}

struct NoiseBank {
    rng: ChaCha8Rng,
    gyro: Option<Normal<f64>>,
    accel: Option<Normal<f64>>,
    rotor: Option<Normal<f64>>,
}

impl NoiseBank {
    fn new(cfg: &SimConfig) -> Self {
        let mk = |std: f64| (std > 0.0).then(|| Normal::new(0.0, std).unwrap());
        Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            gyro: mk(cfg.gyro_noise_std),
            accel: mk(cfg.accel_noise_std),
            rotor: mk(cfg.rotor_noise_std),
        }
    }

    fn gyro_sample(&mut self) -> Vec3 {
        Self::vec3(self.gyro, &mut self.rng)
    }

    fn accel_sample(&mut self) -> Vec3 {
        Self::vec3(self.accel, &mut self.rng)
    }

    fn rotor_sample(&mut self, speeds: &[f64; 4], active: [bool; 4]) -> [f64; 4] {
        let mut out = *speeds;
        if let Some(d) = self.rotor {
            for (i, v) in out.iter_mut().enumerate() {
                if active[i] {
                    *v += d.sample(&mut self.rng);
                }
            }
        }
        out
    }

    fn vec3(dist: Option<Normal<f64>>, rng: &mut ChaCha8Rng) -> Vec3 {
        match dist {
            Some(d) => Vec3::new(d.sample(rng), d.sample(rng), d.sample(rng)),
            None => Vec3::zeros(),
        }
    }
}

/// Specific force measured by a body-mounted accelerometer [m/s^2]:
/// total non-gravitational force over mass.
pub fn specific_force(params: &VehicleParams, state: &SimState, aero: &AeroDisturbance, wind: &Vec3) -> Vec3 {
    let (f_aero, _) = aero.eval(&state.rot, &state.vel, wind, state.t);
    body_force(params, &state.rotors.speeds, &f_aero) / params.mass
}

/// Run a closed-loop scenario for `duration` seconds.
///
/// The loop fires position ticks at `pos_rate` (free-running accumulator),
/// control ticks every `ctrl_every` physics steps, logs every `log_every`
/// steps and terminates early on loss of control.
#[allow(clippy::too_many_arguments)]
pub fn run_scenario(
    params: &VehicleParams,
    failure: &FailureConfig,
    aero: &AeroDisturbance,
    sim: &SimConfig,
    duration: f64,
    init: SimState,
    wind_at: &dyn Fn(f64) -> Vec3,
    wind_axis: &Vec3,
    autopilot: &mut dyn Autopilot,
) -> Result<TraceLog, SimError> {
    params.validate()?;
    failure.validate()?;
    sim.validate()?;
    if !(duration >= 0.0) {
        return Err(SimError::BadConfig("duration must be non-negative".into()));
    }

    let dt = sim.dt;
    let ctrl_every = sim.ctrl_every()?;
    let log_every = sim.log_every()?;
    let steps = (duration / dt).round() as usize;

    let mut state = init;
    let mut noise = NoiseBank::new(sim);
    let mut next_pos_t = 0.0;
    let mut pos_held = state.pos;
    let mut cmd = state.rotors.speeds;

    let mut rows: Vec<TraceRow> = Vec::with_capacity(steps / log_every + 2);
    let mut crashed = false;
    let mut crash_cause = None;
    let mut crash_time = None;
    let mut tilt_timer = 0.0;
    let mut sat_timer = 0.0;
    let mut max_ortho = 0.0f64;

    let make_row = |state: &SimState,
                    autopilot: &dyn Autopilot,
                    cmd: &[f64; 4],
                    wind_at: &dyn Fn(f64) -> Vec3,
                    wind_axis: &Vec3,
                    crashed: bool| {
        let n_d = autopilot.target_direction();
        let h = state.rot.transpose() * n_d;
        let (eta, y2) = autopilot.internal_signals(state);
        TraceRow {
            t: state.t,
            pos: state.pos,
            vel: state.vel,
            omega: state.omega,
            h,
            eta,
            y2,
            omega_cmd: *cmd,
            omega_act: state.rotors.speeds,
            wind: wind_at(state.t).dot(wind_axis),
            crashed,
        }
    };

    for step in 0..=steps {
        let t = step as f64 * dt;
        state.t = t;
        max_ortho = max_ortho.max(orthonormality_error(&state.rot));

        // position-loop tick (free-running accumulator, fires at t = 0)
        if t + 1e-9 >= next_pos_t {
            pos_held = state.pos;
            let frame = SensorFrame {
                gyro: state.omega,
                specific_force: specific_force(params, &state, aero, &wind_at(t)),
                rotor_speeds: state.rotors.speeds,
                pos_held,
                rot: state.rot,
                vel: state.vel,
            };
            autopilot.position_tick(t, &frame);
            next_pos_t += 1.0 / sim.pos_rate;
        }

        // inner-loop tick
        if step % ctrl_every == 0 {
            let gyro_n = noise.gyro_sample();
            let accel_n = noise.accel_sample();
            let rotor_meas = noise.rotor_sample(&state.rotors.speeds, state.rotors.active());
            let frame = SensorFrame {
                gyro: state.omega + gyro_n,
                specific_force: specific_force(params, &state, aero, &wind_at(t)) + accel_n,
                rotor_speeds: rotor_meas,
                pos_held,
                rot: state.rot,
                vel: state.vel,
            };
            cmd = autopilot.control_tick(t, &frame);
        }

        // trace logging on the decimation grid
        if step % log_every == 0 {
            rows.push(make_row(&state, autopilot, &cmd, wind_at, wind_axis, false));
        }

        // loss-of-control monitors
        let n_d = autopilot.target_direction();
        let h = state.rot.transpose() * n_d;
        // |(h1, h2)| is the sine of the misalignment angle and folds back
        // past 90 deg, where the aligned component flips sign instead.
        let lateral = (h.x * h.x + h.y * h.y).sqrt();
        let diverged = lateral > sim.tilt_limit || h.z > 0.0;
        tilt_timer = if diverged { tilt_timer + dt } else { 0.0 };
        sat_timer = if state.rotors.all_pinned(params) { sat_timer + dt } else { 0.0 };
        let pos_err = (state.pos - autopilot.position_reference()).norm();
        let cause = if tilt_timer > sim.tilt_hold_s {
            Some(CrashCause::TiltDivergence)
        } else if pos_err > sim.pos_err_limit {
            Some(CrashCause::PositionDivergence)
        } else if sat_timer > sim.sat_hold_s {
            Some(CrashCause::ActuatorPinned)
        } else {
            None
        };
        if let Some(c) = cause {
            crashed = true;
            crash_cause = Some(c);
            crash_time = Some(t);
            rows.push(make_row(&state, autopilot, &cmd, wind_at, wind_axis, true));
            break;
        }

        if step == steps {
            break;
        }
        sim_step(&mut state, params, aero, cmd, wind_at, dt)?;
    }

    Ok(TraceLog {
        rows,
        crashed,
        crash_cause,
        crash_time,
        max_ortho_error: max_ortho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const ZERO_WIND: fn(f64) -> Vec3 = |_| Vec3::zeros();

    fn quiet_aero() -> AeroDisturbance {
        AeroDisturbance::default()
    }

    /// Constant-command test pilot.
    struct ConstPilot {
        cmd: [f64; 4],
        pos_ref: Vec3,
    }

    impl Autopilot for ConstPilot {
        fn position_tick(&mut self, _t: f64, _frame: &SensorFrame) {}
        fn control_tick(&mut self, _t: f64, _frame: &SensorFrame) -> [f64; 4] {
            self.cmd
        }
        fn target_direction(&self) -> Vec3 {
            Vec3::new(0.0, 0.0, -1.0)
        }
        fn position_reference(&self) -> Vec3 {
            self.pos_ref
        }
    }

    /// Pilot whose commands depend on the sensor frame, for noise tests.
    struct FeedbackPilot {
        base: f64,
        pos_ref: Vec3,
    }

    impl Autopilot for FeedbackPilot {
        fn position_tick(&mut self, _t: f64, _frame: &SensorFrame) {}
        fn control_tick(&mut self, _t: f64, frame: &SensorFrame) -> [f64; 4] {
            let w = self.base + 20.0 * frame.gyro.x + 0.05 * (frame.rotor_speeds[0] - self.base);
            [w, 0.0, self.base, 0.0]
        }
        fn target_direction(&self) -> Vec3 {
            Vec3::new(0.0, 0.0, -1.0)
        }
        fn position_reference(&self) -> Vec3 {
            self.pos_ref
        }
    }

    fn propagate(
        params: &VehicleParams,
        mut state: SimState,
        cmd: [f64; 4],
        dt: f64,
        duration: f64,
    ) -> SimState {
        let aero = quiet_aero();
        let steps = (duration / dt).round() as usize;
        for _ in 0..steps {
            sim_step(&mut state, params, &aero, cmd, &ZERO_WIND, dt).unwrap();
        }
        state
    }

    #[test]
    fn free_fall_matches_ballistic_solution() {
        let params = VehicleParams {
            omega_min: 0.0,
            ..VehicleParams::default()
        };
        let failure = FailureConfig::Nominal;
        let v0 = Vec3::new(1.0, -2.0, 0.5);
        let state = SimState {
            t: 0.0,
            pos: Vec3::new(0.3, -0.1, -5.0),
            vel: v0,
            rot: Mat3::identity(),
            omega: Vec3::zeros(),
            rotors: RotorBank::new(&failure, [0.0; 4]),
        };
        let p0 = state.pos;
        let end = propagate(&params, state, [0.0; 4], 5e-4, 1.0);
        let g = params.gravity;
        let expect_pos = p0 + v0 * 1.0 + Vec3::new(0.0, 0.0, 0.5 * g);
        let expect_vel = v0 + Vec3::new(0.0, 0.0, g);
        assert_relative_eq!(end.pos, expect_pos, epsilon = 1e-9);
        assert_relative_eq!(end.vel, expect_vel, epsilon = 1e-9);
    }

    #[test]
    fn spinning_equilibrium_has_zero_translational_and_rate_derivatives() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let state = SimState::at_equilibrium(&params, &failure, Vec3::zeros());
        let accels = state.rotors.accels(&params);
        let (dpos, dvel, _drot, domega) = dynamics_deriv(
            &params,
            &state.vel,
            &state.rot,
            &state.omega,
            &state.rotors.speeds,
            &accels,
            &quiet_aero(),
            &Vec3::zeros(),
            0.0,
        );
        assert!(dpos.norm() < 1e-12);
        assert!(dvel.norm() < 1e-9, "residual acceleration {}", dvel.norm());
        assert!(domega.norm() < 1e-9, "residual rate derivative {}", domega.norm());
    }

    #[test]
    fn equilibrium_yaw_rate_balances_rotor_torque_against_damping() {
        let params = VehicleParams::default();
        let expected = params.mass * params.gravity * params.torque_ratio / params.yaw_damping;

        let (_, r13) = equilibrium_rotors(&params, &FailureConfig::DoubleOpposing {
            active_pair: (1, 3),
        });
        let (_, r24) = equilibrium_rotors(&params, &FailureConfig::DoubleOpposing {
            active_pair: (2, 4),
        });
        assert_relative_eq!(r13, expected, max_relative = 1e-12);
        assert_relative_eq!(r24, -expected, max_relative = 1e-12);

        let (speeds, _) = equilibrium_rotors(&params, &FailureConfig::SingleRotor { failed: 4 });
        let thrust: f64 = speeds.iter().map(|w| params.thrust_coeff * w * w).sum();
        assert_relative_eq!(thrust, params.mass * params.gravity, max_relative = 1e-12);
        assert_relative_eq!(speeds[1], params.omega_min, max_relative = 1e-12);
        assert_eq!(speeds[3], 0.0);
    }

    #[test]
    fn spinning_equilibrium_holds_over_time() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let state = SimState::at_equilibrium(&params, &failure, Vec3::new(0.0, 0.0, -1.0));
        let cmd = state.rotors.speeds;
        let r0 = state.omega.z;
        let end = propagate(&params, state, cmd, 5e-4, 0.5);
        assert_relative_eq!(end.omega.z, r0, max_relative = 1e-9);
        assert!(end.vel.norm() < 1e-9);
        // thrust axis never leaves vertical
        let e3 = end.rot.transpose() * Vec3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(e3.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_spin_tracks_analytic_rotation() {
        let params = VehicleParams {
            omega_min: 0.0,
            yaw_damping: 1e-30,
            ..VehicleParams::default()
        };
        let failure = FailureConfig::Nominal;
        let r = 5.0;
        let state = SimState {
            t: 0.0,
            pos: Vec3::zeros(),
            vel: Vec3::zeros(),
            rot: Mat3::identity(),
            omega: Vec3::new(0.0, 0.0, r),
            rotors: RotorBank::new(&failure, [0.0; 4]),
        };
        let end = propagate(&params, state, [0.0; 4], 5e-4, 1.0);
        let theta = r * 1.0;
        let ex = end.rot * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(ex, Vec3::new(theta.cos(), theta.sin(), 0.0), epsilon = 1e-8);
        assert_relative_eq!(end.omega.z, r, max_relative = 1e-9);
    }

    #[test]
    fn torque_free_tumble_conserves_energy_and_momentum() {
        let params = VehicleParams {
            omega_min: 0.0,
            yaw_damping: 1e-30,
            ..VehicleParams::default()
        };
        let failure = FailureConfig::Nominal;
        let mut state = SimState {
            t: 0.0,
            pos: Vec3::zeros(),
            vel: Vec3::zeros(),
            rot: Mat3::identity(),
            omega: Vec3::new(2.0, -3.0, 1.5),
            rotors: RotorBank::new(&failure, [0.0; 4]),
        };
        let inertia = params.inertia_diag();
        let energy = |w: &Vec3| {
            0.5 * (inertia.x * w.x * w.x + inertia.y * w.y * w.y + inertia.z * w.z * w.z)
        };
        let momentum = |s: &SimState| {
            s.rot * Vec3::new(
                inertia.x * s.omega.x,
                inertia.y * s.omega.y,
                inertia.z * s.omega.z,
            )
        };
        let e0 = energy(&state.omega);
        let l0 = momentum(&state);
        let aero = quiet_aero();
        let mut max_defect = 0.0f64;
        for _ in 0..4000 {
            sim_step(&mut state, &params, &aero, [0.0; 4], &ZERO_WIND, 5e-4).unwrap();
            max_defect = max_defect.max(orthonormality_error(&state.rot));
        }
        assert_relative_eq!(energy(&state.omega), e0, max_relative = 1e-7);
        assert_relative_eq!(momentum(&state), l0, max_relative = 1e-7);
        assert!(max_defect < 1e-8, "rotation defect {max_defect}");
    }

    #[test]
    fn halving_the_step_shrinks_error_at_fourth_order() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let cmd = [900.0, 0.0, 1000.0, 0.0];
        let init = SimState {
            t: 0.0,
            pos: Vec3::zeros(),
            vel: Vec3::new(1.0, 0.0, -0.5),
            rot: Mat3::identity(),
            omega: Vec3::new(0.5, -0.3, 2.0),
            rotors: RotorBank::new(&failure, cmd),
        };
        let err = |a: &SimState, b: &SimState| {
            (a.pos - b.pos).norm()
                + (a.vel - b.vel).norm()
                + (a.omega - b.omega).norm()
                + (a.rot - b.rot).norm()
        };
        let reference = propagate(&params, init.clone(), cmd, 3.125e-5, 1.0);
        let coarse = propagate(&params, init.clone(), cmd, 1e-3, 1.0);
        let fine = propagate(&params, init, cmd, 5e-4, 1.0);
        let e_coarse = err(&coarse, &reference);
        let e_fine = err(&fine, &reference);
        let ratio = e_coarse / e_fine;
        assert!(
            ratio > 8.0,
            "error ratio {ratio} too small (coarse {e_coarse}, fine {e_fine})"
        );
    }

    #[test]
    fn scenario_logs_expected_row_grid() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let sim = SimConfig::default();
        let init = SimState::at_equilibrium(&params, &failure, Vec3::new(0.0, 0.0, -1.0));
        let mut pilot = ConstPilot {
            cmd: init.rotors.speeds,
            pos_ref: init.pos,
        };
        let log = run_scenario(
            &params,
            &failure,
            &quiet_aero(),
            &sim,
            2.0,
            init,
            &ZERO_WIND,
            &Vec3::new(1.0, 0.0, 0.0),
            &mut pilot,
        )
        .unwrap();
        assert!(!log.crashed);
        assert_eq!(log.rows.len(), 201);
        for (k, row) in log.rows.iter().enumerate() {
            assert_relative_eq!(row.t, k as f64 * 0.01, epsilon = 1e-12);
        }
        assert!(log.max_ortho_error < 1e-10);

        let single = run_scenario(
            &params,
            &failure,
            &quiet_aero(),
            &sim,
            0.0,
            SimState::at_equilibrium(&params, &failure, Vec3::zeros()),
            &ZERO_WIND,
            &Vec3::new(1.0, 0.0, 0.0),
            &mut pilot,
        )
        .unwrap();
        assert_eq!(single.rows.len(), 1);
        assert_eq!(single.rows[0].t, 0.0);
    }

    #[test]
    fn sustained_tilt_is_flagged_as_crash() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let sim = SimConfig::default();
        let mut init = SimState::at_equilibrium(&params, &failure, Vec3::zeros());
        let a = 1.6f64;
        init.rot = Mat3::new(
            1.0, 0.0, 0.0,
            0.0, a.cos(), -a.sin(),
            0.0, a.sin(), a.cos(),
        );
        let cmd = init.rotors.speeds;
        let mut pilot = ConstPilot { cmd, pos_ref: init.pos };
        let log = run_scenario(
            &params,
            &failure,
            &quiet_aero(),
            &sim,
            5.0,
            init,
            &ZERO_WIND,
            &Vec3::new(1.0, 0.0, 0.0),
            &mut pilot,
        )
        .unwrap();
        assert!(log.crashed);
        assert_eq!(log.crash_cause, Some(CrashCause::TiltDivergence));
        let t_crash = log.crash_time.unwrap();
        assert!(
            t_crash >= sim.tilt_hold_s - 2.0 * sim.dt && t_crash < 1.0,
            "crash at {t_crash}"
        );
        assert!(log.rows.last().unwrap().crashed);
    }

    #[test]
    fn position_divergence_is_flagged_as_crash() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let sim = SimConfig::default();
        let init = SimState::at_equilibrium(&params, &failure, Vec3::new(20.0, 0.0, 0.0));
        let cmd = init.rotors.speeds;
        let mut pilot = ConstPilot { cmd, pos_ref: Vec3::zeros() };
        let log = run_scenario(
            &params,
            &failure,
            &quiet_aero(),
            &sim,
            1.0,
            init,
            &ZERO_WIND,
            &Vec3::new(1.0, 0.0, 0.0),
            &mut pilot,
        )
        .unwrap();
        assert!(log.crashed);
        assert_eq!(log.crash_cause, Some(CrashCause::PositionDivergence));
        assert_eq!(log.crash_time, Some(0.0));
    }

    #[test]
    fn sustained_saturation_is_flagged_as_crash() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let sim = SimConfig::default();
        let init = SimState::at_equilibrium(&params, &failure, Vec3::zeros());
        let mut pilot = ConstPilot {
            cmd: [1e6, 0.0, 1e6, 0.0],
            pos_ref: Vec3::zeros(),
        };
        let log = run_scenario(
            &params,
            &failure,
            &quiet_aero(),
            &sim,
            3.0,
            init,
            &ZERO_WIND,
            &Vec3::new(1.0, 0.0, 0.0),
            &mut pilot,
        )
        .unwrap();
        assert!(log.crashed);
        assert_eq!(log.crash_cause, Some(CrashCause::ActuatorPinned));
        let t_crash = log.crash_time.unwrap();
        assert!(t_crash > sim.sat_hold_s && t_crash < 1.5, "crash at {t_crash}");
    }

    #[test]
    fn non_finite_command_aborts_the_run() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let sim = SimConfig::default();
        let init = SimState::at_equilibrium(&params, &failure, Vec3::zeros());
        let mut pilot = ConstPilot {
            cmd: [f64::NAN, 0.0, 900.0, 0.0],
            pos_ref: Vec3::zeros(),
        };
        let out = run_scenario(
            &params,
            &failure,
            &quiet_aero(),
            &sim,
            1.0,
            init,
            &ZERO_WIND,
            &Vec3::new(1.0, 0.0, 0.0),
            &mut pilot,
        );
        assert!(matches!(out, Err(SimError::Model(ModelError::NonFiniteCommand))));
    }

    #[test]
    fn identical_seeds_reproduce_the_trace_exactly() {
        let params = VehicleParams::default();
        let failure = FailureConfig::DoubleOpposing { active_pair: (1, 3) };
        let sim = SimConfig {
            gyro_noise_std: 0.01,
            accel_noise_std: 0.05,
            rotor_noise_std: 1.0,
            seed: 7,
            ..SimConfig::default()
        };
        let run = |sim: &SimConfig| {
            let init = SimState::at_equilibrium(&params, &failure, Vec3::zeros());
            let base = init.rotors.speeds[0];
            let mut pilot = FeedbackPilot { base, pos_ref: Vec3::zeros() };
            run_scenario(
                &params,
                &failure,
                &quiet_aero(),
                sim,
                1.0,
                init,
                &ZERO_WIND,
                &Vec3::new(1.0, 0.0, 0.0),
                &mut pilot,
            )
            .unwrap()
        };
        let a = run(&sim);
        let b = run(&sim);
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(b.rows.iter()) {
            assert_eq!(ra.t.to_bits(), rb.t.to_bits());
            for i in 0..3 {
                assert_eq!(ra.pos[i].to_bits(), rb.pos[i].to_bits());
                assert_eq!(ra.omega[i].to_bits(), rb.omega[i].to_bits());
            }
            for i in 0..4 {
                assert_eq!(ra.omega_cmd[i].to_bits(), rb.omega_cmd[i].to_bits());
            }
        }

        let other = SimConfig { seed: 8, ..sim.clone() };
        let c = run(&other);
        let differs = a
            .rows
            .iter()
            .zip(c.rows.iter())
            .any(|(ra, rc)| ra.omega_cmd[0].to_bits() != rc.omega_cmd[0].to_bits());
        assert!(differs, "changing the seed left the trace identical");
    }
}
