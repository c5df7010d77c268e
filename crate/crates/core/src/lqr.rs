//! Linear-quadratic baseline for the reduced-attitude loop.
//!
//! The design model is the (h1, h2, p, q) subsystem linearized about the
//! relaxed spinning equilibrium, augmented with one first-order thrust-lag
//! state per active rotor. Inputs are commanded thrust deviations in newtons,
//! so a unit input cost carries units 1/N^2. The gain comes from the
//! continuous algebraic Riccati equation, solved by a finite-horizon Riccati
//! integration that seeds a Newton iteration on the associated Lyapunov
//! equations. The 500 Hz zero-order-hold loop is verified against the matrix
//! exponential discretization of the augmented system.
//!
//! Altitude is held by scaling the total trim thrust, and the reduced
//! attitude leaves heading uncontrolled, so the baseline flies the same
//! scenarios as the incremental controller with the same outer loop and
//! saturation envelope.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    trace_signals, vertical_pseudo_input, ControllerError, InnerGains, OuterGains, OuterLoop,
    PositionReference,
};
use crate::math::{Mat3, Vec3};
use crate::sim::{dynamics_deriv, equilibrium_rotors, Autopilot, SensorFrame, SimState};
use crate::vehicle::{AeroDisturbance, FailureConfig, VehicleParams};

/// Number of reduced-attitude states ahead of the actuator-lag block.
const ATT_STATES: usize = 4;

#[derive(Debug, Error)]
pub enum LqrError {
    #[error("invalid weight: {0}")]
    BadWeight(&'static str),
    #[error("riccati iteration stalled at residual {residual:e}")]
    NotConverged { residual: f64 },
    #[error("closed loop is not stable")]
    Unstable,
    #[error("lyapunov operator is singular")]
    SingularLyapunov,
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Quadratic costs and the actuator model used for gain synthesis.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrWeights {
    /// Cost on each squared input thrust deviation [1/N^2].
    pub input_cost: f64,
    /// Cost on each squared reduced-attitude component.
    pub attitude_cost: f64,
    /// Cost on each squared body rate [s^2].
    pub rate_cost: f64,
    /// First-order actuator time constant in the design model [s].
    pub actuator_tau: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            input_cost: 1.0,
            attitude_cost: 20.0,
            rate_cost: 0.0,
            actuator_tau: 0.030,
        }
    }
}

impl LqrWeights {
    pub fn validate(&self) -> Result<(), LqrError> {
        if !(self.input_cost > 0.0) || !self.input_cost.is_finite() {
            return Err(LqrError::BadWeight("input_cost"));
        }
        if !(self.attitude_cost >= 0.0) || !self.attitude_cost.is_finite() {
            return Err(LqrError::BadWeight("attitude_cost"));
        }
        if !(self.rate_cost >= 0.0) || !self.rate_cost.is_finite() {
            return Err(LqrError::BadWeight("rate_cost"));
        }
        if !(self.actuator_tau > 0.0) || !self.actuator_tau.is_finite() {
            return Err(LqrError::BadWeight("actuator_tau"));
        }
        Ok(())
    }
}

/// Design-model dynamics: reduced attitude with the yaw rate frozen at its
/// trim value, body rates driven through the full moment model, and a
/// first-order lag from commanded to produced thrust on each active rotor.
struct DesignModel<'a> {
    params: &'a VehicleParams,
    aero: &'a AeroDisturbance,
    rotors: Vec<usize>,
    trim_thrusts: [f64; 4],
    yaw_rate: f64,
    tau: f64,
}

impl DesignModel<'_> {
    fn dim(&self) -> usize {
        ATT_STATES + self.rotors.len()
    }

    fn deriv(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (h1, h2) = (x[0], x[1]);
        let h3 = -(1.0 - h1 * h1 - h2 * h2).max(0.0).sqrt();
        let omega = Vec3::new(x[2], x[3], self.yaw_rate);

        let mut speeds = [0.0; 4];
        for (k, rotor) in self.rotors.iter().enumerate() {
            let thrust = self.trim_thrusts[rotor - 1] + x[ATT_STATES + k];
            speeds[rotor - 1] = (thrust.max(0.0) / self.params.thrust_coeff).sqrt();
        }
        let (_, _, _, omega_dot) = dynamics_deriv(
            self.params,
            &Vec3::zeros(),
            &Mat3::identity(),
            &omega,
            &speeds,
            &[0.0; 4],
            self.aero,
            &Vec3::zeros(),
            0.0,
        );

        let mut dx = DVector::zeros(self.dim());
        dx[0] = self.yaw_rate * h2 - omega.y * h3;
        dx[1] = omega.x * h3 - self.yaw_rate * h1;
        dx[2] = omega_dot.x;
        dx[3] = omega_dot.y;
        for k in 0..self.rotors.len() {
            dx[ATT_STATES + k] = (u[k] - x[ATT_STATES + k]) / self.tau;
        }
        dx
    }
}

/// Jacobians of the design model at the relaxed hovering equilibrium
/// (level reduced attitude, zero rates, trim thrusts), by central
/// differences. Returns (A, B) with one lag state and one input per active
/// rotor in ascending rotor order.
pub fn linearize_relaxed_hover(
    params: &VehicleParams,
    aero: &AeroDisturbance,
    failure: &FailureConfig,
    actuator_tau: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (trim_speeds, yaw_rate) = equilibrium_rotors(params, failure);
    let mut trim_thrusts = [0.0; 4];
    for i in 0..4 {
        trim_thrusts[i] = params.thrust_coeff * trim_speeds[i] * trim_speeds[i];
    }
    let model = DesignModel {
        params,
        aero,
        rotors: failure.active_rotors(),
        trim_thrusts,
        yaw_rate,
        tau: actuator_tau,
    };

    let dim = model.dim();
    let inputs = model.rotors.len();
    let step = 1e-6;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DMatrix::zeros(dim, inputs);
    let u0 = DVector::zeros(inputs);
    for j in 0..dim {
        let mut plus = DVector::zeros(dim);
        plus[j] = step;
        let mut minus = DVector::zeros(dim);
        minus[j] = -step;
        let col = (model.deriv(&plus, &u0) - model.deriv(&minus, &u0)) / (2.0 * step);
        a.set_column(j, &col);
    }
    let x0 = DVector::zeros(dim);
    for j in 0..inputs {
        let mut plus = DVector::zeros(inputs);
        plus[j] = step;
        let mut minus = DVector::zeros(inputs);
        minus[j] = -step;
        let col = (model.deriv(&x0, &plus) - model.deriv(&x0, &minus)) / (2.0 * step);
        b.set_column(j, &col);
    }
    (a, b)
}

fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve the Lyapunov equation `M' X + X M = -C` through the Kronecker
/// product form; the result is symmetrized.
fn solve_lyapunov(m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>, LqrError> {
    let n = m.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let m_t = m.transpose();
    let op = ident.kronecker(&m_t) + m_t.kronecker(&ident);
    let rhs = DVector::from_column_slice((-c).as_slice());
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or(LqrError::SingularLyapunov)?;
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

fn riccati_residual(
    a: &DMatrix<f64>,
    s: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    (a.transpose() * p + p * a - p * s * p + q).norm()
}

/// Stabilizing solution of `A'P + PA - P B R^-1 B' P + Q = 0`.
///
/// A finite-horizon integration of the Riccati flow runs until the implied
/// gain stabilizes the pair, then a Newton iteration on the closed-loop
/// Lyapunov equation polishes to a residual below 1e-9.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LqrError> {
    let n = a.nrows();
    let chol = r
        .clone()
        .cholesky()
        .ok_or(LqrError::BadWeight("input cost matrix"))?;
    let r_inv_bt = chol.solve(&b.transpose());
    let s = b * &r_inv_bt;

    let flow = |p: &DMatrix<f64>| a.transpose() * p + p * a - p * &s * p + q;
    let mut dt = 1e-3;
    let mut p = DMatrix::zeros(n, n);
    let mut stabilizing = false;
    'warmup: for _attempt in 0..4 {
        p = DMatrix::zeros(n, n);
        for step in 1..=40_000usize {
            let k1 = flow(&p);
            let k2 = flow(&(&p + &k1 * (dt / 2.0)));
            let k3 = flow(&(&p + &k2 * (dt / 2.0)));
            let k4 = flow(&(&p + &k3 * dt));
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            if !p.iter().all(|v| v.is_finite()) {
                dt /= 4.0;
                continue 'warmup;
            }
            if step % 200 == 0 {
                let k = &r_inv_bt * &p;
                if max_real_eigenvalue(&(a - b * k)) < -1e-9 {
                    stabilizing = true;
                    break 'warmup;
                }
            }
        }
        break;
    }
    if !stabilizing {
        return Err(LqrError::NotConverged {
            residual: riccati_residual(a, &s, q, &p),
        });
    }

    let mut k = &r_inv_bt * &p;
    let mut residual = f64::INFINITY;
    for _ in 0..50 {
        let a_cl = a - b * &k;
        let c = q + k.transpose() * r * &k;
        p = solve_lyapunov(&a_cl, &c)?;
        k = &r_inv_bt * &p;
        residual = riccati_residual(a, &s, q, &p);
        if residual < 1e-9 {
            break;
        }
    }
    if residual >= 1e-9 {
        return Err(LqrError::NotConverged { residual });
    }
    if max_real_eigenvalue(&(a - b * &k)) >= -1e-9 {
        return Err(LqrError::Unstable);
    }
    Ok(p)
}

/// State-feedback gain about the relaxed hovering solution.
///
/// Maps deviations of (h1, h2, p, q, thrust lags) to thrust-deviation
/// commands for the active rotors.
#[derive(Debug, Clone)]
pub struct LqrGain {
    k: DMatrix<f64>,
    rotors: Vec<usize>,
    trim_speeds: [f64; 4],
    trim_thrusts: [f64; 4],
    yaw_rate: f64,
    residual: f64,
}

impl LqrGain {
    /// Synthesize the gain for one vehicle and failure configuration and
    /// verify it closed loop: continuous eigenvalues strictly in the left
    /// half plane and the zero-order-hold discretization at the control
    /// period contractive.
    pub fn design(
        params: &VehicleParams,
        aero: &AeroDisturbance,
        failure: &FailureConfig,
        weights: &LqrWeights,
        ctrl_dt: f64,
    ) -> Result<Self, LqrError> {
        weights.validate()?;
        if !(ctrl_dt > 0.0) || !ctrl_dt.is_finite() {
            return Err(LqrError::BadWeight("ctrl_dt"));
        }
        let (a, b) = linearize_relaxed_hover(params, aero, failure, weights.actuator_tau);
        let dim = a.nrows();
        let inputs = b.ncols();
        let mut q = DMatrix::zeros(dim, dim);
        q[(0, 0)] = weights.attitude_cost;
        q[(1, 1)] = weights.attitude_cost;
        q[(2, 2)] = weights.rate_cost;
        q[(3, 3)] = weights.rate_cost;
        let r = DMatrix::identity(inputs, inputs) * weights.input_cost;

        let p = solve_care(&a, &b, &q, &r)?;
        let k = r
            .clone()
            .cholesky()
            .ok_or(LqrError::BadWeight("input cost matrix"))?
            .solve(&(b.transpose() * &p));
        let residual = {
            let chol = r.clone().cholesky().unwrap();
            let s = &b * chol.solve(&b.transpose());
            riccati_residual(&a, &s, &q, &p)
        };

        let mut aug = DMatrix::zeros(dim + inputs, dim + inputs);
        aug.view_mut((0, 0), (dim, dim)).copy_from(&a);
        aug.view_mut((0, dim), (dim, inputs)).copy_from(&b);
        let phi = (aug * ctrl_dt).exp();
        let a_d = phi.view((0, 0), (dim, dim)).into_owned();
        let b_d = phi.view((0, dim), (dim, inputs)).into_owned();
        let rho = (a_d - b_d * &k)
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max);
        if rho >= 1.0 {
            return Err(LqrError::Unstable);
        }

        let (trim_speeds, yaw_rate) = equilibrium_rotors(params, failure);
        let mut trim_thrusts = [0.0; 4];
        for i in 0..4 {
            trim_thrusts[i] = params.thrust_coeff * trim_speeds[i] * trim_speeds[i];
        }
        Ok(Self {
            k,
            rotors: failure.active_rotors(),
            trim_speeds,
            trim_thrusts,
            yaw_rate,
            residual,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// Ascending 1-based labels of the rotors the gain commands.
    pub fn rotors(&self) -> &[usize] {
        &self.rotors
    }

    pub fn trim_speeds(&self) -> [f64; 4] {
        self.trim_speeds
    }

    pub fn yaw_rate(&self) -> f64 {
        self.yaw_rate
    }

    /// Riccati residual left after synthesis.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// State deviation vector in design order from measured quantities.
    pub fn state_from(
        &self,
        params: &VehicleParams,
        h: &Vec3,
        omega: &Vec3,
        rotor_speeds: &[f64; 4],
    ) -> DVector<f64> {
        let mut x = DVector::zeros(ATT_STATES + self.rotors.len());
        x[0] = h.x;
        x[1] = h.y;
        x[2] = omega.x;
        x[3] = omega.y;
        for (k, rotor) in self.rotors.iter().enumerate() {
            let w = rotor_speeds[rotor - 1];
            x[ATT_STATES + k] = params.thrust_coeff * w * w - self.trim_thrusts[rotor - 1];
        }
        x
    }

    /// Feedback part of the command: thrust deviations `-K x` [N].
    pub fn deviation(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.k * x)
    }

    /// Absolute commanded thrusts `T_trim - K x` for the active rotors [N].
    pub fn thrusts(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut t = self.deviation(x);
        for (k, rotor) in self.rotors.iter().enumerate() {
            t[k] += self.trim_thrusts[rotor - 1];
        }
        t
    }
}

/// Baseline autopilot: the shared outer position loop commanding the same
/// thrust-axis reference, a proportional-derivative altitude channel scaling
/// the total trim thrust, and the linear-quadratic attitude feedback.
pub struct LqrController {
    outer: OuterLoop,
    reference: PositionReference,
    gain: LqrGain,
    params: VehicleParams,
    failure: FailureConfig,
    gains: InnerGains,
    chi: f64,
}

impl LqrController {
    pub fn new(
        params: &VehicleParams,
        failure: FailureConfig,
        aero: &AeroDisturbance,
        weights: &LqrWeights,
        outer_gains: OuterGains,
        inner_gains: InnerGains,
        chi: f64,
        ctrl_dt: f64,
        reference: PositionReference,
    ) -> Result<Self, LqrError> {
        inner_gains.validate().map_err(ControllerError::from)?;
        let outer = OuterLoop::new(outer_gains, params.gravity)?;
        let gain = LqrGain::design(params, aero, &failure, weights, ctrl_dt)?;
        Ok(Self {
            outer,
            reference,
            gain,
            params: params.clone(),
            failure,
            gains: inner_gains,
            chi,
        })
    }

    pub fn set_reference(&mut self, reference: PositionReference) {
        self.reference = reference;
    }

    pub fn reference(&self) -> &PositionReference {
        &self.reference
    }

    pub fn gain(&self) -> &LqrGain {
        &self.gain
    }
}

impl Autopilot for LqrController {
    fn position_tick(&mut self, t: f64, frame: &SensorFrame) {
        self.outer.tick(t, frame.pos_held, frame.vel, &self.reference);
    }

    fn control_tick(&mut self, _t: f64, frame: &SensorFrame) -> [f64; 4] {
        let cmd = self.outer.command(&self.reference);
        let h = frame.rot.transpose() * cmd.n_d;
        let x = self
            .gain
            .state_from(&self.params, &h, &frame.gyro, &frame.rotor_speeds);
        let deviation = self.gain.deviation(&x);

        let nu = vertical_pseudo_input(
            &self.gains,
            frame.pos_held.z - cmd.z_ref,
            frame.vel.z - cmd.vz_ref,
            cmd.az_ref,
        );
        let r33 = frame.rot[(2, 2)].max(0.2);
        let thrust_total = self.params.mass * (self.params.gravity - nu) / r33;
        let trim_total: f64 = self
            .gain
            .rotors()
            .iter()
            .map(|rotor| self.gain.trim_thrusts[rotor - 1])
            .sum();
        let scale = (thrust_total / trim_total).max(0.0);

        let u_min = self.params.omega_min * self.params.omega_min;
        let u_max = self.params.omega_max * self.params.omega_max;
        let mut omega_cmd = [0.0; 4];
        for (k, rotor) in self.gain.rotors().iter().enumerate() {
            let thrust = scale * self.gain.trim_thrusts[rotor - 1] + deviation[k];
            let u = (thrust / self.params.thrust_coeff).clamp(u_min, u_max);
            omega_cmd[rotor - 1] = u.sqrt();
        }
        omega_cmd
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
