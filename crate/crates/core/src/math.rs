//! Small numeric building blocks shared across the crate: skew matrices,
//! rotation integration, an exactly-discretized second-order low-pass filter
//! and 2x2 eigenvalue real parts.

use nalgebra::{Matrix2, Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat2 = Matrix2<f64>;

/// Standard gravity [m/s^2], inertial z axis points down.
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MathError {
    #[error("filter parameters must be positive: {0}")]
    FilterParams(&'static str),
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a x b`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Pull a nearly-orthonormal matrix back onto SO(3).
///
/// One Newton step of the polar projection, `R (3I - R^T R) / 2`; for the
/// rounding-level defects produced by one integration step this is exact to
/// machine precision.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    r * (Mat3::identity() * 3.0 - r.transpose() * r) * 0.5
}

/// Worst-case deviation of `R` from orthonormality, `max |R^T R - I|`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Advance a rotation matrix under a constant body rate over `dt` seconds.
///
/// Closed-form Rodrigues exponential `R * exp(skew(omega) * dt)` followed by
/// a re-orthonormalization sweep that absorbs accumulated rounding.
pub fn integrate_rotation(r: &Mat3, omega_body: &Vec3, dt: f64) -> Mat3 {
    let theta = omega_body * dt;
    let angle = theta.norm();
    let exp = if angle < 1e-12 {
        Mat3::identity() + skew(&theta)
    } else {
        let axis = theta / angle;
        let k = skew(&axis);
        Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
    };
    orthonormalize(&(r * exp))
}

/// Second-order unity-DC-gain low-pass filter.
///
/// The continuous prototype `wc^2 / (s^2 + 2 zeta wc s + wc^2)` is
/// discretized exactly under a zero-order hold, so the step response at the
/// sample instants matches the analytic continuous response to rounding
/// error. State is `[y, ydot]`.
#[derive(Debug, Clone)]
pub struct LowPassFilter2 {
    omega_c: f64,
    damping: f64,
    dt: f64,
    state: [f64; 2],
    // discrete propagator: state' = ad * state + bd * input
    ad: [[f64; 2]; 2],
    bd: [f64; 2],
}

impl LowPassFilter2 {
    pub fn new(omega_c: f64, damping: f64, dt: f64) -> Result<Self, MathError> {
        if !(omega_c > 0.0) {
            return Err(MathError::FilterParams("cutoff omega_c"));
        }
        if !(damping > 0.0) {
            return Err(MathError::FilterParams("damping ratio"));
        }
        if !(dt > 0.0) {
            return Err(MathError::FilterParams("sample period"));
        }
        let (ad, bd) = Self::discretize(omega_c, damping, dt);
        Ok(Self { omega_c, damping, dt, state: [0.0; 2], ad, bd })
    }

    /// Exact matrix exponential of the companion form
    /// `A = [[0, 1], [-wc^2, -2 zeta wc]]` plus the zero-order-hold input map
    /// `B_d = A^-1 (A_d - I) B` with `B = [0, wc^2]`.
    fn discretize(wc: f64, zeta: f64, dt: f64) -> ([[f64; 2]; 2], [f64; 2]) {
        let a = zeta * wc;
        let disc = zeta * zeta - 1.0;
        let e = (-a * dt).exp();
        // c = cos/cosh of the damped frequency, s_over_w = sin/sinh over it
        let (c, s_over_w) = if disc.abs() < 1e-12 {
            (1.0, dt)
        } else if disc > 0.0 {
            let w = wc * disc.sqrt();
            ((w * dt).cosh(), (w * dt).sinh() / w)
        } else {
            let w = wc * (-disc).sqrt();
            ((w * dt).cos(), (w * dt).sin() / w)
        };
        let ad = [
            [e * (c + a * s_over_w), e * s_over_w],
            [e * (-wc * wc * s_over_w), e * (c - a * s_over_w)],
        ];
        // A^-1 = [[-2 zeta wc, -1], [wc^2, 0]] / wc^2, so B_d collapses to:
        let bd = [1.0 - ad[1][1] - 2.0 * a * ad[0][1], wc * wc * ad[0][1]];
        (ad, bd)
    }

    /// Process one input sample, returning the new filter output.
    pub fn update(&mut self, x: f64) -> f64 {
        let [y, yd] = self.state;
        self.state = [
            self.ad[0][0] * y + self.ad[0][1] * yd + self.bd[0] * x,
            self.ad[1][0] * y + self.ad[1][1] * yd + self.bd[1] * x,
        ];
        self.state[0]
    }

    pub fn value(&self) -> f64 {
        self.state[0]
    }

    /// Set the internal state to the steady-state response for input `x`.
    pub fn reset_to(&mut self, x: f64) {
        self.state = [x, 0.0];
    }

    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }
}

/// Real parts of the eigenvalues of a 2x2 matrix, computed from trace and
/// determinant so that sign symmetries are preserved bit-exactly.
/// Returned with the larger real part first.
pub fn eig2_real_parts(m: &Mat2) -> (f64, f64) {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        ((tr + s) / 2.0, (tr - s) / 2.0)
    } else {
        (tr / 2.0, tr / 2.0)
    }
}

/// Wraps an angle to the interval (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}
