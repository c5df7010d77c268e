//! Equilibrium and internal-dynamics analysis for flight with rotor
//! failures.
//!
//! With two opposing rotors lost, the vehicle spins about a tilted axis and
//! only altitude plus one lateral direction remain controllable. The choice
//! of the lateral output direction (the tilt-axis angle `chi`) decides
//! whether the uncontrolled internal motion is stable and how much control
//! authority the remaining rotor pair retains. This module computes the
//! spinning equilibrium, the linearized internal dynamics and their
//! eigenvalues, an actuation-effectiveness ratio, a verdict for each
//! candidate angle, and the coordinate change between physical states and
//! the normal form used by the controller. The single-rotor-failure
//! counterpart (rotor mixing weights and scalar internal dynamics) lives
//! here as well.

use crate::math::{eig2_real_parts, Mat2, Vec3};
use crate::vehicle::{
    FailureConfig, ModelError, VehicleParams, PITCH_SIGN, ROLL_SIGN, YAW_SIGN,
};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StabilityError {
    #[error("thrust axis is horizontal or inverted (h1^2 + h2^2 >= 1)")]
    HorizontalThrustAxis,
    #[error("tilt-axis angle {chi_deg:.3} deg is singular for this configuration")]
    SingularChi { chi_deg: f64 },
    #[error("rotor mixing system is singular (residual {residual:.3e})")]
    SingularMix { residual: f64 },
    #[error("function requires a double-rotor or single-rotor failure configuration")]
    WrongFailureKind,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tilt-axis angle at which the lateral moment authority of an opposing
/// rotor pair vanishes: `atan2(G_q, G_p)` in the roll/pitch effectiveness
/// plane [rad].
pub fn singular_tilt_angle(params: &VehicleParams) -> f64 {
    params.g_q().atan2(params.g_p())
}

/// Spinning relaxed-hover equilibrium for a double rotor failure.
#[derive(Debug, Clone, Copy)]
pub struct DoubleTrim {
    /// Steady yaw rate [rad/s].
    pub yaw_rate: f64,
    /// Steady speed of each surviving rotor [rad/s].
    pub rotor_speed: f64,
    /// Internal coordinates at the equilibrium.
    pub eta: [f64; 3],
    /// Vertical-velocity weight in the third internal coordinate at the
    /// level attitude [s/m].
    pub mu: f64,
}

/// Equilibrium of the spinning relaxed hover: rotor thrust carries the
/// weight, rotor drag torque balances aerodynamic yaw damping.
pub fn double_trim(params: &VehicleParams, s_n: f64) -> DoubleTrim {
    let yaw_rate =
        -s_n * params.mass * params.gravity * params.torque_ratio / params.yaw_damping;
    DoubleTrim {
        yaw_rate,
        rotor_speed: params.hover_speed_pair(),
        eta: [0.0, 0.0, yaw_rate],
        mu: -params.mass * params.torque_ratio / params.inertia_z,
    }
}

/// Rate-coupling coefficients of the lateral internal dynamics, evaluated
/// at yaw rate `r`: gyroscopic body coupling plus the net rotor spin.
fn rate_couplings(params: &VehicleParams, s_n: f64, r: f64) -> (f64, f64) {
    let a_x = (params.inertia_y - params.inertia_z) / params.inertia_x;
    let a_y = (params.inertia_z - params.inertia_x) / params.inertia_y;
    let k_x = params.rotor_inertia / params.inertia_x;
    let k_y = params.rotor_inertia / params.inertia_y;
    let w = params.hover_speed_pair();
    let bx = a_x * r - 2.0 * k_x * w * s_n;
    let by = a_y * r + 2.0 * k_y * w * s_n;
    (bx, by)
}

fn check_chi(params: &VehicleParams, chi_abs: f64) -> Result<f64, StabilityError> {
    let zeta = singular_tilt_angle(params);
    let sd = (chi_abs - zeta).sin();
    if sd.abs() < 1e-9 {
        return Err(StabilityError::SingularChi {
            chi_deg: chi_abs.to_degrees(),
        });
    }
    Ok(sd)
}

/// Linearization of the lateral internal dynamics about the spinning
/// equilibrium for lateral output direction `chi_abs` (unsigned tilt-axis
/// angle [rad]).
///
/// The sign conventions follow the surviving pair: `s_l` is the lateral
/// output sign (+1 for rotors 1 and 3, -1 for rotors 2 and 4) and `s_n`
/// the spin direction sign. Flipping `s_n` alone negates the equilibrium
/// spin and therefore the real parts of the eigenvalues exactly.
pub fn lateral_dynamics_matrix(
    params: &VehicleParams,
    s_l: f64,
    s_n: f64,
    chi_abs: f64,
) -> Result<Mat2, StabilityError> {
    let zeta = singular_tilt_angle(params);
    let sd = check_chi(params, chi_abs)?;
    let cd = (chi_abs - zeta).cos();
    let r_bar = double_trim(params, s_n).yaw_rate;
    let (bx, by) = rate_couplings(params, s_n, r_bar);
    let (sz, cz) = (zeta.sin(), zeta.cos());
    let (sc, cc) = (chi_abs.sin(), chi_abs.cos());
    let k = s_l / sd;
    let lambda_t = bx * (sz * sz) - by * (cz * cz);
    let a11 = -(k * (r_bar * cd));
    let a12 = -k;
    let a21 = -(k * (r_bar * lambda_t));
    let a22 = k * (by * cz * cc - bx * sz * sc);
    Ok(Mat2::new(a11, a12, a21, a22))
}

/// Ratio of the weakest useful lateral moment authority at angle `chi_abs`
/// to the weakest single-axis authority of the intact vehicle. Values
/// below one mean the chosen direction costs more control margin than the
/// nominal axes offer.
pub fn effectiveness_ratio(params: &VehicleParams, chi_abs: f64) -> f64 {
    let zeta = singular_tilt_angle(params);
    let g_p = params.g_p();
    let g_q = params.g_q();
    (g_p / zeta.cos()) * (chi_abs - zeta).sin().abs() / g_p.min(g_q)
}

/// Outcome of assessing one tilt-axis angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Internal dynamics stable and effectiveness ratio at least one.
    Admissible,
    /// Internal dynamics have an eigenvalue with positive real part.
    Unstable,
    /// Stable but the effectiveness ratio is below one.
    LowEffectiveness,
    /// The lateral output direction is uncontrollable at this angle.
    Singular,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Admissible => "admissible",
            Verdict::Unstable => "unstable",
            Verdict::LowEffectiveness => "low_effectiveness",
            Verdict::Singular => "singular",
        };
        f.write_str(s)
    }
}

/// Full assessment of one tilt-axis angle.
#[derive(Debug, Clone, Copy)]
pub struct AxisAssessment {
    pub chi_abs: f64,
    /// Real parts of the two internal-dynamics eigenvalues, larger first.
    pub re_eigs: (f64, f64),
    pub ratio: f64,
    pub verdict: Verdict,
}

/// Assess one tilt-axis angle: eigenvalues of the lateral internal
/// dynamics, effectiveness ratio, and the resulting verdict. Instability
/// outranks low effectiveness.
pub fn classify_axis(
    params: &VehicleParams,
    s_l: f64,
    s_n: f64,
    chi_abs: f64,
) -> AxisAssessment {
    let ratio = effectiveness_ratio(params, chi_abs);
    match lateral_dynamics_matrix(params, s_l, s_n, chi_abs) {
        Err(_) => AxisAssessment {
            chi_abs,
            re_eigs: (f64::NAN, f64::NAN),
            ratio,
            verdict: Verdict::Singular,
        },
        Ok(a1) => {
            let re_eigs = eig2_real_parts(&a1);
            let verdict = if re_eigs.0 > 1e-9 {
                Verdict::Unstable
            } else if ratio < 1.0 {
                Verdict::LowEffectiveness
            } else {
                Verdict::Admissible
            };
            AxisAssessment {
                chi_abs,
                re_eigs,
                ratio,
                verdict,
            }
        }
    }
}

/// Default sweep grid: half-degree steps across the non-singular range
/// `(zeta, zeta + pi)` [rad].
pub fn default_sweep_grid(params: &VehicleParams) -> Vec<f64> {
    let zeta = singular_tilt_angle(params);
    let step = 0.5f64.to_radians();
    (1..=359).map(|k| zeta + k as f64 * step).collect()
}

/// Assess every angle in `grid`.
pub fn sweep_axis(
    params: &VehicleParams,
    s_l: f64,
    s_n: f64,
    grid: &[f64],
) -> Vec<AxisAssessment> {
    grid.iter()
        .map(|&chi| classify_axis(params, s_l, s_n, chi))
        .collect()
}

/// Contiguous admissible intervals of a sweep, as inclusive angle pairs
/// [rad].
pub fn admissible_intervals(sweep: &[AxisAssessment]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut last = 0.0;
    for a in sweep {
        if a.verdict == Verdict::Admissible {
            if start.is_none() {
                start = Some(a.chi_abs);
            }
            last = a.chi_abs;
        } else if let Some(s) = start.take() {
            out.push((s, last));
        }
    }
    if let Some(s) = start {
        out.push((s, last));
    }
    out
}

/// Physical inner-loop state: altitude channel, reduced attitude and body
/// rates. The vertical component of the reduced attitude is implied by
/// `h1, h2` on the lower hemisphere (`h3 < 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerState {
    pub z: f64,
    pub vz: f64,
    pub h1: f64,
    pub h2: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

/// Normal-form coordinates: `xi` collects the controlled chain (altitude,
/// vertical speed, lateral output, lateral output rate), `eta` the internal
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalForm {
    pub xi: [f64; 4],
    pub eta: [f64; 3],
}

fn h3_from_lateral(h1: f64, h2: f64) -> Result<f64, StabilityError> {
    let s = 1.0 - h1 * h1 - h2 * h2;
    if s < 1e-12 {
        return Err(StabilityError::HorizontalThrustAxis);
    }
    Ok(-s.sqrt())
}

/// Map the physical inner state to normal-form coordinates for lateral
/// output direction `chi_abs` [rad].
pub fn to_normal_form(
    params: &VehicleParams,
    s_l: f64,
    s_n: f64,
    chi_abs: f64,
    x: &InnerState,
) -> Result<NormalForm, StabilityError> {
    check_chi(params, chi_abs)?;
    let zeta = singular_tilt_angle(params);
    let chi = s_l * chi_abs;
    let (sc, cc) = (chi.sin(), chi.cos());
    let h3 = h3_from_lateral(x.h1, x.h2)?;
    let eta1 = -x.h1 * sc + x.h2 * cc;
    let eta2 = x.q * zeta.cos() - s_l * x.p * zeta.sin();
    let mu = params.mass * params.torque_ratio / (params.inertia_z * h3);
    let eta3 = x.r + s_n * mu * x.vz;
    let y2 = x.h1 * cc + x.h2 * sc;
    let y2dot = h3 * (x.p * sc - x.q * cc) + x.r * eta1;
    Ok(NormalForm {
        xi: [x.z, x.vz, y2, y2dot],
        eta: [eta1, eta2, eta3],
    })
}

/// Invert [`to_normal_form`].
pub fn from_normal_form(
    params: &VehicleParams,
    s_l: f64,
    s_n: f64,
    chi_abs: f64,
    nf: &NormalForm,
) -> Result<InnerState, StabilityError> {
    let zeta = singular_tilt_angle(params);
    let sd = check_chi(params, chi_abs)?;
    let chi = s_l * chi_abs;
    let (sc, cc) = (chi.sin(), chi.cos());
    let [z, vz, y2, y2dot] = nf.xi;
    let [eta1, eta2, eta3] = nf.eta;
    let h1 = y2 * cc - eta1 * sc;
    let h2 = y2 * sc + eta1 * cc;
    let h3 = h3_from_lateral(h1, h2)?;
    let mu = params.mass * params.torque_ratio / (params.inertia_z * h3);
    let r = eta3 - s_n * mu * vz;
    let det = h3 * s_l * sd;
    let rhs1 = y2dot - r * eta1;
    let p = (zeta.cos() * rhs1 + h3 * cc * eta2) / det;
    let q = (s_l * zeta.sin() * rhs1 + h3 * sc * eta2) / det;
    Ok(InnerState {
        z,
        vz,
        h1,
        h2,
        p,
        q,
        r,
    })
}

/// Internal (zero) dynamics of the double-failure configuration: the flow
/// of `eta` with both controlled outputs pinned at zero.
pub fn zero_dynamics_double(
    params: &VehicleParams,
    s_l: f64,
    s_n: f64,
    chi_abs: f64,
    eta: &[f64; 3],
) -> Result<[f64; 3], StabilityError> {
    let zeta = singular_tilt_angle(params);
    let sd = check_chi(params, chi_abs)?;
    let [eta1, eta2, eta3] = *eta;
    let s = 1.0 - eta1 * eta1;
    if s < 1e-12 {
        return Err(StabilityError::HorizontalThrustAxis);
    }
    let h3 = -s.sqrt();
    let chi = s_l * chi_abs;
    let (sc, cc) = (chi.sin(), chi.cos());
    let r = eta3;
    let det = h3 * s_l * sd;
    let p = (-(zeta.cos() * (r * eta1)) + h3 * cc * eta2) / det;
    let q = (-(s_l * zeta.sin() * (r * eta1)) + h3 * sc * eta2) / det;
    let (bx, by) = rate_couplings(params, s_n, r);
    let a_z = (params.inertia_x - params.inertia_y) / params.inertia_z;
    let gam = params.yaw_damping / params.inertia_z;
    let d1 = h3 * (p * cc + q * sc);
    let d2 = zeta.cos() * (p * by) - s_l * zeta.sin() * (q * bx);
    let d3 = a_z * (p * q) - gam * r
        + s_n * (params.gravity * params.mass * params.torque_ratio)
            / (params.inertia_z * h3);
    Ok([d1, d2, d3])
}

/// Mixing weights `mu = [mu_vz, mu_p, mu_q]` that make the scalar internal
/// coordinate `r + mu_vz Vz + mu_p p + mu_q q` of the single-failure
/// configuration independent of every surviving rotor input. Solved from
/// the input-gradient cancellation system; the residual is checked.
pub fn single_mix(
    params: &VehicleParams,
    failure: &FailureConfig,
    h3: f64,
) -> Result<[f64; 3], StabilityError> {
    let FailureConfig::SingleRotor { .. } = failure else {
        return Err(StabilityError::WrongFailureKind);
    };
    let kappa = params.thrust_coeff;
    let b = params.arm_length;
    let beta = params.arm_angle;

    let col_vz = h3 * kappa / params.mass;
    let col_p = kappa * b * beta.sin() / params.inertia_x;
    let col_q = kappa * b * beta.cos() / params.inertia_y;

    let rotors = failure.active_rotors();
    let mut a = Matrix3::zeros();
    let mut rhs = Vec3::zeros();
    for (row, &rotor) in rotors.iter().enumerate() {
        let i = rotor - 1;
        a[(row, 0)] = col_vz;
        a[(row, 1)] = ROLL_SIGN[i] * col_p;
        a[(row, 2)] = PITCH_SIGN[i] * col_q;
        rhs[row] = -YAW_SIGN[i] * kappa * params.torque_ratio / params.inertia_z;
    }
    let lu = a.lu();
    let mu = lu
        .solve(&rhs)
        .ok_or(StabilityError::SingularMix { residual: f64::INFINITY })?;
    let residual = (a * mu - rhs).norm();
    if residual > 1e-10 {
        return Err(StabilityError::SingularMix { residual });
    }
    Ok([mu.x, mu.y, mu.z])
}

/// Scalar internal dynamics of the single-failure configuration with the
/// thrust axis held along the body direction `(n_x, n_y)` and altitude
/// held: returns `d eta1 / dt`.
pub fn zero_dynamics_single(
    params: &VehicleParams,
    failure: &FailureConfig,
    n_xy: (f64, f64),
    eta1: f64,
) -> Result<f64, StabilityError> {
    let (n_x, n_y) = n_xy;
    let h3 = h3_from_lateral(n_x, n_y)?;
    let [mu_vz, mu_p, mu_q] = single_mix(params, failure, h3)?;
    let gam = params.yaw_damping / params.inertia_z;
    let a_x = (params.inertia_y - params.inertia_z) / params.inertia_x;
    let a_y = (params.inertia_z - params.inertia_x) / params.inertia_y;
    let a_z = (params.inertia_x - params.inertia_y) / params.inertia_z;
    let theta = 1.0 + (n_x * mu_p + n_y * mu_q) / h3;
    let pi = a_z * n_x * n_y / h3 + a_x * n_y * mu_p + a_y * n_x * mu_q;
    Ok(-(gam / theta) * eta1 + (pi / (h3 * theta * theta)) * eta1 * eta1
        + params.gravity * mu_vz)
}

/// Equilibrium spin rate coordinate and the local slope of the scalar
/// internal dynamics for the single-failure configuration.
pub fn single_equilibrium(
    params: &VehicleParams,
    failure: &FailureConfig,
    n_xy: (f64, f64),
) -> Result<(f64, f64), StabilityError> {
    let (n_x, n_y) = n_xy;
    let h3 = h3_from_lateral(n_x, n_y)?;
    let [mu_vz, mu_p, mu_q] = single_mix(params, failure, h3)?;
    let gam = params.yaw_damping / params.inertia_z;
    let a_x = (params.inertia_y - params.inertia_z) / params.inertia_x;
    let a_y = (params.inertia_z - params.inertia_x) / params.inertia_y;
    let a_z = (params.inertia_x - params.inertia_y) / params.inertia_z;
    let theta = 1.0 + (n_x * mu_p + n_y * mu_q) / h3;
    let pi = a_z * n_x * n_y / h3 + a_x * n_y * mu_p + a_y * n_x * mu_q;
    let c2 = pi / (h3 * theta * theta);
    let c1 = -gam / theta;
    let c0 = params.gravity * mu_vz;
    let eta1 = if c2.abs() < 1e-15 {
        -c0 / c1
    } else {
        // root of c2 x^2 + c1 x + c0 that continues the linear solution as
        // the quadratic term vanishes, via the numerically stable form
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc < 0.0 {
            return Err(StabilityError::SingularMix { residual: disc });
        }
        let s = if c1 >= 0.0 { 1.0 } else { -1.0 };
        c0 / (-(c1 + s * disc.sqrt()) / 2.0)
    };
    let slope = c1 + 2.0 * c2 * eta1;
    Ok((eta1, slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p() -> VehicleParams {
        VehicleParams::default()
    }

    const S_L: f64 = 1.0;
    const S_N: f64 = -1.0;

    #[test]
    fn singular_angle_matches_effectiveness_plane() {
        let params = p();
        let zeta = singular_tilt_angle(&params);
        assert_relative_eq!(zeta, 0.721569284493236, epsilon = 1e-12);
        assert_relative_eq!(zeta.tan(), params.g_q() / params.g_p(), max_relative = 1e-12);
    }

    #[test]
    fn trim_matches_torque_balance() {
        let trim = double_trim(&p(), S_N);
        assert_relative_eq!(trim.yaw_rate, 26.814, max_relative = 1e-12);
        assert_relative_eq!(trim.rotor_speed, 1028.8087132314988, max_relative = 1e-12);
        assert_relative_eq!(trim.mu, -1.6269841269841268, max_relative = 1e-12);
        assert_eq!(trim.eta[0], 0.0);
        assert_eq!(trim.eta[2], trim.yaw_rate);
    }

    #[test]
    fn lateral_matrix_frozen_values_at_105_deg() {
        let a1 = lateral_dynamics_matrix(&p(), S_L, S_N, 105f64.to_radians()).unwrap();
        assert_relative_eq!(a1[(0, 0)], -13.27728, max_relative = 1e-6);
        assert_relative_eq!(a1[(0, 1)], -1.1158789, max_relative = 1e-6);
        assert_relative_eq!(a1[(1, 0)], 319.69368, max_relative = 1e-6);
        assert_relative_eq!(a1[(1, 1)], 6.4022986, max_relative = 1e-6);
        let (re1, re2) = eig2_real_parts(&a1);
        assert_relative_eq!(re1, -3.4374905, max_relative = 1e-6);
        assert_relative_eq!(re2, -3.4374905, max_relative = 1e-6);
    }

    #[test]
    fn stability_changes_across_the_expected_angles() {
        let params = p();
        for deg in [70.0, 90.0, 105.0, 127.0] {
            let a = classify_axis(&params, S_L, S_N, (deg as f64).to_radians());
            assert!(a.re_eigs.0 < 0.0, "{deg} deg should be stable");
        }
        for deg in [128.0, 140.0, 180.0] {
            let a = classify_axis(&params, S_L, S_N, (deg as f64).to_radians());
            assert!(a.re_eigs.0 > 0.0, "{deg} deg should be unstable");
            assert_eq!(a.verdict, Verdict::Unstable);
        }
    }

    #[test]
    fn effectiveness_ratio_frozen_values() {
        let params = p();
        assert_relative_eq!(
            effectiveness_ratio(&params, 70f64.to_radians()),
            0.7259966344744097,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            effectiveness_ratio(&params, 90f64.to_radians()),
            1.1365597155661888,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            effectiveness_ratio(&params, 105f64.to_radians()),
            1.3566514274876602,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            effectiveness_ratio(&params, 180f64.to_radians()),
            1.0,
            max_relative = 1e-9
        );
        // unity crossing of the ratio
        let lo = 82.68574925547404f64;
        assert!(effectiveness_ratio(&params, (lo - 0.01).to_radians()) < 1.0);
        assert!(effectiveness_ratio(&params, (lo + 0.01).to_radians()) > 1.0);
    }

    #[test]
    fn verdicts_follow_ratio_and_stability() {
        let params = p();
        let v = |deg: f64| classify_axis(&params, S_L, S_N, deg.to_radians()).verdict;
        assert_eq!(v(70.0), Verdict::LowEffectiveness);
        assert_eq!(v(82.0), Verdict::LowEffectiveness);
        assert_eq!(v(83.0), Verdict::Admissible);
        assert_eq!(v(90.0), Verdict::Admissible);
        assert_eq!(v(105.0), Verdict::Admissible);
        assert_eq!(v(140.0), Verdict::Unstable);
        assert_eq!(v(180.0), Verdict::Unstable);
        let zeta_deg = singular_tilt_angle(&params).to_degrees();
        assert_eq!(v(zeta_deg), Verdict::Singular);
    }

    #[test]
    fn sweep_yields_one_admissible_interval() {
        let params = p();
        let grid = default_sweep_grid(&params);
        assert_eq!(grid.len(), 359);
        let sweep = sweep_axis(&params, S_L, S_N, &grid);
        assert!(sweep.iter().all(|a| a.verdict != Verdict::Singular));
        let intervals = admissible_intervals(&sweep);
        assert_eq!(intervals.len(), 1, "intervals: {intervals:?}");
        let (lo, hi) = intervals[0];
        let (lo_deg, hi_deg) = (lo.to_degrees(), hi.to_degrees());
        assert!((82.0..84.0).contains(&lo_deg), "lower edge {lo_deg}");
        assert!((126.5..128.5).contains(&hi_deg), "upper edge {hi_deg}");
    }

    #[test]
    fn spin_direction_flip_negates_real_parts_exactly() {
        let params = p();
        for &chi in default_sweep_grid(&params).iter() {
            let fwd = classify_axis(&params, S_L, -1.0, chi).re_eigs;
            let rev = classify_axis(&params, S_L, 1.0, chi).re_eigs;
            assert_eq!(fwd.0.to_bits(), (-rev.1).to_bits(), "chi {chi}");
            assert_eq!(fwd.1.to_bits(), (-rev.0).to_bits(), "chi {chi}");
        }
    }

    #[test]
    fn zero_dynamics_vanish_at_the_equilibrium() {
        let params = p();
        let trim = double_trim(&params, S_N);
        for deg in [70.0, 90.0, 105.0, 140.0] {
            let d = zero_dynamics_double(
                &params,
                S_L,
                S_N,
                (deg as f64).to_radians(),
                &trim.eta,
            )
            .unwrap();
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!(norm < 1e-12, "residual {norm} at {deg} deg");
        }
    }

    /// Central-difference Jacobian of the internal dynamics flow.
    fn fd_jacobian(
        params: &VehicleParams,
        s_l: f64,
        s_n: f64,
        chi: f64,
        eta: &[f64; 3],
    ) -> [[f64; 3]; 3] {
        let mut jac = [[0.0; 3]; 3];
        for col in 0..3 {
            let h = 1e-6 * eta[col].abs().max(1.0);
            let mut ep = *eta;
            let mut em = *eta;
            ep[col] += h;
            em[col] -= h;
            let fp = zero_dynamics_double(params, s_l, s_n, chi, &ep).unwrap();
            let fm = zero_dynamics_double(params, s_l, s_n, chi, &em).unwrap();
            for row in 0..3 {
                jac[row][col] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        jac
    }

    #[test]
    fn closed_form_linearization_matches_finite_differences() {
        let params = p();
        let trim = double_trim(&params, S_N);
        let gam = params.yaw_damping / params.inertia_z;
        for deg in [70.0, 90.0, 105.0, 120.0, 140.0, 170.0] {
            let chi = (deg as f64).to_radians();
            let a1 = lateral_dynamics_matrix(&params, S_L, S_N, chi).unwrap();
            let jac = fd_jacobian(&params, S_L, S_N, chi, &trim.eta);
            for row in 0..2 {
                for col in 0..2 {
                    assert_relative_eq!(
                        jac[row][col],
                        a1[(row, col)],
                        max_relative = 1e-6,
                        epsilon = 1e-6
                    );
                }
            }
            for k in 0..2 {
                assert!(jac[k][2].abs() < 1e-6, "coupling into eta3: {}", jac[k][2]);
                assert!(jac[2][k].abs() < 1e-6, "coupling from eta{k}: {}", jac[2][k]);
            }
            assert_relative_eq!(jac[2][2], -gam, max_relative = 1e-6);
        }
    }

    #[test]
    fn normal_form_roundtrip_is_identity() {
        let params = p();
        let chi = 105f64.to_radians();
        let x = InnerState {
            z: -1.2,
            vz: 0.3,
            h1: 0.4,
            h2: -0.2,
            p: 1.5,
            q: -2.0,
            r: 20.0,
        };
        let nf = to_normal_form(&params, S_L, S_N, chi, &x).unwrap();
        let back = from_normal_form(&params, S_L, S_N, chi, &nf).unwrap();
        assert_relative_eq!(back.h1, x.h1, epsilon = 1e-12);
        assert_relative_eq!(back.h2, x.h2, epsilon = 1e-12);
        assert_relative_eq!(back.p, x.p, epsilon = 1e-12);
        assert_relative_eq!(back.q, x.q, epsilon = 1e-12);
        assert_relative_eq!(back.r, x.r, epsilon = 1e-12);
    }

    #[test]
    fn transforms_reject_horizontal_axis_and_singular_angle() {
        let params = p();
        let x = InnerState {
            z: 0.0,
            vz: 0.0,
            h1: 0.8,
            h2: 0.7,
            p: 0.0,
            q: 0.0,
            r: 0.0,
        };
        assert!(matches!(
            to_normal_form(&params, S_L, S_N, 105f64.to_radians(), &x),
            Err(StabilityError::HorizontalThrustAxis)
        ));
        let zeta = singular_tilt_angle(&params);
        let ok = InnerState { h1: 0.1, h2: 0.0, ..x };
        assert!(matches!(
            to_normal_form(&params, S_L, S_N, zeta, &ok),
            Err(StabilityError::SingularChi { .. })
        ));
    }

    #[test]
    fn single_mix_matches_closed_form() {
        let params = p();
        let h3 = -1.0;
        let mu4 = single_mix(&params, &FailureConfig::SingleRotor { failed: 4 }, h3).unwrap();
        let s = params.torque_ratio;
        let expect_vz = -params.mass * s / (params.inertia_z * h3);
        let expect_p =
            -s * params.inertia_x / (params.inertia_z * params.arm_length * params.arm_angle.sin());
        let expect_q =
            s * params.inertia_y / (params.inertia_z * params.arm_length * params.arm_angle.cos());
        assert_relative_eq!(mu4[0], expect_vz, max_relative = 1e-10);
        assert_relative_eq!(mu4[1], expect_p, max_relative = 1e-10);
        assert_relative_eq!(mu4[2], expect_q, max_relative = 1e-10);

        // the mirrored failure flips every weight except the pitch one
        let mu1 = single_mix(&params, &FailureConfig::SingleRotor { failed: 1 }, h3).unwrap();
        assert_relative_eq!(mu1[0], -expect_vz, max_relative = 1e-10);
        assert_relative_eq!(mu1[1], -expect_p, max_relative = 1e-10);
        assert_relative_eq!(mu1[2], expect_q, max_relative = 1e-10);

        assert!(matches!(
            single_mix(&params, &FailureConfig::Nominal, h3),
            Err(StabilityError::WrongFailureKind)
        ));
    }

    #[test]
    fn single_internal_dynamics_equilibrium_is_stable_for_level_target() {
        let params = p();
        let failure = FailureConfig::SingleRotor { failed: 4 };
        let (eta1, slope) = single_equilibrium(&params, &failure, (0.0, 0.0)).unwrap();
        assert_relative_eq!(eta1, 26.814, max_relative = 1e-9);
        assert_relative_eq!(slope, -0.5952380952380952, max_relative = 1e-9);
        // the flow vanishes at the computed equilibrium
        let d = zero_dynamics_single(&params, &failure, (0.0, 0.0), eta1).unwrap();
        assert!(d.abs() < 1e-9, "residual {d}");
        // and points back toward it from both sides
        assert!(zero_dynamics_single(&params, &failure, (0.0, 0.0), eta1 + 1.0).unwrap() < 0.0);
        assert!(zero_dynamics_single(&params, &failure, (0.0, 0.0), eta1 - 1.0).unwrap() > 0.0);
    }

    #[test]
    fn single_equilibrium_with_offset_target_stays_finite_and_stable() {
        let params = p();
        let failure = FailureConfig::SingleRotor { failed: 4 };
        let (eta1, slope) = single_equilibrium(&params, &failure, (0.05, -0.03)).unwrap();
        assert!(eta1.is_finite());
        assert!(slope < 0.0);
        let d = zero_dynamics_single(&params, &failure, (0.05, -0.03), eta1).unwrap();
        assert!(d.abs() < 1e-9, "residual {d}");
    }

    proptest! {
        #[test]
        fn normal_form_roundtrips_everywhere(
            z in -5.0f64..5.0,
            vz in -3.0f64..3.0,
            h1 in -0.6f64..0.6,
            h2 in -0.6f64..0.6,
            pq in proptest::array::uniform2(-8.0f64..8.0),
            r in -40.0f64..40.0,
            deg in 50.0f64..175.0,
            s_l_neg in proptest::bool::ANY,
        ) {
            let params = p();
            let chi = deg.to_radians();
            prop_assume!((chi - singular_tilt_angle(&params)).sin().abs() > 0.05);
            let s_l = if s_l_neg { -1.0 } else { 1.0 };
            let s_n = -s_l;
            let x = InnerState { z, vz, h1, h2, p: pq[0], q: pq[1], r };
            let nf = to_normal_form(&params, s_l, s_n, chi, &x).unwrap();
            let back = from_normal_form(&params, s_l, s_n, chi, &nf).unwrap();
            prop_assert!((back.z - x.z).abs() < 1e-9);
            prop_assert!((back.vz - x.vz).abs() < 1e-9);
            prop_assert!((back.h1 - x.h1).abs() < 1e-9);
            prop_assert!((back.h2 - x.h2).abs() < 1e-9);
            prop_assert!((back.p - x.p).abs() < 1e-9);
            prop_assert!((back.q - x.q).abs() < 1e-9);
            prop_assert!((back.r - x.r).abs() < 1e-9);
        }

        #[test]
        fn forward_transform_roundtrips_from_normal_side(
            xi in proptest::array::uniform4(-2.0f64..2.0),
            eta12 in proptest::array::uniform2(-1.5f64..1.5),
            eta3 in -40.0f64..40.0,
            deg in 50.0f64..175.0,
        ) {
            let params = p();
            let chi = deg.to_radians();
            prop_assume!((chi - singular_tilt_angle(&params)).sin().abs() > 0.05);
            // keep the implied attitude on the lower hemisphere
            let y2 = 0.3 * xi[2];
            let nf = NormalForm {
                xi: [xi[0], xi[1], y2, xi[3]],
                eta: [0.3 * eta12[0], eta12[1], eta3],
            };
            let x = from_normal_form(&params, 1.0, -1.0, chi, &nf).unwrap();
            let again = to_normal_form(&params, 1.0, -1.0, chi, &x).unwrap();
            for k in 0..4 {
                prop_assert!((again.xi[k] - nf.xi[k]).abs() < 1e-9);
            }
            for k in 0..3 {
                prop_assert!((again.eta[k] - nf.eta[k]).abs() < 1e-9);
            }
        }
    }
}
