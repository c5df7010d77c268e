//! Closed-loop behavior of the linear-quadratic baseline in the simulator.

use quadftc::controller::{InnerGains, OuterGains, PositionReference};
use quadftc::lqr::{LqrController, LqrWeights};
use quadftc::sim::{run_scenario, SimConfig, SimState};
use quadftc::vehicle::{AeroDisturbance, FailureConfig, VehicleParams};
use quadftc::Vec3;

fn baseline(params: &VehicleParams, failure: FailureConfig) -> LqrController {
    LqrController::new(
        params,
        failure,
        &AeroDisturbance::default(),
        &LqrWeights::default(),
        OuterGains::default(),
        InnerGains::default(),
        105.0f64.to_radians(),
        2e-3,
        PositionReference::hold(Vec3::zeros()),
    )
    .unwrap()
}

fn hover_case(failure: FailureConfig, duration: f64, pos_bound: f64, tilt_bound: f64) {
    let params = VehicleParams::default();
    let mut pilot = baseline(&params, failure);
    let init = SimState::at_equilibrium(&params, &failure, Vec3::zeros());
    let trace = run_scenario(
        &params,
        &failure,
        &AeroDisturbance::default(),
        &SimConfig::default(),
        duration,
        init,
        &|_| Vec3::zeros(),
        &Vec3::new(1.0, 0.0, 0.0),
        &mut pilot,
    )
    .unwrap();
    assert!(!trace.crashed, "{failure:?} crashed: {:?}", trace.crash_cause);
    for row in &trace.rows {
        let err = row.pos.norm();
        assert!(err < pos_bound, "{failure:?} wandered {err} m at t={}", row.t);
        let tilt = (row.h.x * row.h.x + row.h.y * row.h.y).sqrt();
        assert!(tilt < tilt_bound, "{failure:?} tilt {tilt} at t={}", row.t);
    }
}

#[test]
fn two_rotor_hover_stays_bounded() {
    hover_case(
        FailureConfig::DoubleOpposing { active_pair: (1, 3) },
        10.0,
        1.5,
        0.6,
    );
}

#[test]
fn nominal_hover_stays_bounded() {
    hover_case(FailureConfig::Nominal, 10.0, 0.5, 0.3);
}

#[test]
fn single_failure_hover_stays_bounded() {
    hover_case(FailureConfig::SingleRotor { failed: 4 }, 10.0, 1.5, 0.6);
}
