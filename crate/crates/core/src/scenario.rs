//! Batch front end: TOML configuration, mission sequencing, and CSV
//! artifacts.
//!
//! A [`Config`] collects every tunable in one document with defaults that
//! match the built-in vehicle and gain set, so an empty file is a valid
//! hover study. The mission layer moves the position reference through the
//! selected scenario with first-order smoothing, fires the tilt-axis switch,
//! and wraps either controller behind the common autopilot interface.
//! Writers emit trace, summary, and sweep files with a fixed column order
//! and default float formatting, which keeps repeated runs byte-identical.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    CascadedController, ControllerError, FilterSettings, InnerGains, InnerLoop, OuterGains,
    PositionReference,
};
use crate::lqr::{LqrController, LqrError, LqrWeights};
use crate::math::Vec3;
use crate::sim::{
    equilibrium_rotors, run_scenario, Autopilot, SensorFrame, SimConfig, SimError, SimState,
    TraceLog,
};
use crate::stability::{
    classify_axis, default_sweep_grid, single_equilibrium, singular_tilt_angle, AxisAssessment,
};
use crate::vehicle::{AeroDisturbance, FailureConfig, ModelError, VehicleParams};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Baseline(#[from] LqrError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Vehicle parameters as written in config files; the arm azimuth is given
/// in degrees and converted on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSection {
    pub mass: f64,
    pub inertia_x: f64,
    pub inertia_y: f64,
    pub inertia_z: f64,
    pub rotor_inertia: f64,
    pub arm_length: f64,
    pub arm_angle_deg: f64,
    pub yaw_damping: f64,
    pub thrust_coeff: f64,
    pub torque_ratio: f64,
    pub rotor_tau: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub gravity: f64,
}

impl Default for VehicleSection {
    fn default() -> Self {
        let p = VehicleParams::default();
        Self {
            mass: p.mass,
            inertia_x: p.inertia_x,
            inertia_y: p.inertia_y,
            inertia_z: p.inertia_z,
            rotor_inertia: p.rotor_inertia,
            arm_length: p.arm_length,
            arm_angle_deg: p.arm_angle.to_degrees(),
            yaw_damping: p.yaw_damping,
            thrust_coeff: p.thrust_coeff,
            torque_ratio: p.torque_ratio,
            rotor_tau: p.rotor_tau,
            omega_min: p.omega_min,
            omega_max: p.omega_max,
            gravity: p.gravity,
        }
    }
}

impl VehicleSection {
    pub fn to_params(&self) -> VehicleParams {
        VehicleParams {
            mass: self.mass,
            inertia_x: self.inertia_x,
            inertia_y: self.inertia_y,
            inertia_z: self.inertia_z,
            rotor_inertia: self.rotor_inertia,
            arm_length: self.arm_length,
            arm_angle: self.arm_angle_deg.to_radians(),
            yaw_damping: self.yaw_damping,
            thrust_coeff: self.thrust_coeff,
            torque_ratio: self.torque_ratio,
            rotor_tau: self.rotor_tau,
            omega_min: self.omega_min,
            omega_max: self.omega_max,
            gravity: self.gravity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Hold the origin.
    Hover,
    /// Lateral position step at a fixed time.
    StepTransfer,
    /// Visit a fixed list of setpoints in sequence.
    WaypointTrack,
    /// Hold the origin while a horizontal wind ramps up.
    WindRamp,
    /// Hold the origin and change the lateral output direction in flight.
    ChiSwitch,
    /// No flight: assess the tilt-axis grid and write the region table.
    ChiSweep,
}

/// Everything that distinguishes one run from another besides the vehicle
/// and controller settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Simulated span [s].
    pub duration: f64,
    /// First-order reference smoothing time constant [s]; zero disables.
    pub smoothing_tau: f64,
    /// Step distance along +X [m].
    pub step_distance: f64,
    /// Step instant [s].
    pub step_time: f64,
    /// Setpoint list for waypoint tracking [m].
    pub waypoints: Vec<[f64; 3]>,
    /// Time spent commanding each waypoint [s].
    pub dwell: f64,
    /// Wind speed at t = 0 [m/s].
    pub wind_start: f64,
    /// Wind speed the ramp saturates at [m/s].
    pub wind_end: f64,
    /// Ramp rate [m/s per s].
    pub wind_rate: f64,
    /// Instant of the tilt-axis switch [s].
    pub switch_time: f64,
    /// Tilt-axis magnitude commanded after the switch [deg].
    pub chi_switch_deg: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Hover,
            duration: 10.0,
            smoothing_tau: 1.0,
            step_distance: 3.0,
            step_time: 1.0,
            waypoints: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [1.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0],
                [0.0, 0.0, -0.5],
                [0.0, 0.0, 0.0],
            ],
            dwell: 3.0,
            wind_start: 0.0,
            wind_end: 10.0,
            wind_rate: 0.25,
            switch_time: 5.0,
            chi_switch_deg: 180.0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let nonneg = [
            (self.duration, "scenario.duration"),
            (self.smoothing_tau, "scenario.smoothing_tau"),
            (self.step_time, "scenario.step_time"),
            (self.wind_start, "scenario.wind_start"),
            (self.wind_rate, "scenario.wind_rate"),
            (self.switch_time, "scenario.switch_time"),
        ];
        for (v, name) in nonneg {
            if !v.is_finite() || v < 0.0 {
                let _ = name;
                return Err(ScenarioError::Invalid(
                    "scenario times and rates must be finite and non-negative",
                ));
            }
        }
        if !(self.duration > 0.0) {
            return Err(ScenarioError::Invalid("scenario.duration must be positive"));
        }
        if !self.step_distance.is_finite() {
            return Err(ScenarioError::Invalid("scenario.step_distance must be finite"));
        }
        if !(self.dwell > 0.0) || !self.dwell.is_finite() {
            return Err(ScenarioError::Invalid("scenario.dwell must be positive"));
        }
        if self.wind_end < self.wind_start || !self.wind_end.is_finite() {
            return Err(ScenarioError::Invalid(
                "scenario.wind_end must be finite and at least wind_start",
            ));
        }
        if !self.chi_switch_deg.is_finite() {
            return Err(ScenarioError::Invalid("scenario.chi_switch_deg must be finite"));
        }
        if matches!(self.kind, ScenarioKind::WaypointTrack) {
            if self.waypoints.is_empty() {
                return Err(ScenarioError::Invalid("scenario.waypoints must not be empty"));
            }
            if self
                .waypoints
                .iter()
                .any(|w| w.iter().any(|v| !v.is_finite()))
            {
                return Err(ScenarioError::Invalid("scenario.waypoints must be finite"));
            }
        }
        Ok(())
    }

    /// Raw (unsmoothed) position target at time `t`.
    pub fn target_at(&self, t: f64) -> Vec3 {
        match self.kind {
            ScenarioKind::StepTransfer => {
                if t < self.step_time {
                    Vec3::zeros()
                } else {
                    Vec3::new(self.step_distance, 0.0, 0.0)
                }
            }
            ScenarioKind::WaypointTrack => {
                let idx = ((t / self.dwell) as usize).min(self.waypoints.len() - 1);
                let w = self.waypoints[idx];
                Vec3::new(w[0], w[1], w[2])
            }
            _ => Vec3::zeros(),
        }
    }

    /// Wind speed along the +X axis at time `t` [m/s].
    pub fn wind_speed_at(&self, t: f64) -> f64 {
        match self.kind {
            ScenarioKind::WindRamp => {
                (self.wind_start + self.wind_rate * t).min(self.wind_end)
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerChoice {
    Indi,
    Lqr,
}

impl fmt::Display for ControllerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControllerChoice::Indi => "indi",
            ControllerChoice::Lqr => "lqr",
        })
    }
}

impl FromStr for ControllerChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "indi" => Ok(ControllerChoice::Indi),
            "lqr" => Ok(ControllerChoice::Lqr),
            other => Err(format!("unknown controller {other:?}, expected indi or lqr")),
        }
    }
}

/// One TOML document holding every tunable. Missing sections take the
/// built-in defaults, so an empty string parses to the stock hover study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub vehicle: VehicleSection,
    pub failure: FailureConfig,
    pub sim: SimConfig,
    pub outer: OuterGains,
    pub inner: InnerGains,
    pub filter: FilterSettings,
    pub baseline: LqrWeights,
    pub aero: AeroDisturbance,
    pub scenario: ScenarioSpec,
    /// Magnitude of the lateral output direction angle [deg].
    pub chi_deg: f64,
    pub controller: ControllerChoice,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            vehicle: VehicleSection::default(),
            failure: FailureConfig::DoubleOpposing { active_pair: (1, 3) },
            sim: SimConfig::default(),
            outer: OuterGains::default(),
            inner: InnerGains::default(),
            filter: FilterSettings::default(),
            baseline: LqrWeights::default(),
            aero: AeroDisturbance::default(),
            scenario: ScenarioSpec::default(),
            chi_deg: 105.0,
            controller: ControllerChoice::Indi,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.vehicle.to_params().validate()?;
        self.failure.validate()?;
        self.sim.validate()?;
        self.inner.validate()?;
        self.baseline.validate()?;
        self.scenario.validate()?;
        if !self.chi_deg.is_finite() || self.chi_deg <= 0.0 || self.chi_deg > 180.0 {
            return Err(ScenarioError::Invalid("chi_deg must lie in (0, 180]"));
        }
        Ok(())
    }
}

/// Parse and validate a config file.
pub fn parse_config(path: &Path) -> Result<Config, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let config: Config = toml::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

enum Pilot {
    Indi(CascadedController),
    Lqr(LqrController),
}

/// Scenario-aware autopilot: smooths the moving position reference, fires
/// the tilt-axis switch, and delegates the control work to the selected
/// controller.
pub struct Mission {
    pilot: Pilot,
    scenario: ScenarioSpec,
    smoothed: Vec3,
    last_t: Option<f64>,
    switched: bool,
}

impl Mission {
    fn reference_at(&mut self, t: f64) -> PositionReference {
        let target = self.scenario.target_at(t);
        let dt = self.last_t.map(|prev| (t - prev).max(0.0)).unwrap_or(0.0);
        self.last_t = Some(t);
        let tau = self.scenario.smoothing_tau;
        let vel = if tau > 1e-9 {
            let alpha = (dt / tau).min(1.0);
            self.smoothed += (target - self.smoothed) * alpha;
            (target - self.smoothed) / tau
        } else {
            self.smoothed = target;
            Vec3::zeros()
        };
        PositionReference {
            pos: self.smoothed,
            vel,
            acc: Vec3::zeros(),
            yaw: 0.0,
        }
    }
}

impl Autopilot for Mission {
    fn position_tick(&mut self, t: f64, frame: &SensorFrame) {
        let reference = self.reference_at(t);
        if !self.switched
            && matches!(self.scenario.kind, ScenarioKind::ChiSwitch)
            && t >= self.scenario.switch_time
        {
            if let Pilot::Indi(pilot) = &mut self.pilot {
                let chi = self.scenario.chi_switch_deg.to_radians();
                let _ = pilot.retarget_axis(chi);
            }
            self.switched = true;
        }
        match &mut self.pilot {
            Pilot::Indi(p) => {
                p.set_reference(reference);
                p.position_tick(t, frame);
            }
            Pilot::Lqr(p) => {
                p.set_reference(reference);
                p.position_tick(t, frame);
            }
        }
    }

    fn control_tick(&mut self, t: f64, frame: &SensorFrame) -> [f64; 4] {
        match &mut self.pilot {
            Pilot::Indi(p) => p.control_tick(t, frame),
            Pilot::Lqr(p) => p.control_tick(t, frame),
        }
    }

    fn target_direction(&self) -> Vec3 {
        match &self.pilot {
            Pilot::Indi(p) => p.target_direction(),
            Pilot::Lqr(p) => p.target_direction(),
        }
    }

    fn position_reference(&self) -> Vec3 {
        match &self.pilot {
            Pilot::Indi(p) => p.position_reference(),
            Pilot::Lqr(p) => p.position_reference(),
        }
    }

    fn internal_signals(&self, state: &SimState) -> ([f64; 3], f64) {
        match &self.pilot {
            Pilot::Indi(p) => p.internal_signals(state),
            Pilot::Lqr(p) => p.internal_signals(state),
        }
    }
}

/// Build the mission autopilot for a validated config.
pub fn build_mission(config: &Config) -> Result<Mission, ScenarioError> {
    let params = config.vehicle.to_params();
    let chi = config.chi_deg.to_radians();
    let ctrl_dt = 1.0 / config.sim.ctrl_rate;
    let reference = PositionReference::hold(Vec3::zeros());
    let pilot = match config.controller {
        ControllerChoice::Indi => Pilot::Indi(CascadedController::new(
            &params,
            config.failure,
            config.outer,
            config.inner,
            config.filter,
            chi,
            ctrl_dt,
            reference,
        )?),
        ControllerChoice::Lqr => Pilot::Lqr(LqrController::new(
            &params,
            config.failure,
            &config.aero,
            &config.baseline,
            config.outer,
            config.inner,
            chi,
            ctrl_dt,
            reference,
        )?),
    };
    if matches!(config.scenario.kind, ScenarioKind::ChiSwitch)
        && matches!(config.controller, ControllerChoice::Indi)
    {
        InnerLoop::new(
            &params,
            config.failure,
            config.inner,
            config.filter,
            config.scenario.chi_switch_deg.to_radians(),
            ctrl_dt,
        )?;
    }
    Ok(Mission {
        pilot,
        scenario: config.scenario.clone(),
        smoothed: config.scenario.target_at(0.0),
        last_t: None,
        switched: false,
    })
}

/// Run the configured scenario and return the trace.
pub fn simulate(config: &Config) -> Result<TraceLog, ScenarioError> {
    let params = config.vehicle.to_params();
    let mut mission = build_mission(config)?;
    let init = SimState::at_equilibrium(&params, &config.failure, Vec3::zeros());
    let scenario = config.scenario.clone();
    let wind = move |t: f64| Vec3::new(scenario.wind_speed_at(t), 0.0, 0.0);
    Ok(run_scenario(
        &params,
        &config.failure,
        &config.aero,
        &config.sim,
        config.scenario.duration,
        init,
        &wind,
        &Vec3::new(1.0, 0.0, 0.0),
        &mut mission,
    )?)
}

/// Headline metrics of one run, computed over the pre-crash span.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub crashed: bool,
    pub crash_cause: Option<String>,
    pub crash_time: Option<f64>,
    /// Time covered by the metrics [s].
    pub span: f64,
    /// Per-axis RMS tracking error against the raw target [m].
    pub rms_err: [f64; 3],
    /// Per-axis peak absolute tracking error [m].
    pub max_err: [f64; 3],
    /// Per-axis absolute tracking error at the last pre-crash sample [m].
    pub final_err: [f64; 3],
    /// RMS of the position error norm [m].
    pub rms_total: f64,
    /// Peak absolute internal coordinate eta1.
    pub max_eta1: f64,
    /// Largest wind speed seen while still flying [m/s].
    pub max_wind: f64,
}

/// Reduce a trace to its summary; tracking errors are measured against the
/// scenario's raw target sequence so they can be recomputed from the CSV.
pub fn summarize(trace: &TraceLog, scenario: &ScenarioSpec) -> RunSummary {
    let rows: Vec<_> = trace.rows.iter().filter(|r| !r.crashed).collect();
    let n = rows.len().max(1) as f64;
    let mut sum_sq = [0.0f64; 3];
    let mut max_err = [0.0f64; 3];
    let mut sum_sq_total = 0.0f64;
    let mut max_eta1 = 0.0f64;
    let mut max_wind = 0.0f64;
    let mut final_err = [0.0f64; 3];
    let mut span = 0.0f64;
    for row in &rows {
        let target = scenario.target_at(row.t);
        let err = row.pos - target;
        let abs = [err.x.abs(), err.y.abs(), err.z.abs()];
        for a in 0..3 {
            sum_sq[a] += err[a] * err[a];
            max_err[a] = max_err[a].max(abs[a]);
        }
        sum_sq_total += err.norm_squared();
        if row.eta[0].is_finite() {
            max_eta1 = max_eta1.max(row.eta[0].abs());
        }
        max_wind = max_wind.max(row.wind.abs());
        final_err = abs;
        span = row.t;
    }
    RunSummary {
        crashed: trace.crashed,
        crash_cause: trace.crash_cause.map(|c| c.to_string()),
        crash_time: trace.crash_time,
        span,
        rms_err: [
            (sum_sq[0] / n).sqrt(),
            (sum_sq[1] / n).sqrt(),
            (sum_sq[2] / n).sqrt(),
        ],
        max_err,
        final_err,
        rms_total: (sum_sq_total / n).sqrt(),
        max_eta1,
        max_wind,
    }
}

/// Fixed trace column order.
pub const TRACE_HEADER: &str = "t,X,Y,Z,Vx,Vy,Vz,p,q,r,h1,h2,h3,eta1,eta2,eta3,y2,\
omega_cmd_1,omega_cmd_2,omega_cmd_3,omega_cmd_4,omega_1,omega_2,omega_3,omega_4,wind,crashed";

/// Render the trace CSV.
pub fn trace_csv(trace: &TraceLog) -> String {
    let mut s = String::with_capacity(64 * (trace.rows.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in &trace.rows {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.pos.x,
            r.pos.y,
            r.pos.z,
            r.vel.x,
            r.vel.y,
            r.vel.z,
            r.omega.x,
            r.omega.y,
            r.omega.z,
            r.h.x,
            r.h.y,
            r.h.z,
            r.eta[0],
            r.eta[1],
            r.eta[2],
            r.y2
        );
        for v in r.omega_cmd {
            let _ = write!(s, ",{v}");
        }
        for v in r.omega_act {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{},{}", r.wind, u8::from(r.crashed));
    }
    s
}

/// Render the key,value summary CSV.
pub fn summary_csv(summary: &RunSummary) -> String {
    let mut s = String::new();
    s.push_str("key,value\n");
    let _ = writeln!(s, "crashed,{}", u8::from(summary.crashed));
    let _ = writeln!(
        s,
        "crash_cause,{}",
        summary.crash_cause.as_deref().unwrap_or("")
    );
    match summary.crash_time {
        Some(t) => {
            let _ = writeln!(s, "crash_time_s,{t}");
        }
        None => s.push_str("crash_time_s,\n"),
    }
    let _ = writeln!(s, "span_s,{}", summary.span);
    for (a, name) in ["x", "y", "z"].iter().enumerate() {
        let _ = writeln!(s, "rms_err_{name}_m,{}", summary.rms_err[a]);
    }
    let _ = writeln!(s, "rms_err_total_m,{}", summary.rms_total);
    for (a, name) in ["x", "y", "z"].iter().enumerate() {
        let _ = writeln!(s, "max_err_{name}_m,{}", summary.max_err[a]);
    }
    for (a, name) in ["x", "y", "z"].iter().enumerate() {
        let _ = writeln!(s, "final_err_{name}_m,{}", summary.final_err[a]);
    }
    let _ = writeln!(s, "max_eta1,{}", summary.max_eta1);
    let _ = writeln!(s, "max_wind_mps,{}", summary.max_wind);
    s
}

/// Render the tilt-axis sweep CSV.
pub fn sweep_csv(sweep: &[AxisAssessment]) -> String {
    let mut s = String::new();
    s.push_str("chi_deg,re_lambda1,re_lambda2,r_B,verdict\n");
    for a in sweep {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            a.chi_abs.to_degrees(),
            a.re_eigs.0,
            a.re_eigs.1,
            a.ratio,
            a.verdict
        );
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), ScenarioError> {
    fs::write(path, contents).map_err(|source| ScenarioError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|source| ScenarioError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

/// Artifacts of one completed run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
    pub summary: RunSummary,
}

/// Run the configured scenario and write `trace.csv` and `summary.csv`
/// (optionally name-suffixed) into `out_dir`.
pub fn execute_run(
    config: &Config,
    out_dir: &Path,
    suffix: &str,
) -> Result<RunArtifacts, ScenarioError> {
    ensure_dir(out_dir)?;
    let trace = simulate(config)?;
    let summary = summarize(&trace, &config.scenario);
    let trace_path = out_dir.join(format!("trace{suffix}.csv"));
    let summary_path = out_dir.join(format!("summary{suffix}.csv"));
    write_file(&trace_path, &trace_csv(&trace))?;
    write_file(&summary_path, &summary_csv(&summary))?;
    Ok(RunArtifacts {
        trace_path,
        summary_path,
        summary,
    })
}

/// Assess the tilt-axis grid in parallel; results keep grid order.
pub fn sweep_assessments(
    params: &VehicleParams,
    s_l: f64,
    s_n: f64,
    grid: &[f64],
) -> Vec<AxisAssessment> {
    if grid.is_empty() {
        return Vec::new();
    }
    let workers = thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(grid.len());
    let chunk = grid.len().div_ceil(workers);
    let mut out = Vec::with_capacity(grid.len());
    thread::scope(|scope| {
        let handles: Vec<_> = grid
            .chunks(chunk)
            .map(|chis| {
                scope.spawn(move || {
                    chis.iter()
                        .map(|&chi| classify_axis(params, s_l, s_n, chi))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for handle in handles {
            out.extend(handle.join().expect("sweep worker panicked"));
        }
    });
    out
}

/// Sweep the tilt-axis grid for the configured two-rotor case and write
/// `sweep.csv` into `out_dir`.
pub fn execute_sweep(
    config: &Config,
    out_dir: &Path,
) -> Result<(PathBuf, Vec<AxisAssessment>), ScenarioError> {
    let FailureConfig::DoubleOpposing { .. } = config.failure else {
        return Err(ScenarioError::Invalid(
            "the tilt-axis sweep requires the two-rotor configuration",
        ));
    };
    ensure_dir(out_dir)?;
    let params = config.vehicle.to_params();
    let grid = default_sweep_grid(&params);
    let sweep = sweep_assessments(&params, config.failure.s_l(), config.failure.s_n(), &grid);
    let path = out_dir.join("sweep.csv");
    write_file(&path, &sweep_csv(&sweep))?;
    Ok((path, sweep))
}

/// Run the same scenario under both controllers and write per-controller
/// artifacts plus a side-by-side `compare.csv`.
pub fn execute_compare(
    config: &Config,
    out_dir: &Path,
) -> Result<(RunArtifacts, RunArtifacts), ScenarioError> {
    ensure_dir(out_dir)?;
    let mut indi_cfg = config.clone();
    indi_cfg.controller = ControllerChoice::Indi;
    let mut lqr_cfg = config.clone();
    lqr_cfg.controller = ControllerChoice::Lqr;
    let indi = execute_run(&indi_cfg, out_dir, "_indi")?;
    let lqr = execute_run(&lqr_cfg, out_dir, "_lqr")?;

    let mut s = String::new();
    s.push_str("metric,indi,lqr\n");
    let _ = writeln!(
        s,
        "crashed,{},{}",
        u8::from(indi.summary.crashed),
        u8::from(lqr.summary.crashed)
    );
    let _ = writeln!(s, "span_s,{},{}", indi.summary.span, lqr.summary.span);
    let _ = writeln!(
        s,
        "rms_err_total_m,{},{}",
        indi.summary.rms_total, lqr.summary.rms_total
    );
    let _ = writeln!(
        s,
        "max_eta1,{},{}",
        indi.summary.max_eta1, lqr.summary.max_eta1
    );
    let _ = writeln!(
        s,
        "max_wind_mps,{},{}",
        indi.summary.max_wind, lqr.summary.max_wind
    );
    write_file(&out_dir.join("compare.csv"), &s)?;
    Ok((indi, lqr))
}

/// Human-readable trim and axis assessment for the configured vehicle.
pub fn trim_report(config: &Config) -> Result<String, ScenarioError> {
    let params = config.vehicle.to_params();
    params.validate()?;
    config.failure.validate()?;
    let (speeds, yaw_rate) = equilibrium_rotors(&params, &config.failure);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "failure: {}",
        match config.failure {
            FailureConfig::Nominal => "nominal".to_string(),
            FailureConfig::SingleRotor { failed } => format!("single_rotor (failed {failed})"),
            FailureConfig::DoubleOpposing { active_pair } => {
                format!("double_opposing (active {} and {})", active_pair.0, active_pair.1)
            }
        }
    );
    let _ = writeln!(
        s,
        "rotor_trim_speeds_rad_s: {} {} {} {}",
        speeds[0], speeds[1], speeds[2], speeds[3]
    );
    let _ = writeln!(s, "yaw_rate_trim_rad_s: {yaw_rate}");
    let total_thrust: f64 = speeds
        .iter()
        .map(|w| params.thrust_coeff * w * w)
        .sum();
    let _ = writeln!(s, "trim_thrust_total_n: {total_thrust}");
    match config.failure {
        FailureConfig::DoubleOpposing { .. } => {
            let zeta = singular_tilt_angle(&params);
            let _ = writeln!(s, "singular_tilt_angle_deg: {}", zeta.to_degrees());
            let assessment = classify_axis(
                &params,
                config.failure.s_l(),
                config.failure.s_n(),
                config.chi_deg.to_radians(),
            );
            let _ = writeln!(s, "chi_deg: {}", config.chi_deg);
            let _ = writeln!(
                s,
                "internal_eigenvalue_re: {} {}",
                assessment.re_eigs.0, assessment.re_eigs.1
            );
            let _ = writeln!(s, "effectiveness_ratio: {}", assessment.ratio);
            let _ = writeln!(s, "verdict: {}", assessment.verdict);
        }
        FailureConfig::SingleRotor { .. } => {
            if let Ok((eta1, slope)) = single_equilibrium(&params, &config.failure, (0.0, 0.0)) {
                let _ = writeln!(s, "internal_equilibrium_eta1: {eta1}");
                let _ = writeln!(s, "internal_equilibrium_slope: {slope}");
            }
        }
        FailureConfig::Nominal => {}
    }
    Ok(s)
}
