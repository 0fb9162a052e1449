//! Closed-loop simulation of one scenario.

use std::io::Write;
use std::time::Instant;

use crate::controller::{Controller, Measurements};
use crate::coupling::{interaction_torque, CoupledState};
use crate::dnn::Policy;
use crate::dynamics::{JointState, Vec3};
use crate::error::{Error, Result};
use crate::harness::config::{ControllerKind, ScenarioConfig};
use crate::harness::metrics::{reduction, rms, LatencyStats, MetricsReport};
use crate::hybrid::HybridController;
use crate::nmpc::NmpcController;
use crate::reference::{desired_interaction, squat_reference};

/// One control step. Torques are the values held over `[t, t + dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub robot: JointState,
    pub human: JointState,
    pub t_r: Vec3,
    pub t_int: Vec3,
    pub t_intd: Vec3,
    pub t_h: Vec3,
    pub network: Vec3,
    pub pi_term: Vec3,
    pub iterations: usize,
    /// Wall time of the controller step (ms).
    pub solve_ms: f64,
    /// What the controller was given.
    pub measurements: Measurements,
}

pub const CSV_HEADER: [&str; 32] = [
    "t", "q_R1", "q_R2", "q_R3", "qd_R1", "qd_R2", "qd_R3", "q_h1", "q_h2", "q_h3", "qd_h1", "qd_h2",
    "qd_h3", "T_R1", "T_R2", "T_R3", "T_int1", "T_int2", "T_int3", "T_intd1", "T_intd2", "T_intd3",
    "T_h1", "T_h2", "T_h3", "O1", "O2", "O3", "pi1", "pi2", "pi3", "solve_ms",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    pub samples: Vec<Sample>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Write the series as CSV. Without `timing` the `solve_ms` column is
    /// zero so that repeated runs produce identical files.
    pub fn write_csv<W: Write>(&self, out: W, timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        let mut row: Vec<String> = Vec::with_capacity(CSV_HEADER.len());
        for s in &self.samples {
            row.clear();
            row.push(s.t.to_string());
            for v in [&s.robot.q, &s.robot.qd, &s.human.q, &s.human.qd, &s.t_r, &s.t_int, &s.t_intd, &s.t_h, &s.network, &s.pi_term] {
                row.extend(v.iter().map(f64::to_string));
            }
            row.push(if timing { s.solve_ms.to_string() } else { "0".into() });
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of a closed-loop run. A run stopped by instability still returns
/// the samples recorded so far.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub controller: String,
    pub series: TimeSeries,
    /// Why the run stopped early.
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn stable(&self) -> bool {
        self.failure.is_none()
    }
}

/// Controller for `kind`; `None` when the human squats without the exoskeleton.
pub fn build_controller(
    config: &ScenarioConfig,
    kind: ControllerKind,
    policy: Option<&Policy>,
) -> Result<Option<Box<dyn Controller>>> {
    let need_policy = || {
        policy
            .cloned()
            .ok_or_else(|| Error::Config(format!("controller `{kind}` needs a trained model")))
    };
    Ok(match kind {
        ControllerKind::Nmpc => Some(Box::new(NmpcController::new(config.nmpc_config()?)?)),
        ControllerKind::DnnOnly => Some(Box::new(HybridController::network_only(need_policy()?))),
        ControllerKind::Hybrid => Some(Box::new(HybridController::new(need_policy()?, config.pi))),
        ControllerKind::None => None,
    })
}

fn initial_pose(config: &ScenarioConfig) -> JointState {
    let r = squat_reference(&config.squat.profile(), 0.0);
    JointState::new(r.q, r.qd)
}

/// Run the scenario's configured controller.
pub fn run_scenario(config: &ScenarioConfig, policy: Option<&Policy>) -> Result<RunOutcome> {
    run_kind(config, config.controller, policy)
}

pub fn run_kind(config: &ScenarioConfig, kind: ControllerKind, policy: Option<&Policy>) -> Result<RunOutcome> {
    config.validate()?;
    match build_controller(config, kind, policy)? {
        Some(mut c) => run_with_controller(config, c.as_mut()),
        None => run_unassisted(config),
    }
}

/// Human and exoskeleton coupled through the straps, `controller` driving the robot.
pub fn run_with_controller(config: &ScenarioConfig, controller: &mut dyn Controller) -> Result<RunOutcome> {
    let plant = config.plant()?;
    let profile = config.squat.profile();
    let dt = config.control_dt;
    let start = initial_pose(config);
    let mut state = CoupledState { human: start, robot: start, t: 0.0 };
    let mut series = TimeSeries { samples: Vec::with_capacity(config.steps()) };
    let mut failure = None;

    for k in 0..config.steps() {
        let t = k as f64 * dt;
        state.t = t;
        let t_int = interaction_torque(&plant.strap, &state.robot, &state.human);
        let desired = desired_interaction(&plant.human, &state.robot.q, &plant.strap);
        let m = Measurements {
            robot: state.robot,
            f_int: plant.strap.torque_to_force(&t_int),
            f_intd: desired.force,
        };
        if k == 0 {
            controller.reset(&m);
        }
        let clock = Instant::now();
        let out = match controller.step(&m) {
            Ok(out) => out,
            Err(e) if e.is_instability() => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        let solve_ms = clock.elapsed().as_secs_f64() * 1e3;
        if !out.torque.iter().all(|v| v.is_finite()) {
            failure = Some(Error::IntegrationDiverged { t });
            break;
        }
        let (next, torques) = match plant.step(&state, &out.torque, &|ts| squat_reference(&profile, ts), dt) {
            Ok(v) => v,
            Err(e) if e.is_instability() => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        series.samples.push(Sample {
            t,
            robot: state.robot,
            human: state.human,
            t_r: out.torque,
            t_int: torques.t_int,
            t_intd: desired.torque,
            t_h: torques.human_muscle,
            network: out.network,
            pi_term: out.pi_term,
            iterations: out.iterations,
            solve_ms,
            measurements: m,
        });
        state = next;
    }
    let failure = failure.map(|e: Error| {
        log::warn!("{} run stopped: {e}", controller.name());
        e.to_string()
    });
    Ok(RunOutcome { controller: controller.name().into(), series, failure })
}

/// The human alone, performing the same squat without the exoskeleton.
pub fn run_unassisted(config: &ScenarioConfig) -> Result<RunOutcome> {
    let plant = config.plant()?;
    let profile = config.squat.profile();
    let dt = config.control_dt;
    let mut human = initial_pose(config);
    let mut series = TimeSeries { samples: Vec::with_capacity(config.steps()) };
    let mut failure = None;
    for k in 0..config.steps() {
        let t = k as f64 * dt;
        let desired = desired_interaction(&plant.human, &human.q, &plant.strap);
        let (next, t_h) = match plant.step_unworn(&human, t, &|ts| squat_reference(&profile, ts), dt) {
            Ok(v) => v,
            Err(e) if e.is_instability() => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        };
        series.samples.push(Sample {
            t,
            robot: human,
            human,
            t_r: Vec3::zeros(),
            t_int: Vec3::zeros(),
            t_intd: desired.torque,
            t_h,
            network: Vec3::zeros(),
            pi_term: Vec3::zeros(),
            iterations: 0,
            solve_ms: 0.0,
            measurements: Measurements { robot: human, f_int: Vec3::zeros(), f_intd: desired.force },
        });
        human = next;
    }
    Ok(RunOutcome {
        controller: ControllerKind::None.as_str().into(),
        series,
        failure: failure.map(|e: Error| e.to_string()),
    })
}

fn in_window(run: &RunOutcome, start: f64) -> Vec<&Sample> {
    // the slack keeps the boundary sample regardless of rounding in k·dt
    run.series.samples.iter().filter(|s| s.t >= start - 1e-9).collect()
}

fn column_rms(samples: &[&Sample], f: impl Fn(&Sample) -> Vec3) -> [f64; 3] {
    std::array::from_fn(|j| {
        let v: Vec<f64> = samples.iter().map(|s| f(s)[j]).collect();
        rms(&v).unwrap_or(f64::NAN)
    })
}

fn work(samples: &[&Sample], dt: f64, f: impl Fn(&Sample) -> f64) -> f64 {
    samples.iter().map(|s| f(s)).sum::<f64>() * dt
}

/// Metrics over `t ≥ window_start`, compared against the unassisted run.
pub fn evaluate(
    config: &ScenarioConfig,
    run: &RunOutcome,
    unassisted: &RunOutcome,
    window_start: f64,
) -> MetricsReport {
    let dt = config.control_dt;
    let with = in_window(run, window_start);
    let without = in_window(unassisted, window_start);
    let tracking_rms = column_rms(&with, |s| s.t_int - s.t_intd);
    let human_torque_rms = column_rms(&with, |s| s.t_h);
    let human_torque_rms_unassisted = column_rms(&without, |s| s.t_h);
    let torque_reduction_pct = std::array::from_fn(|j| reduction(human_torque_rms[j], human_torque_rms_unassisted[j]));
    let timed: Vec<f64> = if run.controller == ControllerKind::None.as_str() {
        Vec::new()
    } else {
        run.series.samples.iter().map(|s| s.solve_ms).collect()
    };
    let n = run.series.len().max(1) as f64;
    MetricsReport {
        controller: run.controller.clone(),
        stable: run.stable(),
        failure: run.failure.clone(),
        steps: run.series.len(),
        window_start,
        tracking_rms,
        human_torque_rms,
        human_torque_rms_unassisted,
        torque_reduction_pct,
        latency: LatencyStats::from_ms(&timed),
        mean_iterations: run.series.samples.iter().map(|s| s.iterations as f64).sum::<f64>() / n,
        actuator_work: work(&with, dt, |s| s.t_r.dot(&s.robot.qd).abs()),
        human_work: work(&with, dt, |s| s.t_h.dot(&s.human.qd).abs()),
        human_work_unassisted: work(&without, dt, |s| s.t_h.dot(&s.human.qd).abs()),
    }
}

/// Run one controller plus the unassisted baseline and report metrics over
/// everything after the first squat cycle.
pub fn simulate_and_evaluate(
    config: &ScenarioConfig,
    kind: ControllerKind,
    policy: Option<&Policy>,
) -> Result<(RunOutcome, MetricsReport)> {
    let run = run_kind(config, kind, policy)?;
    let baseline = if kind == ControllerKind::None { run.clone() } else { run_unassisted(config)? };
    let report = evaluate(config, &run, &baseline, default_window_start(config));
    Ok((run, report))
}

/// Skip the first cycle unless the run is shorter than two cycles.
pub fn default_window_start(config: &ScenarioConfig) -> f64 {
    let cycle = config.squat.cycle_duration;
    if config.duration >= 2.0 * cycle {
        cycle
    } else {
        0.0
    }
}

/// Metrics for several controllers on the same scenario.
pub fn compare_controllers(
    config: &ScenarioConfig,
    kinds: &[ControllerKind],
    policy: Option<&Policy>,
) -> Result<Vec<MetricsReport>> {
    config.validate()?;
    let baseline = run_unassisted(config)?;
    let window = default_window_start(config);
    kinds
        .iter()
        .map(|&kind| {
            let run = if kind == ControllerKind::None { baseline.clone() } else { run_kind(config, kind, policy)? };
            Ok(evaluate(config, &run, &baseline, window))
        })
        .collect()
}

/// Per-step latency of `controller` over recorded measurements, after
/// `warmup` untimed steps.
pub fn bench_controller(
    controller: &mut dyn Controller,
    inputs: &[Measurements],
    warmup: usize,
) -> Result<LatencyStats> {
    let first = inputs.first().ok_or_else(|| Error::InvalidArgument("no inputs to replay".into()))?;
    controller.reset(first);
    let mut times = Vec::with_capacity(inputs.len());
    for (k, m) in inputs.iter().enumerate() {
        let clock = Instant::now();
        let out = controller.step(m)?;
        let ms = clock.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(out);
        if k >= warmup {
            times.push(ms);
        }
    }
    LatencyStats::from_ms(&times).ok_or_else(|| Error::InvalidArgument("warmup consumed every input".into()))
}
