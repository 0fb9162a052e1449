//! Distillation data: closed-loop NMPC runs over a grid of bodies, squat
//! speeds, squat profiles and control intervals.
//!
//! On disk: the magic `HMPCDS01`, a little-endian `u32` header length, the
//! JSON header, then fixed-size little-endian `f64` records. A record is the
//! 12 network inputs, the 3 NMPC torques, then the controller context needed
//! to replay the step (previous torque and warm start).

use std::io::{Read, Write};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scaler::{MinMax, Scaler};
use super::{INPUTS, OUTPUTS};
use crate::controller::{ControlOutput, Controller, Measurements};
use crate::dynamics::{DisturbanceSpec, JointState, Vec3};
use crate::error::{Error, Result};
use crate::harness::config::{ControllerKind, ScenarioConfig, SquatConfig, Subject};
use crate::harness::sim::run_with_controller;
use crate::nmpc::NmpcController;
use crate::reference::profile_grid;

pub const DATASET_MAGIC: &[u8; 8] = b"HMPCDS01";
pub const DATASET_VERSION: u32 = 1;
const MAX_HEADER_BYTES: usize = 16 << 20;

pub const FEATURE_NAMES: [&str; INPUTS] = [
    "q_R1", "q_R2", "q_R3", "qd_R1", "qd_R2", "qd_R3", "F_int1", "F_int2", "F_int3", "F_intd1", "F_intd2",
    "F_intd3",
];
pub const TARGET_NAMES: [&str; OUTPUTS] = ["T_R1", "T_R2", "T_R3"];

/// Weight/height rows of the training grid.
pub const TABLE_BODIES: [Subject; 9] = [
    Subject { mass: 60.0, height: 1.55 },
    Subject { mass: 60.0, height: 1.65 },
    Subject { mass: 60.0, height: 1.70 },
    Subject { mass: 75.0, height: 1.60 },
    Subject { mass: 75.0, height: 1.70 },
    Subject { mass: 75.0, height: 1.75 },
    Subject { mass: 90.0, height: 1.65 },
    Subject { mass: 90.0, height: 1.75 },
    Subject { mass: 90.0, height: 1.80 },
];

pub const SQUAT_CYCLES: [f64; 6] = [1.5, 2.0, 2.5, 3.0, 4.0, 5.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetGrid {
    pub seed: u64,
    pub bodies: Vec<Subject>,
    /// Squat cycle durations (s).
    pub cycle_durations: Vec<f64>,
    /// Squat profiles drawn per body and speed from the 25-profile family.
    pub profiles_per_cell: usize,
    /// Control intervals (s); every drawn profile is run at each.
    pub control_dts: Vec<f64>,
    /// Simulated squat cycles per scenario.
    pub cycles: f64,
    /// Everything else: gains, strap, disturbance, NMPC settings.
    pub base: ScenarioConfig,
}

impl Default for DatasetGrid {
    fn default() -> Self {
        let mut base = ScenarioConfig::default();
        base.controller = ControllerKind::Nmpc;
        base.disturbance.spec = DisturbanceSpec::none();
        Self {
            seed: 0,
            bodies: TABLE_BODIES.to_vec(),
            cycle_durations: SQUAT_CYCLES.to_vec(),
            profiles_per_cell: 1,
            control_dts: vec![0.002, 0.005, 0.010],
            cycles: 1.0,
            base,
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInfo {
    pub index: usize,
    pub subject: Subject,
    pub cycle_duration: f64,
    pub profile: usize,
    pub control_dt: f64,
    /// Records contributed; zero when the run diverged and was skipped.
    pub samples: usize,
    pub skipped: Option<String>,
}

impl DatasetGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("dataset grid serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.bodies.is_empty() || self.cycle_durations.is_empty() || self.control_dts.is_empty() {
            return Err(Error::Config("dataset grid has an empty axis".into()));
        }
        if self.profiles_per_cell == 0 || self.profiles_per_cell > 25 {
            return Err(Error::Config("profiles_per_cell must be in 1..=25".into()));
        }
        if !(self.cycles > 0.0 && self.cycles.is_finite()) {
            return Err(Error::Config("cycles must be positive".into()));
        }
        for s in self.scenarios() {
            self.scenario_config(&s).validate()?;
        }
        Ok(())
    }

    /// Grid points in generation order. Profiles are drawn without
    /// replacement per (body, speed) from a generator seeded by `seed`.
    pub fn scenarios(&self) -> Vec<ScenarioInfo> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::new();
        for subject in &self.bodies {
            for &cycle in &self.cycle_durations {
                let mut pool: Vec<usize> = (0..25).collect();
                for _ in 0..self.profiles_per_cell {
                    let profile = pool.swap_remove(rng.random_range(0..pool.len()));
                    for &dt in &self.control_dts {
                        out.push(ScenarioInfo {
                            index: out.len(),
                            subject: *subject,
                            cycle_duration: cycle,
                            profile,
                            control_dt: dt,
                            samples: 0,
                            skipped: None,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn scenario_config(&self, s: &ScenarioInfo) -> ScenarioConfig {
        let mut cfg = self.base.clone();
        cfg.controller = ControllerKind::Nmpc;
        cfg.subject = s.subject;
        cfg.control_dt = s.control_dt;
        cfg.squat = SquatConfig::from_profile(&profile_grid(s.cycle_duration)[s.profile]);
        cfg.duration = self.cycles * s.cycle_duration;
        cfg
    }
}

/// One NMPC step: what it saw, what it applied, and its state beforehand.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub inputs: [f64; INPUTS],
    pub targets: [f64; OUTPUTS],
    pub prev_torque: [f64; 3],
    /// Warm-start increments, flattened move by move.
    pub warm_start: Vec<f64>,
}

impl TrainingSample {
    pub fn measurements(&self) -> Measurements {
        let x = &self.inputs;
        Measurements {
            robot: JointState::new(Vec3::new(x[0], x[1], x[2]), Vec3::new(x[3], x[4], x[5])),
            f_int: Vec3::new(x[6], x[7], x[8]),
            f_intd: Vec3::new(x[9], x[10], x[11]),
        }
    }

    pub fn warm_moves(&self) -> Vec<Vec3> {
        self.warm_start.chunks_exact(3).map(Vec3::from_column_slice).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub scaler: Scaler,
    pub grid: DatasetGrid,
    pub seed: u64,
    /// Moves in each record's warm start.
    pub control_horizon: usize,
    pub samples: usize,
    pub scenarios: Vec<ScenarioInfo>,
}

impl DatasetHeader {
    pub fn record_len(&self) -> usize {
        INPUTS + OUTPUTS + 3 + 3 * self.control_horizon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<TrainingSample>,
}

/// NMPC wrapper that logs every step.
struct Recorder {
    inner: NmpcController,
    samples: Vec<TrainingSample>,
}

impl Controller for Recorder {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn reset(&mut self, initial: &Measurements) {
        self.inner.reset(initial);
    }

    fn step(&mut self, m: &Measurements) -> Result<ControlOutput> {
        let prev = self.inner.previous_torque();
        let warm: Vec<f64> = self.inner.warm_start().iter().flat_map(|v| v.iter().copied()).collect();
        let out = self.inner.step(m)?;
        self.samples.push(TrainingSample {
            inputs: m.features(),
            targets: [out.torque[0], out.torque[1], out.torque[2]],
            prev_torque: [prev[0], prev[1], prev[2]],
            warm_start: warm,
        });
        Ok(out)
    }
}

/// Samples from one scenario, or the reason it was skipped.
pub fn run_scenario_samples(cfg: &ScenarioConfig) -> Result<std::result::Result<Vec<TrainingSample>, String>> {
    let mut rec = Recorder {
        inner: NmpcController::new(cfg.nmpc_config()?)?,
        samples: Vec::with_capacity(cfg.steps()),
    };
    let outcome = run_with_controller(cfg, &mut rec)?;
    Ok(match outcome.failure {
        None => Ok(rec.samples),
        Some(e) => Err(e),
    })
}

/// Worker count for batch jobs: `HYBRIDMPC_THREADS` if set, else rayon's default.
pub fn batch_threads() -> usize {
    std::env::var("HYBRIDMPC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Run every grid scenario under the NMPC, skip diverging ones, and fit the
/// scaler on what was kept. Output order follows the grid order regardless of
/// thread count.
pub fn generate_dataset(grid: &DatasetGrid) -> Result<Dataset> {
    grid.validate()?;
    let mut scenarios = grid.scenarios();
    let done = Mutex::new(0usize);
    let total = scenarios.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(batch_threads())
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<Result<std::result::Result<Vec<TrainingSample>, String>>> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|s| {
                let r = run_scenario_samples(&grid.scenario_config(s));
                let mut n = done.lock().unwrap_or_else(|p| p.into_inner());
                *n += 1;
                log::info!("scenario {}/{} done", *n, total);
                r
            })
            .collect()
    });

    let mut samples = Vec::new();
    for (info, r) in scenarios.iter_mut().zip(results) {
        match r? {
            Ok(s) => {
                info.samples = s.len();
                samples.extend(s);
            }
            Err(reason) => {
                log::warn!(
                    "skipping scenario {} ({} kg, {} m, {} s cycle, dt {}): {reason}",
                    info.index,
                    info.subject.mass,
                    info.subject.height,
                    info.cycle_duration,
                    info.control_dt
                );
                info.skipped = Some(reason);
            }
        }
    }
    let scaler = fit_scaler(&samples)?;
    Ok(Dataset {
        header: DatasetHeader {
            version: DATASET_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            target_names: TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
            scaler,
            grid: grid.clone(),
            seed: grid.seed,
            control_horizon: grid.base.nmpc.control,
            samples: samples.len(),
            scenarios,
        },
        samples,
    })
}

pub fn fit_scaler(samples: &[TrainingSample]) -> Result<Scaler> {
    Ok(Scaler {
        inputs: MinMax::fit(samples.iter().map(|s| s.inputs.as_slice()))?,
        targets: MinMax::fit(samples.iter().map(|s| s.targets.as_slice()))?,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn encode<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::format("dataset", e.to_string()))?;
        out.write_all(DATASET_MAGIC)?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        let width = self.header.record_len();
        let mut buf = Vec::with_capacity(width * 8);
        for s in &self.samples {
            buf.clear();
            for v in s.inputs.iter().chain(&s.targets).chain(&s.prev_torque).chain(&s.warm_start) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            if buf.len() != width * 8 {
                return Err(Error::format("dataset", "record width does not match header"));
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = Vec::new();
        self.encode(&mut v)?;
        Ok(v)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::format("dataset", reason);
        let rest = bytes.strip_prefix(DATASET_MAGIC.as_slice()).ok_or_else(|| bad("missing magic"))?;
        let (len, rest) = rest.split_first_chunk::<4>().ok_or_else(|| bad("truncated header length"))?;
        let len = u32::from_le_bytes(*len) as usize;
        if len > MAX_HEADER_BYTES || len > rest.len() {
            return Err(bad("header length out of range"));
        }
        let (json, body) = rest.split_at(len);
        let header: DatasetHeader = serde_json::from_slice(json).map_err(|e| Error::format("dataset", e.to_string()))?;
        if header.version != DATASET_VERSION {
            return Err(bad("unsupported version"));
        }
        if header.feature_names.len() != INPUTS || header.target_names.len() != OUTPUTS {
            return Err(bad("feature layout mismatch"));
        }
        if header.control_horizon == 0 || header.control_horizon > 1024 {
            return Err(bad("control horizon out of range"));
        }
        header.scaler.validate()?;
        if header.scaler.inputs.len() != INPUTS || header.scaler.targets.len() != OUTPUTS {
            return Err(bad("scaler width mismatch"));
        }
        let record = header.record_len() * 8;
        if body.len() % record != 0 || body.len() / record != header.samples {
            return Err(bad("record count does not match header"));
        }
        let mut samples = Vec::with_capacity(header.samples);
        for chunk in body.chunks_exact(record) {
            let vals: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            if !vals.iter().all(|v| v.is_finite()) {
                return Err(bad("non-finite value in record"));
            }
            let mut s = TrainingSample {
                inputs: [0.0; INPUTS],
                targets: [0.0; OUTPUTS],
                prev_torque: [0.0; 3],
                warm_start: vals[INPUTS + OUTPUTS + 3..].to_vec(),
            };
            s.inputs.copy_from_slice(&vals[..INPUTS]);
            s.targets.copy_from_slice(&vals[INPUTS..INPUTS + OUTPUTS]);
            s.prev_torque.copy_from_slice(&vals[INPUTS + OUTPUTS..INPUTS + OUTPUTS + 3]);
            samples.push(s);
        }
        Ok(Self { header, samples })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.encode(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}
