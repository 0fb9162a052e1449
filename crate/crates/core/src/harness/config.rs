//! Scenario description, stored as TOML.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coupling::{CoupledPlant, HumanController, StrapModel};
use crate::dynamics::{anthropometry, BodyParams, DisturbanceSpec};
use crate::error::{Error, Result};
use crate::hybrid::PiGains;
use crate::nmpc::{HorizonConfig, NmpcConfig, WeightSpec};
use crate::reference::{AdmittanceGains, SquatProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Nmpc,
    DnnOnly,
    Hybrid,
    None,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [Self::Nmpc, Self::DnnOnly, Self::Hybrid, Self::None];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nmpc => "nmpc",
            Self::DnnOnly => "dnn-only",
            Self::Hybrid => "hybrid",
            Self::None => "none",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Self::DnnOnly | Self::Hybrid)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller `{s}` (nmpc, dnn-only, hybrid, none)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    /// kg
    pub mass: f64,
    /// m
    pub height: f64,
}

/// Squat motion with poses in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquatConfig {
    pub cycle_duration: f64,
    pub stand_pose_deg: [f64; 3],
    pub deep_pose_deg: [f64; 3],
    pub smoothness: f64,
}

impl Default for SquatConfig {
    fn default() -> Self {
        Self::from_profile(&SquatProfile::standard(1.75))
    }
}

impl SquatConfig {
    pub fn from_profile(p: &SquatProfile) -> Self {
        Self {
            cycle_duration: p.cycle_duration,
            stand_pose_deg: p.stand_pose.map(f64::to_degrees),
            deep_pose_deg: p.deep_pose.map(f64::to_degrees),
            smoothness: p.smoothness,
        }
    }

    pub fn profile(&self) -> SquatProfile {
        SquatProfile {
            cycle_duration: self.cycle_duration,
            stand_pose: self.stand_pose_deg.map(f64::to_radians),
            deep_pose: self.deep_pose_deg.map(f64::to_radians),
            smoothness: self.smoothness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisturbanceConfig {
    #[serde(flatten)]
    pub spec: DisturbanceSpec,
    /// Also disturb the human plant.
    pub disturb_human: bool,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            spec: DisturbanceSpec::squat_test(),
            disturb_human: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmpcSettings {
    pub prediction: usize,
    pub control: usize,
    pub delta_u_max: f64,
    pub weights: WeightSpec,
}

impl Default for NmpcSettings {
    fn default() -> Self {
        let h = HorizonConfig::default();
        Self {
            prediction: h.prediction,
            control: h.control,
            delta_u_max: h.delta_u_max,
            weights: WeightSpec::default(),
        }
    }
}

/// Optional exoskeleton link override.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotOverride {
    pub masses: [f64; 3],
    /// Defaults to the wearer's link lengths.
    pub lengths: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Simulated time (s).
    pub duration: f64,
    /// Control and integration interval (s).
    pub control_dt: f64,
    pub controller: ControllerKind,
    /// Trained model for `dnn-only` and `hybrid`.
    pub model: Option<PathBuf>,
    pub subject: Subject,
    pub squat: SquatConfig,
    pub disturbance: DisturbanceConfig,
    pub admittance: AdmittanceGains,
    pub pi: PiGains,
    pub nmpc: NmpcSettings,
    pub strap: StrapModel,
    pub human: HumanController,
    pub robot: Option<RobotOverride>,
    /// Largest internal RK4 step of the plant (s); each control interval is
    /// split into equal substeps no longer than this.
    pub integration_step: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            duration: 10.0 * 1.75,
            control_dt: 0.002,
            controller: ControllerKind::Hybrid,
            model: None,
            subject: Subject { mass: 80.0, height: 1.9 },
            squat: SquatConfig::default(),
            disturbance: DisturbanceConfig::default(),
            admittance: AdmittanceGains::default(),
            pi: PiGains::default(),
            nmpc: NmpcSettings::default(),
            strap: StrapModel::default(),
            human: HumanController::default(),
            robot: None,
            integration_step: 5e-5,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.control_dt > 0.0 && self.control_dt.is_finite()) {
            return Err(Error::Config(format!("control_dt must be positive, got {}", self.control_dt)));
        }
        if self.duration / self.control_dt > 1e8 {
            return Err(Error::Config("more than 1e8 control steps".into()));
        }
        if !(self.integration_step > 0.0 && self.integration_step.is_finite()) {
            return Err(Error::Config("integration_step must be positive".into()));
        }
        if self.control_dt / self.integration_step > 1e4 {
            return Err(Error::Config("more than 1e4 substeps per control interval".into()));
        }
        if !(self.pi.windup_limit >= 0.0) {
            return Err(Error::Config("windup_limit must be non-negative".into()));
        }
        self.human_params().map_err(wrap)?;
        self.robot_params().and_then(|r| r.validate()).map_err(wrap)?;
        self.squat.profile().validate().map_err(wrap)?;
        self.admittance.validate().map_err(wrap)?;
        self.horizon().validate().map_err(wrap)?;
        self.strap.validate().map_err(wrap)?;
        self.human.validate().map_err(wrap)?;
        if self.disturbance.spec.terms.iter().any(|t| {
            !(t.amplitude.is_finite() && t.angular_frequency.is_finite() && t.phase.is_finite())
        }) {
            return Err(Error::Config("non-finite disturbance term".into()));
        }
        Ok(())
    }

    pub fn human_params(&self) -> Result<BodyParams> {
        anthropometry(self.subject.mass, self.subject.height)
    }

    pub fn robot_params(&self) -> Result<BodyParams> {
        let human = self.human_params()?;
        Ok(match self.robot {
            None => BodyParams::exoskeleton_for(&human),
            Some(o) => BodyParams::rods(
                o.masses,
                o.lengths.unwrap_or([human.links[0].length, human.links[1].length, human.links[2].length]),
            ),
        })
    }

    pub fn horizon(&self) -> HorizonConfig {
        HorizonConfig {
            prediction: self.nmpc.prediction,
            control: self.nmpc.control,
            dt: self.control_dt,
            delta_u_max: self.nmpc.delta_u_max,
        }
    }

    pub fn nmpc_config(&self) -> Result<NmpcConfig> {
        Ok(NmpcConfig {
            horizon: self.horizon(),
            weights: self.nmpc.weights,
            admittance: self.admittance,
            robot: self.robot_params()?,
            strap: self.strap,
        })
    }

    pub fn plant(&self) -> Result<CoupledPlant> {
        Ok(CoupledPlant {
            human: self.human_params()?,
            robot: self.robot_params()?,
            strap: self.strap,
            human_ctrl: self.human,
            disturbance: self.disturbance.spec.clone(),
            disturb_human: self.disturbance.disturb_human,
            substeps: self.substeps(),
        })
    }

    pub fn substeps(&self) -> usize {
        ((self.control_dt / self.integration_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.control_dt).round() as usize
    }
}
