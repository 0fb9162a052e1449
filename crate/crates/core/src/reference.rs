//! Squat reference trajectories, gravity-compensating interaction targets and
//! the admittance-style desired robot state.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::coupling::{RefPoint, StrapModel};
use crate::dynamics::{gravity_vector, BodyParams, JointState, Vec3, JOINT_LIMIT};
use crate::error::{Error, Result};

/// Periodic stand → deep → stand motion.
///
/// The blend is `s = (1 − α) c + α (3c² − 2c³)` on the raised cosine
/// `c = (1 − cos(2πt/T)) / 2`, where `α` is `smoothness`. Larger `α` dwells
/// longer near both poses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquatProfile {
    pub cycle_duration: f64,
    pub stand_pose: [f64; 3],
    pub deep_pose: [f64; 3],
    #[serde(default)]
    pub smoothness: f64,
}

impl SquatProfile {
    /// Default poses: stand (85°, 0°, 0°), deep (60°, 100°, −90°). The deep pose
    /// keeps the hip behind the knee and the trunk leaning forward.
    pub fn standard(cycle_duration: f64) -> Self {
        Self {
            cycle_duration,
            stand_pose: [85f64.to_radians(), 0.0, 0.0],
            deep_pose: [60f64.to_radians(), 100f64.to_radians(), -90f64.to_radians()],
            smoothness: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let poses_ok = self
            .stand_pose
            .iter()
            .chain(self.deep_pose.iter())
            .all(|a| a.abs() <= JOINT_LIMIT);
        if self.cycle_duration > 0.0
            && self.cycle_duration.is_finite()
            && poses_ok
            && (0.0..=1.0).contains(&self.smoothness)
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad squat profile {self:?}")))
        }
    }

    /// Same profile with the squat depth scaled by `depth` (1 = full deep pose).
    pub fn with_depth(mut self, depth: f64) -> Self {
        for i in 0..3 {
            self.deep_pose[i] = self.stand_pose[i] + depth * (self.deep_pose[i] - self.stand_pose[i]);
        }
        self
    }
}

/// Reference position, velocity and acceleration at time `t`.
pub fn squat_reference(profile: &SquatProfile, t: f64) -> RefPoint {
    let w = 2.0 * PI / profile.cycle_duration;
    // phase reduced to one period keeps t and t + T bit-identical
    let phase = w * t.rem_euclid(profile.cycle_duration);
    let (sin, cos) = phase.sin_cos();
    let c = 0.5 * (1.0 - cos);
    let cd = 0.5 * w * sin;
    let cdd = 0.5 * w * w * cos;

    let a = profile.smoothness;
    let s = (1.0 - a) * c + a * (3.0 * c * c - 2.0 * c * c * c);
    let ds = (1.0 - a) + a * 6.0 * c * (1.0 - c);
    let dds = a * (6.0 - 12.0 * c);

    let sd = ds * cd;
    let sdd = dds * cd * cd + ds * cdd;

    let stand = Vec3::from(profile.stand_pose);
    let span = Vec3::from(profile.deep_pose) - stand;
    RefPoint {
        q: stand + s * span,
        qd: sd * span,
        qdd: sdd * span,
    }
}

/// The 25 training profiles: 5 depths × 5 smoothness values.
pub fn profile_grid(cycle_duration: f64) -> Vec<SquatProfile> {
    const DEPTHS: [f64; 5] = [0.6, 0.7, 0.8, 0.9, 1.0];
    const SMOOTHNESS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
    let base = SquatProfile::standard(cycle_duration);
    DEPTHS
        .iter()
        .flat_map(|&d| {
            SMOOTHNESS.iter().map(move |&a| SquatProfile {
                smoothness: a,
                ..base.with_depth(d)
            })
        })
        .collect()
}

/// Diagonal admittance gains mapping force error to position/velocity offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceGains {
    /// rad/N
    pub c1: [f64; 3],
    /// rad/(s·N)
    pub c2: [f64; 3],
}

impl Default for AdmittanceGains {
    fn default() -> Self {
        Self {
            c1: [0.05, 0.05, 0.1],
            c2: [0.01, 0.01, 0.03],
        }
    }
}

impl AdmittanceGains {
    pub fn validate(&self) -> Result<()> {
        if self.c1.iter().chain(self.c2.iter()).all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("admittance gains must be non-negative: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredInteraction {
    pub torque: Vec3,
    pub force: Vec3,
}

impl DesiredInteraction {
    pub fn from_torque(torque: Vec3, strap: &StrapModel) -> Self {
        Self {
            torque,
            force: strap.torque_to_force(&torque),
        }
    }
}

/// Desired interaction torque: the negated human gravity torques estimated at
/// the robot's joint angles.
pub fn desired_interaction_torque(human_params: &BodyParams, robot_q: &Vec3) -> Vec3 {
    -gravity_vector(human_params, robot_q)
}

pub fn desired_interaction(
    human_params: &BodyParams,
    robot_q: &Vec3,
    strap: &StrapModel,
) -> DesiredInteraction {
    DesiredInteraction::from_torque(desired_interaction_torque(human_params, robot_q), strap)
}

/// `θ_d = θ + C1 (F_int − F_intd)`, `θ̇_d = θ̇ + C2 (F_int − F_intd)`.
pub fn desired_state(
    robot: &JointState,
    f_int: &Vec3,
    f_intd: &Vec3,
    gains: &AdmittanceGains,
) -> JointState {
    let err = f_int - f_intd;
    JointState::new(
        robot.q + Vec3::from(gains.c1).component_mul(&err),
        robot.qd + Vec3::from(gains.c2).component_mul(&err),
    )
}
