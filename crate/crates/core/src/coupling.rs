//! Human and exoskeleton plants coupled through compliant straps.
//!
//! Sign convention: `T_int` is the torque the human exerts on the robot
//! through the strap. The robot sees `u = T_R + T_int`, the human plant sees
//! the reaction, `T_h − T_int`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    coriolis_matrix, forward_dynamics, gravity_vector, inertia_matrix, rk4_generic, BodyParams,
    DisturbanceSpec, JointState, Vec3,
};
use crate::error::{Error, Result};

/// Per-joint rotational spring-damper between human and robot links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrapModel {
    pub stiffness: [f64; 3],
    pub damping: [f64; 3],
    /// Lever converting joint torque to strap force.
    pub torque_arm: [f64; 3],
}

impl Default for StrapModel {
    fn default() -> Self {
        Self {
            stiffness: [1e5; 3],
            damping: [600.0; 3],
            torque_arm: [1.0, 1.0, 1.0],
        }
    }
}

impl StrapModel {
    pub fn validate(&self) -> Result<()> {
        let ok = (0..3).all(|i| {
            self.stiffness[i] >= 0.0
                && self.damping[i] >= 0.0
                && self.torque_arm[i] > 0.0
                && self.stiffness[i].is_finite()
                && self.damping[i].is_finite()
                && self.torque_arm[i].is_finite()
        });
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad strap model {self:?}")))
        }
    }

    pub fn detached() -> Self {
        Self {
            stiffness: [0.0; 3],
            damping: [0.0; 3],
            ..Self::default()
        }
    }

    pub fn torque_to_force(&self, torque: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| torque[i] / self.torque_arm[i])
    }

    pub fn force_to_torque(&self, force: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| force[i] * self.torque_arm[i])
    }
}

/// Torque applied to the robot by the human: `k (θ_h − θ_R) + b (θ̇_h − θ̇_R)`.
pub fn interaction_torque(strap: &StrapModel, robot: &JointState, human: &JointState) -> Vec3 {
    Vec3::from_fn(|i, _| {
        strap.stiffness[i] * (human.q[i] - robot.q[i])
            + strap.damping[i] * (human.qd[i] - robot.qd[i])
    })
}

/// Feedback-linearizing tracking controller standing in for the human's
/// motor control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanController {
    pub kp: [f64; 3],
    pub kd: [f64; 3],
    /// Cancel the measured interaction torque inside the linearization.
    #[serde(default = "yes")]
    pub compensate_interaction: bool,
}

fn yes() -> bool {
    true
}

impl Default for HumanController {
    fn default() -> Self {
        Self {
            kp: [400.0; 3],
            kd: [40.0; 3],
            compensate_interaction: true,
        }
    }
}

impl HumanController {
    pub fn validate(&self) -> Result<()> {
        if (0..3).all(|i| self.kp[i] > 0.0 && self.kd[i] > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad human gains {self:?}")))
        }
    }
}

/// Reference point of a joint trajectory: position, velocity, acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPoint {
    pub q: Vec3,
    pub qd: Vec3,
    pub qdd: Vec3,
}

/// Human muscle torque `T_h` so that, with an exact model, the tracking error
/// obeys `ë + kd ė + kp e = 0`.
pub fn human_muscle_torque(
    human_params: &BodyParams,
    human: &JointState,
    reference: &RefPoint,
    t_int: &Vec3,
    ctrl: &HumanController,
) -> Vec3 {
    let e = reference.q - human.q;
    let ed = reference.qd - human.qd;
    let v = Vec3::from_fn(|i, _| reference.qdd[i] + ctrl.kd[i] * ed[i] + ctrl.kp[i] * e[i]);
    let m = inertia_matrix(human_params, &human.q);
    let c = coriolis_matrix(human_params, &human.q, &human.qd);
    let g = gravity_vector(human_params, &human.q);
    let mut torque = m * v + c * human.qd + g;
    if ctrl.compensate_interaction {
        torque += t_int;
    }
    torque
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledState {
    pub human: JointState,
    pub robot: JointState,
    pub t: f64,
}

/// Fixed inputs of a coupled simulation.
#[derive(Debug, Clone)]
pub struct CoupledPlant {
    pub human: BodyParams,
    pub robot: BodyParams,
    pub strap: StrapModel,
    pub human_ctrl: HumanController,
    pub disturbance: DisturbanceSpec,
    /// Also apply the disturbance to the human plant.
    pub disturb_human: bool,
    /// RK4 substeps per control interval (inputs stay held across them).
    pub substeps: usize,
}

/// Torques acting during one coupled step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTorques {
    pub t_int: Vec3,
    pub human_muscle: Vec3,
}

impl CoupledPlant {
    /// Advance both bodies by `dt` with the robot actuator torque held. The
    /// human controller runs at every integration substep against
    /// `reference(t)`; the strap torque is re-evaluated at every integrator
    /// stage so stiff straps stay stable. Reported torques are those at the
    /// start of the step.
    pub fn step(
        &self,
        state: &CoupledState,
        robot_torque: &Vec3,
        reference: &dyn Fn(f64) -> RefPoint,
        dt: f64,
    ) -> Result<(CoupledState, StepTorques)> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let n = self.substeps.max(1);
        let h = dt / n as f64;
        let (mut human, mut robot) = (state.human, state.robot);
        let mut first = None;
        for k in 0..n {
            let t0 = state.t + k as f64 * h;
            let t_int = interaction_torque(&self.strap, &robot, &human);
            let muscle = human_muscle_torque(&self.human, &human, &reference(t0), &t_int, &self.human_ctrl);
            first.get_or_insert(StepTorques { t_int, human_muscle: muscle });
            (human, robot) = self.rk4_held(&human, &robot, &muscle, robot_torque, t0, h);
        }

        let t = state.t + dt;
        let next = CoupledState { human, robot, t };
        if !human.is_finite() || !robot.is_finite() {
            return Err(Error::IntegrationDiverged { t });
        }
        if let Some((joint, angle)) = robot.limit_violation() {
            return Err(Error::JointLimit { t, body: "robot", joint, angle });
        }
        if let Some((joint, angle)) = human.limit_violation() {
            return Err(Error::JointLimit { t, body: "human", joint, angle });
        }
        Ok((next, first.expect("at least one substep")))
    }

    /// One RK4 step of both bodies with the muscle and actuator torques held
    /// and the strap torque evaluated at every stage.
    pub fn rk4_held(
        &self,
        human: &JointState,
        robot: &JointState,
        muscle: &Vec3,
        robot_torque: &Vec3,
        t: f64,
        h: f64,
    ) -> (JointState, JointState) {
        rk4_pair(human, robot, t, h, |hs, rs, ts| {
            let d = self.disturbance.vector(ts);
            let strap = interaction_torque(&self.strap, rs, hs);
            let hd = if self.disturb_human { d } else { Vec3::zeros() };
            (
                forward_dynamics(&self.human, hs, &(muscle - strap), &hd),
                forward_dynamics(&self.robot, rs, &(robot_torque + strap), &d),
            )
        })
    }

    /// Advance the human without the exoskeleton (no strap, no robot).
    /// Returns the muscle torque at the start of the step.
    pub fn step_unworn(
        &self,
        human: &JointState,
        t: f64,
        reference: &dyn Fn(f64) -> RefPoint,
        dt: f64,
    ) -> Result<(JointState, Vec3)> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let n = self.substeps.max(1);
        let h = dt / n as f64;
        let human_d = self.disturb_human.then_some(&self.disturbance);
        let mut s = *human;
        let mut first = None;
        for k in 0..n {
            let t0 = t + k as f64 * h;
            let muscle = human_muscle_torque(&self.human, &s, &reference(t0), &Vec3::zeros(), &self.human_ctrl);
            first.get_or_insert(muscle);
            s = rk4_generic(&s, t0, h, |x, ts| {
                let d = human_d.map_or(Vec3::zeros(), |d| d.vector(ts));
                forward_dynamics(&self.human, x, &muscle, &d)
            });
        }
        if !s.is_finite() {
            return Err(Error::IntegrationDiverged { t: t + dt });
        }
        if let Some((joint, angle)) = s.limit_violation() {
            return Err(Error::JointLimit { t: t + dt, body: "human", joint, angle });
        }
        Ok((s, first.expect("at least one substep")))
    }
}

/// Classical RK4 on two bodies sharing one acceleration function. Per
/// component the arithmetic matches [`rk4_generic`].
fn rk4_pair<F>(a: &JointState, b: &JointState, t: f64, dt: f64, accel: F) -> (JointState, JointState)
where
    F: Fn(&JointState, &JointState, f64) -> (Vec3, Vec3),
{
    let half = 0.5 * dt;
    let stage = |x: &JointState, v: &Vec3, acc: &Vec3, h: f64| JointState::new(x.q + h * v, x.qd + h * acc);

    let (k1a, k1b) = accel(a, b, t);
    let (a2, b2) = (stage(a, &a.qd, &k1a, half), stage(b, &b.qd, &k1b, half));
    let (k2a, k2b) = accel(&a2, &b2, t + half);
    let (a3, b3) = (stage(a, &a2.qd, &k2a, half), stage(b, &b2.qd, &k2b, half));
    let (k3a, k3b) = accel(&a3, &b3, t + half);
    let (a4, b4) = (stage(a, &a3.qd, &k3a, dt), stage(b, &b3.qd, &k3b, dt));
    let (k4a, k4b) = accel(&a4, &b4, t + dt);

    let finish = |x: &JointState, x2: &JointState, x3: &JointState, x4: &JointState, k1: Vec3, k2: Vec3, k3: Vec3, k4: Vec3| {
        JointState::new(
            x.q + dt / 6.0 * (x.qd + 2.0 * x2.qd + 2.0 * x3.qd + x4.qd),
            x.qd + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4),
        )
    };
    (finish(a, &a2, &a3, &a4, k1a, k2a, k3a, k4a), finish(b, &b2, &b3, &b4, k1b, k2b, k3b, k4b))
}
