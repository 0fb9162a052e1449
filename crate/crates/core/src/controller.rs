//! The step contract shared by every exoskeleton controller.

use crate::dynamics::{JointState, Vec3};
use crate::error::Result;

/// What a controller sees at a control instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub robot: JointState,
    /// Measured interaction force (N).
    pub f_int: Vec3,
    /// Desired interaction force (N).
    pub f_intd: Vec3,
}

impl Measurements {
    pub fn force_error(&self) -> Vec3 {
        self.f_int - self.f_intd
    }

    /// Network input layout: q, qd, F_int, F_intd.
    pub fn features(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for i in 0..3 {
            out[i] = self.robot.q[i];
            out[3 + i] = self.robot.qd[i];
            out[6 + i] = self.f_int[i];
            out[9 + i] = self.f_intd[i];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlOutput {
    /// Actuator torque `T_R` to apply.
    pub torque: Vec3,
    /// Network contribution `O` (hybrid and network-only controllers).
    pub network: Vec3,
    /// PI contribution (hybrid controller).
    pub pi_term: Vec3,
    /// SQP iterations (NMPC only).
    pub iterations: usize,
}

pub trait Controller {
    fn name(&self) -> &'static str;

    /// Called once before the first step with the initial measurements.
    fn reset(&mut self, initial: &Measurements);

    fn step(&mut self, m: &Measurements) -> Result<ControlOutput>;
}
