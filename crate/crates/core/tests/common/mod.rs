//! Oracles shared by the integration tests.

use hybridmpc::dynamics::{JointState, Vec3};
use hybridmpc::nmpc::{HorizonConfig, PredictionModel};
use nalgebra::DMatrix;

/// Three decoupled double integrators `q̈ = u`, discretized exactly.
pub struct DoubleIntegrators;

impl PredictionModel for DoubleIntegrators {
    fn step(&self, s: &JointState, u: &Vec3, dt: f64) -> JointState {
        JointState::new(s.q + dt * s.qd + 0.5 * dt * dt * u, s.qd + dt * u)
    }
}

/// Sensitivity of the stacked outputs to the stacked increments for the
/// double integrators: move `j` enters every absolute torque from step `j` on.
pub fn double_integrator_jacobian(h: &HorizonConfig) -> DMatrix<f64> {
    let dt = h.dt;
    let mut jac = DMatrix::zeros(6 * h.prediction, 3 * h.control);
    for i in 0..h.prediction {
        for j in 0..h.control {
            // torque at step s includes Δu_j when min(s, M−1) ≥ j
            let (mut dq, mut dv) = (0.0, 0.0);
            for s in 0..=i {
                if s.min(h.control - 1) >= j {
                    // effect of a unit torque at step s on (q, qd) after step i
                    let after = (i - s) as f64 * dt;
                    dq += 0.5 * dt * dt + dt * after;
                    dv += dt;
                }
            }
            for a in 0..3 {
                jac[(6 * i + a, 3 * j + a)] = dq;
                jac[(6 * i + 3 + a, 3 * j + a)] = dv;
            }
        }
    }
    jac
}
