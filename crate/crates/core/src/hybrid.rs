//! Network torque plus a PI correction on the interaction-force error:
//! `T_R(k) = O(k) + K_P e(k) + K_I Σ_{i≤k} e(i)`, with `e = F_int − F_intd`.
//!
//! The integral is a plain per-step sum (no `dt`), so `K_I` is per step.

use serde::{Deserialize, Serialize};

use crate::controller::{ControlOutput, Controller, Measurements};
use crate::dnn::Policy;
use crate::dynamics::Vec3;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    /// N·m/N
    pub kp: [f64; 3],
    /// N·m/(N·step)
    pub ki: [f64; 3],
    /// Bound on `|K_I · Σe|` per joint (N·m).
    pub windup_limit: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        Self {
            kp: [0.2; 3],
            ki: [0.13; 3],
            windup_limit: 5.0,
        }
    }
}

impl PiGains {
    pub fn zero() -> Self {
        Self {
            kp: [0.0; 3],
            ki: [0.0; 3],
            windup_limit: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiState {
    pub gains: PiGains,
    /// Accumulated force error.
    pub integral: Vec3,
}

impl PiState {
    pub fn new(gains: PiGains) -> Self {
        Self {
            gains,
            integral: Vec3::zeros(),
        }
    }

    /// Integral zeroed, gains kept.
    pub fn reset(self) -> Self {
        Self::new(self.gains)
    }

    /// Accumulate `e` and return `(P term, I term)` with the integral clamped
    /// so that `|K_I · Σe| ≤ windup_limit`.
    pub fn update(&mut self, error: &Vec3) -> (Vec3, Vec3) {
        let mut p = Vec3::zeros();
        let mut i_term = Vec3::zeros();
        for j in 0..3 {
            let ki = self.gains.ki[j];
            self.integral[j] += error[j];
            if ki != 0.0 {
                let bound = self.gains.windup_limit / ki.abs();
                self.integral[j] = self.integral[j].clamp(-bound, bound);
            }
            p[j] = self.gains.kp[j] * error[j];
            i_term[j] = ki * self.integral[j];
        }
        (p, i_term)
    }
}

/// Network output `O` and the PI terms for one step.
pub fn hybrid_torque(policy: &Policy, m: &Measurements, pi: &PiState) -> (Vec3, PiState, Vec3, Vec3) {
    let network = policy.predict(m);
    let mut next = *pi;
    let (p, i) = next.update(&m.force_error());
    (network + p + i, next, network, p + i)
}

/// Distilled-network controller, with or without the PI correction.
#[derive(Debug, Clone)]
pub struct HybridController {
    policy: Policy,
    pi: PiState,
    with_pi: bool,
}

impl HybridController {
    pub fn new(policy: Policy, gains: PiGains) -> Self {
        Self {
            policy,
            pi: PiState::new(gains),
            with_pi: true,
        }
    }

    /// The network alone, without PI correction.
    pub fn network_only(policy: Policy) -> Self {
        Self {
            policy,
            pi: PiState::new(PiGains::zero()),
            with_pi: false,
        }
    }

    pub fn pi_state(&self) -> &PiState {
        &self.pi
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }
}

impl Controller for HybridController {
    fn name(&self) -> &'static str {
        if self.with_pi {
            "hybrid"
        } else {
            "dnn-only"
        }
    }

    fn reset(&mut self, _initial: &Measurements) {
        self.pi = self.pi.reset();
    }

    fn step(&mut self, m: &Measurements) -> Result<ControlOutput> {
        if !self.with_pi {
            let network = self.policy.predict(m);
            return Ok(ControlOutput {
                torque: network,
                network,
                ..Default::default()
            });
        }
        let (torque, pi, network, pi_term) = hybrid_torque(&self.policy, m, &self.pi);
        self.pi = pi;
        Ok(ControlOutput {
            torque,
            network,
            pi_term,
            iterations: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dnn::{MinMax, MlpNetwork, Scaler, DEFAULT_LAYERS};
    use crate::dynamics::JointState;

    fn zero_policy() -> Policy {
        // symmetric target range so a zero network output unscales to zero torque
        let scaler = Scaler {
            inputs: MinMax { min: vec![-1.0; 12], max: vec![1.0; 12] },
            targets: MinMax { min: vec![-100.0; 3], max: vec![100.0; 3] },
        };
        Policy::new(MlpNetwork::zeros(&DEFAULT_LAYERS).unwrap(), scaler).unwrap()
    }

    fn meas(err: Vec3) -> Measurements {
        Measurements {
            robot: JointState::at_rest(Vec3::new(1.2, 0.3, -0.4)),
            f_int: Vec3::new(10.0, 20.0, 30.0) + err,
            f_intd: Vec3::new(10.0, 20.0, 30.0),
        }
    }

    #[test]
    fn zero_network_zero_error() {
        let policy = zero_policy();
        let mut pi = PiState::new(PiGains::default());
        for _ in 0..4 {
            let (t, next, _, _) = hybrid_torque(&policy, &meas(Vec3::zeros()), &pi);
            assert_eq!(t, Vec3::zeros());
            pi = next;
        }
    }

    #[test]
    fn constant_error_accumulates() {
        let policy = zero_policy();
        let mut pi = PiState::new(PiGains::default());
        let mut t = Vec3::zeros();
        for _ in 0..5 {
            let out = hybrid_torque(&policy, &meas(Vec3::new(1.0, 0.0, 0.0)), &pi);
            t = out.0;
            pi = out.1;
        }
        assert!((t[0] - (0.2 + 0.13 * 5.0)).abs() < 1e-12);
        assert_eq!(t[1], 0.0);
    }

    #[test]
    fn windup_is_bounded_and_reset_clears_it() {
        let gains = PiGains { windup_limit: 1.0, ..Default::default() };
        let mut pi = PiState::new(gains);
        for _ in 0..1000 {
            pi.update(&Vec3::new(50.0, -50.0, 0.0));
            for j in 0..3 {
                assert!((gains.ki[j] * pi.integral[j]).abs() <= 1.0 + 1e-12);
            }
        }
        let (_, i) = pi.update(&Vec3::new(-1.0, 0.0, 0.0));
        // saturated: one step of opposite error barely moves the integral term
        assert!((i[0] - (1.0 - 0.13)).abs() < 1e-12);
        let fresh = pi.reset();
        assert_eq!(fresh.integral, Vec3::zeros());
        assert_eq!(fresh.reset(), fresh);
        let mut fresh = fresh;
        let (_, i) = fresh.update(&Vec3::new(-1.0, 0.0, 0.0));
        assert!((i[0] + 0.13).abs() < 1e-12);
    }

    #[test]
    fn names() {
        assert_eq!(HybridController::new(zero_policy(), PiGains::default()).name(), "hybrid");
        assert_eq!(HybridController::network_only(zero_policy()).name(), "dnn-only");
    }
}
