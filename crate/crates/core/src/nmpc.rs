//! Receding-horizon NMPC over the RK4-discretized robot model.
//!
//! Decision variables are actuator-torque increments `Δu` over the control
//! horizon. Predictions hold the last move beyond the control horizon and keep
//! the interaction torque frozen at its measured value. Each SQP iteration
//! linearizes the rollout by forward differences, solves a box-constrained QP
//! in `Δu`, and line-searches on the true cost.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{ControlOutput, Controller, Measurements};
use crate::coupling::StrapModel;
use crate::dynamics::{gravity_vector, rk4_generic, forward_dynamics, BodyParams, JointState, Vec3};
use crate::error::{Error, Result};
use crate::qp::solve_box_qp;
use crate::reference::{desired_state, AdmittanceGains};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    pub prediction: usize,
    pub control: usize,
    pub dt: f64,
    /// Largest torque change per step (N·m).
    pub delta_u_max: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            prediction: 3,
            control: 3,
            dt: 0.002,
            delta_u_max: 5.0,
        }
    }
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.control >= 1
            && self.control <= self.prediction
            && self.dt > 0.0
            && self.delta_u_max > 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad horizon {self:?}")))
        }
    }
}

/// Per-step weights; expanded block-diagonally over the horizons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    /// Diagonal of the 6×6 output weight (3 angles, 3 velocities).
    pub output: [f64; 6],
    /// Diagonal of the 3×3 increment weight.
    pub increment: [f64; 3],
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            output: [1.0, 1.0, 1.0, 0.05, 0.05, 0.05],
            increment: [1e-5; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
}

impl CostWeights {
    pub fn from_spec(spec: &WeightSpec, horizon: &HorizonConfig) -> Self {
        let p = horizon.prediction;
        let m = horizon.control;
        let r1 = DMatrix::from_diagonal(&DVector::from_fn(6 * p, |i, _| spec.output[i % 6]));
        let r2 = DMatrix::from_diagonal(&DVector::from_fn(3 * m, |i, _| spec.increment[i % 3]));
        Self { r1, r2 }
    }
}

/// Stacked predictions: per step, 3 angles then 3 velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedOutput(pub DVector<f64>);

impl PredictedOutput {
    /// The same state held over `steps` steps.
    pub fn constant(target: &JointState, steps: usize) -> Self {
        Self(DVector::from_fn(6 * steps, |i, _| {
            let k = i % 6;
            if k < 3 {
                target.q[k]
            } else {
                target.qd[k - 3]
            }
        }))
    }

    pub fn steps(&self) -> usize {
        self.0.len() / 6
    }
}

/// One-step discrete model used for prediction.
pub trait PredictionModel {
    fn step(&self, state: &JointState, torque: &Vec3, dt: f64) -> JointState;
}

/// Nominal robot: RK4 of the rigid-body model with a frozen interaction
/// torque and no disturbance.
#[derive(Debug, Clone, Copy)]
pub struct RobotModel {
    pub params: BodyParams,
    pub t_int_hold: Vec3,
}

impl PredictionModel for RobotModel {
    fn step(&self, state: &JointState, torque: &Vec3, dt: f64) -> JointState {
        let u = torque + self.t_int_hold;
        rk4_generic(state, 0.0, dt, |s, _| forward_dynamics(&self.params, s, &u, &Vec3::zeros()))
    }
}

/// Absolute torques `u_i = u_prev + Σ_{j≤i} Δu_j`.
pub fn absolute_sequence(u_prev: &Vec3, delta_u: &[Vec3]) -> Vec<Vec3> {
    delta_u
        .iter()
        .scan(*u_prev, |acc, d| {
            *acc += d;
            Some(*acc)
        })
        .collect()
}

/// Predict `P` steps; moves beyond the control horizon repeat the last one.
pub fn rollout<Mdl: PredictionModel + ?Sized>(
    model: &Mdl,
    state: &JointState,
    u_seq: &[Vec3],
    horizon: &HorizonConfig,
) -> Result<PredictedOutput> {
    if u_seq.len() != horizon.control || u_seq.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "rollout needs {} moves, got {}",
            horizon.control,
            u_seq.len()
        )));
    }
    let mut y = DVector::zeros(6 * horizon.prediction);
    let mut s = *state;
    for i in 0..horizon.prediction {
        let u = u_seq[i.min(u_seq.len() - 1)];
        s = model.step(&s, &u, horizon.dt);
        if !s.is_finite() {
            return Err(Error::IntegrationDiverged { t: (i + 1) as f64 * horizon.dt });
        }
        y.fixed_rows_mut::<3>(6 * i).copy_from(&s.q);
        y.fixed_rows_mut::<3>(6 * i + 3).copy_from(&s.qd);
    }
    Ok(PredictedOutput(y))
}

/// `J = (y_d − y)ᵀ R1 (y_d − y) + Δuᵀ R2 Δu`.
pub fn cost(
    y: &PredictedOutput,
    y_d: &PredictedOutput,
    delta_u: &[Vec3],
    weights: &CostWeights,
) -> Result<f64> {
    let n = y.0.len();
    if y_d.0.len() != n || weights.r1.nrows() != n || weights.r2.nrows() != 3 * delta_u.len() {
        return Err(Error::InvalidArgument(format!(
            "cost dimensions: y {}, y_d {}, R1 {}, Δu {}, R2 {}",
            n,
            y_d.0.len(),
            weights.r1.nrows(),
            delta_u.len(),
            weights.r2.nrows()
        )));
    }
    let e = &y_d.0 - &y.0;
    let du = stack(delta_u);
    Ok(e.dot(&(&weights.r1 * &e)) + du.dot(&(&weights.r2 * &du)))
}

fn stack(v: &[Vec3]) -> DVector<f64> {
    DVector::from_fn(3 * v.len(), |i, _| v[i / 3][i % 3])
}

fn unstack(z: &DVector<f64>) -> Vec<Vec3> {
    (0..z.len() / 3)
        .map(|k| Vec3::new(z[3 * k], z[3 * k + 1], z[3 * k + 2]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SqpProblem<'a> {
    pub state: JointState,
    pub y_d: &'a PredictedOutput,
    pub weights: &'a CostWeights,
    pub horizon: HorizonConfig,
    pub u_prev: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcSolution {
    pub delta_u: Vec<Vec3>,
    pub u_seq: Vec<Vec3>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// True cost of every accepted iterate, starting with the initial guess.
    pub cost_history: Vec<f64>,
}

pub const FD_STEP: f64 = 1e-5;
pub const STEP_TOLERANCE: f64 = 1e-6;
pub const MAX_SQP_ITERATIONS: usize = 30;

/// Gauss-Newton SQP for the box-constrained NMPC problem. Never fails on
/// non-convergence; returns the best iterate with `converged = false`.
pub fn sqp_solve<Mdl: PredictionModel + ?Sized>(
    model: &Mdl,
    problem: &SqpProblem<'_>,
    warm_start: &[Vec3],
) -> Result<NmpcSolution> {
    let h = &problem.horizon;
    h.validate()?;
    let m = h.control;
    let n = 3 * m;
    if warm_start.len() != m {
        return Err(Error::InvalidArgument(format!(
            "warm start needs {m} moves, got {}",
            warm_start.len()
        )));
    }
    let r1 = &problem.weights.r1;
    let r2 = &problem.weights.r2;
    if r1.nrows() != 6 * h.prediction || r2.nrows() != n || problem.y_d.0.len() != 6 * h.prediction {
        return Err(Error::InvalidArgument("NMPC weight or target dimensions".into()));
    }

    let lower = DVector::repeat(n, -h.delta_u_max);
    let upper = DVector::repeat(n, h.delta_u_max);
    let predict = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let u = absolute_sequence(&problem.u_prev, &unstack(z));
        rollout(model, &problem.state, &u, h).map(|y| y.0)
    };
    let true_cost = |z: &DVector<f64>, y: &DVector<f64>| -> f64 {
        let e = &problem.y_d.0 - y;
        e.dot(&(r1 * &e)) + z.dot(&(r2 * z))
    };

    let mut z = DVector::from_fn(n, |i, _| warm_start[i / 3][i % 3].clamp(-h.delta_u_max, h.delta_u_max));
    let mut y = predict(&z)?;
    let mut current = true_cost(&z, &y);
    let mut history = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_SQP_ITERATIONS {
        iterations += 1;

        let mut jac = DMatrix::zeros(y.len(), n);
        for j in 0..n {
            let mut zp = z.clone();
            zp[j] += FD_STEP;
            let yp = predict(&zp)?;
            jac.set_column(j, &((yp - &y) / FD_STEP));
        }

        // linearized residual: y_d − y(w) ≈ b − J w
        let b = &problem.y_d.0 - &y + &jac * &z;
        let jt_r1 = jac.transpose() * r1;
        let hess = (&jt_r1 * &jac + r2) * 2.0;
        let lin = -(&jt_r1 * &b) * 2.0;
        if !hess.iter().chain(lin.iter()).all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { t: h.dt * h.prediction as f64 });
        }
        let Ok(qp) = solve_box_qp(&hess, &lin, &lower, &upper, &z) else {
            // Hessian lost definiteness to rounding; keep the current iterate
            log::debug!("SQP stopped at iteration {iterations}: QP not solvable");
            break;
        };

        let step = &qp.x - &z;
        if step.amax() < STEP_TOLERANCE {
            converged = true;
            break;
        }
        // gradient of the true cost at z, through the linearization
        let grad = &hess * &z + &lin;
        let slope = grad.dot(&step).min(0.0);

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1.0 / 1024.0 {
            let trial = &z + &step * alpha;
            if let Ok(yt) = predict(&trial) {
                let c = true_cost(&trial, &yt);
                if c <= current + 1e-4 * alpha * slope {
                    accepted = Some((trial, yt, c));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, yt, c)) = accepted else {
            // no decrease along the QP step: stationary to working precision
            converged = step.amax() * alpha < STEP_TOLERANCE;
            break;
        };
        let moved = (&trial - &z).amax();
        z = trial;
        y = yt;
        current = c;
        history.push(current);
        if moved < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }

    let delta_u = unstack(&z);
    let u_seq = absolute_sequence(&problem.u_prev, &delta_u);
    Ok(NmpcSolution {
        delta_u,
        u_seq,
        cost: current,
        iterations,
        converged,
        cost_history: history,
    })
}

/// Everything the NMPC controller needs besides measurements.
#[derive(Debug, Clone)]
pub struct NmpcConfig {
    pub horizon: HorizonConfig,
    pub weights: WeightSpec,
    pub admittance: AdmittanceGains,
    /// Nominal robot model.
    pub robot: BodyParams,
    pub strap: StrapModel,
}

/// Receding-horizon controller with warm start. One instance per loop.
#[derive(Debug, Clone)]
pub struct NmpcController {
    config: NmpcConfig,
    weights: CostWeights,
    u_prev: Vec3,
    warm: Vec<Vec3>,
    last: Option<NmpcSolution>,
}

impl NmpcController {
    pub fn new(config: NmpcConfig) -> Result<Self> {
        config.horizon.validate()?;
        config.admittance.validate()?;
        let weights = CostWeights::from_spec(&config.weights, &config.horizon);
        let m = config.horizon.control;
        Ok(Self {
            config,
            weights,
            u_prev: Vec3::zeros(),
            warm: vec![Vec3::zeros(); m],
            last: None,
        })
    }

    pub fn config(&self) -> &NmpcConfig {
        &self.config
    }

    pub fn previous_torque(&self) -> Vec3 {
        self.u_prev
    }

    pub fn set_previous_torque(&mut self, u: Vec3) {
        self.u_prev = u;
    }

    /// Increment sequence the next solve starts from.
    pub fn warm_start(&self) -> &[Vec3] {
        &self.warm
    }

    pub fn set_warm_start(&mut self, warm: Vec<Vec3>) -> Result<()> {
        if warm.len() != self.config.horizon.control {
            return Err(Error::InvalidArgument(format!(
                "warm start has {} moves, control horizon is {}",
                warm.len(),
                self.config.horizon.control
            )));
        }
        self.warm = warm;
        Ok(())
    }

    pub fn last_solution(&self) -> Option<&NmpcSolution> {
        self.last.as_ref()
    }

    /// Solve without touching controller state.
    pub fn solve(&self, m: &Measurements) -> Result<NmpcSolution> {
        let t_int = self.config.strap.force_to_torque(&m.f_int);
        let target = desired_state(&m.robot, &m.f_int, &m.f_intd, &self.config.admittance);
        let y_d = PredictedOutput::constant(&target, self.config.horizon.prediction);
        let model = RobotModel {
            params: self.config.robot,
            t_int_hold: t_int,
        };
        let problem = SqpProblem {
            state: m.robot,
            y_d: &y_d,
            weights: &self.weights,
            horizon: self.config.horizon,
            u_prev: self.u_prev,
        };
        sqp_solve(&model, &problem, &self.warm)
    }

    /// Apply the first move and shift the solution into the next warm start.
    pub fn nmpc_step(&mut self, m: &Measurements) -> Result<(Vec3, NmpcSolution)> {
        let solution = self.solve(m)?;
        let u = solution.u_seq[0];
        self.warm = solution.delta_u[1..]
            .iter()
            .copied()
            .chain(std::iter::once(Vec3::zeros()))
            .collect();
        self.u_prev = u;
        self.last = Some(solution.clone());
        Ok((u, solution))
    }
}

impl Controller for NmpcController {
    fn name(&self) -> &'static str {
        "nmpc"
    }

    /// Starts from the torque that statically holds the robot against its own
    /// gravity and the measured interaction torque.
    fn reset(&mut self, initial: &Measurements) {
        let t_int = self.config.strap.force_to_torque(&initial.f_int);
        self.u_prev = gravity_vector(&self.config.robot, &initial.robot.q) - t_int;
        self.warm = vec![Vec3::zeros(); self.config.horizon.control];
        self.last = None;
    }

    fn step(&mut self, m: &Measurements) -> Result<ControlOutput> {
        let (torque, sol) = self.nmpc_step(m)?;
        Ok(ControlOutput {
            torque,
            iterations: sol.iterations,
            ..Default::default()
        })
    }
}
