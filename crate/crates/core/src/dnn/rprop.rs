//! Full-batch iRPROP− training.
//!
//! On a plateau of `plateau_epochs` epochs without a relative improvement of
//! `plateau_tolerance`, every step size restarts at the current restart value,
//! which is then multiplied by `adaptive_factor` for the next restart.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradient, MlpNetwork};
use super::TrainingSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpropConfig {
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub delta_init: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub adaptive_factor: f64,
    pub plateau_epochs: usize,
    pub plateau_tolerance: f64,
    pub max_epochs: usize,
    pub target_mse: f64,
}

impl Default for RpropConfig {
    fn default() -> Self {
        Self {
            eta_plus: 1.2,
            eta_minus: 0.5,
            delta_init: 0.01,
            delta_min: 1e-6,
            delta_max: 1.0,
            adaptive_factor: 0.5,
            plateau_epochs: 20,
            plateau_tolerance: 1e-3,
            max_epochs: 500,
            target_mse: 0.0,
        }
    }
}

impl RpropConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.eta_minus
            && self.eta_minus < 1.0
            && 1.0 < self.eta_plus
            && 0.0 < self.delta_min
            && self.delta_min <= self.delta_init
            && self.delta_init <= self.delta_max
            && self.adaptive_factor > 0.0
            && self.adaptive_factor <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad RPROP config {self:?}")))
        }
    }
}

/// Per-parameter RPROP memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RpropState {
    pub steps: Vec<f64>,
    pub prev_grad: Vec<f64>,
    /// Gradient and MSE at the current parameters, if already evaluated.
    cached: Option<(Vec<f64>, f64)>,
}

impl RpropState {
    pub fn new(parameter_count: usize, config: &RpropConfig) -> Self {
        Self {
            steps: vec![config.delta_init; parameter_count],
            prev_grad: vec![0.0; parameter_count],
            cached: None,
        }
    }

    pub fn restart(&mut self, step: f64) {
        self.steps.fill(step);
        self.prev_grad.fill(0.0);
    }
}

/// Samples per gradient chunk. Chunks are reduced in index order, so the sum
/// does not depend on the number of worker threads.
pub const CHUNK: usize = 2048;

/// Full-batch gradient of `½ Σ‖f(x) − y‖²` and mean squared error over all
/// scaled targets.
pub fn full_batch_gradient(net: &MlpNetwork, data: &TrainingSet) -> (Gradient, f64) {
    let n = data.len();
    let chunks: Vec<(Gradient, f64)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let len = CHUNK.min(n - start);
            net.batch_gradient(
                data.inputs.columns(start, len),
                data.targets.columns(start, len),
            )
        })
        .collect();
    let mut total = Gradient::zeros_like(net);
    let mut sse = 0.0;
    for (g, s) in &chunks {
        total.add_assign(g);
        sse += s;
    }
    (total, sse / (n * net.output_size()) as f64)
}

/// Mean squared error on scaled targets.
pub fn mse(net: &MlpNetwork, data: &TrainingSet) -> f64 {
    full_batch_gradient(net, data).1
}

/// Apply one iRPROP− update to `params` given the gradient.
pub fn rprop_update(params: &mut [f64], grad: &[f64], state: &mut RpropState, config: &RpropConfig) {
    for i in 0..params.len() {
        let g = grad[i];
        let product = state.prev_grad[i] * g;
        if product > 0.0 {
            state.steps[i] = (state.steps[i] * config.eta_plus).min(config.delta_max);
            params[i] -= g.signum() * state.steps[i];
            state.prev_grad[i] = g;
        } else if product < 0.0 {
            state.steps[i] = (state.steps[i] * config.eta_minus).max(config.delta_min);
            state.prev_grad[i] = 0.0;
        } else {
            if g != 0.0 {
                params[i] -= g.signum() * state.steps[i];
            }
            state.prev_grad[i] = g;
        }
    }
}

/// One full-batch epoch; returns the MSE after the update.
pub fn rprop_epoch(
    net: &mut MlpNetwork,
    data: &TrainingSet,
    state: &mut RpropState,
    config: &RpropConfig,
) -> f64 {
    let grad = match state.cached.take() {
        Some((g, _)) => g,
        None => full_batch_gradient(net, data).0.flatten(),
    };
    let mut params = net.parameters();
    rprop_update(&mut params, &grad, state, config);
    net.set_parameters(&params).expect("parameter count is fixed");
    let (g, mse) = full_batch_gradient(net, data);
    state.cached = Some((g.flatten(), mse));
    mse
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    /// Post-update MSE of every epoch run.
    pub history: Vec<f64>,
    pub best_mse: f64,
    pub best_epoch: usize,
    pub restarts: usize,
}

/// Train until `target_mse` or `max_epochs`; the best parameters seen are
/// written back into `net`.
pub fn train(net: &mut MlpNetwork, data: &TrainingSet, config: &RpropConfig) -> Result<TrainingReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if data.inputs.nrows() != net.input_size() || data.targets.nrows() != net.output_size() {
        return Err(Error::InvalidArgument("training set does not match network shape".into()));
    }
    let mut state = RpropState::new(net.parameter_count(), config);
    let mut best_params = net.parameters();
    let mut best_mse = mse(net, data);
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut restart_step = config.delta_init * config.adaptive_factor;
    let mut restarts = 0;
    let mut plateau_ref = best_mse;
    let mut plateau_start = 0;

    for epoch in 1..=config.max_epochs {
        let loss = rprop_epoch(net, data, &mut state, config);
        if !loss.is_finite() || !net.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                reason: format!("loss {loss}, best {best_mse:.3e} at epoch {best_epoch}"),
            });
        }
        history.push(loss);
        if loss < best_mse {
            best_mse = loss;
            best_epoch = epoch;
            best_params = net.parameters();
        }
        log::debug!("epoch {epoch}: mse {loss:.4e}");
        if loss <= config.target_mse {
            break;
        }
        if best_mse < plateau_ref * (1.0 - config.plateau_tolerance) {
            plateau_ref = best_mse;
            plateau_start = epoch;
        } else if epoch - plateau_start >= config.plateau_epochs {
            state.restart(restart_step.clamp(config.delta_min, config.delta_max));
            restart_step *= config.adaptive_factor;
            restarts += 1;
            plateau_ref = best_mse;
            plateau_start = epoch;
        }
    }
    net.set_parameters(&best_params)?;
    Ok(TrainingReport {
        history,
        best_mse,
        best_epoch,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_quadratic_step_schedule() {
        // loss ½(w − 1)², start at 0, Δ0 = 0.1
        let cfg = RpropConfig {
            delta_init: 0.1,
            ..Default::default()
        };
        let mut state = RpropState::new(1, &cfg);
        let mut w = [0.0];
        let mut trace = vec![];
        for _ in 0..12 {
            let g = [w[0] - 1.0];
            rprop_update(&mut w, &g, &mut state, &cfg);
            trace.push((w[0], state.steps[0]));
        }
        // growth: 0.1, 0.12, 0.144, 0.1728, 0.20736 while approaching
        let expected_w = [0.1, 0.22, 0.364, 0.5368, 0.74416, 0.992_992];
        for (k, e) in expected_w.iter().enumerate() {
            assert!((trace[k].0 - e).abs() < 1e-9, "step {k}: {:?}", trace[k]);
        }
        // next step 0.29859… overshoots to 1.2915904; then the step halves and w is held
        assert!((trace[6].0 - 1.291_590_4).abs() < 1e-9);
        assert!((trace[7].0 - trace[6].0).abs() < 1e-15);
        assert!((trace[7].1 - 0.5 * trace[6].1).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameter_and_step() {
        let cfg = RpropConfig::default();
        let mut state = RpropState::new(2, &cfg);
        let mut w = [1.0, 2.0];
        rprop_update(&mut w, &[0.0, 1.0], &mut state, &cfg);
        assert_eq!(w[0], 1.0);
        assert_eq!(state.steps[0], cfg.delta_init);
        rprop_update(&mut w, &[0.0, 1.0], &mut state, &cfg);
        assert_eq!(w[0], 1.0);
        assert_eq!(state.steps[0], cfg.delta_init);
    }

    #[test]
    fn steps_stay_bounded() {
        let cfg = RpropConfig {
            delta_max: 0.05,
            ..Default::default()
        };
        let mut state = RpropState::new(3, &cfg);
        let mut w = [0.0; 3];
        let mut x: u64 = 11;
        for _ in 0..500 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
            let g = [
                if x & 1 == 0 { 1.0 } else { -1.0 },
                1.0,
                if x & 2 == 0 { 0.3 } else { -0.7 },
            ];
            rprop_update(&mut w, &g, &mut state, &cfg);
            assert!(state.steps.iter().all(|s| (cfg.delta_min..=cfg.delta_max).contains(s)));
        }
    }

    #[test]
    fn config_validation() {
        assert!(RpropConfig::default().validate().is_ok());
        assert!(RpropConfig { eta_minus: 1.5, ..Default::default() }.validate().is_err());
        assert!(RpropConfig { delta_init: 2.0, ..Default::default() }.validate().is_err());
    }
}
