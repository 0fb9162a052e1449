use hybridmpc::dnn::dataset::*;
use hybridmpc::dnn::mlp::*;
use hybridmpc::dnn::rprop::*;
use hybridmpc::dnn::TrainingSet;
use hybridmpc::harness::config::Subject;
use hybridmpc::nmpc::NmpcController;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn half_squared_error(net: &MlpNetwork, x: &[f64], y: &[f64]) -> f64 {
    net.forward(x).iter().zip(y).map(|(a, b)| 0.5 * (a - b).powi(2)).sum()
}

/// Layer sizes, seed, activation layout, input and target.
fn small_problem() -> impl Strategy<Value = (Vec<usize>, u64, u8, Vec<f64>, Vec<f64>)> {
    (1usize..5, prop::collection::vec(1usize..8, 1..3), 1usize..4, any::<u64>(), 0u8..3).prop_flat_map(
        |(n_in, hidden, n_out, seed, layout)| {
            let mut sizes = vec![n_in];
            sizes.extend(hidden);
            sizes.push(n_out);
            (
                Just(sizes),
                Just(seed),
                Just(layout),
                prop::collection::vec(-1.0..1.0f64, n_in),
                prop::collection::vec(-2.0..2.0f64, n_out),
            )
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn backward_matches_central_differences((sizes, seed, layout, x, y) in small_problem()) {
        let mut net = MlpNetwork::new(&sizes, seed).unwrap();
        // 0: shipped layout, 1: sigmoid everywhere, 2: linear everywhere
        for l in &mut net.layers {
            match layout {
                1 => l.activation = Activation::BipolarSigmoid,
                2 => l.activation = Activation::Identity,
                _ => {}
            }
            // nonzero biases so every parameter is exercised
            for (i, b) in l.biases.iter_mut().enumerate() {
                *b = 0.1 * ((i as f64) - 1.0);
            }
        }
        let analytic = net.backward(&x, &y).flatten();
        let base = net.parameters();
        let h = 1e-6;
        let mut probe = net.clone();
        let numeric: Vec<f64> = (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] += h;
                probe.set_parameters(&p).unwrap();
                let up = half_squared_error(&probe, &x, &y);
                p[i] -= 2.0 * h;
                probe.set_parameters(&p).unwrap();
                let down = half_squared_error(&probe, &x, &y);
                (up - down) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-6 * norm + 1e-9, "relative error {}", diff / norm);
    }

    #[test]
    fn rprop_steps_stay_in_bounds(grads in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 6), 1..40),
                                  delta_init in 1e-6..1.0f64) {
        let config = RpropConfig { delta_init, ..Default::default() };
        let mut state = RpropState::new(6, &config);
        let mut params = vec![0.0; 6];
        for g in &grads {
            // zero some components so the sign(0) path is covered
            let g: Vec<f64> = g.iter().map(|&v| if v.abs() < 0.2 { 0.0 } else { v }).collect();
            rprop_update(&mut params, &g, &mut state, &config);
            prop_assert!(state.steps.iter().all(|&d| config.delta_min <= d && d <= config.delta_max));
        }
    }
}

fn column_set(xs: &[f64], ys: &[f64]) -> TrainingSet {
    TrainingSet {
        inputs: DMatrix::from_row_slice(1, xs.len(), xs),
        targets: DMatrix::from_row_slice(1, ys.len(), ys),
    }
}

#[test]
fn learns_identity_map() {
    let xs: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
    let data = column_set(&xs, &xs);
    let mut net = MlpNetwork::new(&[1, 4, 1], 3).unwrap();
    let config = RpropConfig { max_epochs: 200, target_mse: 1e-4, ..Default::default() };
    let report = train(&mut net, &data, &config).unwrap();
    assert!(report.best_mse < 1e-4, "best {} after {} epochs", report.best_mse, report.history.len());
    assert!(report.history.len() <= 200);
}

#[test]
fn identical_samples_converge_monotonically() {
    let data = column_set(&[0.3; 20], &[-0.6; 20]);
    let mut net = MlpNetwork::new(&[1, 3, 1], 11).unwrap();
    let config = RpropConfig { max_epochs: 60, ..Default::default() };
    let report = train(&mut net, &data, &config).unwrap();
    let h = &report.history;
    // iRPROP− overshoots after every sign flip, so single epochs can rise;
    // the best loss of each 10-epoch block falls strictly after the first
    let minima: Vec<f64> = h[10..].chunks(10).map(|c| c.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    assert!(minima.windows(2).all(|w| w[1] < w[0]), "block minima {minima:?}");
    assert!(report.best_mse < 1e-10, "history {h:?}");
}

#[test]
fn training_is_seed_deterministic() {
    let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x * x - 0.2).collect();
    let data = column_set(&xs, &ys);
    let config = RpropConfig { max_epochs: 40, ..Default::default() };
    let run = |seed| {
        let mut net = MlpNetwork::new(&[1, 6, 6, 1], seed).unwrap();
        let report = train(&mut net, &data, &config).unwrap();
        (net.parameters(), report.history)
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5).0, run(6).0);
}

fn replay_grid() -> DatasetGrid {
    DatasetGrid {
        bodies: vec![Subject { mass: 70.0, height: 1.75 }, Subject { mass: 95.0, height: 1.85 }],
        cycle_durations: vec![2.0],
        control_dts: vec![0.002, 0.005],
        cycles: 0.5,
        ..Default::default()
    }
}

#[test]
fn recorded_targets_replay_bit_for_bit() {
    let grid = replay_grid();
    let data = generate_dataset(&grid).unwrap();
    let scenarios = &data.header.scenarios;
    assert!(scenarios.iter().all(|s| s.skipped.is_none()));
    let mut owner = Vec::with_capacity(data.len());
    for s in scenarios {
        owner.extend(std::iter::repeat_n(s, s.samples));
    }
    assert_eq!(owner.len(), data.len());
    let rows: Vec<usize> = (0..100).map(|k| k * data.len() / 100).collect();
    for &row in &rows {
        let sample = &data.samples[row];
        let cfg = grid.scenario_config(owner[row]);
        let mut ctrl = NmpcController::new(cfg.nmpc_config().unwrap()).unwrap();
        ctrl.set_previous_torque(sample.prev_torque.into());
        ctrl.set_warm_start(sample.warm_moves()).unwrap();
        let (u, _) = ctrl.nmpc_step(&sample.measurements()).unwrap();
        for j in 0..3 {
            assert_eq!(u[j].to_bits(), sample.targets[j].to_bits(), "row {row} joint {j}");
        }
    }
}

#[test]
fn dataset_generation_is_deterministic() {
    let grid = replay_grid();
    let a = generate_dataset(&grid).unwrap().to_bytes().unwrap();
    let b = generate_dataset(&grid).unwrap().to_bytes().unwrap();
    assert_eq!(a, b);
}

#[test]
fn scaled_training_inputs_lie_in_unit_box() {
    let data = generate_dataset(&replay_grid()).unwrap();
    let set = TrainingSet::new(&data.samples, &data.header.scaler).unwrap();
    assert!(set.inputs.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(set.targets.iter().all(|v| (-1.0..=1.0).contains(v)));
}
