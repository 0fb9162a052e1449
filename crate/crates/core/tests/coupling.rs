use approx::assert_relative_eq;
use hybridmpc::coupling::*;
use hybridmpc::dynamics::*;
use hybridmpc::reference::{squat_reference, SquatProfile};
use proptest::prelude::*;

fn human() -> BodyParams {
    anthropometry(80.0, 1.9).unwrap()
}

fn plant(strap: StrapModel, substeps: usize) -> CoupledPlant {
    let h = human();
    CoupledPlant {
        human: h,
        robot: BodyParams::exoskeleton_for(&h),
        strap,
        human_ctrl: HumanController::default(),
        disturbance: DisturbanceSpec::squat_test(),
        disturb_human: false,
        substeps,
    }
}

fn hold(q: Vec3) -> RefPoint {
    RefPoint { q, qd: Vec3::zeros(), qdd: Vec3::zeros() }
}

fn vec3() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-2.0..2.0f64).prop_map(Vec3::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn strap_power_balance(qh in vec3(), qr in vec3(), vh in vec3(), vr in vec3(),
                           k in 0.0..1e5f64, b in 0.0..1e3f64) {
        let strap = StrapModel { stiffness: [k; 3], damping: [b; 3], torque_arm: [1.0; 3] };
        let (h, r) = (JointState::new(qh, vh), JointState::new(qr, vr));
        let t = interaction_torque(&strap, &r, &h);
        // the human receives −T_int, the robot +T_int
        let into_human = -t.dot(&vh);
        let into_robot = t.dot(&vr);
        let dissipated = b * (vh - vr).norm_squared();
        let spring_rate = k * (qh - qr).dot(&(vh - vr));
        let total = into_human + into_robot + dissipated + spring_rate;
        let scale = 1.0 + into_human.abs() + into_robot.abs() + dissipated + spring_rate.abs();
        prop_assert!(total.abs() <= 1e-6 * scale, "imbalance {total}");
    }

    #[test]
    fn force_torque_round_trip(t in prop::array::uniform3(-1e3..1e3f64),
                               r in prop::array::uniform3(0.05..2.0f64)) {
        let strap = StrapModel { torque_arm: r, ..Default::default() };
        let t = Vec3::from(t);
        let back = strap.force_to_torque(&strap.torque_to_force(&t));
        prop_assert!((back - t).amax() <= 1e-12 * (1.0 + t.amax()));
    }
}

#[test]
fn gravity_support_only_when_on_reference_at_rest() {
    let p = human();
    let q = Vec3::new(1.1, 0.5, -0.4);
    let t = human_muscle_torque(&p, &JointState::at_rest(q), &hold(q), &Vec3::zeros(), &HumanController::default());
    assert_relative_eq!(t, gravity_vector(&p, &q), epsilon = 1e-12);
}

#[test]
fn unworn_error_follows_second_order_ode() {
    // ë + 40 ė + 400 e = 0 is critically damped at ω = 20 rad/s
    let p = plant(StrapModel::detached(), 1);
    let target = Vec3::new(1.2, 0.3, -0.2);
    let mut s = JointState::at_rest(target - Vec3::new(0.1, 0.0, 0.0));
    let dt = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 1..=50_000 {
        s = p.step_unworn(&s, 0.0, &|_| hold(target), dt).unwrap().0;
        let t = k as f64 * dt;
        let e_exact = 0.1 * (-20.0 * t).exp() * (1.0 + 20.0 * t);
        let e = target - s.q;
        worst = worst.max((e[0] - e_exact).abs()).max(e[1].abs()).max(e[2].abs());
    }
    // zero-order hold of the muscle torque contributes O(dt) error
    assert!(worst < 1e-4 * 0.1, "max deviation {worst}");
}

#[test]
fn unworn_human_tracks_squat_reference() {
    let p = plant(StrapModel::detached(), 40);
    let profile = SquatProfile::standard(1.75);
    let dt = 0.002;
    let start = squat_reference(&profile, 0.0);
    let mut s = JointState::new(start.q, start.qd);
    let mut sum = 0.0;
    let n = (1.75f64 / dt).round() as usize;
    for k in 0..n {
        let t = k as f64 * dt;
        s = p.step_unworn(&s, t, &|ts| squat_reference(&profile, ts), dt).unwrap().0;
        sum += (squat_reference(&profile, t + dt).q - s.q).norm_squared() / 3.0;
    }
    let rms = (sum / n as f64).sqrt();
    assert!(rms < 1e-4, "tracking RMS {rms} rad");
}

#[test]
fn detached_strap_factorizes_bitwise() {
    let p = plant(StrapModel::detached(), 7);
    let profile = SquatProfile::standard(2.0);
    let r0 = squat_reference(&profile, 0.0);
    let mut coupled = CoupledState {
        human: JointState::new(r0.q, r0.qd),
        robot: JointState::at_rest(Vec3::new(1.3, 0.2, -0.1)),
        t: 0.0,
    };
    let (mut h, mut r) = (coupled.human, coupled.robot);
    let u = Vec3::new(40.0, 15.0, 5.0);
    let dt = 0.002;
    for k in 0..200 {
        let t = coupled.t;
        let reference = |ts: f64| squat_reference(&profile, ts);
        coupled = p.step(&coupled, &u, &reference, dt).unwrap().0;
        h = p.step_unworn(&h, t, &reference, dt).unwrap().0;
        let sub = dt / 7.0;
        for j in 0..7 {
            r = rk4_step(&p.robot, &r, &u, &p.disturbance, t + j as f64 * sub, sub).unwrap();
        }
        assert_eq!(coupled.human, h, "human diverged at step {k}");
        assert_eq!(coupled.robot, r, "robot diverged at step {k}");
    }
}

#[test]
fn strap_reaction_is_equal_and_opposite() {
    let p = plant(StrapModel::default(), 1);
    let state = CoupledState {
        human: JointState::new(Vec3::new(1.2, 0.4, -0.3), Vec3::new(0.1, -0.2, 0.3)),
        robot: JointState::new(Vec3::new(1.2003, 0.3998, -0.3001), Vec3::new(0.12, -0.21, 0.28)),
        t: 0.0,
    };
    let u = Vec3::new(30.0, 10.0, -5.0);
    let reference = hold(Vec3::new(1.1, 0.5, -0.2));
    // one tiny step resolves the initial accelerations
    let h = 1e-8;
    let (next, torques) = p.step(&state, &u, &|_| reference, h).unwrap();
    let acc = |a: &JointState, b: &JointState| (b.qd - a.qd) / h;
    let (ah, ar) = (acc(&state.human, &next.human), acc(&state.robot, &next.robot));
    let d = p.disturbance.vector(0.0);
    let on_human = inertia_matrix(&p.human, &state.human.q) * ah
        + coriolis_matrix(&p.human, &state.human.q, &state.human.qd) * state.human.qd
        + gravity_vector(&p.human, &state.human.q)
        - torques.human_muscle;
    let on_robot = inertia_matrix(&p.robot, &state.robot.q) * ar
        + coriolis_matrix(&p.robot, &state.robot.q, &state.robot.qd) * state.robot.qd
        + gravity_vector(&p.robot, &state.robot.q)
        + d
        - u;
    let scale = torques.t_int.amax();
    assert!((on_human + torques.t_int).amax() < 1e-4 * scale, "{on_human} vs {}", -torques.t_int);
    assert!((on_robot - torques.t_int).amax() < 1e-4 * scale, "{on_robot} vs {}", torques.t_int);
}

#[test]
fn coupled_integration_converges_at_fourth_order() {
    let p = plant(StrapModel::default(), 1);
    let profile = SquatProfile::standard(1.75);
    let r0 = squat_reference(&profile, 0.0);
    let human = JointState::new(r0.q, r0.qd);
    let robot = JointState::new(r0.q + Vec3::new(2e-4, -1e-4, 3e-4), r0.qd);
    let muscle = human_muscle_torque(&p.human, &human, &r0, &Vec3::zeros(), &p.human_ctrl);
    let u = gravity_vector(&p.robot, &robot.q) + Vec3::new(5.0, -3.0, 2.0);
    let span = 0.01;
    let run = |n: usize| {
        let h = span / n as f64;
        let (mut a, mut b) = (human, robot);
        for k in 0..n {
            (a, b) = p.rk4_held(&a, &b, &muscle, &u, k as f64 * h, h);
        }
        (a, b)
    };
    let (ra, rb) = run(16384);
    let errs: Vec<f64> = [128, 256, 512, 1024]
        .iter()
        .map(|&n| {
            let (a, b) = run(n);
            (a.qd - ra.qd).amax().max((b.qd - rb.qd).amax())
        })
        .collect();
    let observed = (errs[0] / errs[3]).log2() / 3.0;
    assert!(observed >= 3.8, "errors {errs:?}");
}

#[test]
fn feedforward_robot_rides_along() {
    // robot torque cancels its own dynamics along the reference; starting
    // matched, both bodies stay on the reference
    let mut p = plant(StrapModel::default(), 40);
    p.disturbance = DisturbanceSpec::none();
    let profile = SquatProfile::standard(1.75);
    let r0 = squat_reference(&profile, 0.0);
    let mut s = CoupledState {
        human: JointState::new(r0.q, r0.qd),
        robot: JointState::new(r0.q, r0.qd),
        t: 0.0,
    };
    let dt = 0.002;
    let mut worst: f64 = 0.0;
    for k in 0..875 {
        let t = k as f64 * dt;
        let r = squat_reference(&profile, t);
        let u = inertia_matrix(&p.robot, &r.q) * r.qdd
            + coriolis_matrix(&p.robot, &r.q, &r.qd) * r.qd
            + gravity_vector(&p.robot, &r.q);
        s = p.step(&s, &u, &|ts| squat_reference(&profile, ts), dt).unwrap().0;
        let next = squat_reference(&profile, t + dt);
        worst = worst.max((s.human.q - next.q).amax()).max((s.robot.q - next.q).amax());
    }
    assert!(worst < 1e-3, "worst deviation {worst} rad");
}
