#![no_main]

use hybridmpc::controller::Measurements;
use hybridmpc::dnn::model_io::decode_model;
use hybridmpc::dynamics::{JointState, Vec3};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((policy, _)) = decode_model(data) {
        let m = Measurements {
            robot: JointState::at_rest(Vec3::new(0.3, 0.2, -0.1)),
            f_int: Vec3::zeros(),
            f_intd: Vec3::zeros(),
        };
        let _ = policy.predict(&m);
    }
});
