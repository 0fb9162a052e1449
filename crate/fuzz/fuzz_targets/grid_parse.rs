#![no_main]

use hybridmpc::dnn::DatasetGrid;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(grid) = DatasetGrid::from_toml(text) {
        let _ = grid.scenarios();
    }
});
