#![no_main]

use hybridmpc::harness::ScenarioConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::from_toml(text) {
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).expect("emitted config parses");
        assert_eq!(again.to_toml(), cfg.to_toml());
    }
});
