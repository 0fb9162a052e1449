#![no_main]

use hybridmpc::dnn::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = Dataset::decode(data) {
        // anything accepted must survive a round trip
        let bytes = ds.to_bytes().expect("decoded dataset encodes");
        let again = Dataset::decode(&bytes).expect("re-encoded dataset decodes");
        assert_eq!(again.samples, ds.samples);
    }
});
