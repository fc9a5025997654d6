#![no_main]

use libfuzzer_sys::fuzz_target;
use popmachine::parse_experiment_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_experiment_config(text);
    }
});
