#![no_main]

use libfuzzer_sys::fuzz_target;
use popmachine::RunLog;

fuzz_target!(|data: &[u8]| {
    if let Ok(log) = RunLog::read_csv(data) {
        assert_eq!(RunLog::read_csv(log.to_csv().as_bytes()).expect("written log reads back"), log);
    }
});
