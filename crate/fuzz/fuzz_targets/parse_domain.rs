#![no_main]

use libfuzzer_sys::fuzz_target;
use popmachine::{parse_domain, serialize_domain};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = parse_domain(text) {
        // Whatever parses must survive a round trip.
        let again = serialize_domain(&file.domain, &file.tasks);
        let reparsed = parse_domain(&again).expect("serialized domain parses");
        assert_eq!(serialize_domain(&reparsed.domain, &reparsed.tasks), again);
    }
});
