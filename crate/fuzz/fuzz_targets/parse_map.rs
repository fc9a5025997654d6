#![no_main]

use libfuzzer_sys::fuzz_target;
use popmachine::parse_map;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = parse_map(text) {
        assert_eq!(parse_map(&map.to_text()).expect("rendered map parses"), map);
    }
});
