#![no_main]

use libfuzzer_sys::fuzz_target;
use ltstab::scenario::{parse_schedule, serialize_schedule};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = parse_schedule(text) {
            assert_eq!(parse_schedule(&serialize_schedule(&s)).unwrap(), s);
        }
    }
});
