#![no_main]

use libfuzzer_sys::fuzz_target;
use ltstab::scenario::{parse_case, serialize_case};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // anything accepted must survive a round trip
    if let Ok(case) = parse_case(text) {
        let again = parse_case(&serialize_case(&case)).expect("serialized case parses");
        assert_eq!(again, case);
    }
});
