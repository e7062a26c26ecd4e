#![no_main]

use libfuzzer_sys::fuzz_target;
use ltstab::scenario::read_trace;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = read_trace(text) {
        // compared as text: a NaN cell is canonical but never equal to itself
        let csv = table.to_csv();
        assert_eq!(read_trace(&csv).unwrap().to_csv(), csv);
    }
});
