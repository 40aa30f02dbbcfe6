#![no_main]

use bevloc::localizer::parse_result_records;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_result_records(text, "fuzz");
    }
});
