#![no_main]

use bevloc::io::{format_trajectory, parse_trajectory};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(entries) = parse_trajectory(text, "fuzz") else { return };
    let again = parse_trajectory(&format_trajectory(&entries), "fuzz").expect("formatted trajectory parses");
    assert_eq!(again.len(), entries.len());
    for (a, b) in entries.iter().zip(&again) {
        assert_eq!(a.frame_id, b.frame_id);
    }
});
