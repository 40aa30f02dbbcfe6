#![no_main]

use bevloc::io::{format_cloud_text, parse_cloud_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cloud) = parse_cloud_text(text, "fuzz") else { return };
    let again = parse_cloud_text(&format_cloud_text(&cloud), "fuzz").expect("formatted cloud parses");
    assert_eq!(again.len(), cloud.len());
});
