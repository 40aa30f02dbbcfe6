#![no_main]

use bevloc::landmarks::LandmarkSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(set) = LandmarkSet::parse_text(text) else { return };
    let again = LandmarkSet::parse_text(&set.to_text()).expect("formatted landmarks parse");
    assert_eq!(again.len(), set.len());
});
