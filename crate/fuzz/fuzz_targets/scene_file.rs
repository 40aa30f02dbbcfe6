#![no_main]

use bevloc::synth::{format_scene, parse_scene};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(scene) = parse_scene(text, "fuzz") else { return };
    let again = parse_scene(&format_scene(&scene), "fuzz").expect("formatted scene parses");
    assert_eq!(again.segments.len(), scene.segments.len());
    assert_eq!(again.pillars.len(), scene.pillars.len());
});
