//! Replays the checked-in fuzz corpus through the same properties the fuzz
//! targets assert, so they hold on stable without cargo-fuzz.

use std::path::PathBuf;

use bevloc::bundle::{decode_bundle, decode_with_appendix, encode_bundle, encode_with_appendix};
use bevloc::io::{decode_cloud_bin, encode_cloud_bin, format_cloud_text, format_trajectory, parse_cloud_text, parse_trajectory};
use bevloc::landmarks::LandmarkSet;
use bevloc::localizer::parse_result_records;
use bevloc::synth::{format_scene, parse_scene};

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn texts(target: &str) -> Vec<(String, String)> {
    corpus(target)
        .into_iter()
        .filter_map(|(n, b)| String::from_utf8(b).ok().map(|t| (n, t)))
        .collect()
}

#[test]
fn bundle_decode() {
    let mut accepted = 0;
    for (name, data) in corpus("bundle_decode") {
        let Ok((bundle, appendix)) = decode_with_appendix(&data) else { continue };
        accepted += 1;
        let bytes = match appendix {
            Some(a) => encode_with_appendix(&bundle, a),
            None => encode_bundle(&bundle),
        };
        assert_eq!(bytes, data, "{name}: accepted input must be canonical");
        if appendix.is_none() {
            assert_eq!(decode_bundle(&bytes).unwrap(), bundle, "{name}");
        }
    }
    assert!(accepted >= 2);
}

#[test]
fn bundle_rejects_truncation_and_garbage() {
    for (name, data) in corpus("bundle_decode") {
        if name.starts_with("truncated") || name.starts_with("trailing") {
            assert!(decode_with_appendix(&data).is_err(), "{name}");
        }
    }
}

#[test]
fn cloud_bin() {
    for (name, data) in corpus("cloud_bin") {
        match decode_cloud_bin(&data) {
            Ok(cloud) => assert_eq!(encode_cloud_bin(&cloud), data, "{name}"),
            Err(_) => assert!(name.starts_with("partial"), "{name} rejected"),
        }
    }
}

#[test]
fn cloud_text() {
    for (name, text) in texts("cloud_text") {
        let Ok(cloud) = parse_cloud_text(&text, &name) else { continue };
        let again = parse_cloud_text(&format_cloud_text(&cloud), &name).unwrap();
        assert_eq!(again.len(), cloud.len(), "{name}");
    }
}

#[test]
fn trajectory() {
    for (name, text) in texts("trajectory") {
        let Ok(entries) = parse_trajectory(&text, &name) else { continue };
        let again = parse_trajectory(&format_trajectory(&entries), &name).unwrap();
        assert_eq!(again.len(), entries.len(), "{name}");
        for (a, b) in entries.iter().zip(&again) {
            assert_eq!(a.frame_id, b.frame_id);
        }
    }
}

#[test]
fn scene_file() {
    for (name, text) in texts("scene_file") {
        let Ok(scene) = parse_scene(&text, &name) else { continue };
        let again = parse_scene(&format_scene(&scene), &name).unwrap();
        assert_eq!(again.segments.len(), scene.segments.len(), "{name}");
        assert_eq!(again.pillars.len(), scene.pillars.len(), "{name}");
    }
}

#[test]
fn landmark_list() {
    for (name, text) in texts("landmark_list") {
        let Ok(set) = LandmarkSet::parse_text(&text) else { continue };
        let again = LandmarkSet::parse_text(&set.to_text()).unwrap();
        assert_eq!(again.len(), set.len(), "{name}");
    }
}

#[test]
fn result_records() {
    for (name, text) in texts("result_records") {
        let parsed = parse_result_records(&text, &name);
        if name.starts_with("nan") {
            assert!(parsed.is_err(), "{name}");
        } else {
            parsed.unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
