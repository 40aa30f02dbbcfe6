#![no_main]

use bevloc::io::{decode_cloud_bin, encode_cloud_bin};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cloud) = decode_cloud_bin(data) {
        assert_eq!(encode_cloud_bin(&cloud), data);
    }
});
