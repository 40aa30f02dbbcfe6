#![no_main]

use bevloc::bundle::{decode_bundle, decode_with_appendix, encode_bundle, encode_with_appendix};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok((bundle, appendix)) = decode_with_appendix(data) else { return };
    let bytes = match appendix {
        Some(a) => encode_with_appendix(&bundle, a),
        None => encode_bundle(&bundle),
    };
    assert_eq!(bytes, data, "accepted input must be canonical");
    if appendix.is_none() {
        assert_eq!(decode_bundle(&bytes).unwrap(), bundle);
    }
});
