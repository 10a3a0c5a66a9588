//! Binary point-record decoder on raw bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = maskedvox::io::decode_frame_bin(data);
});
