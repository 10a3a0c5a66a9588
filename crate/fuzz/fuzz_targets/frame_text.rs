//! Whitespace-separated text frame parser.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = maskedvox::io::decode_frame_text(text);
    }
});
