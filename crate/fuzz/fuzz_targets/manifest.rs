//! Manifest parser, plus serialize-reparse stability on accepted inputs.

#![no_main]

use libfuzzer_sys::fuzz_target;
use maskedvox::io::{manifest_to_string, parse_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(manifest) = parse_manifest(text) {
        let canonical = manifest_to_string(&manifest);
        let reparsed = parse_manifest(&canonical).expect("canonical form reparses");
        assert_eq!(
            manifest_to_string(&reparsed),
            canonical,
            "serialization is not a fixed point"
        );
    }
});
