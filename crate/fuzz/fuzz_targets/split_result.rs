//! Split-result text parser, plus serialize-reparse stability.

#![no_main]

use libfuzzer_sys::fuzz_target;
use maskedvox::splits::{parse_split_result, split_result_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(result) = parse_split_result(text) {
        let canonical = split_result_to_string(&result);
        let reparsed = parse_split_result(&canonical).expect("canonical form reparses");
        assert_eq!(
            split_result_to_string(&reparsed),
            canonical,
            "serialization is not a fixed point"
        );
    }
});
