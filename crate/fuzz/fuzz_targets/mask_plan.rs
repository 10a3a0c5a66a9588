//! Mask-plan text parser, plus serialize-reparse stability.

#![no_main]

use libfuzzer_sys::fuzz_target;
use maskedvox::sampling::{mask_plan_to_string, parse_mask_plan};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(plan) = parse_mask_plan(text) {
        let canonical = mask_plan_to_string(&plan);
        let reparsed = parse_mask_plan(&canonical).expect("canonical form reparses");
        assert_eq!(
            mask_plan_to_string(&reparsed),
            canonical,
            "serialization is not a fixed point"
        );
    }
});
