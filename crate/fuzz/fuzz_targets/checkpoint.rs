//! Binary checkpoint decoder. The format has no canonicalization slack,
//! so any accepted input must re-serialize to exactly the same bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use maskedvox::nn::{checkpoint_from_bytes, checkpoint_to_bytes};

fuzz_target!(|data: &[u8]| {
    if let Ok(params) = checkpoint_from_bytes(data) {
        assert_eq!(
            checkpoint_to_bytes(&params),
            data,
            "accepted checkpoint did not round-trip bit-exactly"
        );
    }
});
