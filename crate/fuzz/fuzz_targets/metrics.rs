//! Metrics-file parser, plus serialize-reparse stability.

#![no_main]

use libfuzzer_sys::fuzz_target;
use maskedvox::pretrain::{metrics_to_string, parse_metrics};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(metrics) = parse_metrics(text) {
        let canonical = metrics_to_string(&metrics);
        let reparsed = parse_metrics(&canonical).expect("canonical form reparses");
        assert_eq!(
            metrics_to_string(&reparsed),
            canonical,
            "serialization is not a fixed point"
        );
    }
});
