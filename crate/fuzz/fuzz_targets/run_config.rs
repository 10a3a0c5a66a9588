//! TOML run-config parser, including the `key.path=value` override path.
//!
//! Inputs whose first line is `set <override>` exercise the override
//! machinery against the remaining lines; everything else goes through
//! the plain parser. Accepted configs must serialize without panicking.

#![no_main]

use libfuzzer_sys::fuzz_target;
use maskedvox::config::{parse_run_config, parse_run_config_with_overrides, run_config_to_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let parsed = match text.split_once('\n') {
        Some((head, rest)) if head.starts_with("set ") => {
            let sets = vec![head["set ".len()..].to_string()];
            parse_run_config_with_overrides(rest, &sets)
        }
        _ => parse_run_config(text),
    };
    if let Ok(cfg) = parsed {
        let _ = run_config_to_string(&cfg);
    }
});
