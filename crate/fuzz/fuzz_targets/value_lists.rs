#![no_main]

use epicg::harness::parse::{parse_f64_list, parse_key_values, parse_list, parse_switch};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(items) = parse_list(text) {
        assert!(items.iter().all(|s| !s.is_empty() && s.trim() == s));
    }
    if let Ok(values) = parse_f64_list(text) {
        assert!(values.iter().all(|v| v.is_finite()));
    }
    if let Ok(pairs) = parse_key_values(text) {
        assert!(pairs.iter().all(|(k, v)| !k.is_empty() && !v.is_empty()));
    }
    let _ = parse_switch(text);
});
