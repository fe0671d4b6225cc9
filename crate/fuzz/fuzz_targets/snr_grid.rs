#![no_main]

use epicg::harness::parse::{parse_snr_grid, MAX_GRID_POINTS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(grid) = parse_snr_grid(text) {
        assert!(!grid.is_empty() && grid.len() <= MAX_GRID_POINTS);
        assert!(grid.iter().all(|v| v.is_finite()));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }
});
