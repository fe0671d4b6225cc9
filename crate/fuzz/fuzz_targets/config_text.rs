#![no_main]

use epicg::harness::Settings;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(settings) = Settings::from_config_text(text) else {
        return;
    };
    // Merging with an empty override is the identity.
    assert_eq!(settings.clone().merged(Settings::default()), settings);
});
