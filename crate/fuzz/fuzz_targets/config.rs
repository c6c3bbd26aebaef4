#![no_main]

use libfuzzer_sys::fuzz_target;
use ssp_core::harness::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::from_toml_str(text) {
        // Accepted configurations survive a round trip unchanged. Compared as
        // text so NaN entries do not trip the check.
        let text = cfg.to_toml_string().unwrap();
        let again = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(text, again.to_toml_string().unwrap());
    }
});
