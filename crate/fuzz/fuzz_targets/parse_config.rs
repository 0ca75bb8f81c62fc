#![no_main]

use crowdcast::config::{parse_config, ModelConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((model, train)) = parse_config(text) {
        // Accepted settings are valid and print back to the same values.
        let (m2, t2) = parse_config(&format!("{model}{train}")).expect("re-parse");
        assert_eq!(m2, model);
        assert_eq!(t2, train);
    }
    let _ = ModelConfig::parse(text);
});
