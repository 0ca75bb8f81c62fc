#![no_main]

use crowdcast::dataio::parse_ego_poses;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_ego_poses(text);
    }
});
