#![no_main]

use crowdcast::dataio::{make_windows, parse_trajectories, DEFAULT_FRAME_RATE};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(ds) = parse_trajectories(text, DEFAULT_FRAME_RATE) else { return };
    // Whatever parses must survive a text round trip and windowing.
    let again = parse_trajectories(&ds.to_text(), DEFAULT_FRAME_RATE).expect("re-parse");
    assert_eq!(again.records(), ds.records());
    if ds.frames().len() <= 64 {
        let _ = make_windows(&ds, 2, 1, 1);
    }
});
