#![no_main]

use crowdcast::ndnum::Checkpoint;
use crowdcast::seqnet::ModelParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ck) = Checkpoint::decode(data) else { return };
    // Compare encodings: stored values may be NaN.
    let bytes = ck.encode();
    assert_eq!(Checkpoint::decode(&bytes).expect("re-decode").encode(), bytes);
    let _ = ModelParams::from_checkpoint(ck);
});
