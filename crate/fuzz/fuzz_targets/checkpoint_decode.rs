#![no_main]

use avtse::nn::Checkpoint;
use libfuzzer_sys::fuzz_target;

// Compared as bytes so that NaN payloads still round-trip.
fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::decode(data) {
        let bytes = ckpt.encode();
        assert_eq!(Checkpoint::decode(&bytes).unwrap().encode(), bytes);
    }
});
