#![no_main]

use avtse::mixsim::{decode_avf, encode_avf};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(frames) = decode_avf(data) {
        assert_eq!(frames.data().len(), frames.len() * frames.height() * frames.width());
        assert_eq!(decode_avf(&encode_avf(&frames)).unwrap(), frames);
    }
});
