#![no_main]

use avtse::signal::wav::{decode_wav, encode_wav};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = decode_wav(data) {
        let again = decode_wav(&encode_wav(&w)).expect("re-encoded wav decodes");
        assert_eq!(w, again);
    }
});
