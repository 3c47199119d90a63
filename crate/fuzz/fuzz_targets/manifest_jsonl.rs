#![no_main]

use avtse::mixsim::{Manifest, Split};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = Manifest::from_jsonl(text, Split::Test) {
        assert_eq!(Manifest::from_jsonl(&m.to_jsonl(), Split::Test).unwrap(), m);
    }
});
