#![no_main]

use avtse::lipnet::{format_label_file, parse_label_file};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(entries) = parse_label_file(text) {
        assert_eq!(parse_label_file(&format_label_file(&entries)).unwrap(), entries);
    }
});
