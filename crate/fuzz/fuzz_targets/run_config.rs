#![no_main]

use avtse_cli::config::{ConfigFormat, RunConfig};
use libfuzzer_sys::fuzz_target;

// The first byte picks the syntax.
fuzz_target!(|data: &[u8]| {
    let Some((&tag, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let format = match tag % 3 {
        0 => ConfigFormat::Toml,
        1 => ConfigFormat::Yaml,
        _ => ConfigFormat::Json,
    };
    if let Ok(cfg) = RunConfig::parse(text, format) {
        cfg.validate().expect("parsed configs are valid");
    }
});
