#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use warpadam::config::{parse_kv, ConfigLayers, Settings};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(file) = parse_kv(text, Path::new("fuzz")) else {
        return;
    };
    // resolving must reject or accept, never panic; sources are not loaded
    if let Ok(s) = Settings::resolve(ConfigLayers {
        file,
        ..Default::default()
    }) {
        let again = parse_kv(&s.manifest("fuzz", &[]), Path::new("manifest")).expect("manifest parses");
        assert!(!again.is_empty());
    }
});
