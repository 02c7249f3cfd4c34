#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use warpadam::bench::{curve_csv, parse_curve_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(records) = parse_curve_csv(text, Path::new("fuzz")) {
        let again = parse_curve_csv(&curve_csv(&records), Path::new("again")).expect("own output parses");
        assert_eq!(again.len(), records.len());
    }
});
