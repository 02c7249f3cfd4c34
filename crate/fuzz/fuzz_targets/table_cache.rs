#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use warpadam::tasks::{decode_table, encode_table};

fuzz_target!(|data: &[u8]| {
    // the format has one encoding per table, so anything accepted re-encodes
    // to the same bytes
    if let Ok(table) = decode_table(data, Path::new("fuzz")) {
        assert_eq!(encode_table(&table), data);
    }
});
