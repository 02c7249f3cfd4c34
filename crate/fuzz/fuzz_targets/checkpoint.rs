#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use warpadam::warp::{decode_warps, encode_warps};

fuzz_target!(|data: &[u8]| {
    if let Ok(warps) = decode_warps(data, Path::new("fuzz")) {
        assert_eq!(encode_warps(&warps), data);
    }
});
