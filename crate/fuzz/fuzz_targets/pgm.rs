#![no_main]

use libfuzzer_sys::fuzz_target;
use warpadam::tasks::decode_pgm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pgm(data) {
        // resampling must stay in range for any image that decodes
        for side in [1, 3] {
            assert!(img.resample(side).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
});
