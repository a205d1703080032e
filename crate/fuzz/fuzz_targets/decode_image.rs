#![no_main]

use cnsprox_bench::images::decode_gray;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for convert in [false, true] {
        if let Ok(img) = decode_gray(data, convert) {
            assert_eq!(img.pixels.len(), img.rows * img.cols);
            assert!(img.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
