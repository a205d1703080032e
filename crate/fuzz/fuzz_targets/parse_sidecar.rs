#![no_main]

use cnsprox::container::Sidecar;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(s) = Sidecar::parse(text) {
            assert_eq!(Sidecar::parse(&s.to_json()).unwrap(), s);
        }
    }
});
