#![no_main]

use cnsprox::container::{decode, encode_dictionary, encode_maps, Payload};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // anything that decodes must re-encode to the same bytes
    if let Ok(p) = decode(data) {
        let again = match &p {
            Payload::Dictionary(d) => encode_dictionary(d),
            Payload::Maps(x) => encode_maps(x),
        };
        assert_eq!(decode(&again).unwrap(), p);
    }
});
