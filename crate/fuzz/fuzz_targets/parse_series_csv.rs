#![no_main]

use cnsprox::anomaly::read_series_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = read_series_csv(data) {
        assert_eq!(t.names.len(), t.series.count());
        assert!(t.series.data().iter().all(|v| v.is_finite()));
    }
});
