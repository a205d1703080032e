#![no_main]

use cnsprox_bench::config::{LoadedConfig, Overrides, Task};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(loaded) = LoadedConfig::from_str(text) {
            for task in [Task::Cdl, Task::Csc, Task::Denoise, Task::Anomaly] {
                let _ = loaded.clone().finalize(task, &Overrides::default());
            }
        }
    }
});
