#![no_main]

use libfuzzer_sys::fuzz_target;
use pimhe::bench::parse_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_config(s) {
            assert!(cfg.dpu.validate().is_ok());
        }
    }
});
