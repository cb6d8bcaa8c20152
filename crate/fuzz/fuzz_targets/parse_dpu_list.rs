#![no_main]

use libfuzzer_sys::fuzz_target;
use pimhe::bench::parse_dpu_list;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(v) = parse_dpu_list(s) {
            assert!(v.iter().all(|&d| (1..=65536).contains(&d)));
        }
    }
});
