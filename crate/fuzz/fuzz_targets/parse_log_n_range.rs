#![no_main]

use libfuzzer_sys::fuzz_target;
use pimhe::bench::parse_log_n_range;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(v) = parse_log_n_range(s) {
            assert!(!v.is_empty());
            assert!(v.iter().all(|&x| (1..=26).contains(&x)));
        }
    }
});
