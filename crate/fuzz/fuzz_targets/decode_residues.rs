#![no_main]

use libfuzzer_sys::fuzz_target;
use pimhe::pimsim::{decode_residues, encode_residues};

fuzz_target!(|data: &[u8]| {
    if let Ok(words) = decode_residues(data) {
        assert_eq!(encode_residues(&words), data);
    }
});
