//! Arbitrary input to the byte and text entry points must produce a value
//! or an error, never a panic.
use pimhe::bench::{parse_config, parse_dpu_list, parse_log_n_range};
use pimhe::pimsim::{decode_residues, encode_residues};
use proptest::prelude::*;

proptest! {
    #[test]
    fn decode_residues_total(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
        match decode_residues(&bytes) {
            Ok(words) => prop_assert_eq!(encode_residues(&words), bytes),
            Err(_) => prop_assert!(bytes.len() % 8 != 0),
        }
    }

    #[test]
    fn text_parsers_total(s in "\\PC{0,24}") {
        let _ = parse_log_n_range(&s);
        let _ = parse_dpu_list(&s);
        let _ = parse_config(&s);
    }

    #[test]
    fn range_syntax_round_trips(lo in 1u32..=26, len in 0u32..5) {
        let hi = (lo + len).min(26);
        let v = parse_log_n_range(&format!("{lo}..{hi}")).unwrap();
        prop_assert_eq!(v, (lo..=hi).collect::<Vec<_>>());
    }
}
