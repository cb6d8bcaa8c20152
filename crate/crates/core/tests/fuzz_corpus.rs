//! Replays the checked-in fuzz corpus through each parser entry point.

use std::fs;
use std::path::PathBuf;

use pimhe::bench::{parse_config, parse_dpu_list, parse_log_n_range};
use pimhe::pimsim::{decode_residues, encode_residues};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn decode_residues_seeds() {
    for (name, bytes) in seeds("decode_residues") {
        match decode_residues(&bytes) {
            Ok(words) => assert_eq!(encode_residues(&words), bytes, "{name}"),
            Err(_) => assert_ne!(bytes.len() % 8, 0, "{name}"),
        }
    }
}

#[test]
fn log_n_seeds() {
    for (name, bytes) in seeds("parse_log_n_range") {
        let parsed = parse_log_n_range(std::str::from_utf8(&bytes).unwrap());
        assert_eq!(parsed.is_ok(), name != "reversed", "{name}");
    }
}

#[test]
fn dpu_list_seeds() {
    for (name, bytes) in seeds("parse_dpu_list") {
        let parsed = parse_dpu_list(std::str::from_utf8(&bytes).unwrap());
        assert_eq!(parsed.is_ok(), name != "zero", "{name}");
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("parse_config") {
        let parsed = parse_config(std::str::from_utf8(&bytes).unwrap());
        assert_eq!(parsed.is_ok(), name != "too_many_tasklets", "{name}");
    }
    let full =
        parse_config(&String::from_utf8(seeds("parse_config")[1].1.clone()).unwrap()).unwrap();
    assert_eq!((full.dpu.num_dpus, full.cpu.cpu_threads), (128, 8));
}
