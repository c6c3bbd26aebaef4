//! Replays the fuzz seed corpora on stable and throws random input at both
//! parsers. Neither may panic; accepted input must round-trip.

use std::path::{Path, PathBuf};

use proptest::prelude::*;

use ssp_core::harness::io::Table;
use ssp_core::harness::ExperimentConfig;

fn corpus(name: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(name);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus {}", dir.display());
    files
        .into_iter()
        .map(|p| (p.clone(), std::fs::read(&p).unwrap()))
        .collect()
}

fn check_config(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else {
        return false;
    };
    match ExperimentConfig::from_toml_str(text) {
        Ok(cfg) => {
            let text = cfg.to_toml_string().unwrap();
            let again = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(text, again.to_toml_string().unwrap());
            true
        }
        Err(e) => {
            assert!(!e.to_string().is_empty());
            false
        }
    }
}

fn check_table(data: &[u8]) -> bool {
    match Table::from_reader(data, Path::new("fuzz.csv")) {
        Ok(table) => {
            for h in &table.headers {
                match table.column(h) {
                    Ok(col) => assert_eq!(col.len(), table.len()),
                    Err(e) => assert!(e.to_string().contains("fuzz.csv"), "{e}"),
                }
            }
            assert!(table.column("\u{0}missing").is_err());
            true
        }
        Err(e) => {
            assert!(e.to_string().contains("fuzz.csv"), "{e}");
            false
        }
    }
}

#[test]
fn config_corpus_parses_or_fails_cleanly() {
    let accepted: Vec<_> = corpus("config")
        .into_iter()
        .filter(|(_, d)| check_config(d))
        .map(|(p, _)| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for f in ["default.toml", "empty.toml", "run_only.toml", "smoke.toml"] {
        assert!(accepted.iter().any(|a| a == f), "{f} rejected");
    }
    assert!(!accepted.iter().any(|a| a == "bad_tx.toml"));
}

#[test]
fn table_corpus_parses_or_fails_cleanly() {
    let accepted: Vec<_> = corpus("table")
        .into_iter()
        .filter(|(_, d)| check_table(d))
        .map(|(p, _)| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert!(accepted.iter().any(|a| a == "metrics.csv"));
    assert!(!accepted.iter().any(|a| a == "ragged.csv"));
}

proptest! {
    #[test]
    fn arbitrary_bytes_never_panic(data in proptest::collection::vec(any::<u8>(), 0..512)) {
        check_config(&data);
        check_table(&data);
    }

    #[test]
    fn csv_like_text_never_panics(text in "[a-z0-9,.\"\n-]{0,200}") {
        check_table(text.as_bytes());
    }

    #[test]
    fn toml_like_text_never_panics(text in "(\\[(run|planner|ukf|noise)\\]\n)?([a-z_]{1,12} = (-?[0-9.e]{1,8}|\"[a-z]{0,8}\"|nan|inf)\n){0,4}") {
        check_config(text.as_bytes());
    }
}
