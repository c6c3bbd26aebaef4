#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use ssp_core::harness::io::Table;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = Table::from_reader(data, Path::new("fuzz.csv")) {
        for h in table.headers.clone() {
            let _ = table.column(&h);
            let _ = table.optional_column(&h);
        }
        assert!(table.column("\u{0}missing").is_err());
    }
});
