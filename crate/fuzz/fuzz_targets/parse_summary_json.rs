#![no_main]

use gravidy::bench::{parse_summary_json, write_summary_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(summary) = parse_summary_json(data) {
        let mut buf = Vec::new();
        write_summary_json(&mut buf, &summary).expect("write parsed summary");
        let again = parse_summary_json(&buf).expect("reparse written summary");
        assert_eq!(again.runs.len(), summary.runs.len());
        assert_eq!(again.methods.len(), summary.methods.len());
    }
});
