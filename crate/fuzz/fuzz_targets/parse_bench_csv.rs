#![no_main]

use gravidy::bench::{parse_csv, write_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_csv(data) {
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).expect("write parsed records");
        let again = parse_csv(buf.as_slice()).expect("reparse written records");
        assert_eq!(again.len(), records.len());
    }
});
