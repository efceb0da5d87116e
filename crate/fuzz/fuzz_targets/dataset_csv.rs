#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = sbolab::campaign::dataset_from_csv(text) {
        // anything accepted re-serializes and parses back to itself
        let csv = sbolab::campaign::dataset_to_csv(&records);
        let again = sbolab::campaign::dataset_from_csv(&csv).expect("round trip");
        assert_eq!(records, again);
    }
});
