#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = sbolab::eval::EvalReport::from_csv(text) {
        let csv = report.to_csv();
        let again = sbolab::eval::EvalReport::from_csv(&csv).expect("round trip");
        assert_eq!(report.cells, again.cells);
    }
});
