#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(det) = sbolab::detect::detector_from_text(text) {
        // a parsed model must score without panicking
        let probe = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let _ = det.score(&probe);
        let _ = det.is_anomaly(&probe);
    }
});
