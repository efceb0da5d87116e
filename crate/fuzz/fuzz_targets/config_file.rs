#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(kv) = sbolab::config::KvConfig::parse(text) {
        for key in kv.keys() {
            let _ = kv.get(key);
            let _ = kv.get_u64(key);
            let _ = kv.get_f64(key);
            let _ = kv.get_bool(key);
            let _ = kv.get_f64_list(key);
        }
    }
});
