#![no_main]

use edgekg_core::config::parse_kv;
use edgekg_runtime::config::Settings;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = parse_kv(text) {
        let _ = Settings::load(None, &pairs, None).map(|s| (s.train.validate(), s.synth.validate(), s.runtime.validate()));
    }
});
