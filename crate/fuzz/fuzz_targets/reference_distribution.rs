#![no_main]

use edgekg_core::pdqa::ScoreDistribution;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = ScoreDistribution::parse(text) {
        assert!(d.stddev > 0.0 && d.mean.is_finite());
        assert_eq!(ScoreDistribution::parse(&d.to_key_value()).unwrap(), d);
    }
});
