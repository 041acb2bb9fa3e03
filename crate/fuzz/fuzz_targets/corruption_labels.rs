#![no_main]

use std::sync::OnceLock;

use edgekg_core::synth::{self, SynthConfig};
use edgekg_core::TripleStore;
use libfuzzer_sys::fuzz_target;

fn store() -> &'static TripleStore {
    static STORE: OnceLock<TripleStore> = OnceLock::new();
    STORE.get_or_init(|| {
        let config = SynthConfig {
            num_people: 30,
            ..SynthConfig::default()
        };
        synth::generate(&config).unwrap().split([0.8, 0.1, 0.1], 0).unwrap()
    })
}

fuzz_target!(|data: &[u8]| {
    let _ = synth::read_labels(data, store());
});
