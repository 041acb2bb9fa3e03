#![no_main]

use edgekg_core::{TripleFormat, TripleStore};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for delimiter in ['\t', ','] {
        let format = TripleFormat {
            delimiter,
            ..TripleFormat::default()
        };
        if let Ok(store) = TripleStore::read(data, format) {
            // every id resolves back to a label
            for t in store.triples() {
                let _ = store.labels_of(t);
            }
        }
    }
});
