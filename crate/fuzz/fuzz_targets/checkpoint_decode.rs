#![no_main]

use edgekg_core::checkpoint::{self, Encoding};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = checkpoint::decode(data) {
        // anything accepted re-encodes to a stable byte form
        let encoding = if c.mask.is_some() { Encoding::Sparse } else { Encoding::Dense };
        let bytes = checkpoint::encode(&c.model, c.mask.as_ref(), encoding).expect("decoded checkpoint re-encodes");
        let again = checkpoint::decode(&bytes).expect("re-encoded checkpoint decodes");
        let twice = checkpoint::encode(&again.model, again.mask.as_ref(), encoding).unwrap();
        assert_eq!(bytes, twice);
    }
});
