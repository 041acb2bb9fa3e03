#![no_main]

use edgekg_core::triples::AttributeTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = AttributeTable::read_csv(data);
});
