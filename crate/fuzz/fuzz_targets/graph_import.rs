#![no_main]

use edgekg_core::TripleStore;
use libfuzzer_sys::fuzz_target;

// Input: node CSV, a NUL byte, edge CSV.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|b| *b == 0).unwrap_or(data.len());
    let (nodes, edges) = data.split_at(split);
    let edges = edges.get(1..).unwrap_or(&[]);
    let _ = TripleStore::read_graph(nodes, edges);
});
