#![no_main]

use libfuzzer_sys::fuzz_target;
use ovl_core::graph::{format_edge_list, parse_edge_list};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for weighted in [false, true] {
        if let Ok(g) = parse_edge_list(text, weighted, "<fuzz>") {
            // Whatever parses must survive a write/read round trip.
            let again = parse_edge_list(&format_edge_list(&g), weighted, "<fuzz>")
                .expect("formatted graph parses");
            assert_eq!(again.node_count(), g.node_count());
            assert_eq!(again.edges(), g.edges());
        }
    }
});
