#![no_main]

use libfuzzer_sys::fuzz_target;
use ovl_core::spaces::{parse_signature_with, SphereConvention};

fuzz_target!(|data: &[u8]| {
    if data.is_empty() {
        return;
    }
    let dim = 1 + data[0] as usize % 64;
    let Ok(text) = std::str::from_utf8(&data[1..]) else {
        return;
    };
    for convention in [SphereConvention::Manifold, SphereConvention::Stored] {
        if let Ok(sig) = parse_signature_with(text, dim, convention) {
            // The canonical form uses the manifold convention.
            let canonical = sig.to_string();
            let again = parse_signature_with(&canonical, dim, SphereConvention::Manifold)
                .expect("canonical signature parses");
            assert_eq!(again, sig);
        }
    }
});
