#![no_main]

use libfuzzer_sys::fuzz_target;
use ovl_core::graph::DistanceMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok((dm, fingerprint)) = DistanceMatrix::from_bytes(data) {
        assert_eq!(dm.to_bytes(fingerprint), data);
    }
});
