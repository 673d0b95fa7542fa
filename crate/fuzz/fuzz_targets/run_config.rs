#![no_main]

use libfuzzer_sys::fuzz_target;
use ovl_core::config::{ConfigLayer, Manifest};

fuzz_target!(|text: &str| {
    if let Ok(layer) = ConfigLayer::from_toml(text) {
        let again = ConfigLayer::from_toml(&layer.to_toml()).expect("serialised layer parses");
        assert_eq!(again.to_toml(), layer.to_toml());
        let _ = layer.with_bipartite_defaults().resolve();
    }
    let _ = Manifest::from_toml(text);
});
