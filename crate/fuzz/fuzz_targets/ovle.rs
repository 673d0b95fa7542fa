#![no_main]

use libfuzzer_sys::fuzz_target;
use ovl_core::dump::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok((model, params)) = decode(data) {
        let (model2, params2) = decode(&encode(&model, &params)).expect("re-encoded dump decodes");
        assert_eq!(model2.signature(), model.signature());
        assert_eq!(params2.layout(), params.layout());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(params2.values()), bits(params.values()));
    }
});
