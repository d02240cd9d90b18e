#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(value) = chi_contract::io::decode_family(text) {
            let again = chi_contract::io::decode_family(&chi_contract::io::encode_family(&value));
            assert!(again.is_ok());
        }
    }
});
