#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tree) = apktriage::binary::decode_axml(data) {
        let _ = apktriage::manifest::manifest_from_axml(&tree);
    }
});
