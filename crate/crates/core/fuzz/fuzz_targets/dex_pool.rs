#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = apktriage::binary::extract_dex_pool(data);
    let _ = apktriage::binary::dex::decode_mutf8(data);
});
