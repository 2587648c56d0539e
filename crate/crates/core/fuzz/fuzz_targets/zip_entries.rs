#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = apktriage::binary::read_zip_entries(data) {
        for e in entries {
            assert_eq!(e.data.len() as u64, e.uncompressed_size);
        }
    }
});
