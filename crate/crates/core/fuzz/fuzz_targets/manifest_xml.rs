#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|s: &str| {
    let _ = apktriage::manifest::parse_manifest_xml(s);
});
