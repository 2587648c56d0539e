#![no_main]

use std::sync::LazyLock;

use apktriage::catalog::FeatureCatalog;
use libfuzzer_sys::fuzz_target;

static CATALOG: LazyLock<FeatureCatalog> = LazyLock::new(FeatureCatalog::shipped);

fuzz_target!(|s: &str| {
    let (hits, _) = apktriage::smali::scan_file("fuzz.smali", s, &CATALOG);
    // at most one descriptor hit and one literal hit per feature per line
    assert!(hits.len() <= 2 * CATALOG.features.len() * (s.lines().count() + 1));
});
