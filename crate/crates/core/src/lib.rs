//! Static triage of Android apps.
//!
//! The pipeline loads an app ([`ingest`]), tags feature usage in its code
//! ([`smali`]), assigns a category from manifest permissions and intent
//! actions ([`categorize`]), then flags features that do not fit the
//! category and compares declared with required permissions ([`mismatch`]).
//! [`report`] assembles and renders the result; [`cli`] drives it.

pub mod binary;
pub mod catalog;
pub mod categorize;
pub mod cli;
pub mod ingest;
pub mod manifest;
pub mod mismatch;
pub mod report;
pub mod smali;
