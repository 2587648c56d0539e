//! Line-oriented feature tagging over smali text and DEX constant pools.
//!
//! Matching is plain substring search on raw lines rather than a smali
//! grammar, so a descriptor hit on line N is exactly what `grep -n` would
//! report for that descriptor.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binary::{DexPool, MethodSig};
use crate::catalog::FeatureCatalog;
use crate::ingest::{AppBundle, CodeIndex, SmaliFile};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad class name {0:?}: no segment starts with an uppercase letter")]
pub struct BadName(pub String);

/// Converts a dotted Java name to a smali type descriptor.
///
/// The first segment with an uppercase initial is the outer class; segments
/// before it form the package path and segments after it are nested classes.
///
/// ```
/// use apktriage::smali::dotted_to_descriptor;
/// assert_eq!(
///     dotted_to_descriptor("android.hardware.Camera.PictureCallback").unwrap(),
///     "Landroid/hardware/Camera$PictureCallback;"
/// );
/// ```
pub fn dotted_to_descriptor(dotted: &str) -> Result<String, BadName> {
    let segments: Vec<&str> = dotted.split('.').collect();
    if segments.iter().any(|s| s.is_empty() || s.contains(char::is_whitespace)) {
        return Err(BadName(dotted.to_owned()));
    }
    let outer = segments
        .iter()
        .position(|s| s.starts_with(|c: char| c.is_uppercase()))
        .ok_or_else(|| BadName(dotted.to_owned()))?;
    let mut out = String::with_capacity(dotted.len() + 2);
    out.push('L');
    for seg in &segments[..outer] {
        out.push_str(seg);
        out.push('/');
    }
    out.push_str(&segments[outer..].join("$"));
    out.push(';');
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HitKind {
    TypeRef,
    Invoke,
    StringLiteral,
    DexRef,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureHit {
    pub feature_id: String,
    pub file: String,
    /// 1-based; absent for DEX-derived hits.
    pub line: Option<u32>,
    pub kind: HitKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureReport {
    pub hits: Vec<FeatureHit>,
    pub counts: BTreeMap<String, usize>,
    pub api_refs: BTreeSet<MethodSig>,
}

impl FeatureReport {
    fn from_parts(mut hits: Vec<FeatureHit>, api_refs: BTreeSet<MethodSig>) -> Self {
        hits.sort();
        let mut counts = BTreeMap::new();
        for hit in &hits {
            *counts.entry(hit.feature_id.clone()).or_insert(0) += 1;
        }
        FeatureReport { hits, counts, api_refs }
    }

    pub fn count(&self, feature_id: &str) -> usize {
        self.counts.get(feature_id).copied().unwrap_or(0)
    }
}

/// Parses `Lpkg/Cls;->name(` out of an invoke line.
fn parse_callee(line: &str) -> Option<MethodSig> {
    let arrow = line.find("->")?;
    let head = &line[..arrow];
    let class_start = head.rfind([' ', ',', '}', '@', '(']).map_or(0, |p| p + 1);
    let class = &head[class_start..];
    let valid_class = (class.starts_with('L') && class.ends_with(';') && class.len() > 2)
        || (class.starts_with('[') && class.len() > 1);
    if !valid_class {
        return None;
    }
    let tail = &line[arrow + 2..];
    let name = &tail[..tail.find('(')?];
    if name.is_empty() || name.contains(char::is_whitespace) {
        return None;
    }
    Some(MethodSig::new(class, name))
}

/// The quoted operand of a `const-string` line, escapes left as written.
fn string_literal(line: &str) -> Option<&str> {
    let start = line.find("const-string")?;
    let rest = &line[start..];
    let open = rest.find('"')?;
    let close = rest.rfind('"')?;
    (close > open).then(|| &rest[open + 1..close])
}

/// Tags one smali file. Returns the hits (unsorted) and the callee of every
/// `invoke-*` line.
pub fn scan_file(path: &str, text: &str, catalog: &FeatureCatalog) -> (Vec<FeatureHit>, BTreeSet<MethodSig>) {
    let mut hits = Vec::new();
    let mut api_refs = BTreeSet::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = (idx + 1) as u32;
        let trimmed = line.trim_start();
        let callee = if trimmed.starts_with("invoke-") {
            parse_callee(trimmed)
        } else {
            None
        };
        let literal = string_literal(line);

        for feature in &catalog.features {
            if line.contains(feature.descriptor.as_str()) {
                let kind = match &callee {
                    Some(c) if c.class_descriptor == feature.descriptor => HitKind::Invoke,
                    _ => HitKind::TypeRef,
                };
                hits.push(FeatureHit {
                    feature_id: feature.id.clone(),
                    file: path.to_owned(),
                    line: Some(line_no),
                    kind,
                });
            }
            if literal == Some(feature.dotted.as_str()) {
                hits.push(FeatureHit {
                    feature_id: feature.id.clone(),
                    file: path.to_owned(),
                    line: Some(line_no),
                    kind: HitKind::StringLiteral,
                });
            }
        }
        if let Some(callee) = callee {
            api_refs.insert(callee);
        }
    }
    (hits, api_refs)
}

fn scan_dex_pool(entry: &str, pool: &DexPool, catalog: &FeatureCatalog) -> Vec<FeatureHit> {
    let types: HashSet<&str> = pool.type_descriptors.iter().map(String::as_str).collect();
    let strings: HashSet<&str> = pool.strings.iter().map(String::as_str).collect();
    let mut hits = Vec::new();
    for feature in &catalog.features {
        // one hit per evidence kind: type pool, string pool
        let evidence = usize::from(types.contains(feature.descriptor.as_str()))
            + usize::from(strings.contains(feature.dotted.as_str()));
        for _ in 0..evidence {
            hits.push(FeatureHit {
                feature_id: feature.id.clone(),
                file: entry.to_owned(),
                line: None,
                kind: HitKind::DexRef,
            });
        }
    }
    hits
}

/// Smali files are scanned in parallel; the result is sorted, so it does
/// not depend on scheduling or file order.
pub fn scan_smali_files(files: &[SmaliFile], catalog: &FeatureCatalog) -> FeatureReport {
    let (hits, api_refs) = files.par_iter().map(|f| scan_file(&f.path, &f.text, catalog)).reduce(
        || (Vec::new(), BTreeSet::new()),
        |(mut hits, mut refs), (h, r)| {
            hits.extend(h);
            refs.extend(r);
            (hits, refs)
        },
    );
    FeatureReport::from_parts(hits, api_refs)
}

pub fn scan_bundle(bundle: &AppBundle, catalog: &FeatureCatalog) -> FeatureReport {
    match &bundle.code {
        CodeIndex::SmaliFiles(files) => scan_smali_files(files, catalog),
        CodeIndex::DexPools(pools) => {
            let mut hits = Vec::new();
            let mut api_refs = BTreeSet::new();
            for named in pools {
                hits.extend(scan_dex_pool(&named.entry, &named.pool, catalog));
                api_refs.extend(named.pool.method_refs.iter().cloned());
            }
            FeatureReport::from_parts(hits, api_refs)
        }
    }
}
