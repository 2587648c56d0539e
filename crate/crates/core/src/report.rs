//! Per-app report assembly and rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogVersions, Catalogs, Severity};
use crate::categorize::{assign_category, score_categories, Assignment, Score, UnknownDeclaredCategory};
use crate::ingest::{AppBundle, InputKind};
use crate::mismatch::{flag_features, permission_gap, verdict, FlaggedFeature, GapStatus, PermissionGap, Verdict};
use crate::smali::{scan_bundle, FeatureReport, HitKind};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub line: Option<u32>,
    pub kind: HitKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub feature_id: String,
    pub dotted: String,
    pub count: usize,
    pub locations: Vec<Location>,
    pub flagged: bool,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permissions {
    pub declared: Vec<String>,
    pub used: Vec<String>,
    pub over: Vec<String>,
    pub under: Vec<String>,
    pub unmapped_ref_count: usize,
    pub status: GapStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    pub catalog_versions: CatalogVersions,
    pub app_id: String,
    pub source: InputKind,
    pub assignment: Assignment,
    /// Only features with at least one hit, by id.
    pub features: Vec<FeatureEntry>,
    pub flags: Vec<FlaggedFeature>,
    pub permissions: Permissions,
    pub verdict: Verdict,
}

pub fn build_report(
    bundle: &AppBundle,
    catalogs: &Catalogs,
    features: &FeatureReport,
    assignment: Assignment,
    flags: Vec<FlaggedFeature>,
    gap: PermissionGap,
    verdict: Verdict,
) -> Report {
    let flagged: BTreeSet<&str> = flags.iter().map(|f| f.feature_id.as_str()).collect();
    let mut locations: BTreeMap<&str, Vec<Location>> = BTreeMap::new();
    for hit in &features.hits {
        locations.entry(&hit.feature_id).or_default().push(Location {
            file: hit.file.clone(),
            line: hit.line,
            kind: hit.kind,
        });
    }

    let entries = locations
        .into_iter()
        .filter_map(|(id, locations)| {
            let spec = catalogs.features.get(id)?;
            Some(FeatureEntry {
                feature_id: id.to_owned(),
                dotted: spec.dotted.clone(),
                count: locations.len(),
                locations,
                flagged: flagged.contains(id),
                severity: spec.severity,
            })
        })
        .collect();

    let sorted = |s: BTreeSet<String>| s.into_iter().collect::<Vec<_>>();
    Report {
        tool_version: TOOL_VERSION.to_owned(),
        catalog_versions: catalogs.versions(),
        app_id: bundle.app_id.clone(),
        source: bundle.source,
        assignment,
        features: entries,
        permissions: Permissions {
            declared: bundle.manifest.declared_permissions.iter().cloned().collect(),
            used: sorted(gap.used),
            over: sorted(gap.over),
            under: sorted(gap.under),
            unmapped_ref_count: gap.unmapped_ref_count,
            status: gap.status,
        },
        flags,
        verdict,
    }
}

/// Runs scan, categorization, flagging, gap and verdict on a loaded bundle.
pub fn analyze_bundle(
    bundle: &AppBundle,
    catalogs: &Catalogs,
    min_score: Score,
) -> (Report, Option<UnknownDeclaredCategory>) {
    let features = scan_bundle(bundle, &catalogs.features);
    let scores = score_categories(&bundle.manifest, &catalogs.rules);
    let (assignment, warning) = assign_category(
        &scores,
        bundle.declared_market_category.as_deref(),
        min_score,
        &catalogs.rules,
    );
    let flags = flag_features(&features, &catalogs.features, &assignment.assigned);
    let gap = permission_gap(&features.api_refs, &bundle.manifest, &catalogs.api_map);
    let v = verdict(&flags, &gap, &catalogs.rules.verdict_policy);
    let report = build_report(bundle, catalogs, &features, assignment, flags, gap, v);
    (report, warning)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Text,
}

pub fn render(report: &Report, format: Format) -> Vec<u8> {
    match format {
        Format::Json => canonical_json(report),
        Format::Text => render_text(report).into_bytes(),
    }
}

/// Compact JSON with object keys sorted and a trailing LF.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    // serde_json's Map is a BTreeMap, so going through Value sorts keys.
    let value = serde_json::to_value(value).expect("report types serialize");
    let mut out = serde_json::to_vec(&value).expect("values serialize");
    out.push(b'\n');
    out
}

fn list(items: &[String]) -> String {
    if items.is_empty() {
        "-".to_owned()
    } else {
        items.join(", ")
    }
}

fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let a = &r.assignment;
    let _ = writeln!(s, "{}  {}({})  {}", r.app_id, a.assigned, a.score, r.verdict.level);
    if let Some(declared) = &a.declared {
        let agree = match a.declared_agreement {
            Some(true) => "agrees with rules",
            Some(false) => "disagrees with rules",
            None => "unknown category, ignored",
        };
        let _ = writeln!(s, "Declared category: {declared} ({agree})");
    }

    if r.features.is_empty() {
        let _ = writeln!(s, "Features: none");
    } else {
        let _ = writeln!(s, "Features:");
        for f in &r.features {
            let mark = if f.flagged { "  FLAGGED" } else { "" };
            let _ = writeln!(
                s,
                "  {} ({}) x{} [{}]{mark}",
                f.feature_id, f.dotted, f.count, f.severity
            );
            for loc in &f.locations {
                match loc.line {
                    Some(line) => {
                        let _ = writeln!(s, "    {}:{} {:?}", loc.file, line, loc.kind);
                    }
                    None => {
                        let _ = writeln!(s, "    {} {:?}", loc.file, loc.kind);
                    }
                }
            }
        }
    }

    if r.flags.is_empty() {
        let _ = writeln!(s, "Flags: none");
    } else {
        let _ = writeln!(s, "Flags:");
        for f in &r.flags {
            let _ = writeln!(
                s,
                "  [{}] {} x{}: {}",
                f.severity, f.feature_id, f.occurrence_count, f.reason
            );
        }
    }

    let p = &r.permissions;
    let _ = writeln!(s, "Permission gap: {:?}", p.status);
    let _ = writeln!(s, "  declared: {}", list(&p.declared));
    let _ = writeln!(s, "  used: {}", list(&p.used));
    let _ = writeln!(s, "  over: {}", list(&p.over));
    let _ = writeln!(s, "  under: {}", list(&p.under));
    let _ = writeln!(s, "  unmapped api refs: {}", p.unmapped_ref_count);

    if !r.verdict.reasons.is_empty() {
        let _ = writeln!(s, "Verdict reasons:");
        for reason in &r.verdict.reasons {
            let _ = writeln!(s, "  {reason}");
        }
    }
    s
}
