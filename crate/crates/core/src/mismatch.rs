//! Category-irrelevant feature flags, the declared-vs-required permission
//! gap, and the verdict that combines them.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::binary::MethodSig;
use crate::catalog::{ApiPermissionMap, FeatureCatalog, Severity};
use crate::categorize::UNCATEGORIZED;
use crate::manifest::ManifestInfo;
use crate::smali::FeatureReport;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedFeature {
    pub feature_id: String,
    pub severity: Severity,
    pub reason: String,
    pub occurrence_count: usize,
}

/// Features the code uses that are not relevant to `assigned`, most severe
/// first. Uncategorized apps and features relevant everywhere are never
/// flagged.
pub fn flag_features(report: &FeatureReport, catalog: &FeatureCatalog, assigned: &str) -> Vec<FlaggedFeature> {
    if assigned == UNCATEGORIZED {
        return Vec::new();
    }
    let mut flags: Vec<FlaggedFeature> = catalog
        .features
        .iter()
        .filter(|f| !f.relevant_categories.is_empty() && !f.relevant_categories.contains(assigned))
        .filter_map(|f| {
            let count = report.count(&f.id);
            (count > 0).then(|| FlaggedFeature {
                feature_id: f.id.clone(),
                severity: f.severity,
                reason: format!(
                    "{} is relevant to [{}] but the app is categorized as {assigned}",
                    f.dotted,
                    f.relevant_categories.iter().cloned().collect::<Vec<_>>().join(", "),
                ),
                occurrence_count: count,
            })
        })
        .collect();
    flags.sort_by(|a, b| {
        b.severity
            .cmp(&a.severity)
            .then_with(|| a.feature_id.cmp(&b.feature_id))
    });
    flags
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GapStatus {
    Exact,
    OverPrivileged,
    UnderPrivileged,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionGap {
    pub used: BTreeSet<String>,
    pub over: BTreeSet<String>,
    pub under: BTreeSet<String>,
    pub unmapped_ref_count: usize,
    pub status: GapStatus,
}

/// Compares the permissions the code needs (per the map) with those the
/// manifest declares. Over-privilege is only judged among permissions the
/// map knows about, since the map is partial.
pub fn permission_gap(
    api_refs: &BTreeSet<MethodSig>,
    manifest: &ManifestInfo,
    map: &ApiPermissionMap,
) -> PermissionGap {
    let mut used = BTreeSet::new();
    let mut unmapped_ref_count = 0;
    for sig in api_refs {
        let mut mapped = false;
        for entry in map.lookup(sig) {
            mapped = true;
            used.extend(entry.required_permissions.iter().cloned());
        }
        if !mapped {
            unmapped_ref_count += 1;
        }
    }
    let declared = &manifest.declared_permissions;
    let over: BTreeSet<String> = declared
        .intersection(&map.mapped_permissions)
        .filter(|p| !used.contains(*p))
        .cloned()
        .collect();
    let under: BTreeSet<String> = used.difference(declared).cloned().collect();
    let status = match (over.is_empty(), under.is_empty()) {
        (true, true) => GapStatus::Exact,
        (false, true) => GapStatus::OverPrivileged,
        (true, false) => GapStatus::UnderPrivileged,
        (false, false) => GapStatus::Both,
    };
    PermissionGap {
        used,
        over,
        under,
        unmapped_ref_count,
        status,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerdictLevel {
    Benign,
    Suspicious,
    MaliciousSuspect,
}

impl fmt::Display for VerdictLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Thresholds turning flags and the permission gap into a verdict. Lives in
/// the category rules file under `verdict_policy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerdictPolicy {
    /// Level reached by any High-severity flag.
    pub high_flag: VerdictLevel,
    /// This many flags of any severity make an app a MaliciousSuspect.
    pub flag_count_threshold: usize,
    /// Over-privileged by at least this many permissions makes it Suspicious.
    pub over_threshold: usize,
}

impl Default for VerdictPolicy {
    fn default() -> Self {
        VerdictPolicy {
            high_flag: VerdictLevel::MaliciousSuspect,
            flag_count_threshold: 3,
            over_threshold: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub level: VerdictLevel,
    pub reasons: Vec<String>,
}

pub fn verdict(flags: &[FlaggedFeature], gap: &PermissionGap, policy: &VerdictPolicy) -> Verdict {
    let mut level = VerdictLevel::Benign;
    let mut reasons = Vec::new();
    let mut raise = |to: VerdictLevel, why: String| {
        level = level.max(to);
        reasons.push(why);
    };

    let high: Vec<&str> = flags
        .iter()
        .filter(|f| f.severity == Severity::High)
        .map(|f| f.feature_id.as_str())
        .collect();
    if !high.is_empty() {
        raise(
            policy.high_flag,
            format!("high-severity feature flagged: {}", high.join(", ")),
        );
    }
    if flags.len() >= policy.flag_count_threshold.max(1) {
        raise(
            VerdictLevel::MaliciousSuspect,
            format!(
                "{} category-irrelevant features flagged (threshold {})",
                flags.len(),
                policy.flag_count_threshold
            ),
        );
    }
    if !flags.is_empty() {
        raise(
            VerdictLevel::Suspicious,
            format!("{} category-irrelevant feature(s) flagged", flags.len()),
        );
    }
    if matches!(gap.status, GapStatus::OverPrivileged | GapStatus::Both) && gap.over.len() >= policy.over_threshold {
        raise(
            VerdictLevel::Suspicious,
            format!(
                "over-privileged by {} permission(s): {}",
                gap.over.len(),
                gap.over.iter().cloned().collect::<Vec<_>>().join(", ")
            ),
        );
    }
    Verdict { level, reasons }
}
