//! The three configurable knowledge bases: targeted features, category
//! rules and the API-to-permission map.
//!
//! All three are versioned JSON documents (the feature catalog also accepts a
//! plain list of dotted class names). Shipped defaults are compiled in from
//! the crate's `catalogs/` directory and can be replaced wholesale by pointing
//! `APKTRIAGE_CATALOG_DIR` at a directory holding files with the same names.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binary::MethodSig;
use crate::mismatch::VerdictPolicy;
use crate::smali::dotted_to_descriptor;

pub const FEATURES_FILE: &str = "features.json";
pub const CATEGORIES_FILE: &str = "categories.json";
pub const API_MAP_FILE: &str = "api_map.json";
pub const CATALOG_DIR_ENV: &str = "APKTRIAGE_CATALOG_DIR";

const SHIPPED_FEATURES: &str = include_str!("../catalogs/features.json");
const SHIPPED_CATEGORIES: &str = include_str!("../catalogs/categories.json");
const SHIPPED_API_MAP: &str = include_str!("../catalogs/api_map.json");

/// Version reported for catalogs loaded from the plain-list format.
pub const PLAIN_LIST_VERSION: &str = "plain";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid catalog: {0}")]
pub struct CatalogError(pub String);

fn invalid(msg: impl Into<String>) -> CatalogError {
    CatalogError(msg.into())
}

/// `version` may be written as a string or a number.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawVersion {
    Str(String),
    Num(serde_json::Number),
}

impl RawVersion {
    fn into_string(self) -> Result<String, CatalogError> {
        let v = match self {
            RawVersion::Str(s) => s,
            RawVersion::Num(n) => n.to_string(),
        };
        if v.trim().is_empty() {
            return Err(invalid("field `version`: must not be empty"));
        }
        Ok(v)
    }
}

fn parse_json<'a, T: Deserialize<'a>>(doc: &'a [u8]) -> Result<T, CatalogError> {
    serde_json::from_slice(doc).map_err(|e| invalid(e.to_string()))
}

// ---------------------------------------------------------------------------
// features
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    pub dotted: String,
    pub descriptor: String,
    pub severity: Severity,
    /// Empty means relevant everywhere, so the feature is never flagged.
    pub relevant_categories: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureCatalog {
    pub version: String,
    pub features: Vec<FeatureSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeatureCatalog {
    version: RawVersion,
    features: Vec<RawFeature>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeature {
    id: String,
    dotted: String,
    descriptor: Option<String>,
    #[serde(default = "default_severity")]
    severity: Severity,
    #[serde(default)]
    relevant_categories: BTreeSet<String>,
}

fn default_severity() -> Severity {
    Severity::Medium
}

fn is_descriptor(s: &str) -> bool {
    s.len() > 2 && s.starts_with('L') && s.ends_with(';') && !s[1..s.len() - 1].contains(';')
}

fn is_slug(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

/// Id synthesized for plain-list entries: lowercase, dots to underscores.
pub fn plain_feature_id(dotted: &str) -> String {
    dotted.to_lowercase().replace('.', "_")
}

impl FeatureCatalog {
    pub fn shipped() -> Self {
        load_feature_catalog(SHIPPED_FEATURES.as_bytes()).expect("shipped feature catalog is valid")
    }

    pub fn get(&self, id: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.id == id)
    }

    pub fn from_plain_list(text: &str) -> Result<Self, CatalogError> {
        let mut features = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let descriptor = dotted_to_descriptor(line).map_err(|e| invalid(format!("line {}: {e}", idx + 1)))?;
            features.push(FeatureSpec {
                id: plain_feature_id(line),
                dotted: line.to_owned(),
                descriptor,
                severity: Severity::Medium,
                relevant_categories: BTreeSet::new(),
            });
        }
        let catalog = FeatureCatalog {
            version: PLAIN_LIST_VERSION.to_owned(),
            features,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let mut seen = BTreeSet::new();
        for (i, f) in self.features.iter().enumerate() {
            let at = format!("features[{i}] ({:?})", f.id);
            if !is_slug(&f.id) {
                return Err(invalid(format!("{at}: id must be a lowercase slug")));
            }
            if !seen.insert(f.id.as_str()) {
                return Err(invalid(format!("{at}: duplicate id")));
            }
            if f.dotted.trim().is_empty() {
                return Err(invalid(format!("{at}: dotted name is empty")));
            }
            if !is_descriptor(&f.descriptor) {
                return Err(invalid(format!(
                    "{at}: descriptor {:?} does not match L...;",
                    f.descriptor
                )));
            }
            if f.relevant_categories.iter().any(|c| c.trim().is_empty()) {
                return Err(invalid(format!("{at}: empty category name")));
            }
        }
        Ok(())
    }

    /// Every relevant category must name a rule in `rules`.
    pub fn check_categories(&self, rules: &CategoryRuleSet) -> Result<(), CatalogError> {
        for f in &self.features {
            for c in &f.relevant_categories {
                if rules.rule(c).is_none() {
                    return Err(invalid(format!(
                        "feature {:?}: relevant category {c:?} is not defined in the category rules",
                        f.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Loads a feature catalog from JSON (`{version, features}`) or from a plain
/// list of dotted class names, one per line.
pub fn load_feature_catalog(doc: &[u8]) -> Result<FeatureCatalog, CatalogError> {
    let text = std::str::from_utf8(doc).map_err(|e| invalid(format!("not UTF-8: {e}")))?;
    if !text.trim_start().starts_with('{') {
        return FeatureCatalog::from_plain_list(text);
    }
    let raw: RawFeatureCatalog = parse_json(doc)?;
    let mut features = Vec::with_capacity(raw.features.len());
    for (i, f) in raw.features.into_iter().enumerate() {
        let descriptor = match f.descriptor {
            Some(d) => d,
            None => dotted_to_descriptor(&f.dotted).map_err(|e| invalid(format!("features[{i}] ({:?}): {e}", f.id)))?,
        };
        features.push(FeatureSpec {
            id: f.id,
            dotted: f.dotted,
            descriptor,
            severity: f.severity,
            relevant_categories: f.relevant_categories,
        });
    }
    let catalog = FeatureCatalog {
        version: raw.version.into_string()?,
        features,
    };
    catalog.validate()?;
    Ok(catalog)
}

// ---------------------------------------------------------------------------
// category rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Permission,
    PermissionGroup,
    IntentAction,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub value: String,
}

pub const GROUP_PREFIX: &str = "android.permission-group.";

impl Token {
    /// Group prefix wins, then `.action.`, otherwise a plain permission.
    pub fn auto(value: &str) -> Self {
        let kind = if value.starts_with(GROUP_PREFIX) {
            TokenKind::PermissionGroup
        } else if value.contains(".action.") {
            TokenKind::IntentAction
        } else {
            TokenKind::Permission
        };
        Token {
            kind,
            value: value.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRule {
    pub name: String,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryRuleSet {
    pub version: String,
    pub rules: Vec<CategoryRule>,
    pub group_map: BTreeMap<String, BTreeSet<String>>,
    pub verdict_policy: VerdictPolicy,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRuleSet {
    version: RawVersion,
    #[serde(default)]
    group_map: BTreeMap<String, Vec<String>>,
    categories: Vec<RawCategory>,
    #[serde(default)]
    verdict_policy: Option<VerdictPolicy>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCategory {
    name: String,
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    actions: Vec<String>,
}

impl CategoryRuleSet {
    pub fn shipped() -> Self {
        load_category_rules(SHIPPED_CATEGORIES.as_bytes()).expect("shipped category rules are valid")
    }

    pub fn rule(&self, name: &str) -> Option<&CategoryRule> {
        self.rules.iter().find(|r| r.name == name)
    }
}

pub fn load_category_rules(doc: &[u8]) -> Result<CategoryRuleSet, CatalogError> {
    let raw: RawRuleSet = parse_json(doc)?;

    let mut group_map = BTreeMap::new();
    for (group, members) in raw.group_map {
        if !group.starts_with(GROUP_PREFIX) {
            return Err(invalid(format!(
                "group_map key {group:?} must start with {GROUP_PREFIX:?}"
            )));
        }
        let members: BTreeSet<String> = members.into_iter().collect();
        if members.is_empty() || members.iter().any(|m| m.trim().is_empty()) {
            return Err(invalid(format!("group_map[{group:?}]: needs non-empty members")));
        }
        group_map.insert(group, members);
    }

    let mut rules = Vec::with_capacity(raw.categories.len());
    let mut names = BTreeSet::new();
    for (i, cat) in raw.categories.into_iter().enumerate() {
        let at = format!("categories[{i}] ({:?})", cat.name);
        if cat.name.trim().is_empty() {
            return Err(invalid(format!("{at}: empty name")));
        }
        if !names.insert(cat.name.clone()) {
            return Err(invalid(format!("{at}: duplicate category name")));
        }
        let mut tokens: Vec<Token> = cat.tokens.iter().map(|t| Token::auto(t)).collect();
        tokens.extend(cat.actions.into_iter().map(|value| Token {
            kind: TokenKind::IntentAction,
            value,
        }));
        if tokens.is_empty() {
            return Err(invalid(format!("{at}: tokens must not be empty")));
        }
        let mut seen = BTreeSet::new();
        for t in &tokens {
            if t.value.trim().is_empty() {
                return Err(invalid(format!("{at}: empty token")));
            }
            if !seen.insert(t.value.as_str()) {
                return Err(invalid(format!("{at}: duplicate token {:?}", t.value)));
            }
            if t.kind == TokenKind::PermissionGroup && !group_map.contains_key(&t.value) {
                return Err(invalid(format!(
                    "{at}: permission group {:?} missing from group_map",
                    t.value
                )));
            }
        }
        rules.push(CategoryRule { name: cat.name, tokens });
    }

    Ok(CategoryRuleSet {
        version: raw.version.into_string()?,
        rules,
        group_map,
        verdict_policy: raw.verdict_policy.unwrap_or_default(),
    })
}

// ---------------------------------------------------------------------------
// API -> permission map
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodPattern {
    Any,
    Named(String),
}

impl MethodPattern {
    fn matches(&self, name: &str) -> bool {
        match self {
            MethodPattern::Any => true,
            MethodPattern::Named(n) => n == name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiEntry {
    pub class_descriptor: String,
    pub method: MethodPattern,
    pub required_permissions: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiPermissionMap {
    pub version: String,
    pub entries: Vec<ApiEntry>,
    pub mapped_permissions: BTreeSet<String>,
    by_class: HashMap<String, Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawApiMap {
    version: RawVersion,
    entries: Vec<RawApiEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawApiEntry {
    class: String,
    method: String,
    permissions: Vec<String>,
}

impl ApiPermissionMap {
    pub fn shipped() -> Self {
        load_api_map(SHIPPED_API_MAP.as_bytes()).expect("shipped api map is valid")
    }

    /// Entries whose class matches and whose method is `*` or equal.
    pub fn lookup<'a>(&'a self, sig: &'a MethodSig) -> impl Iterator<Item = &'a ApiEntry> + 'a {
        self.by_class
            .get(&sig.class_descriptor)
            .into_iter()
            .flatten()
            .map(|&i| &self.entries[i])
            .filter(|e| e.method.matches(&sig.name))
    }
}

pub fn load_api_map(doc: &[u8]) -> Result<ApiPermissionMap, CatalogError> {
    let raw: RawApiMap = parse_json(doc)?;
    let mut entries = Vec::with_capacity(raw.entries.len());
    let mut seen = BTreeSet::new();
    for (i, e) in raw.entries.into_iter().enumerate() {
        let at = format!("entries[{i}] ({}.{})", e.class, e.method);
        let class_descriptor = if e.class.ends_with(';') {
            if !is_descriptor(&e.class) {
                return Err(invalid(format!("{at}: malformed descriptor")));
            }
            e.class
        } else {
            dotted_to_descriptor(&e.class).map_err(|err| invalid(format!("{at}: {err}")))?
        };
        let method = match e.method.as_str() {
            "*" => MethodPattern::Any,
            "" => return Err(invalid(format!("{at}: empty method name"))),
            name => MethodPattern::Named(name.to_owned()),
        };
        if !seen.insert((class_descriptor.clone(), method.clone())) {
            return Err(invalid(format!("{at}: duplicate (class, method) pair")));
        }
        let required_permissions: BTreeSet<String> = e.permissions.into_iter().collect();
        if required_permissions.is_empty() || required_permissions.iter().any(|p| p.trim().is_empty()) {
            return Err(invalid(format!("{at}: permissions must be non-empty")));
        }
        entries.push(ApiEntry {
            class_descriptor,
            method,
            required_permissions,
        });
    }

    let mapped_permissions = entries
        .iter()
        .flat_map(|e| e.required_permissions.iter().cloned())
        .collect();
    let mut by_class: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        by_class.entry(e.class_descriptor.clone()).or_default().push(i);
    }
    Ok(ApiPermissionMap {
        version: raw.version.into_string()?,
        entries,
        mapped_permissions,
        by_class,
    })
}

// ---------------------------------------------------------------------------
// all three together
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalogs {
    pub features: FeatureCatalog,
    pub rules: CategoryRuleSet,
    pub api_map: ApiPermissionMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogVersions {
    pub features: String,
    pub categories: String,
    pub api_map: String,
}

impl Catalogs {
    pub fn new(
        features: FeatureCatalog,
        rules: CategoryRuleSet,
        api_map: ApiPermissionMap,
    ) -> Result<Self, CatalogError> {
        features.check_categories(&rules)?;
        Ok(Catalogs {
            features,
            rules,
            api_map,
        })
    }

    pub fn shipped() -> Self {
        Catalogs::new(
            FeatureCatalog::shipped(),
            CategoryRuleSet::shipped(),
            ApiPermissionMap::shipped(),
        )
        .expect("shipped catalogs agree")
    }

    pub fn versions(&self) -> CatalogVersions {
        CatalogVersions {
            features: self.features.version.clone(),
            categories: self.rules.version.clone(),
            api_map: self.api_map.version.clone(),
        }
    }
}

/// Which file a [`CatalogKind`]-typed document is, judged by its file name or,
/// failing that, by its top-level JSON keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogKind {
    Features,
    Categories,
    ApiMap,
}

impl CatalogKind {
    pub fn detect(path: &Path, doc: &[u8]) -> Option<Self> {
        let name = path.file_name()?.to_string_lossy().to_lowercase();
        if name.ends_with(".txt") || name.contains("feature") {
            return Some(CatalogKind::Features);
        }
        if name.contains("categor") || name.contains("rule") {
            return Some(CatalogKind::Categories);
        }
        if name.contains("api") {
            return Some(CatalogKind::ApiMap);
        }
        let value: serde_json::Value = serde_json::from_slice(doc).ok()?;
        let obj = value.as_object()?;
        if obj.contains_key("features") {
            Some(CatalogKind::Features)
        } else if obj.contains_key("categories") {
            Some(CatalogKind::Categories)
        } else if obj.contains_key("entries") {
            Some(CatalogKind::ApiMap)
        } else {
            None
        }
    }

    /// Loads and validates `doc` as this kind, discarding the result.
    pub fn validate(self, doc: &[u8]) -> Result<(), CatalogError> {
        match self {
            CatalogKind::Features => load_feature_catalog(doc).map(drop),
            CatalogKind::Categories => load_category_rules(doc).map(drop),
            CatalogKind::ApiMap => load_api_map(doc).map(drop),
        }
    }
}
