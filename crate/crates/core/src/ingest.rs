//! Input layout detection and loading into a normalized [`AppBundle`].
//!
//! Two layouts are accepted: an apktool-decoded directory (text manifest plus
//! `smali*/` trees) and a raw APK file.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::binary::{decode_axml, extract_dex_pool, read_zip_entries, AxmlError, DexError, DexPool, ZipError};
use crate::manifest::{manifest_from_axml, parse_manifest_xml, ManifestError, ManifestInfo};

pub const MANIFEST_NAME: &str = "AndroidManifest.xml";
const ZIP_MAGIC: [u8; 4] = [0x50, 0x4B, 0x03, 0x04];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: not an app: {reason}")]
    NotAnApp { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}: no {MANIFEST_NAME} found")]
    ManifestMissing(PathBuf),
    #[error("{path}: {source}")]
    ManifestUnparsable {
        path: PathBuf,
        #[source]
        source: ManifestError,
    },
    #[error("{path}: {source}")]
    AxmlCorrupt {
        path: PathBuf,
        #[source]
        source: AxmlError,
    },
    #[error("{path}: {source}")]
    ZipCorrupt {
        path: PathBuf,
        #[source]
        source: ZipError,
    },
    #[error("{path}: entry {entry}: {source}")]
    DexCorrupt {
        path: PathBuf,
        entry: String,
        #[source]
        source: DexError,
    },
}

impl IngestError {
    /// True for failures to decode input content, as opposed to I/O or
    /// layout problems.
    pub fn is_parse_error(&self) -> bool {
        !matches!(self, IngestError::NotAnApp { .. } | IngestError::Io { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    ApktoolDir,
    RawApk,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmaliFile {
    /// Relative to the input root, `/`-separated.
    pub path: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedDexPool {
    pub entry: String,
    pub pool: DexPool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeIndex {
    /// Sorted by path.
    SmaliFiles(Vec<SmaliFile>),
    /// `classes.dex`, `classes2.dex`, ... in numeric order.
    DexPools(Vec<NamedDexPool>),
}

impl CodeIndex {
    pub fn len(&self) -> usize {
        match self {
            CodeIndex::SmaliFiles(f) => f.len(),
            CodeIndex::DexPools(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppBundle {
    pub app_id: String,
    pub source: InputKind,
    pub manifest: ManifestInfo,
    pub code: CodeIndex,
    pub declared_market_category: Option<String>,
}

fn is_smali_root(name: &str) -> bool {
    name.starts_with("smali")
}

/// Smali files under every top-level `smali*/` directory, as sorted
/// `(relative path, absolute path)` pairs.
fn smali_paths(root: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let mut roots: Vec<PathBuf> = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() && is_smali_root(&entry.file_name().to_string_lossy()) {
            roots.push(entry.path());
        }
    }
    for dir in roots {
        for entry in WalkDir::new(&dir) {
            let entry = entry.map_err(io::Error::from)?;
            if !entry.file_type().is_file() || entry.path().extension().is_none_or(|e| e != "smali") {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(root)
                .unwrap_or(entry.path())
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push((rel, entry.into_path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Decides whether `path` is an apktool directory or a raw APK.
pub fn detect_layout(path: &Path) -> Result<InputKind, IngestError> {
    let meta = fs::metadata(path).map_err(io_err(path))?;
    let not_app = |reason: String| IngestError::NotAnApp {
        path: path.to_owned(),
        reason,
    };

    if meta.is_dir() {
        let has_manifest = path.join(MANIFEST_NAME).is_file();
        let has_smali = !smali_paths(path).map_err(io_err(path))?.is_empty();
        if has_manifest && has_smali {
            return Ok(InputKind::ApktoolDir);
        }
        let mut missing = Vec::new();
        if !has_manifest {
            missing.push(format!("no {MANIFEST_NAME} at the top level"));
        }
        if !has_smali {
            missing.push("no .smali files under a smali*/ directory".to_owned());
        }
        return Err(not_app(format!(
            "not an apktool directory ({}) and not an APK file (is a directory)",
            missing.join(", ")
        )));
    }

    let mut magic = [0u8; 4];
    let read = fs::File::open(path)
        .and_then(|mut f| f.read(&mut magic))
        .map_err(io_err(path))?;
    if meta.is_file() && read == 4 && magic == ZIP_MAGIC {
        return Ok(InputKind::RawApk);
    }
    Err(not_app(
        "not an apktool directory (not a directory) and not an APK file (missing ZIP local header magic 50 4B 03 04)"
            .to_owned(),
    ))
}

/// Parses a manifest that may be text or binary XML.
fn manifest_from_bytes(path: &Path, bytes: &[u8]) -> Result<ManifestInfo, IngestError> {
    if bytes.starts_with(&[0x03, 0x00]) {
        let tree = decode_axml(bytes).map_err(|source| IngestError::AxmlCorrupt {
            path: path.to_owned(),
            source,
        })?;
        manifest_from_axml(&tree)
    } else {
        let text = String::from_utf8_lossy(bytes);
        parse_manifest_xml(text.trim_start_matches('\u{feff}'))
    }
    .map_err(|source| IngestError::ManifestUnparsable {
        path: path.to_owned(),
        source,
    })
}

fn fallback_id(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "app".to_owned())
}

/// `classes.dex` is 1; `classes<N>.dex` is N for N >= 2; anything else
/// (including nested paths and zero-padded numbers) is not a code entry.
fn dex_ordinal(name: &str) -> Option<u32> {
    let middle = name.strip_prefix("classes")?.strip_suffix(".dex")?;
    if middle.is_empty() {
        return Some(1);
    }
    if middle.starts_with('0') || !middle.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    middle.parse().ok().filter(|&n| n >= 2)
}

fn load_apktool_dir(root: &Path) -> Result<(ManifestInfo, CodeIndex), IngestError> {
    let manifest_path = root.join(MANIFEST_NAME);
    let bytes = match fs::read(&manifest_path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(IngestError::ManifestMissing(root.to_owned())),
        Err(e) => return Err(io_err(&manifest_path)(e)),
    };
    let manifest = manifest_from_bytes(&manifest_path, &bytes)?;

    let mut files = Vec::new();
    for (rel, abs) in smali_paths(root).map_err(io_err(root))? {
        let bytes = fs::read(&abs).map_err(io_err(&abs))?;
        let text = match String::from_utf8(bytes) {
            Ok(t) => t,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        };
        files.push(SmaliFile { path: rel, text });
    }
    Ok((manifest, CodeIndex::SmaliFiles(files)))
}

fn load_raw_apk(path: &Path) -> Result<(ManifestInfo, CodeIndex), IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let entries = read_zip_entries(&bytes).map_err(|source| IngestError::ZipCorrupt {
        path: path.to_owned(),
        source,
    })?;

    let manifest_entry = entries
        .iter()
        .find(|e| e.name == MANIFEST_NAME)
        .ok_or_else(|| IngestError::ManifestMissing(path.to_owned()))?;
    let manifest = manifest_from_bytes(&path.join(MANIFEST_NAME), &manifest_entry.data)?;

    let mut dexes: Vec<(u32, &str, &[u8])> = entries
        .iter()
        .filter_map(|e| dex_ordinal(&e.name).map(|n| (n, e.name.as_str(), e.data.as_slice())))
        .collect();
    dexes.sort_by_key(|&(n, _, _)| n);
    let mut pools = Vec::with_capacity(dexes.len());
    for (_, name, data) in dexes {
        let pool = extract_dex_pool(data).map_err(|source| IngestError::DexCorrupt {
            path: path.to_owned(),
            entry: name.to_owned(),
            source,
        })?;
        pools.push(NamedDexPool {
            entry: name.to_owned(),
            pool,
        });
    }
    Ok((manifest, CodeIndex::DexPools(pools)))
}

/// Detects the layout of `path` and loads it.
pub fn load_bundle(path: &Path, declared_category: Option<&str>) -> Result<AppBundle, IngestError> {
    let source = detect_layout(path)?;
    let (manifest, code) = match source {
        InputKind::ApktoolDir => load_apktool_dir(path)?,
        InputKind::RawApk => load_raw_apk(path)?,
    };
    let app_id = if manifest.package.is_empty() {
        fallback_id(path)
    } else {
        manifest.package.clone()
    };
    Ok(AppBundle {
        app_id,
        source,
        manifest,
        code,
        declared_market_category: declared_category.map(str::to_owned),
    })
}
