//! Shared helpers for integration tests: fixture paths, pinned reference
//! tables and independent oracles.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn app(rel: &str) -> PathBuf {
    fixtures().join("apps").join(rel)
}

/// The six intent classes, as printed, with their descriptors spelled out by
/// hand.
pub const TABLE_II: [(&str, &str); 6] = [
    (
        "android.hardware.Camera.PictureCallback",
        "Landroid/hardware/Camera$PictureCallback;",
    ),
    ("android.telephony.SmsMessage", "Landroid/telephony/SmsMessage;"),
    ("android.telephony.SmsManager", "Landroid/telephony/SmsManager;"),
    ("android.telephony.CellLocation", "Landroid/telephony/CellLocation;"),
    ("android.media.AudioRecord", "Landroid/media/AudioRecord;"),
    ("android.location.LocationManager", "Landroid/location/LocationManager;"),
];

/// The eight category rows, tokens in printed order.
pub const TABLE_III: [(&str, &[&str]); 8] = [
    (
        "Communication",
        &[
            "android.permission.WRITE_SMS",
            "android.permission.SEND_SMS",
            "android.permission.CALL_PHONE",
            "android.permission.READ_SMS",
        ],
    ),
    (
        "Games",
        &["android.permission.INTERNET", "android.permission.READ_PHONE_STATE"],
    ),
    (
        "Social App",
        &[
            "android.permission-group.LOCATION",
            "android.permission.READ_CONTACTS",
            "android.permission.READ_SOCIAL_STREAM",
            "android.permission-group.ACCOUNTS",
            "android.permission.INTERNET",
        ],
    ),
    (
        "Utility",
        &[
            "android.permission.BATTERY_STATS",
            "android.permission-group.SYSTEM_TOOLS",
            "android.permission.BLUETOOTH_ADMIN",
            "android.permission.KILL_BACKGROUND_PROCESSES",
        ],
    ),
    (
        "Education",
        &[
            "android.permission-group.STORAGE",
            "android.permission.READ_EXTERNAL_STORAGE",
        ],
    ),
    (
        "Media",
        &[
            "android.permission.CAMERA",
            "android.permission.RECORD_AUDIO",
            "android.permission.MODIFY_AUDIO_SETTINGS",
            "android.permission.INTERNET",
        ],
    ),
    (
        "Widgets",
        &[
            "android.appwidget.action.APPWIDGET_UPDATE",
            "android.appwidget.action.APPWIDGET_CONFIGURE",
        ],
    ),
    (
        "Travel & Local",
        &["android.permission-group.LOCATION", "android.permission.INTERNET"],
    ),
];

/// Canonical fixture directory for each category row.
pub const CANON: [(&str, &str); 8] = [
    ("cat_communication", "Communication"),
    ("cat_games", "Games"),
    ("cat_social", "Social App"),
    ("cat_utility", "Utility"),
    ("cat_education", "Education"),
    ("cat_media", "Media"),
    ("cat_widgets", "Widgets"),
    ("cat_travel_local", "Travel & Local"),
];

fn collect_smali(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_smali(&path, root, out);
        } else if path.to_string_lossy().ends_with(".smali") {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            out.push((rel, path));
        }
    }
}

/// `grep -n -F <descriptor>` over every `smali*` tree of an apktool
/// directory: `(descriptor, file, line)` for each line containing it.
pub fn line_search_oracle(app_root: &Path, descriptors: &[&str]) -> Vec<(String, String, u32)> {
    let mut files = Vec::new();
    for entry in fs::read_dir(app_root).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if path.is_dir() && name.starts_with("smali") {
            collect_smali(&path, app_root, &mut files);
        }
    }
    let mut out = Vec::new();
    for (rel, path) in files {
        let text = fs::read_to_string(&path).unwrap();
        for (i, line) in text.split('\n').enumerate() {
            for d in descriptors {
                if line.contains(d) {
                    out.push((d.to_string(), rel.clone(), i as u32 + 1));
                }
            }
        }
    }
    out.sort();
    out
}

/// The shipped API map read straight from its JSON: `(descriptor, method,
/// permissions)`.
pub fn raw_api_map() -> Vec<(String, String, Vec<String>)> {
    let doc: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("catalogs/api_map.json")).unwrap(),
    )
    .unwrap();
    doc["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            let class = e["class"].as_str().unwrap();
            let desc = if class.ends_with(';') {
                class.to_owned()
            } else {
                // every shipped class is a top-level class
                format!("L{};", class.replace('.', "/"))
            };
            let perms = e["permissions"]
                .as_array()
                .unwrap()
                .iter()
                .map(|p| p.as_str().unwrap().to_owned())
                .collect();
            (desc, e["method"].as_str().unwrap().to_owned(), perms)
        })
        .collect()
}

#[derive(Debug, PartialEq, Eq)]
pub struct GapOracle {
    pub used: BTreeSet<String>,
    pub over: BTreeSet<String>,
    pub under: BTreeSet<String>,
    pub unmapped: usize,
}

/// Exhaustive set arithmetic over the permission universe.
pub fn gap_oracle(
    declared: &BTreeSet<String>,
    refs: &BTreeSet<(String, String)>,
    map: &[(String, String, Vec<String>)],
) -> GapOracle {
    let matches =
        |(c, m): &(String, String), (ec, em, _): &(String, String, Vec<String>)| c == ec && (em == "*" || em == m);
    let mapped: BTreeSet<String> = map.iter().flat_map(|e| e.2.iter().cloned()).collect();
    let universe: BTreeSet<String> = mapped.iter().chain(declared).cloned().collect();

    let mut used = BTreeSet::new();
    let mut over = BTreeSet::new();
    let mut under = BTreeSet::new();
    for p in &universe {
        let is_used = refs
            .iter()
            .any(|r| map.iter().any(|e| matches(r, e) && e.2.contains(p)));
        let is_declared = declared.contains(p);
        if is_used {
            used.insert(p.clone());
        }
        if is_declared && mapped.contains(p) && !is_used {
            over.insert(p.clone());
        }
        if is_used && !is_declared {
            under.insert(p.clone());
        }
    }
    let unmapped = refs.iter().filter(|r| !map.iter().any(|e| matches(r, e))).count();
    GapOracle {
        used,
        over,
        under,
        unmapped,
    }
}

/// Writes `apps` synthetic apktool apps with `files` smali files each under
/// `dir`, deterministic in `seed`.
pub fn synth_corpus(dir: &Path, apps: usize, files: usize, seed: u64) {
    let mut state = seed | 1;
    let mut next = move || {
        // xorshift64
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let perms = [
        "INTERNET",
        "READ_PHONE_STATE",
        "SEND_SMS",
        "CAMERA",
        "RECORD_AUDIO",
        "ACCESS_FINE_LOCATION",
    ];
    for a in 0..apps {
        let root = dir.join(format!("app{a:03}"));
        let pkg = format!("org.synth.app{a:03}");
        let mut manifest = format!("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<manifest xmlns:android=\"http://schemas.android.com/apk/res/android\" package=\"{pkg}\">\n");
        for p in perms {
            if next() % 2 == 0 {
                manifest.push_str(&format!(
                    "  <uses-permission android:name=\"android.permission.{p}\"/>\n"
                ));
            }
        }
        manifest.push_str("  <application><activity android:name=\".Main\"/></application>\n</manifest>\n");
        fs::create_dir_all(&root).unwrap();
        fs::write(root.join("AndroidManifest.xml"), manifest).unwrap();
        for f in 0..files {
            let cls = format!("org/synth/app{a:03}/C{f}");
            let mut body = format!(
                ".class public L{cls};\n.super Ljava/lang/Object;\n\n.method public run()V\n    .registers 6\n"
            );
            for _ in 0..40 {
                match next() % 10 {
                    0 => {
                        let (_, d) = TABLE_II[(next() % 6) as usize];
                        body.push_str(&format!("    invoke-virtual {{v0}}, {d}->go()V\n"));
                    }
                    1 => body.push_str(
                        "    invoke-virtual {v0}, Ljava/net/URL;->openConnection()Ljava/net/URLConnection;\n",
                    ),
                    2 => body.push_str("    const-string v1, \"android.telephony.SmsManager\"\n"),
                    _ => body.push_str("    invoke-virtual {v0}, Ljava/lang/String;->length()I\n    move-result v1\n"),
                }
            }
            body.push_str("    return-void\n.end method\n");
            let path = root.join("smali").join(format!("{cls}.smali"));
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, body).unwrap();
        }
    }
}
