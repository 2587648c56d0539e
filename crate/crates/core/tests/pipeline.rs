mod common;

use std::collections::{BTreeMap, BTreeSet};

use apktriage::binary::MethodSig;
use apktriage::catalog::{
    ApiPermissionMap, Catalogs, CategoryRule, CategoryRuleSet, FeatureCatalog, Severity, TokenKind,
};
use apktriage::categorize::{assign_category, score_categories, Score, DEFAULT_MIN_SCORE, UNCATEGORIZED};
use apktriage::ingest::{load_bundle, CodeIndex, SmaliFile};
use apktriage::manifest::ManifestInfo;
use apktriage::mismatch::{flag_features, permission_gap, verdict, GapStatus, VerdictLevel, VerdictPolicy};
use apktriage::report::{analyze_bundle, render, Format};
use apktriage::smali::{scan_bundle, scan_smali_files, HitKind};
use proptest::prelude::*;

fn typeref_invoke_hits(root: &std::path::Path) -> Vec<(String, String, u32)> {
    let catalog = FeatureCatalog::shipped();
    let bundle = load_bundle(root, None).unwrap();
    let report = scan_bundle(&bundle, &catalog);
    let mut got: Vec<(String, String, u32)> = report
        .hits
        .iter()
        .filter(|h| matches!(h.kind, HitKind::TypeRef | HitKind::Invoke))
        .map(|h| {
            (
                catalog.get(&h.feature_id).unwrap().descriptor.clone(),
                h.file.clone(),
                h.line.unwrap(),
            )
        })
        .collect();
    got.sort();
    got
}

#[test]
fn scanner_matches_line_search_oracle() {
    let descriptors: Vec<&str> = common::TABLE_II.iter().map(|(_, d)| *d).collect();
    let oracle_dir = common::fixtures().join("apps/oracle");
    let mut apps: Vec<_> = std::fs::read_dir(&oracle_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    apps.sort();
    assert!(apps.len() >= 10);
    let mut total = 0;
    for app in apps.iter().chain([&common::app("sms_in_games")]) {
        let want = common::line_search_oracle(app, &descriptors);
        let got = typeref_invoke_hits(app);
        assert_eq!(got, want, "{}", app.display());
        total += want.len();
    }
    assert!(total > 100, "oracle corpus too sparse: {total}");
}

#[test]
fn shipped_catalogs_reproduce_the_tables() {
    let features = FeatureCatalog::shipped();
    let got: Vec<(&str, &str)> = features
        .features
        .iter()
        .map(|f| (f.dotted.as_str(), f.descriptor.as_str()))
        .collect();
    assert_eq!(got, common::TABLE_II.to_vec());

    let rules = CategoryRuleSet::shipped();
    assert_eq!(rules.rules.len(), 8);
    for (rule, (name, tokens)) in rules.rules.iter().zip(common::TABLE_III) {
        assert_eq!(rule.name, name);
        let values: Vec<&str> = rule.tokens.iter().map(|t| t.value.as_str()).collect();
        assert_eq!(values, tokens, "{name}");
        for t in &rule.tokens {
            let want = if t.value.starts_with("android.permission-group.") {
                TokenKind::PermissionGroup
            } else if t.value.starts_with("android.permission.") {
                TokenKind::Permission
            } else {
                TokenKind::IntentAction
            };
            assert_eq!(t.kind, want, "{}", t.value);
            if t.kind == TokenKind::PermissionGroup {
                assert!(!rules.group_map[&t.value].is_empty(), "{} has no members", t.value);
            }
        }
    }
}

#[test]
fn canonical_fixtures_get_their_own_category() {
    let catalogs = Catalogs::shipped();
    for (dir, category) in common::CANON {
        let bundle = load_bundle(&common::app(&format!("canon/{dir}")), None).unwrap();
        let (report, _) = analyze_bundle(&bundle, &catalogs, DEFAULT_MIN_SCORE);
        assert_eq!(report.assignment.assigned, category, "{dir}");
        assert_eq!(report.assignment.score, Score::ONE, "{dir}");
    }
    let bundle = load_bundle(&common::app("canon/cat_internet_only"), None).unwrap();
    let (report, _) = analyze_bundle(&bundle, &catalogs, DEFAULT_MIN_SCORE);
    assert_eq!(report.assignment.assigned, "Games");
    assert_eq!(report.assignment.score, Score::new(1, 2));
    // above the tie's score nothing qualifies
    let (report, _) = analyze_bundle(&bundle, &catalogs, Score::new(3, 5));
    assert_eq!(report.assignment.assigned, UNCATEGORIZED);
}

#[test]
fn declared_category_overrides_and_is_cross_checked() {
    let catalogs = Catalogs::shipped();
    let path = common::app("sms_in_games");
    let bundle = load_bundle(&path, Some("Communication")).unwrap();
    let (report, warning) = analyze_bundle(&bundle, &catalogs, DEFAULT_MIN_SCORE);
    assert!(warning.is_none());
    assert_eq!(report.assignment.assigned, "Communication");
    assert_eq!(report.assignment.declared_agreement, Some(false));
    assert!(report.flags.is_empty());
    assert_eq!(report.verdict.level, VerdictLevel::Benign);

    let bundle = load_bundle(&path, Some("Arcade")).unwrap();
    let (report, warning) = analyze_bundle(&bundle, &catalogs, DEFAULT_MIN_SCORE);
    assert_eq!(warning.unwrap().0, "Arcade");
    assert_eq!(report.assignment.assigned, "Games");
}

#[test]
fn sms_in_games_end_to_end() {
    let bundle = load_bundle(&common::app("sms_in_games"), None).unwrap();
    let (report, _) = analyze_bundle(&bundle, &Catalogs::shipped(), DEFAULT_MIN_SCORE);
    assert_eq!(report.assignment.assigned, "Games");
    assert_eq!(report.flags.len(), 1);
    assert_eq!(report.flags[0].feature_id, "sms_manager");
    assert_eq!(report.flags[0].severity, Severity::High);
    assert_eq!(report.flags[0].occurrence_count, 4);
    assert_eq!(report.verdict.level, VerdictLevel::MaliciousSuspect);
    let golden = std::fs::read(common::fixtures().join("golden/sms_in_games.json")).unwrap();
    assert_eq!(render(&report, Format::Json), golden);
}

#[test]
fn raw_apk_is_scanned_through_dex_pools() {
    let path = common::fixtures().join("zip/multidex.apk");
    let bundle = load_bundle(&path, None).unwrap();
    match &bundle.code {
        CodeIndex::DexPools(pools) => {
            let names: Vec<&str> = pools.iter().map(|p| p.entry.as_str()).collect();
            assert_eq!(names, ["classes.dex", "classes2.dex", "classes10.dex"]);
        }
        other => panic!("{other:?}"),
    }
    let report = scan_bundle(&bundle, &FeatureCatalog::shipped());
    assert!(report
        .hits
        .iter()
        .all(|h| h.kind == HitKind::DexRef && h.line.is_none()));
    assert!(report.count("sms_manager") >= 1);
    assert!(report.count("audio_record") >= 1);
    assert!(report
        .api_refs
        .contains(&MethodSig::new("Landroid/telephony/SmsManager;", "sendTextMessage")));
}

#[test]
fn corrupt_inputs_are_reported_as_errors() {
    let err = load_bundle(&common::fixtures().join("zip/corrupt_dex.apk"), None).unwrap_err();
    assert!(err.is_parse_error(), "{err}");
    let err = load_bundle(&common::app("edge/no_smali"), None).unwrap_err();
    assert!(!err.is_parse_error(), "{err}");
}

#[test]
fn permission_gap_examples() {
    let map = ApiPermissionMap::shipped();
    let manifest = |perms: &[&str]| ManifestInfo {
        package: "a.b".into(),
        declared_permissions: perms.iter().map(|p| format!("android.permission.{p}")).collect(),
        ..Default::default()
    };
    let send = BTreeSet::from([MethodSig::new("Landroid/telephony/SmsManager;", "sendTextMessage")]);
    let gap = permission_gap(&send, &manifest(&["SEND_SMS", "CAMERA"]), &map);
    assert_eq!(gap.used, BTreeSet::from(["android.permission.SEND_SMS".to_owned()]));
    assert_eq!(gap.over, BTreeSet::from(["android.permission.CAMERA".to_owned()]));
    assert!(gap.under.is_empty());
    assert_eq!(gap.status, GapStatus::OverPrivileged);

    let rec = BTreeSet::from([MethodSig::new("Landroid/media/AudioRecord;", "read")]);
    let gap = permission_gap(&rec, &manifest(&[]), &map);
    assert_eq!(
        gap.under,
        BTreeSet::from(["android.permission.RECORD_AUDIO".to_owned()])
    );
    assert_eq!(gap.status, GapStatus::UnderPrivileged);

    let gap = permission_gap(&BTreeSet::new(), &manifest(&["SEND_SMS"]), &map);
    assert_eq!(gap.over, BTreeSet::from(["android.permission.SEND_SMS".to_owned()]));
}

/// Random small instances drawn from the shipped map's classes and
/// permissions, plus a few the map does not know.
fn gap_instance() -> impl Strategy<Value = (BTreeSet<String>, BTreeSet<(String, String)>)> {
    let raw = common::raw_api_map();
    let mut perms: Vec<String> = raw
        .iter()
        .flat_map(|e| e.2.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    perms.push("android.permission.READ_CONTACTS".into());
    perms.push("android.permission.WAKE_LOCK".into());
    let mut refs: Vec<(String, String)> = raw
        .iter()
        .map(|(c, m, _)| {
            (
                c.clone(),
                if m == "*" {
                    "startRecording".to_owned()
                } else {
                    m.clone()
                },
            )
        })
        .collect();
    refs.push(("Landroid/telephony/SmsManager;".into(), "getDefault".into()));
    refs.push(("Ljava/lang/String;".into(), "length".into()));
    refs.push(("Landroid/media/AudioRecord;".into(), "<init>".into()));
    (
        prop::sample::subsequence(perms.clone(), 0..=6).prop_map(|v| v.into_iter().collect()),
        prop::sample::subsequence(refs, 0..=6).prop_map(|v| v.into_iter().collect()),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn permission_gap_matches_set_arithmetic((declared, refs) in gap_instance()) {
        let map = ApiPermissionMap::shipped();
        let manifest = ManifestInfo { package: "a.b".into(), declared_permissions: declared.clone(), ..Default::default() };
        let sigs: BTreeSet<MethodSig> = refs.iter().map(|(c, m)| MethodSig::new(c, m)).collect();
        let gap = permission_gap(&sigs, &manifest, &map);
        let want = common::gap_oracle(&declared, &refs, &common::raw_api_map());
        prop_assert_eq!(&gap.used, &want.used);
        prop_assert_eq!(&gap.over, &want.over);
        prop_assert_eq!(&gap.under, &want.under);
        prop_assert_eq!(gap.unmapped_ref_count, want.unmapped);
        prop_assert!(gap.over.is_disjoint(&gap.under));
        prop_assert!(gap.over.is_subset(&declared));
        prop_assert!(gap.used.is_subset(&map.mapped_permissions));
        let status = match (gap.over.is_empty(), gap.under.is_empty()) {
            (true, true) => GapStatus::Exact,
            (false, true) => GapStatus::OverPrivileged,
            (true, false) => GapStatus::UnderPrivileged,
            (false, false) => GapStatus::Both,
        };
        prop_assert_eq!(gap.status, status);
    }
}

fn oracle_files() -> Vec<SmaliFile> {
    let bundle = load_bundle(&common::app("oracle/app03"), None).unwrap();
    match bundle.code {
        CodeIndex::SmaliFiles(f) => f,
        _ => unreachable!(),
    }
}

fn all_evidence() -> Vec<String> {
    let rules = CategoryRuleSet::shipped();
    let mut ev: BTreeSet<String> = rules.group_map.values().flatten().cloned().collect();
    for r in &rules.rules {
        ev.extend(
            r.tokens
                .iter()
                .filter(|t| t.kind != TokenKind::PermissionGroup)
                .map(|t| t.value.clone()),
        );
    }
    ev.insert("android.permission.VIBRATE".into());
    ev.into_iter().collect()
}

fn manifest_of(evidence: &BTreeSet<String>) -> ManifestInfo {
    let (actions, perms): (BTreeSet<String>, BTreeSet<String>) =
        evidence.iter().cloned().partition(|e| e.contains(".action."));
    ManifestInfo {
        package: "p.q".into(),
        declared_permissions: perms,
        intent_actions: actions,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scanning_is_file_order_independent(shuffled in Just(oracle_files()).prop_shuffle()) {
        let catalog = FeatureCatalog::shipped();
        prop_assert_eq!(scan_smali_files(&oracle_files(), &catalog), scan_smali_files(&shuffled, &catalog));
    }

    #[test]
    fn adding_evidence_never_lowers_a_score(
        base in prop::sample::subsequence(all_evidence(), 0..8),
        extra in prop::sample::select(all_evidence()),
    ) {
        let rules = CategoryRuleSet::shipped();
        let before: BTreeSet<String> = base.into_iter().collect();
        let mut after = before.clone();
        after.insert(extra);
        let s0: BTreeMap<String, Score> = score_categories(&manifest_of(&before), &rules).into_iter().map(|s| (s.name, s.score)).collect();
        let s1: BTreeMap<String, Score> = score_categories(&manifest_of(&after), &rules).into_iter().map(|s| (s.name, s.score)).collect();
        for (name, score) in &s0 {
            prop_assert!(s1[name] >= *score, "{name}");
        }
    }

    #[test]
    fn assignment_ignores_rule_order(
        evidence in prop::sample::subsequence(all_evidence(), 0..10),
        rotate in 0usize..8,
        reverse in any::<bool>(),
    ) {
        let rules = CategoryRuleSet::shipped();
        let mut permuted = rules.clone();
        permuted.rules.rotate_left(rotate);
        if reverse {
            permuted.rules.reverse();
        }
        let m = manifest_of(&evidence.into_iter().collect());
        let (a, _) = assign_category(&score_categories(&m, &rules), None, DEFAULT_MIN_SCORE, &rules);
        let (b, _) = assign_category(&score_categories(&m, &permuted), None, DEFAULT_MIN_SCORE, &permuted);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn removing_hits_never_adds_flags_or_raises_the_verdict(drop_mask in any::<u64>(), cat in 0usize..9) {
        let catalog = FeatureCatalog::shipped();
        let full = scan_smali_files(&oracle_files(), &catalog);
        let fewer_files: Vec<SmaliFile> = oracle_files()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| drop_mask >> (i % 64) & 1 == 0)
            .map(|(_, f)| f)
            .collect();
        let less = scan_smali_files(&fewer_files, &catalog);
        let assigned = common::TABLE_III.get(cat).map_or(UNCATEGORIZED, |r| r.0);
        let f_full = flag_features(&full, &catalog, assigned);
        let f_less = flag_features(&less, &catalog, assigned);
        for f in &f_less {
            let g = f_full.iter().find(|g| g.feature_id == f.feature_id);
            prop_assert!(g.is_some_and(|g| g.occurrence_count >= f.occurrence_count));
        }
        for f in &f_full {
            prop_assert!(full.count(&f.feature_id) > 0);
        }
        let gap = permission_gap(&BTreeSet::new(), &ManifestInfo::default(), &ApiPermissionMap::shipped());
        let policy = VerdictPolicy::default();
        prop_assert!(verdict(&f_less, &gap, &policy).level <= verdict(&f_full, &gap, &policy).level);
    }
}

#[test]
fn custom_rule_is_scored_like_the_shipped_ones() {
    let mut rules = CategoryRuleSet::shipped();
    rules.rules.push(CategoryRule {
        name: "Buzz".into(),
        tokens: vec![apktriage::catalog::Token::auto("android.permission.VIBRATE")],
    });
    let m = manifest_of(&BTreeSet::from(["android.permission.VIBRATE".to_owned()]));
    let (a, _) = assign_category(&score_categories(&m, &rules), None, DEFAULT_MIN_SCORE, &rules);
    assert_eq!(a.assigned, "Buzz");
    assert_eq!(a.score, Score::ONE);
}
