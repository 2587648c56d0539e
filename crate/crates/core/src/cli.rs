//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{
    load_api_map, load_category_rules, load_feature_catalog, CatalogError, CatalogKind, CatalogVersions, Catalogs,
    API_MAP_FILE, CATALOG_DIR_ENV, CATEGORIES_FILE, FEATURES_FILE,
};
use crate::categorize::{Score, DEFAULT_MIN_SCORE};
use crate::ingest::{load_bundle, IngestError};
use crate::mismatch::VerdictLevel;
use crate::report::{analyze_bundle, canonical_json, render, Format, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_SUSPICIOUS: i32 = 10;
pub const EXIT_MALICIOUS: i32 = 11;

pub fn verdict_exit_code(level: VerdictLevel) -> i32 {
    match level {
        VerdictLevel::Benign => EXIT_OK,
        VerdictLevel::Suspicious => EXIT_SUSPICIOUS,
        VerdictLevel::MaliciousSuspect => EXIT_MALICIOUS,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "apktriage",
    version,
    about = "Static triage of Android apps: feature tagging, permission-based categorization and privilege-gap reporting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyze one apktool directory or APK file.
    Analyze {
        path: PathBuf,
        #[command(flatten)]
        opts: AnalyzeOpts,
        /// Write the report here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Analyze every child directory or APK of a directory.
    Corpus {
        dir: PathBuf,
        #[command(flatten)]
        opts: AnalyzeOpts,
        /// Write per-app reports and the summary into this directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long, value_name = "N", value_parser = clap::value_parser!(u32).range(1..))]
        jobs: Option<u32>,
        #[arg(long, value_enum, default_value_t = SummaryFormat::Json)]
        summary: SummaryFormat,
    },
    /// Catalog maintenance.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
}

#[derive(Subcommand, Debug)]
enum CatalogCommand {
    /// Load and check catalog files.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct AnalyzeOpts {
    /// Feature catalog (JSON or plain list of dotted names).
    #[arg(long, value_name = "F")]
    catalog: Option<PathBuf>,
    /// Category rules.
    #[arg(long, value_name = "F")]
    categories: Option<PathBuf>,
    /// API-to-permission map.
    #[arg(long = "api-map", value_name = "F")]
    api_map: Option<PathBuf>,
    /// Store category; overrides the rule-based one when it names a rule.
    #[arg(long = "declared-category", value_name = "NAME")]
    declared_category: Option<String>,
    /// Minimum coverage for a rule-based assignment, e.g. 1/2 or 0.6.
    #[arg(long = "min-score", value_name = "R", default_value_t = DEFAULT_MIN_SCORE)]
    min_score: Score,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SummaryFormat {
    Json,
    Csv,
}

/// One app's report plus an optional warning line for stderr.
type AppOutcome = Result<(Report, Option<String>), Failure>;

/// A failure that ends a command with exit code 1 or 2.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn parse(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_PARSE,
            message: message.into(),
        }
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        let code = if e.is_parse_error() { EXIT_PARSE } else { EXIT_USAGE };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn catalog_failure(path: &Path) -> impl FnOnce(CatalogError) -> Failure + '_ {
    move |e| Failure::parse(format!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Picks each catalog from its flag, else the catalog directory, else the
/// built-in copy.
fn load_catalogs(opts: &AnalyzeOpts, catalog_dir: Option<&Path>) -> Result<Catalogs, Failure> {
    let shipped = Catalogs::shipped();
    let source = |flag: &Option<PathBuf>, file: &str| -> Option<PathBuf> {
        flag.clone().or_else(|| catalog_dir.map(|d| d.join(file)))
    };

    let features = match source(&opts.catalog, FEATURES_FILE) {
        Some(p) => load_feature_catalog(&read_file(&p)?).map_err(catalog_failure(&p))?,
        None => shipped.features,
    };
    let rules = match source(&opts.categories, CATEGORIES_FILE) {
        Some(p) => load_category_rules(&read_file(&p)?).map_err(catalog_failure(&p))?,
        None => shipped.rules,
    };
    let api_map = match source(&opts.api_map, API_MAP_FILE) {
        Some(p) => load_api_map(&read_file(&p)?).map_err(catalog_failure(&p))?,
        None => shipped.api_map,
    };
    Catalogs::new(features, rules, api_map).map_err(|e| Failure::parse(e.to_string()))
}

fn analyze_path(path: &Path, opts: &AnalyzeOpts, catalogs: &Catalogs) -> AppOutcome {
    let bundle = load_bundle(path, opts.declared_category.as_deref())?;
    let (report, warning) = analyze_bundle(&bundle, catalogs, opts.min_score);
    Ok((report, warning.map(|w| format!("warning: {}: {w}", path.display()))))
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn cmd_analyze(
    path: &Path,
    opts: &AnalyzeOpts,
    out: Option<&Path>,
    catalog_dir: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Failure> {
    let catalogs = load_catalogs(opts, catalog_dir)?;
    let (report, warning) = analyze_path(path, opts, &catalogs)?;
    if let Some(w) = warning {
        let _ = writeln!(stderr, "{w}");
    }
    let bytes = render(&report, opts.format);
    match out {
        Some(file) => write_out(file, &bytes)?,
        None => stdout
            .write_all(&bytes)
            .map_err(|e| Failure::usage(format!("stdout: {e}")))?,
    }
    Ok(verdict_exit_code(report.verdict.level))
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    app_id: String,
    category: String,
    score: Score,
    flags: usize,
    verdict: VerdictLevel,
}

#[derive(Debug, Serialize)]
struct SummaryError {
    input: String,
    exit_code: i32,
    error: String,
}

#[derive(Debug, Serialize)]
struct Summary {
    tool_version: &'static str,
    catalog_versions: CatalogVersions,
    apps: Vec<SummaryRow>,
    errors: Vec<SummaryError>,
    by_category: BTreeMap<String, usize>,
    by_verdict: BTreeMap<String, usize>,
    exit_code: i32,
}

fn summary_csv(rows: &[SummaryRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("csv rows serialize");
    }
    w.into_inner().expect("in-memory writer")
}

/// Child entries of `dir`, each one app, sorted by file name. Hidden entries
/// are skipped.
fn corpus_inputs(dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let io = |e: std::io::Error| Failure::usage(format!("{}: {e}", dir.display()));
    let mut inputs = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let entry = entry.map_err(io)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.starts_with('.') {
            inputs.push((name, entry.path()));
        }
    }
    inputs.sort();
    Ok(inputs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_corpus(
    dir: &Path,
    opts: &AnalyzeOpts,
    out: Option<&Path>,
    jobs: Option<u32>,
    summary_format: SummaryFormat,
    catalog_dir: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, Failure> {
    let catalogs = load_catalogs(opts, catalog_dir)?;
    let inputs = corpus_inputs(dir)?;
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Failure::usage(format!("{}: {e}", out.display())))?;
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n as usize);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(String, AppOutcome)> = pool.install(|| {
        inputs
            .par_iter()
            .map(|(name, path)| (name.clone(), analyze_path(path, opts, &catalogs)))
            .collect()
    });

    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (name, result) in results {
        match result {
            Ok((report, warning)) => reports.push((name, report, warning)),
            Err(f) => errors.push(SummaryError {
                input: name,
                exit_code: f.code,
                error: f.message,
            }),
        }
    }
    reports.sort_by(|a, b| (&a.1.app_id, &a.0).cmp(&(&b.1.app_id, &b.0)));

    let mut exit = EXIT_OK;
    let mut rows = Vec::with_capacity(reports.len());
    let mut by_category = BTreeMap::new();
    let mut by_verdict = BTreeMap::new();
    let mut stream = Vec::new();
    for (name, report, warning) in &reports {
        if let Some(w) = warning {
            let _ = writeln!(stderr, "{w}");
        }
        let bytes = render(report, opts.format);
        match out {
            Some(out) => {
                let ext = match opts.format {
                    Format::Json => "json",
                    Format::Text => "txt",
                };
                write_out(&out.join(format!("{name}.{ext}")), &bytes)?;
            }
            None => stream.extend_from_slice(&bytes),
        }
        exit = exit.max(verdict_exit_code(report.verdict.level));
        *by_category.entry(report.assignment.assigned.clone()).or_insert(0) += 1;
        *by_verdict.entry(report.verdict.level.to_string()).or_insert(0) += 1;
        rows.push(SummaryRow {
            app_id: report.app_id.clone(),
            category: report.assignment.assigned.clone(),
            score: report.assignment.score,
            flags: report.flags.len(),
            verdict: report.verdict.level,
        });
    }
    for e in &errors {
        let _ = writeln!(stderr, "error: {}", e.error);
        exit = exit.max(e.exit_code);
    }

    let summary = match summary_format {
        SummaryFormat::Json => canonical_json(&Summary {
            tool_version: crate::report::TOOL_VERSION,
            catalog_versions: catalogs.versions(),
            apps: rows,
            errors,
            by_category,
            by_verdict,
            exit_code: exit,
        }),
        SummaryFormat::Csv => summary_csv(&rows),
    };
    if let Some(out) = out {
        let name = match summary_format {
            SummaryFormat::Json => "summary.json",
            SummaryFormat::Csv => "summary.csv",
        };
        write_out(&out.join(name), &summary)?;
    }
    stream.extend_from_slice(&summary);
    stdout
        .write_all(&stream)
        .map_err(|e| Failure::usage(format!("stdout: {e}")))?;
    Ok(exit)
}

fn cmd_validate(files: &[PathBuf], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let mut exit = EXIT_OK;
    for path in files {
        let result = read_file(path).and_then(|doc| {
            let kind = CatalogKind::detect(path, &doc)
                .ok_or_else(|| Failure::parse(format!("{}: cannot tell which catalog this is", path.display())))?;
            kind.validate(&doc).map_err(catalog_failure(path))?;
            Ok(kind)
        });
        match result {
            Ok(kind) => {
                let _ = writeln!(stdout, "ok: {} ({kind:?})", path.display());
            }
            Err(f) => {
                let _ = writeln!(stderr, "error: {}", f.message);
                exit = exit.max(f.code);
            }
        }
    }
    exit
}

/// Runs the CLI with an explicit catalog directory instead of reading
/// [`CATALOG_DIR_ENV`].
pub fn run_with<I, T>(args: I, catalog_dir: Option<&Path>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{}", e.render());
                EXIT_OK
            };
            return code;
        }
    };

    let result = match &cli.command {
        Command::Analyze { path, opts, out } => cmd_analyze(path, opts, out.as_deref(), catalog_dir, stdout, stderr),
        Command::Corpus {
            dir,
            opts,
            out,
            jobs,
            summary,
        } => cmd_corpus(dir, opts, out.as_deref(), *jobs, *summary, catalog_dir, stdout, stderr),
        Command::Catalog {
            command: CatalogCommand::Validate { files },
        } => Ok(cmd_validate(files, stdout, stderr)),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

/// Runs the CLI, taking the catalog directory from the environment.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let dir = std::env::var_os(CATALOG_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    run_with(args, dir.as_deref(), stdout, stderr)
}
