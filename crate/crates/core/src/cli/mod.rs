//! Command-line surface: `generate`, `search` and `refit`.

mod config;
mod output;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{hex_sha256, DataError, DatasetCollection, Provenance};
use crate::expr::parse;
use crate::fit::{fit_all, FitResult};
use crate::gp::{evolve, CandidateRecord, GenerationStats};
use crate::lmetric::{compare_candidates, l2_score, ranking_value, resolution_floor, LmetricError};
use crate::transform::{dimensionalize, Template};

pub use config::{annotations_path, default_search_fit, DataSource, RescoreOptions, RunConfig};
pub use output::{num, scatter_svg, OutputDir};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("fit failure: {0}")]
    Fit(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Fit(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eqsearch", version, about = "Search for the equation shared by a family of similar systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config, or the manifest.json of an earlier run
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV file with header system_id,x,y (replaces the config data source)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Print per-generation progress
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic collection as CSV plus an annotations sidecar
    Generate(Common),
    /// Run the GP search and rescore the best candidates
    Search(Common),
    /// Fit one template (or raw expression) to every system
    Refit {
        #[command(flatten)]
        common: Common,
        /// Template such as "t0*exp(t1*x) + t2", or an expression such as "exp(x)"
        #[arg(long)]
        template: String,
    },
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    if let Some(data) = &common.data {
        config.data = Some(DataSource::Csv(data.clone()));
    }
    if let Some(out) = &common.out {
        config.out = Some(out.clone());
    }
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("eqsearch-out"));
    config.out = Some(out.clone());
    config.gp.seed = config.seed()?;
    config.validate()?;
    Ok((config, out))
}

/// Entry point used by the binary; returns the process exit code.
pub fn main() -> i32 {
    match run(std::env::args_os()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("eqsearch: {e}");
            e.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    match cli.command {
        Command::Generate(common) => {
            let (config, out) = resolve(&common)?;
            cmd_generate(&config, &out)
        }
        Command::Search(common) => {
            let (config, out) = resolve(&common)?;
            cmd_search(&config, &out, common.verbose).map(|_| ())
        }
        Command::Refit { common, template } => {
            let (config, out) = resolve(&common)?;
            cmd_refit(&template, &config, &out).map(|_| ())
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Serialize)]
struct DataSummary<'a> {
    provenance: &'a Provenance,
    systems: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    data: DataSummary<'a>,
    started_unix: u64,
    finished_unix: u64,
    leaderboard_sha256: Option<String>,
    files: Vec<(String, String)>,
}

fn write_manifest(
    out: &mut OutputDir,
    command: &str,
    config: &RunConfig,
    data: &DatasetCollection,
    started: u64,
    leaderboard: Option<String>,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        tool: "eqsearch",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        data: DataSummary { provenance: data.provenance(), systems: data.len(), sha256: data.digest() },
        started_unix: started,
        finished_unix: unix_now(),
        leaderboard_sha256: leaderboard,
        files: out.written().to_vec(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.write("manifest.json", format!("{text}\n").as_bytes())?;
    Ok(())
}

pub fn cmd_generate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let source = config.data()?;
    if matches!(source, DataSource::Csv(_)) {
        return Err(CliError::Config("generate needs a generator data source, not a CSV file".into()));
    }
    let data = source.load(config.seed()?)?;
    let mut dir = OutputDir::create(out)?;
    dir.write("data.csv", data.to_csv_string().as_bytes())?;
    let annotations = serde_json::to_string_pretty(&data.annotations_json()).expect("annotations serialize");
    dir.write("data.annotations.json", format!("{annotations}\n").as_bytes())?;
    Ok(())
}

/// A leaderboard row after rescoring.
#[derive(Debug, Clone)]
pub struct RankedCandidate {
    pub record: CandidateRecord,
    /// Whether this row was refitted and scored with L.
    pub rescored: bool,
}

impl RankedCandidate {
    pub fn total_l(&self) -> Option<f64> {
        self.record.total_l
    }
}

/// Indices (into an L1-sorted leaderboard) chosen for rescoring: the
/// first `top_k`, plus the first `per_size` at each slot count.
pub fn rescore_selection(leaderboard: &[CandidateRecord], options: &RescoreOptions) -> Vec<usize> {
    let mut chosen: Vec<usize> = (0..leaderboard.len().min(options.top_k)).collect();
    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, record) in leaderboard.iter().enumerate() {
        let count = taken.entry(record.param_count()).or_default();
        if *count < options.per_size {
            *count += 1;
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    chosen.dedup();
    chosen
}

fn order_ranked(a: &RankedCandidate, b: &RankedCandidate, floor: f64) -> Ordering {
    let key = |c: &RankedCandidate| ranking_value(c.total_l().unwrap_or(c.record.mean_l1()), floor);
    let (ka, kb) = (key(a), key(b));
    b.rescored.cmp(&a.rescored).then_with(|| {
        compare_candidates((ka, a.record.param_count(), &a.record.canonical), (kb, b.record.param_count(), &b.record.canonical))
    })
}

/// Refits the selected candidates with the full fit options, attaches L2
/// where there are enough systems, and orders the leaderboard.
pub fn rescore(
    leaderboard: Vec<CandidateRecord>,
    data: &DatasetCollection,
    config: &RunConfig,
    warn: &mut impl FnMut(&str),
) -> Result<Vec<RankedCandidate>, CliError> {
    let seed = config.seed()?;
    let selected = rescore_selection(&leaderboard, &config.rescore);
    let refits: Vec<(usize, FitResult)> =
        selected.par_iter().map(|&i| (i, fit_all(&leaderboard[i].template, data, seed, &config.fit))).collect();
    let mut ranked: Vec<RankedCandidate> =
        leaderboard.into_iter().map(|record| RankedCandidate { record, rescored: false }).collect();
    let mut warned = false;
    for (i, fit) in refits {
        let row = &mut ranked[i];
        row.record.fit = fit;
        row.rescored = true;
        match l2_score(&row.record.fit.theta_matrix, &config.rescore.l2, seed) {
            Ok(report) => row.record.set_l2(report),
            Err(LmetricError::InsufficientSystems(d)) => {
                if !warned {
                    warn(&format!("{d} systems are too few for L2; ranking by L1 alone"));
                    warned = true;
                }
                row.record.set_l1_only();
            }
            Err(e) => return Err(CliError::Fit(e.to_string())),
        }
    }
    let floor = resolution_floor(data);
    ranked.sort_by(|a, b| order_ranked(a, b, floor));
    Ok(ranked)
}

fn leaderboard_csv(ranked: &[RankedCandidate]) -> String {
    let mut out = String::from("rank,template,T,mean_l1,l2,L\n");
    for (i, row) in ranked.iter().enumerate() {
        let r = &row.record;
        let l2 = r.l2.as_ref().map_or_else(String::new, |l| num(l.l2_total));
        let total = r.total_l.map_or_else(String::new, num);
        out.push_str(&format!("{},{},{},{},{l2},{total}\n", i + 1, r.canonical, r.param_count(), num(r.mean_l1())));
    }
    out
}

fn progress_csv(progress: &[GenerationStats]) -> String {
    let mut out = String::from("generation,best_l1,unique_evaluated,invalid\n");
    for p in progress {
        out.push_str(&format!("{},{},{},{}\n", p.generation, num(p.best_l1), p.unique_evaluated, p.invalid));
    }
    out
}

/// What a search wrote, for callers that continue in-process.
#[derive(Debug)]
pub struct SearchReport {
    pub ranked: Vec<RankedCandidate>,
    pub progress: Vec<GenerationStats>,
    pub data: DatasetCollection,
}

pub fn cmd_search(config: &RunConfig, out: &Path, verbose: bool) -> Result<SearchReport, CliError> {
    let started = unix_now();
    let data = config.data()?.load(config.seed()?)?;
    let outcome = evolve(&data, &config.gp, &config.search_fit, |s| {
        if verbose {
            println!(
                "generation {}: best L1 {:e}, {} unique candidates, {} invalid",
                s.generation, s.best_l1, s.unique_evaluated, s.invalid
            );
        }
    })
    .map_err(|e| CliError::Config(e.to_string()))?;
    if outcome.leaderboard.is_empty() {
        return Err(CliError::Fit("no candidate produced a valid template".into()));
    }
    let ranked = rescore(outcome.leaderboard, &data, config, &mut |w| eprintln!("warning: {w}"))?;

    let mut dir = OutputDir::create(out)?;
    let board = leaderboard_csv(&ranked);
    dir.write("leaderboard.csv", board.as_bytes())?;
    for (i, row) in ranked.iter().enumerate().filter(|(_, r)| r.rescored) {
        let (t, fit) = (&row.record.template, &row.record.fit);
        let rank = i + 1;
        dir.write(&format!("theta_matrix_{rank}.csv"), output::theta_matrix_csv(t, fit, &data).as_bytes())?;
        dir.write(&format!("curves_{rank}.csv"), output::curves_csv(t, fit, &data, config.curve_points).as_bytes())?;
        if let Some(report) = &row.record.l2 {
            dir.write(&format!("l2_report_{rank}.csv"), output::l2_report_csv(t, report).as_bytes())?;
        }
    }
    dir.write("progress.csv", progress_csv(&outcome.progress).as_bytes())?;
    write_manifest(&mut dir, "search", config, &data, started, Some(hex_sha256(board.as_bytes())))?;
    if verbose {
        if let Some(best) = ranked.first() {
            println!("best: {} (L = {:e})", best.record.canonical, best.total_l().unwrap_or(f64::NAN));
        }
    }
    Ok(SearchReport { ranked, progress: outcome.progress, data })
}

/// Reads a template: text with slots `t0..` is taken as is, anything else
/// is dimensionalized first.
pub fn template_from_text(text: &str) -> Result<Template, CliError> {
    let expr = parse(text).map_err(|e| CliError::Config(format!("template: {e}")))?;
    let template = if expr.param_count() > 0 { Template::from_expression(expr) } else { dimensionalize(&expr) };
    template.map_err(|e| CliError::Config(format!("template: {e}")))
}

#[derive(Debug)]
pub struct RefitReport {
    pub template: Template,
    pub fit: FitResult,
    pub l2: Option<crate::lmetric::L2Report>,
    pub total_l: f64,
    pub data: DatasetCollection,
}

pub fn cmd_refit(template_text: &str, config: &RunConfig, out: &Path) -> Result<RefitReport, CliError> {
    let started = unix_now();
    let template = template_from_text(template_text)?;
    let seed = config.seed()?;
    let data = config.data()?.load(seed)?;
    let fit = fit_all(&template, &data, seed, &config.fit);
    if fit.failed_count() == data.len() {
        return Err(CliError::Fit(format!("every system failed to fit {template}")));
    }
    let l2 = match l2_score(&fit.theta_matrix, &config.rescore.l2, seed) {
        Ok(report) => Some(report),
        Err(LmetricError::InsufficientSystems(d)) => {
            eprintln!("warning: {d} systems are too few for L2; reporting L1 only");
            None
        }
        Err(e) => return Err(CliError::Fit(e.to_string())),
    };
    let total_l = crate::lmetric::total_metric(&fit, l2.as_ref());

    let mut dir = OutputDir::create(out)?;
    let l2_cell = l2.as_ref().map_or_else(String::new, |r| num(r.l2_total));
    let summary = format!(
        "template,T,mean_l1,l2,L\n{},{},{},{l2_cell},{}\n",
        template.canonical_string(),
        template.param_count(),
        num(fit.mean_l1),
        num(total_l)
    );
    dir.write("refit.csv", summary.as_bytes())?;
    dir.write("fit_summary.csv", output::fit_summary_csv(&fit, &data).as_bytes())?;
    dir.write("theta_matrix.csv", output::theta_matrix_csv(&template, &fit, &data).as_bytes())?;
    dir.write("curves.csv", output::curves_csv(&template, &fit, &data, config.curve_points).as_bytes())?;
    if let Some(report) = &l2 {
        dir.write("l2_report.csv", output::l2_report_csv(&template, report).as_bytes())?;
    }
    if data.has_annotations() {
        dir.write("theta_vs_intrinsic.csv", output::theta_vs_intrinsic_csv(&template, &fit, &data).as_bytes())?;
        for key in output::intrinsic_keys(&data) {
            for slot in 0..template.param_count() {
                let points: Vec<(f64, f64)> = data
                    .iter()
                    .zip(&fit.theta_matrix)
                    .filter_map(|(d, row)| d.annotation(&key).map(|v| (v, row[slot])))
                    .collect();
                let svg = scatter_svg(&points, &key, &format!("t{slot}"));
                dir.write(&format!("theta_vs_{key}_t{slot}.svg"), svg.as_bytes())?;
            }
        }
    }
    write_manifest(&mut dir, "refit", config, &data, started, None)?;
    Ok(RefitReport { template, fit, l2, total_l, data })
}
