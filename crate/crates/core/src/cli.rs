//! Command-line front end: `sample`, `rank`, `tune`, `report`, plus
//! `surrogate` for generating synthetic targets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{self, Direction, TuneObjective, TuneOptions, TuneReport};
use crate::paramspace::{ParameterSpace, RangePolicy};
use crate::ranking::{self, RankingResult};
use crate::sampling;
use crate::store;
use crate::targets::surrogate::SurrogateOptions;
use crate::targets::{ExecTemplate, ShellTarget, SurrogateSpec, SurrogateTarget, Target};

#[derive(Debug, Parser)]
#[command(name = "knobtune", version, about = "Rank and tune configuration parameters")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample random valid configurations, evaluate them, append to a database.
    Sample(SampleArgs),
    /// Rank parameter importance from a database.
    Rank(RankArgs),
    /// Tune the top-k parameters of a ranking.
    Tune(TuneArgs),
    /// Re-emit a rank or tune report as CSV files or a text summary.
    Report(ReportArgs),
    /// Generate a synthetic surrogate target.
    Surrogate(SurrogateArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TargetArgs {
    /// Surrogate spec file (JSON).
    #[arg(long)]
    pub surrogate: Option<PathBuf>,
    /// Shell execution template file (JSON).
    #[arg(long)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub db: PathBuf,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Selector choice, `name=value`; one per declared selector.
    #[arg(long = "select", value_name = "NAME=VALUE")]
    pub select: Vec<String>,
    #[arg(long, default_value = "default")]
    pub workload: String,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub k: usize,
    /// Report path; the score curve goes next to it as `<stem>.scores.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "select", value_name = "NAME=VALUE")]
    pub select: Vec<String>,
    /// Only use records of this workload.
    #[arg(long)]
    pub workload: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Baseline {
    Random,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub space: PathBuf,
    /// Rank report produced by `rank`.
    #[arg(long)]
    pub ranking: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub target: TargetArgs,
    /// Report path; `<stem>.trace.csv` and `<stem>.best.conf` are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Run a baseline instead of Bayesian optimization.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long = "select", value_name = "NAME=VALUE")]
    pub select: Vec<String>,
    #[arg(long, default_value = "default")]
    pub workload: String,
    #[arg(long, default_value = "metric")]
    pub metric: String,
    /// Smaller metric is better (latency-like).
    #[arg(long)]
    pub minimize: bool,
    /// Never grow dynamic ranges.
    #[arg(long)]
    pub static_bounds: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Format,
    /// Directory for CSV output; defaults to the input's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SurrogateArgs {
    /// Bind the surrogate to the parameters of this space (after washing
    /// and pruning).
    #[arg(long, conflicts_with = "dims")]
    pub space: Option<PathBuf>,
    /// Generate this many synthetic parameters instead.
    #[arg(long, required_unless_present = "space")]
    pub dims: Option<usize>,
    /// Number of influential parameters.
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.025)]
    pub noise: f64,
    /// Target ratio of optimum to default metric.
    #[arg(long, default_value_t = 3.0)]
    pub gap: f64,
    /// Place the optimum beyond the initial ranges.
    #[arg(long)]
    pub optimum_outside: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a matching space file (synthetic mode).
    #[arg(long)]
    pub space_out: Option<PathBuf>,
    #[arg(long = "select", value_name = "NAME=VALUE")]
    pub select: Vec<String>,
}

/// Contents of a rank report file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub k: usize,
    pub top_k: Vec<String>,
    pub workload: Option<String>,
    pub ranking: RankingResult,
}

/// Any report file; the `kind` field tells them apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Report {
    Rank(RankReport),
    Tune(TuneReport),
}

impl Report {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// `dir/<stem of report>.<suffix>`
pub fn sibling(report: &Path, dir: Option<&Path>, suffix: &str) -> PathBuf {
    let stem = report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = dir.or_else(|| report.parent()).unwrap_or(Path::new(""));
    dir.join(format!("{stem}.{suffix}"))
}

pub fn parse_selections(items: &[String]) -> Result<BTreeMap<String, String>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::InvalidInput(format!("`--select {s}`: expected NAME=VALUE")))
        })
        .collect()
}

/// Loads, washes and prunes a space file.
pub fn prepare_space(path: &Path, select: &[String]) -> Result<ParameterSpace> {
    let (space, _) = ParameterSpace::load(path)?;
    let (washed, _) = space.wash();
    let (pruned, _) = washed.prune(&parse_selections(select)?)?;
    Ok(pruned)
}

fn build_target(args: &TargetArgs, seed: u64, workload: &str) -> Result<Box<dyn Target>> {
    match (&args.surrogate, &args.template) {
        (Some(path), _) => {
            let spec = SurrogateSpec::load(path)?;
            let mut t = SurrogateTarget::new(spec, seed);
            t.workload_id = workload.to_string();
            Ok(Box::new(t))
        }
        (None, Some(path)) => Ok(Box::new(ShellTarget::new(ExecTemplate::load(path)?, workload)?)),
        (None, None) => Err(Error::InvalidInput("either --surrogate or --template is required".into())),
    }
}

pub fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let space = prepare_space(&args.space, &args.select)?;
    let mut target = build_target(&args.target, args.seed, &args.workload)?;
    let configs = sampling::sample(&space, args.n as usize, args.seed)?;
    let mut failures = 0;
    for (i, cfg) in configs.iter().enumerate() {
        let mut record = target.evaluate(&space.full_config(cfg), i as u64);
        record.workload_id = args.workload.clone();
        if let Some(reason) = record.failure() {
            failures += 1;
            log::warn!("sample {i}: {reason}");
        }
        store::append(&args.db, &record)?;
        if (i + 1) % 50 == 0 || i + 1 == configs.len() {
            eprintln!("evaluated {}/{} ({failures} failed)", i + 1, configs.len());
        }
    }
    Ok(())
}

pub fn cmd_rank(args: &RankArgs) -> Result<RankReport> {
    let space = prepare_space(&args.space, &args.select)?;
    let loaded = store::load(&args.db, args.workload.as_deref())?;
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    let ranking = ranking::rank(&loaded.records, &space, ranking::DEFAULT_GRID)?;
    let top_k = ranking.top_k(args.k)?;
    let report = RankReport {
        k: args.k,
        top_k,
        workload: args.workload.clone(),
        ranking,
    };
    let wrapped = Report::Rank(report);
    wrapped.save(&args.out)?;
    let Report::Rank(report) = wrapped else { unreachable!() };
    write(&sibling(&args.out, None, "scores.csv"), &report.ranking.to_csv())?;
    println!("{}", rank_table(&report));
    Ok(report)
}

fn rank_table(report: &RankReport) -> String {
    let width = report.top_k.iter().map(String::len).max().unwrap_or(4).max(9);
    let mut s = format!("{:>4}  {:<width$}  {:>10}\n", "rank", "parameter", "score");
    for (i, e) in report.ranking.entries.iter().take(report.k).enumerate() {
        s.push_str(&format!("{:>4}  {:<width$}  {:>10.4}\n", i + 1, e.name, e.score));
    }
    s.pop();
    s
}

pub fn cmd_tune(args: &TuneArgs) -> Result<TuneReport> {
    let space = prepare_space(&args.space, &args.select)?;
    let Report::Rank(rank) = Report::load(&args.ranking)? else {
        return Err(Error::InvalidInput(format!("{} is not a rank report", args.ranking.display())));
    };
    let top = rank.ranking.top_k(args.k)?;
    let objective = TuneObjective {
        workload_id: args.workload.clone(),
        metric_name: args.metric.clone(),
        direction: if args.minimize { Direction::Minimize } else { Direction::Maximize },
    };
    let mut target = build_target(&args.target, args.seed, &args.workload)?;
    let report = match args.baseline {
        Some(Baseline::Random) => {
            let restricted = space.restrict(&top)?;
            optimizer::random_search(&restricted, &objective, target.as_mut(), args.budget, args.seed)?
        }
        None => {
            let options = TuneOptions {
                dynamic_bounds: !args.static_bounds,
                ..Default::default()
            };
            optimizer::tune(&space, &objective, target.as_mut(), args.budget, &top, args.seed, &options)?
        }
    };
    let wrapped = Report::Tune(report);
    wrapped.save(&args.out)?;
    let Report::Tune(report) = wrapped else { unreachable!() };
    write(&sibling(&args.out, None, "trace.csv"), &report.trace_csv())?;
    match &report.best_config {
        Some(best) => write(&sibling(&args.out, None, "best.conf"), &best.render_ini())?,
        None => log::warn!("no successful evaluation; no best configuration written"),
    }
    println!("{}", tune_summary(&report));
    Ok(report)
}

fn tune_summary(report: &TuneReport) -> String {
    let failures = report.history.iter().filter(|r| r.failure().is_some()).count();
    let mut s = format!(
        "{} search over {} parameter(s): {} evaluations, {failures} failed, {} range expansion(s)\n",
        report.method,
        report.tuned_parameters.len(),
        report.history.len(),
        report.bounds_log.len()
    );
    match (report.best_metric, &report.best_config) {
        (Some(m), Some(cfg)) => {
            s.push_str(&format!("best {} = {m}\n", report.objective.metric_name));
            for name in &report.tuned_parameters {
                if let Some(v) = cfg.get(name) {
                    s.push_str(&format!("  {name} = {v}\n"));
                }
            }
        }
        _ => s.push_str("no successful evaluation\n"),
    }
    s.pop();
    s
}

/// Writes the CSV files for a report and returns their paths, or prints a
/// text summary and returns nothing.
pub fn cmd_report(args: &ReportArgs) -> Result<Vec<PathBuf>> {
    let report = Report::load(&args.input)?;
    let dir = args.out_dir.as_deref();
    match (args.format, &report) {
        (Format::Text, Report::Rank(r)) => println!("{}", rank_table(r)),
        (Format::Text, Report::Tune(t)) => println!("{}", tune_summary(t)),
        (Format::Csv, Report::Rank(r)) => {
            let path = sibling(&args.input, dir, "scores.csv");
            write(&path, &r.ranking.to_csv())?;
            return Ok(vec![path]);
        }
        (Format::Csv, Report::Tune(t)) => {
            let files = [
                ("trace.csv", t.trace_csv()),
                ("bounds.csv", t.bounds_csv()),
                ("history.csv", t.history_csv()),
            ];
            let mut out = Vec::new();
            for (suffix, body) in files {
                let path = sibling(&args.input, dir, suffix);
                write(&path, &body)?;
                out.push(path);
            }
            return Ok(out);
        }
    }
    Ok(Vec::new())
}

pub fn cmd_surrogate(args: &SurrogateArgs) -> Result<SurrogateSpec> {
    let options = SurrogateOptions {
        noise_rel: args.noise,
        default_gap: args.gap,
        optimum_outside: args.optimum_outside,
        ..Default::default()
    };
    let spec = match (&args.space, args.dims) {
        (Some(path), _) => SurrogateSpec::for_space(&prepare_space(path, &args.select)?, args.k, args.seed, &options),
        (None, Some(d)) => SurrogateSpec::synthetic(d, args.k, args.seed, &options),
        (None, None) => return Err(Error::InvalidInput("either --space or --dims is required".into())),
    };
    write(&args.out, &(serde_json::to_string_pretty(&spec)? + "\n"))?;
    if let Some(path) = &args.space_out {
        write(path, &space_json(&spec.space(RangePolicy::Dynamic))?)?;
    }
    Ok(spec)
}

/// Serializes a space in the input file format.
pub fn space_json(space: &ParameterSpace) -> Result<String> {
    let params: Vec<serde_json::Value> = space
        .parameters
        .iter()
        .map(serde_json::to_value)
        .collect::<std::result::Result<_, _>>()?;
    let doc = serde_json::json!({
        "parameters": params,
        "selectors": space.selectors,
        "constraints": space.constraints,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(a) => cmd_sample(&a),
        Command::Rank(a) => cmd_rank(&a).map(drop),
        Command::Tune(a) => cmd_tune(&a).map(drop),
        Command::Report(a) => {
            for p in cmd_report(&a)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Surrogate(a) => cmd_surrogate(&a).map(drop),
    }
}
