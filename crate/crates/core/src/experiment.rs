//! Experiment plumbing: configuration files, sweeps over seeds and
//! parameters, and the CSV artifacts written for each trial.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    self, generate_workload, ingest_csv, train_streams, EngineError, HopBudget, Network, SimConfig,
    Strategy, TrialMetrics, METRICS_CSV_HEADER,
};
use crate::pgm::DiscretePgm;
use crate::routing::AdvertisementPolicy;
use crate::topology::{self, GenerationReport, Overlay, PowerLawFit};

/// Cycles averaged when reporting converged values.
pub const CONVERGED_WINDOW: usize = 10;
/// Environment variable consulted when no seed is given.
pub const SEED_ENV: &str = "EDGEKNOW_SEED";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// A setting could not be applied; carries the offending field.
    #[error("invalid value for `{field}`: {reason}")]
    Usage { field: String, reason: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Topology(#[from] topology::TopologyError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn usage(field: &str, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Usage {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which strategies a trial runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyChoice {
    One(Strategy),
    /// ABS and the random walk on the same trained network.
    Both,
}

impl FromStr for StrategyChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("both") {
            Ok(StrategyChoice::Both)
        } else {
            s.parse().map(StrategyChoice::One)
        }
    }
}

impl StrategyChoice {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategyChoice::One(s) => vec![s],
            StrategyChoice::Both => vec![Strategy::Abs, Strategy::RandomWalk],
        }
    }
}

/// Setting names accepted in config files, `--sweep` and their aliases.
pub const SETTING_NAMES: &[&str] = &[
    "nodes",
    "predicting",
    "contexts",
    "contexts_per_table",
    "combinations",
    "vars_per_node",
    "observations",
    "predicting_states",
    "context_states",
    "stddev",
    "pseudocount",
    "k",
    "hops",
    "cycles",
    "seed",
    "edge_limit",
    "m0",
    "m",
    "similarity_floor",
    "change_threshold",
    "quality_threshold",
    "hop_inflation",
    "min_interval",
];

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| usage(field, format!("`{value}`: {e}")))
}

/// Applies one `name = value` setting to `config`.
///
/// Names are the flag spellings (dashes or underscores) or the
/// [`SimConfig`] field names.
pub fn apply_setting(config: &mut SimConfig, name: &str, value: &str) -> Result<()> {
    let key = name.trim().replace('-', "_");
    let f = key.as_str();
    match f {
        "nodes" | "node_count" => config.node_count = parse(f, value)?,
        "predicting" | "predicting_var_count" => config.predicting_var_count = parse(f, value)?,
        "contexts" | "context_var_count" => config.context_var_count = parse(f, value)?,
        "contexts_per_table" => config.contexts_per_table = parse(f, value)?,
        "combinations" | "combinations_pool" => config.combinations_pool = parse(f, value)?,
        "vars_per_node" | "vars_trained_per_node" => {
            config.vars_trained_per_node = parse(f, value)?
        }
        "observations" | "observations_per_var" => config.observations_per_var = parse(f, value)?,
        "predicting_states" => {
            config.predicting_states = parse(f, value)?;
            config.policy.quality_threshold =
                AdvertisementPolicy::for_states(config.predicting_states).quality_threshold;
        }
        "context_states" => config.context_states = parse(f, value)?,
        "stddev" | "observation_stddev" => config.observation_stddev = parse(f, value)?,
        "pseudocount" => config.pseudocount = parse(f, value)?,
        "k" => config.k = parse(f, value)?,
        "hops" | "hop_budget" => {
            config.hop_budget = value
                .trim()
                .parse::<HopBudget>()
                .map_err(|e| usage(f, e))?
        }
        "cycles" => config.cycles = parse(f, value)?,
        "strategy" => {
            config.strategy = value.trim().parse::<Strategy>().map_err(|e| usage(f, e))?
        }
        "seed" => config.seed = parse(f, value)?,
        "edge_limit" => {
            config.edge_limit = match value.trim() {
                "none" | "" => None,
                v => Some(parse(f, v)?),
            }
        }
        "m0" => config.attachment.m0 = parse(f, value)?,
        "m" => config.attachment.m = parse(f, value)?,
        "similarity_floor" => config.attachment.similarity_floor = parse(f, value)?,
        "change_threshold" => config.policy.change_threshold = parse(f, value)?,
        "quality_threshold" => config.policy.quality_threshold = parse(f, value)?,
        "hop_inflation" => config.policy.hop_inflation = parse(f, value)?,
        "min_interval" => config.policy.min_interval = parse(f, value)?,
        _ => return Err(usage(name, "unknown setting")),
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(&format!("line {}", i + 1), "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses `name=v1,v2,...`.
pub fn parse_sweep(text: &str) -> Result<(String, Vec<String>)> {
    let (name, values) = text
        .split_once('=')
        .ok_or_else(|| usage("sweep", "expected `name=v1,v2,...`"))?;
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(usage("sweep", "no values"));
    }
    // reject unknown names and bad values before any trial runs
    let mut probe = SimConfig::default();
    for v in &values {
        apply_setting(&mut probe, name, v)?;
    }
    Ok((name.trim().to_string(), values))
}

/// A full experiment: a base configuration, an optional sweep axis and
/// the seeds every sweep point runs with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub base: SimConfig,
    pub sweep_axis: Option<(String, Vec<String>)>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub strategies: StrategyChoice,
    /// Observations replacing the synthetic workload.
    pub workload_csv: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(base: SimConfig, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            name: "run".into(),
            seeds: vec![base.seed],
            strategies: StrategyChoice::One(base.strategy),
            base,
            sweep_axis: None,
            output_dir: output_dir.into(),
            workload_csv: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(usage("seed", "at least one seed is required"));
        }
        for point in self.points()? {
            point.config.validate().map_err(|e| match e {
                EngineError::Config(msg) => usage("config", msg),
                other => other.into(),
            })?;
        }
        Ok(())
    }

    /// Every (sweep value, seed) combination, sweep-major.
    pub fn points(&self) -> Result<Vec<TrialPoint>> {
        let values: Vec<Option<&String>> = match &self.sweep_axis {
            Some((_, vs)) => vs.iter().map(Some).collect(),
            None => vec![None],
        };
        let mut points = Vec::new();
        for value in values {
            for &seed in &self.seeds {
                let mut config = self.base.clone();
                if let (Some((name, _)), Some(v)) = (&self.sweep_axis, value) {
                    apply_setting(&mut config, name, v)?;
                }
                config.seed = seed;
                points.push(TrialPoint {
                    sweep_value: value.cloned(),
                    seed,
                    config,
                });
            }
        }
        Ok(points)
    }

    fn file_name(&self, point: &TrialPoint) -> String {
        match (&self.sweep_axis, &point.sweep_value) {
            (Some((name, _)), Some(v)) => {
                format!("{}_{}={}_seed{}.csv", self.name, name, v, point.seed)
            }
            _ => format!("{}_seed{}.csv", self.name, point.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialPoint {
    pub sweep_value: Option<String>,
    pub seed: u64,
    pub config: SimConfig,
}

/// Results for one trial point, one entry per strategy run.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub point: TrialPoint,
    pub metrics: Vec<TrialMetrics>,
    pub csv_path: PathBuf,
}

impl TrialOutcome {
    pub fn violations(&self) -> usize {
        self.metrics
            .iter()
            .map(|m| m.oracle_violations + m.adjacency_violations + m.hop_accounting_violations)
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trials: Vec<TrialOutcome>,
    pub summary_path: PathBuf,
}

impl RunOutcome {
    pub fn violations(&self) -> usize {
        self.trials.iter().map(TrialOutcome::violations).sum()
    }

    pub fn oracle_violations(&self) -> usize {
        self.trials
            .iter()
            .flat_map(|t| &t.metrics)
            .map(|m| m.oracle_violations)
            .sum()
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.violations() > 0)
    }
}

/// Trains the models for one trial, from the CSV when one is given.
fn trained_models(config: &SimConfig, workload_csv: Option<&Arc<Vec<Vec<engine::Observation>>>>) -> engine::Result<Vec<DiscretePgm>> {
    let schema = Arc::new(config.schema()?);
    match workload_csv {
        Some(streams) => train_streams(&schema, streams, config.pseudocount),
        None => generate_workload(config)?.train(&schema, config.pseudocount),
    }
}

/// Builds and runs every strategy of one trial point.
pub fn run_point(
    point: &TrialPoint,
    strategies: StrategyChoice,
    workload: Option<&Arc<Vec<Vec<engine::Observation>>>>,
) -> Result<Vec<TrialMetrics>> {
    let mut config = point.config.clone();
    if let Some(streams) = workload {
        config.node_count = streams.len();
    }
    config.validate()?;
    let pgms = trained_models(&config, workload)?;
    let mut net = Network::from_models(&config, pgms)?;
    Ok(strategies
        .strategies()
        .into_iter()
        .map(|s| net.run(s))
        .collect())
}

/// Runs every trial of `spec` on `threads` workers (0 = all cores) and
/// writes one metrics CSV per trial plus the summary.
pub fn cmd_run(spec: &ExperimentSpec, threads: usize) -> Result<RunOutcome> {
    spec.validate()?;
    let workload = match &spec.workload_csv {
        Some(path) => Some(Arc::new(ingest_csv(path)?)),
        None => None,
    };
    let points = spec.points()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let results: Vec<Result<Vec<TrialMetrics>>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| run_point(p, spec.strategies, workload.as_ref()))
            .collect()
    });

    // single collector: files are written in point order
    fs::create_dir_all(&spec.output_dir).map_err(io_err(&spec.output_dir))?;
    let mut trials = Vec::with_capacity(points.len());
    for (point, result) in points.into_iter().zip(results) {
        let metrics = result?;
        let csv_path = spec.output_dir.join(spec.file_name(&point));
        write_metrics_csv(&csv_path, &metrics)?;
        trials.push(TrialOutcome {
            point,
            metrics,
            csv_path,
        });
    }
    let summary_path = spec.output_dir.join(SUMMARY_FILE);
    write_summary(&summary_path, spec, &trials)?;
    Ok(RunOutcome {
        trials,
        summary_path,
    })
}

pub fn write_metrics_csv(path: &Path, metrics: &[TrialMetrics]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(io::BufWriter::new(file));
    w.write_record(METRICS_CSV_HEADER)?;
    for m in metrics {
        m.write_csv_rows(&mut w)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Column names of the summary CSV.
pub const SUMMARY_CSV_HEADER: [&str; 14] = [
    "sweep_param",
    "sweep_value",
    "seed",
    "strategy",
    "node_count",
    "K",
    "hops",
    "first_accuracy",
    "converged_accuracy",
    "converged_accuracy_std",
    "converged_regret",
    "adv_sets_sent",
    "oracle_violations",
    "invariant_violations",
];

fn write_summary(path: &Path, spec: &ExperimentSpec, trials: &[TrialOutcome]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(io::BufWriter::new(file));
    w.write_record(SUMMARY_CSV_HEADER)?;
    let param = spec.sweep_axis.as_ref().map(|(n, _)| n.as_str()).unwrap_or("");
    for t in trials {
        for m in &t.metrics {
            w.write_record([
                param.to_string(),
                t.point.sweep_value.clone().unwrap_or_default(),
                t.point.seed.to_string(),
                m.strategy.to_string(),
                m.node_count.to_string(),
                m.k.to_string(),
                m.hops.to_string(),
                format!("{:.6}", m.cycles.first().map_or(0.0, |c| c.accuracy)),
                format!("{:.6}", m.converged_accuracy(CONVERGED_WINDOW)),
                format!("{:.6}", m.converged_query_std(CONVERGED_WINDOW)),
                format!("{:.6}", m.converged_regret(CONVERGED_WINDOW)),
                m.cycles.iter().map(|c| c.adv_sets_sent).sum::<usize>().to_string(),
                m.oracle_violations.to_string(),
                (m.adjacency_violations + m.hop_accounting_violations).to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Mean and across-seed deviation of converged accuracy per sweep value
/// and strategy, in first-seen order.
pub fn seed_aggregate(trials: &[TrialOutcome]) -> Vec<(Option<String>, Strategy, f64, f64, f64)> {
    let mut keys: Vec<(Option<String>, Strategy)> = Vec::new();
    for t in trials {
        for m in &t.metrics {
            let key = (t.point.sweep_value.clone(), m.strategy);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.into_iter()
        .map(|(value, strategy)| {
            let acc: Vec<f64> = trials
                .iter()
                .filter(|t| t.point.sweep_value == value)
                .flat_map(|t| &t.metrics)
                .filter(|m| m.strategy == strategy)
                .map(|m| m.converged_accuracy(CONVERGED_WINDOW))
                .collect();
            let query_std: Vec<f64> = trials
                .iter()
                .filter(|t| t.point.sweep_value == value)
                .flat_map(|t| &t.metrics)
                .filter(|m| m.strategy == strategy)
                .map(|m| m.converged_query_std(CONVERGED_WINDOW))
                .collect();
            (
                value,
                strategy,
                engine::mean(acc.iter().copied()),
                engine::std_dev(&acc),
                engine::mean(query_std.into_iter()),
            )
        })
        .collect()
}

/// Settings of the `topology` command.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    /// Supplies node count, workload and attachment parameters.
    pub config: SimConfig,
    pub output_dir: PathBuf,
    /// Plain preferential attachment, ignoring model similarity.
    pub unweighted: bool,
}

#[derive(Debug, Clone)]
pub struct TopologyOutcome {
    pub overlay: Overlay,
    pub histogram: std::collections::BTreeMap<usize, usize>,
    pub fit: Option<PowerLawFit>,
    /// Nodes whose degree equals the edge limit.
    pub saturated: usize,
    pub report: GenerationReport,
    pub warnings: Vec<String>,
    pub edge_list_path: PathBuf,
    pub histogram_path: PathBuf,
}

pub const EDGE_LIST_FILE: &str = "edges.txt";
pub const HISTOGRAM_FILE: &str = "degree_histogram.csv";

/// Generates an overlay and writes its edge list and degree histogram.
pub fn cmd_topology(spec: &TopologySpec) -> Result<TopologyOutcome> {
    let config = &spec.config;
    config.attachment.validate()?;
    let seed = engine::derive_seed(config.seed, engine::TAG_TOPOLOGY);
    let overlay = if spec.unweighted {
        topology::generate_unweighted(&config.attachment, config.node_count, config.edge_limit, seed)?
    } else {
        config.validate()?;
        let pgms = trained_models(config, None)?;
        topology::generate(&config.attachment, &pgms, config.edge_limit, seed)?
    };
    let histogram = topology::degree_histogram(&overlay);
    let fit = topology::survival_fit(&histogram);
    let saturated = match config.edge_limit {
        Some(limit) => histogram.get(&limit).copied().unwrap_or(0),
        None => 0,
    };
    let report = overlay.report;
    let mut warnings = Vec::new();
    if saturated > 0 {
        warnings.push(format!(
            "{saturated} nodes saturated at the edge limit of {}",
            config.edge_limit.unwrap_or_default()
        ));
    }
    if report.short_attachments > 0 {
        warnings.push(format!(
            "{} arrivals found fewer than m = {} attachment targets",
            report.short_attachments, config.attachment.m
        ));
    }
    if report.repaired_components > 0 {
        warnings.push(format!(
            "{} components were joined by connectivity repair",
            report.repaired_components
        ));
    }

    fs::create_dir_all(&spec.output_dir).map_err(io_err(&spec.output_dir))?;
    let edge_list_path = spec.output_dir.join(EDGE_LIST_FILE);
    let file = fs::File::create(&edge_list_path).map_err(io_err(&edge_list_path))?;
    overlay
        .write_edge_list(io::BufWriter::new(file))
        .map_err(io_err(&edge_list_path))?;
    let histogram_path = spec.output_dir.join(HISTOGRAM_FILE);
    let file = fs::File::create(&histogram_path).map_err(io_err(&histogram_path))?;
    topology::write_histogram_csv(&histogram, io::BufWriter::new(file))
        .map_err(io_err(&histogram_path))?;
    Ok(TopologyOutcome {
        overlay,
        histogram,
        fit,
        saturated,
        report,
        warnings,
        edge_list_path,
        histogram_path,
    })
}

/// Simulator for entropy-guided query routing between edge nodes.
#[derive(Debug, Parser)]
#[command(name = "edgeknow", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run trials (optionally a sweep) and write metrics CSVs.
    Run(RunArgs),
    /// Generate an overlay and write its edge list and degree histogram.
    Topology(TopologyArgs),
}

/// Settings shared by both commands. Unset flags fall back to the
/// config file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// `key = value` file applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network size [default: 256].
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Seed or comma list of seeds; falls back to EDGEKNOW_SEED, then 0.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Per-node degree cap [default: none].
    #[arg(long)]
    pub edge_limit: Option<usize>,
    /// Initial clique size [default: 4].
    #[arg(long)]
    pub m0: Option<usize>,
    /// Edges per arriving node [default: 3].
    #[arg(long)]
    pub m: Option<usize>,
    /// Predicting variables [default: 100]; each node trains
    /// `vars_per_node` of them (config file, default 10, capped here).
    #[arg(long)]
    pub predicting: Option<usize>,
    /// Context variables [default: 3].
    #[arg(long)]
    pub contexts: Option<usize>,
    /// Contexts per trained table [default: 2].
    #[arg(long)]
    pub contexts_per_table: Option<usize>,
    /// Distinct context combinations in the pool [default: 3].
    #[arg(long)]
    pub combinations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Entropy sets kept per predicting variable [default: 3].
    #[arg(long)]
    pub k: Option<usize>,
    /// Hop budget, a number or `2log2n` [default: 2log2n].
    #[arg(long)]
    pub hops: Option<String>,
    /// Simulation cycles [default: 30].
    #[arg(long)]
    pub cycles: Option<usize>,
    /// `abs`, `random-walk` or `both` [default: abs].
    #[arg(long)]
    pub strategy: Option<String>,
    /// Number of consecutive seeds starting at the first `--seed`.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Sweep axis as `name=v1,v2,...`.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Observation CSV replacing the synthetic workload.
    #[arg(long)]
    pub workload_csv: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Name prefix of the per-trial CSVs.
    #[arg(long, default_value = "run")]
    pub name: String,
}

#[derive(Debug, Clone, Args)]
pub struct TopologyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Ignore model similarity during attachment.
    #[arg(long)]
    pub unweighted: bool,
}

fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

/// Applies config file, environment and flags in increasing precedence.
/// Also returns the raw config file entries.
fn base_config(
    common: &CommonArgs,
    env_seed: Option<&str>,
) -> Result<(SimConfig, Vec<(String, String)>)> {
    let mut config = SimConfig::default();
    let file = match &common.config {
        Some(path) => read_config(path)?,
        None => Vec::new(),
    };
    let file_has_seed = file.iter().any(|(k, _)| k.trim() == "seed");
    if !file_has_seed {
        if let Some(s) = env_seed {
            config.seed = parse(SEED_ENV, s)?;
        }
    }
    for (k, v) in file.iter().filter(|(k, _)| k != "sweep") {
        apply_setting(&mut config, k, v)?;
    }
    let flags: [(&str, Option<String>); 8] = [
        ("nodes", common.nodes.map(|v| v.to_string())),
        ("edge_limit", common.edge_limit.map(|v| v.to_string())),
        ("m0", common.m0.map(|v| v.to_string())),
        ("m", common.m.map(|v| v.to_string())),
        ("predicting", common.predicting.map(|v| v.to_string())),
        ("contexts", common.contexts.map(|v| v.to_string())),
        ("contexts_per_table", common.contexts_per_table.map(|v| v.to_string())),
        ("combinations", common.combinations.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            apply_setting(&mut config, k, &v)?;
        }
    }
    if let Some(&first) = common.seed.first() {
        config.seed = first;
    }
    // the default training load only applies when it fits
    let explicit = file
        .iter()
        .any(|(k, _)| matches!(k.trim(), "vars_per_node" | "vars_trained_per_node"));
    if !explicit {
        config.vars_trained_per_node = config.vars_trained_per_node.min(config.predicting_var_count);
    }
    Ok((config, file))
}

/// Turns `run` arguments into an experiment.
pub fn run_spec(args: &RunArgs, env_seed: Option<&str>) -> Result<ExperimentSpec> {
    let (mut config, file) = base_config(&args.common, env_seed)?;
    let flags: [(&str, Option<String>); 4] = [
        ("k", args.k.map(|v| v.to_string())),
        ("hops", args.hops.clone()),
        ("cycles", args.cycles.map(|v| v.to_string())),
        ("strategy", None),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            apply_setting(&mut config, k, &v)?;
        }
    }
    let strategies = match &args.strategy {
        Some(s) => s.parse::<StrategyChoice>().map_err(|e| usage("strategy", e))?,
        None => StrategyChoice::One(config.strategy),
    };
    if let StrategyChoice::One(s) = strategies {
        config.strategy = s;
    }
    let seeds = if args.common.seed.len() > 1 {
        args.common.seed.clone()
    } else {
        let count = args.seeds.unwrap_or(1);
        if count == 0 {
            return Err(usage("seeds", "must be at least 1"));
        }
        (0..count as u64).map(|i| config.seed + i).collect()
    };
    let sweep_text = args.sweep.clone().or_else(|| {
        file.iter()
            .find(|(k, _)| k == "sweep")
            .map(|(_, v)| v.clone())
    });
    let sweep_axis = sweep_text.as_deref().map(parse_sweep).transpose()?;
    let spec = ExperimentSpec {
        name: args.name.clone(),
        base: config,
        sweep_axis,
        seeds,
        output_dir: args.common.out.clone(),
        strategies,
        workload_csv: args.workload_csv.clone(),
    };
    Ok(spec)
}

pub fn topology_spec(args: &TopologyArgs, env_seed: Option<&str>) -> Result<TopologySpec> {
    let (config, _) = base_config(&args.common, env_seed)?;
    Ok(TopologySpec {
        config,
        output_dir: args.common.out.clone(),
        unweighted: args.unweighted,
    })
}

/// Entry point of the binary: returns the process exit code.
///
/// 0 on success, 1 when any trial recorded an invariant violation,
/// 2 on usage errors and 3 on other failures.
pub fn main_with<W: Write, E: Write>(cli: Cli, env_seed: Option<&str>, out: &mut W, err: &mut E) -> i32 {
    let result = match cli.command {
        Command::Run(args) => run_spec(&args, env_seed).and_then(|spec| {
            let outcome = cmd_run(&spec, args.threads)?;
            report_run(&spec, &outcome, out).map_err(io_err(&spec.output_dir))?;
            Ok(outcome.exit_code())
        }),
        Command::Topology(args) => topology_spec(&args, env_seed).and_then(|spec| {
            let outcome = cmd_topology(&spec)?;
            for w in &outcome.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            report_topology(&outcome, out).map_err(io_err(&spec.output_dir))?;
            Ok(0)
        }),
    };
    match result {
        Ok(code) => {
            if code != 0 {
                let _ = writeln!(err, "error: invariant violations recorded, see summary.csv");
            }
            code
        }
        Err(e @ ExperimentError::Usage { .. }) => {
            let _ = writeln!(err, "usage error: {e}");
            2
        }
        Err(ExperimentError::Engine(EngineError::Config(msg))) => {
            let _ = writeln!(err, "usage error: {msg}");
            2
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            3
        }
    }
}

fn report_run<W: Write>(spec: &ExperimentSpec, outcome: &RunOutcome, out: &mut W) -> io::Result<()> {
    writeln!(
        out,
        "{} trials written to {}",
        outcome.trials.len(),
        spec.output_dir.display()
    )?;
    for (value, strategy, mean, seed_std, query_std) in seed_aggregate(&outcome.trials) {
        let point = match (&spec.sweep_axis, value) {
            (Some((name, _)), Some(v)) => format!("{name}={v} "),
            _ => String::new(),
        };
        writeln!(
            out,
            "{point}{strategy}: converged accuracy {mean:.3} (seed std {seed_std:.3}, query std {query_std:.3})"
        )?;
    }
    writeln!(out, "oracle violations: {}", outcome.oracle_violations())
}

fn report_topology<W: Write>(outcome: &TopologyOutcome, out: &mut W) -> io::Result<()> {
    writeln!(
        out,
        "{} nodes, {} edges, max degree {}",
        outcome.overlay.node_count(),
        outcome.overlay.edge_count(),
        outcome.overlay.max_degree()
    )?;
    match outcome.fit {
        Some(fit) => writeln!(
            out,
            "survival fit: slope {:.3}, intercept {:.3}, r2 {:.3} over {} degrees",
            fit.slope, fit.intercept, fit.r_squared, fit.points
        ),
        None => writeln!(out, "survival fit: too few distinct degrees"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines_and_comments() {
        let kv = parse_config("# header\nnodes = 12\n\nk=2 # trailing\n").unwrap();
        assert_eq!(kv, vec![("nodes".into(), "12".into()), ("k".into(), "2".into())]);
        assert!(matches!(parse_config("nodes 12"), Err(ExperimentError::Usage { .. })));
    }

    #[test]
    fn settings_name_their_field() {
        let mut c = SimConfig::default();
        apply_setting(&mut c, "contexts-per-table", "3").unwrap();
        assert_eq!(c.contexts_per_table, 3);
        apply_setting(&mut c, "hops", "2log2n").unwrap();
        assert_eq!(c.hop_budget, HopBudget::LogRule);
        apply_setting(&mut c, "edge_limit", "none").unwrap();
        assert_eq!(c.edge_limit, None);
        match apply_setting(&mut c, "k", "three") {
            Err(ExperimentError::Usage { field, .. }) => assert_eq!(field, "k"),
            other => panic!("{other:?}"),
        }
        match apply_setting(&mut c, "bogus", "1") {
            Err(ExperimentError::Usage { field, .. }) => assert_eq!(field, "bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn every_listed_setting_is_accepted() {
        for name in SETTING_NAMES {
            let mut c = SimConfig::default();
            let value = match *name {
                "hops" => "4",
                "stddev" | "pseudocount" | "similarity_floor" | "change_threshold"
                | "quality_threshold" | "hop_inflation" => "0.5",
                _ => "2",
            };
            apply_setting(&mut c, name, value).unwrap();
        }
    }

    #[test]
    fn sweep_points_are_cartesian() {
        let mut spec = ExperimentSpec::new(SimConfig::default(), "x");
        spec.sweep_axis = Some(parse_sweep("nodes=16,32,64").unwrap());
        spec.seeds = vec![1, 2, 3];
        let points = spec.points().unwrap();
        assert_eq!(points.len(), 9);
        assert_eq!(points[4].config.node_count, 32);
        assert_eq!(points[4].seed, 2);
        assert!(parse_sweep("nodes=").is_err());
        assert!(parse_sweep("colour=1,2").is_err());
    }

    #[test]
    fn flags_override_file_and_env_is_a_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        fs::write(&path, "nodes = 40\nk = 2\ncycles = 5\n").unwrap();
        let cli = Cli::try_parse_from([
            "edgeknow", "run", "--config", path.to_str().unwrap(), "--nodes", "30",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        let spec = run_spec(&args, Some("9")).unwrap();
        assert_eq!(spec.base.node_count, 30);
        assert_eq!(spec.base.k, 2);
        assert_eq!(spec.seeds, vec![9]);

        let cli = Cli::try_parse_from(["edgeknow", "run", "--seed", "4", "--seeds", "3"]).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        assert_eq!(run_spec(&args, Some("9")).unwrap().seeds, vec![4, 5, 6]);
    }

    #[test]
    fn strategy_choice_parses_both() {
        assert_eq!("both".parse::<StrategyChoice>().unwrap(), StrategyChoice::Both);
        assert_eq!(
            "abs".parse::<StrategyChoice>().unwrap(),
            StrategyChoice::One(Strategy::Abs)
        );
        assert!("greedy".parse::<StrategyChoice>().is_err());
    }
}
