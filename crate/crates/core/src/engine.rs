//! Cycle-based simulation harness.
//!
//! A trial trains every node on a synthetic (or ingested) workload, builds the
//! overlay from the trained models and then runs cycles. In each cycle every
//! node first advertises (when its summary changed enough) and then issues one
//! query, which is routed until its hop budget is spent. Each query is scored
//! against an exhaustive search over all nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pgm::{ContextAssignment, DiscretePgm, PgmError, Schema, VariableId};
use crate::routing::{
    handle_query, issue_query, process_query, should_advertise, Advertisement,
    AdvertisementPolicy, Decision, Node, NodeId, Query,
};
use crate::topology::{self, AttachmentParams, Overlay, TopologyError};

/// Hit tolerance between achieved and optimal quality, in bits.
pub const HIT_TOLERANCE: f64 = 1e-6;
/// Floor for the regret denominator.
pub const REGRET_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Pgm(#[from] PgmError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("achieved quality {achieved} beats the exhaustive optimum {optimal}")]
    OracleViolation { achieved: f64, optimal: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Aggregation-based routing over advertised entropy sets.
    Abs,
    /// Directed random walk: uniform over unvisited neighbors.
    RandomWalk,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Abs => "ABS",
            Strategy::RandomWalk => "RandomWalk",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "abs" => Ok(Strategy::Abs),
            "randomwalk" | "random-walk" | "random_walk" | "rw" => Ok(Strategy::RandomWalk),
            _ => Err(format!("unknown strategy `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HopBudget {
    Fixed(u32),
    /// `⌈2·log2(node_count)⌉`.
    LogRule,
}

impl HopBudget {
    pub fn resolve(self, node_count: usize) -> u32 {
        match self {
            HopBudget::Fixed(h) => h,
            HopBudget::LogRule if node_count <= 1 => 0,
            HopBudget::LogRule => (2.0 * (node_count as f64).log2()).ceil() as u32,
        }
    }
}

impl fmt::Display for HopBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HopBudget::Fixed(h) => write!(f, "{h}"),
            HopBudget::LogRule => f.write_str("2log2n"),
        }
    }
}

impl FromStr for HopBudget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "2log2n" | "log" | "auto" => Ok(HopBudget::LogRule),
            _ => s
                .parse()
                .map(HopBudget::Fixed)
                .map_err(|_| format!("bad hop budget `{s}`")),
        }
    }
}

/// Everything that defines one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub node_count: usize,
    pub predicting_var_count: usize,
    pub context_var_count: usize,
    /// Contexts in each trained combination.
    pub contexts_per_table: usize,
    /// Distinct combinations handed out to nodes.
    pub combinations_pool: usize,
    pub vars_trained_per_node: usize,
    pub observations_per_var: usize,
    pub predicting_states: usize,
    pub context_states: usize,
    /// Spread of the synthetic observations, in state widths.
    pub observation_stddev: f64,
    pub pseudocount: f64,
    pub k: usize,
    pub hop_budget: HopBudget,
    pub cycles: usize,
    pub strategy: Strategy,
    pub policy: AdvertisementPolicy,
    pub attachment: AttachmentParams,
    pub edge_limit: Option<usize>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            node_count: 256,
            predicting_var_count: 100,
            context_var_count: 3,
            contexts_per_table: 2,
            combinations_pool: 3,
            vars_trained_per_node: 10,
            observations_per_var: 1000,
            predicting_states: 8,
            context_states: 4,
            observation_stddev: 1.0,
            pseudocount: DiscretePgm::DEFAULT_PSEUDOCOUNT,
            k: 3,
            hop_budget: HopBudget::LogRule,
            cycles: 30,
            strategy: Strategy::Abs,
            policy: AdvertisementPolicy::for_states(8),
            attachment: AttachmentParams::default(),
            edge_limit: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("node_count", self.node_count),
            ("predicting_var_count", self.predicting_var_count),
            ("context_var_count", self.context_var_count),
            ("contexts_per_table", self.contexts_per_table),
            ("combinations_pool", self.combinations_pool),
            ("vars_trained_per_node", self.vars_trained_per_node),
            ("observations_per_var", self.observations_per_var),
            ("k", self.k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(EngineError::Config(format!("{name} must be at least 1")));
        }
        if self.contexts_per_table > self.context_var_count {
            return Err(EngineError::Config(
                "contexts_per_table exceeds context_var_count".into(),
            ));
        }
        if self.context_var_count > 64 {
            return Err(EngineError::Config("at most 64 context variables".into()));
        }
        if self.vars_trained_per_node > self.predicting_var_count {
            return Err(EngineError::Config(
                "vars_trained_per_node exceeds predicting_var_count".into(),
            ));
        }
        let available = binomial(self.context_var_count, self.contexts_per_table);
        if self.combinations_pool > available {
            return Err(EngineError::Config(format!(
                "combinations_pool {} exceeds the {available} possible combinations",
                self.combinations_pool
            )));
        }
        if !(self.observation_stddev >= 0.0) || !(self.pseudocount > 0.0) {
            return Err(EngineError::Config(
                "observation_stddev must be >= 0 and pseudocount > 0".into(),
            ));
        }
        self.attachment.validate()?;
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        Ok(Schema::uniform(
            self.predicting_var_count,
            self.predicting_states,
            self.context_var_count,
            self.context_states,
        )?)
    }

    pub fn hops(&self) -> u32 {
        self.hop_budget.resolve(self.node_count)
    }
}

/// `n choose r`, saturating.
pub fn binomial(n: usize, r: usize) -> usize {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc.min(usize::MAX as u128) as usize
}

/// All `r`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, r: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(r);
    fn rec(start: usize, n: usize, r: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if current.len() == r {
            out.push(current.clone());
            return;
        }
        for i in start..n {
            if n - i < r - current.len() {
                break;
            }
            current.push(i as u32);
            rec(i + 1, n, r, current, out);
            current.pop();
        }
    }
    rec(0, n, r, &mut current, &mut out);
    out
}

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_WORKLOAD: u64 = 1;
pub const TAG_TOPOLOGY: u64 = 2;
const TAG_QUERIES: u64 = 3;
const TAG_WALK: u64 = 4;
const TAG_POOL: u64 = 5;

/// One training observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub node: NodeId,
    pub target: VariableId,
    pub ctx: ContextAssignment,
    pub outcome: usize,
}

/// Per-node plan of the synthetic workload: which variables a node trains,
/// against which combination, and the Gaussian behind every context cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorkload {
    pub plans: Vec<Vec<TrainingPlan>>,
    pub predicting_states: usize,
    pub context_states: usize,
    pub stddev: f64,
    pub observations_per_var: usize,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub target: VariableId,
    /// Context indices, ascending.
    pub combination: Vec<u32>,
    /// Gaussian mean per concrete context assignment (mixed radix, first
    /// context most significant).
    pub means: Vec<f64>,
}

/// The combinations in play: a seeded shuffle of all subsets, truncated.
pub fn combination_pool(config: &SimConfig) -> Vec<Vec<u32>> {
    let mut all = combinations(config.context_var_count, config.contexts_per_table);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_POOL));
    // Fisher-Yates keeps pools nested across pool sizes for one seed
    for i in (1..all.len()).rev() {
        let j = rng.random_range(0..=i);
        all.swap(i, j);
    }
    all.truncate(config.combinations_pool);
    all
}

/// Draws the synthetic workload plan for `config`.
pub fn generate_workload(config: &SimConfig) -> Result<SyntheticWorkload> {
    config.validate()?;
    let pool = combination_pool(config);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TAG_WORKLOAD));
    let cells_per = |combo: &[u32]| config.context_states.pow(combo.len() as u32);
    let top = (config.predicting_states - 1) as f64;
    let plans = (0..config.node_count)
        .map(|_| {
            let mut vars = index::sample(
                &mut rng,
                config.predicting_var_count,
                config.vars_trained_per_node,
            )
            .into_vec();
            vars.sort_unstable();
            vars.into_iter()
                .map(|v| {
                    let combination = pool[rng.random_range(0..pool.len())].clone();
                    let means = (0..cells_per(&combination))
                        .map(|_| rng.random::<f64>() * top)
                        .collect();
                    TrainingPlan {
                        target: VariableId::predicting(v as u32),
                        combination,
                        means,
                    }
                })
                .collect()
        })
        .collect();
    Ok(SyntheticWorkload {
        plans,
        predicting_states: config.predicting_states,
        context_states: config.context_states,
        stddev: config.observation_stddev,
        observations_per_var: config.observations_per_var,
        seed: derive_seed(config.seed, TAG_WORKLOAD + 100),
    })
}

impl SyntheticWorkload {
    pub fn node_count(&self) -> usize {
        self.plans.len()
    }

    /// Visits node `node`'s observations in a fixed order.
    pub fn for_each_observation(
        &self,
        node: usize,
        mut f: impl FnMut(VariableId, &ContextAssignment, usize) -> Result<()>,
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, node as u64));
        let top = (self.predicting_states - 1) as f64;
        for plan in &self.plans[node] {
            let mut ctx = ContextAssignment::new();
            for _ in 0..self.observations_per_var {
                let mut cell = 0;
                for &c in &plan.combination {
                    let s = rng.random_range(0..self.context_states);
                    cell = cell * self.context_states + s;
                    ctx.bind(VariableId::context(c), s)?;
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                let x = plan.means[cell] + self.stddev * z;
                let outcome = x.round().clamp(0.0, top) as usize;
                f(plan.target, &ctx, outcome)?;
            }
        }
        Ok(())
    }

    /// Materialized observation streams, one per node.
    pub fn streams(&self) -> Result<Vec<Vec<Observation>>> {
        (0..self.node_count())
            .map(|n| {
                let mut out = Vec::new();
                self.for_each_observation(n, |target, ctx, outcome| {
                    out.push(Observation {
                        node: NodeId::from(n),
                        target,
                        ctx: ctx.clone(),
                        outcome,
                    });
                    Ok(())
                })?;
                Ok(out)
            })
            .collect()
    }

    /// Trains one model per node without materializing the streams.
    pub fn train(&self, schema: &Arc<Schema>, pseudocount: f64) -> Result<Vec<DiscretePgm>> {
        (0..self.node_count())
            .map(|n| {
                let mut pgm = DiscretePgm::with_pseudocount(schema.clone(), pseudocount);
                self.for_each_observation(n, |target, ctx, outcome| {
                    Ok(pgm.observe(target, ctx, outcome)?)
                })?;
                Ok(pgm)
            })
            .collect()
    }
}

/// Trains one model per stream.
pub fn train_streams(
    schema: &Arc<Schema>,
    streams: &[Vec<Observation>],
    pseudocount: f64,
) -> Result<Vec<DiscretePgm>> {
    streams
        .iter()
        .map(|stream| {
            let mut pgm = DiscretePgm::with_pseudocount(schema.clone(), pseudocount);
            for o in stream {
                pgm.observe(o.target, &o.ctx, o.outcome)?;
            }
            Ok(pgm)
        })
        .collect()
}

/// Header line of the observation CSV.
pub const OBSERVATION_CSV_HEADER: &str = "node_id,predicting_var,outcome,ctx_var=state";

/// Writes streams as `node_id,predicting_var,outcome,<ctx>=<state>,…` rows.
pub fn write_observations_csv<W: Write>(streams: &[Vec<Observation>], mut out: W) -> Result<()> {
    writeln!(out, "{OBSERVATION_CSV_HEADER}")?;
    for o in streams.iter().flatten() {
        write!(out, "{},{},{}", o.node.0, o.target.index, o.outcome)?;
        for (c, s) in o.ctx.iter() {
            write!(out, ",{}={}", c.index, s)?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parses the observation CSV into per-node streams (indexed by node id).
pub fn read_observations_csv<R: Read>(input: R) -> Result<Vec<Vec<Observation>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut streams: Vec<Vec<Observation>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| EngineError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.get(0).is_some_and(|f| f == "node_id") {
            continue;
        }
        if record.iter().all(str::is_empty) {
            continue;
        }
        let err = |message: String| EngineError::Parse { line, message };
        if record.len() < 3 {
            return Err(err(format!("expected at least 3 fields, got {}", record.len())));
        }
        let number = |idx: usize, what: &str| -> Result<usize> {
            record[idx]
                .parse()
                .map_err(|_| err(format!("bad {what} `{}`", &record[idx])))
        };
        let node = number(0, "node_id")?;
        let target = number(1, "predicting_var")?;
        let outcome = number(2, "outcome")?;
        let mut ctx = ContextAssignment::new();
        for field in record.iter().skip(3) {
            let (c, s) = field
                .split_once('=')
                .ok_or_else(|| err(format!("context field `{field}` is not var=state")))?;
            let c: u32 = c
                .trim_start_matches('C')
                .parse()
                .map_err(|_| err(format!("bad context variable `{c}`")))?;
            let s: usize = s.parse().map_err(|_| err(format!("bad state `{s}`")))?;
            if ctx.contains(VariableId::context(c)) {
                return Err(err(format!("context {c} bound twice")));
            }
            ctx.bind(VariableId::context(c), s)?;
        }
        if streams.len() <= node {
            streams.resize_with(node + 1, Vec::new);
        }
        streams[node].push(Observation {
            node: NodeId::from(node),
            target: VariableId::predicting(target as u32),
            ctx,
            outcome,
        });
    }
    Ok(streams)
}

/// Reads an observation CSV file.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<Observation>>> {
    read_observations_csv(std::fs::File::open(path)?)
}

/// Result of scoring one finished query against the exhaustive optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub hit: bool,
    pub regret: f64,
}

/// Hit iff `achieved ≤ optimal + tolerance`; regret is relative to the
/// optimum. Beating the optimum by more than the tolerance is a bug.
pub fn accuracy(achieved: f64, optimal: f64, tolerance: f64) -> Result<Judgement> {
    if achieved < optimal - tolerance {
        return Err(EngineError::OracleViolation { achieved, optimal });
    }
    Ok(Judgement {
        hit: achieved <= optimal + tolerance,
        regret: (achieved - optimal).max(0.0) / optimal.max(REGRET_EPSILON),
    })
}

/// Lowest answering entropy any node offers for `query`; the uniform-prior
/// entropy of the target when nobody trained it.
pub fn oracle_best(query: &Query, nodes: &[Node]) -> f64 {
    nodes
        .iter()
        .filter_map(|n| n.answering_entropy(query))
        .fold(None, |best: Option<f64>, h| Some(best.map_or(h, |b| b.min(h))))
        .unwrap_or_else(|| uniform_entropy(query, nodes))
}

fn uniform_entropy(query: &Query, nodes: &[Node]) -> f64 {
    nodes
        .first()
        .and_then(|n| n.pgm.schema().cardinality(query.target).ok())
        .map_or(0.0, |c| (c as f64).log2())
}

fn uniform_neighbor<R: Rng>(rng: &mut R) -> impl FnOnce(&Node, &Query) -> Option<NodeId> + '_ {
    move |node: &Node, query: &Query| {
        let candidates = node.forward_candidates(query);
        if candidates.is_empty() {
            None
        } else {
            Some(node.neighbors[candidates[rng.random_range(0..candidates.len())]])
        }
    }
}

/// Random-walk handling of a received query: same as [`process_query`] but
/// the next hop is uniform over unvisited neighbors (all neighbors once
/// every one was visited).
pub fn random_walk_step<R: Rng>(node: &Node, query: Query, rng: &mut R) -> Decision {
    handle_query(node, query, true, uniform_neighbor(rng))
}

/// Random-walk handling at the issuer (no hop consumed).
pub fn random_walk_issue<R: Rng>(node: &Node, query: Query, rng: &mut R) -> Decision {
    handle_query(node, query, false, uniform_neighbor(rng))
}

/// Metrics of one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: usize,
    pub issued: usize,
    pub hits: usize,
    pub unanswered: usize,
    pub accuracy: f64,
    /// Standard deviation of the per-query hit indicator.
    pub accuracy_std: f64,
    pub mean_achieved: f64,
    pub mean_optimal: f64,
    pub mean_regret: f64,
    pub adv_messages: usize,
    pub adv_sets_sent: usize,
    pub forwards: usize,
}

/// Everything recorded for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub strategy: Strategy,
    pub node_count: usize,
    pub k: usize,
    pub hops: u32,
    pub seed: u64,
    pub cycles: Vec<CycleMetrics>,
    pub oracle_violations: usize,
    /// Forwards to a node that is not adjacent to the sender.
    pub adjacency_violations: usize,
    /// Completed queries whose forward count differs from the hop budget
    /// although the sender had neighbors.
    pub hop_accounting_violations: usize,
    pub topology: topology::GenerationReport,
}

impl TrialMetrics {
    /// Mean accuracy over the last `window` cycles.
    pub fn converged_accuracy(&self, window: usize) -> f64 {
        mean(self.tail(window).map(|c| c.accuracy))
    }

    /// Mean per-query standard deviation over the last `window` cycles.
    pub fn converged_query_std(&self, window: usize) -> f64 {
        mean(self.tail(window).map(|c| c.accuracy_std))
    }

    pub fn converged_regret(&self, window: usize) -> f64 {
        mean(self.tail(window).map(|c| c.mean_regret))
    }

    /// Hit rate pooled over every query of the last `window` cycles.
    pub fn pooled_hits(&self, window: usize) -> (usize, usize) {
        self.tail(window)
            .fold((0, 0), |(h, n), c| (h + c.hits, n + c.issued))
    }

    fn tail(&self, window: usize) -> impl Iterator<Item = &CycleMetrics> {
        let skip = self.cycles.len().saturating_sub(window);
        self.cycles.iter().skip(skip)
    }

    /// Writes rows in the metrics CSV layout (header excluded).
    pub fn write_csv_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        for c in &self.cycles {
            w.write_record([
                c.cycle.to_string(),
                self.strategy.to_string(),
                self.node_count.to_string(),
                self.k.to_string(),
                self.hops.to_string(),
                format!("{:.6}", c.accuracy),
                format!("{:.6}", c.accuracy_std),
                format!("{:.6}", c.mean_regret),
                c.adv_sets_sent.to_string(),
            ])?;
        }
        Ok(())
    }
}

/// Column names of the metrics CSV.
pub const METRICS_CSV_HEADER: [&str; 9] = [
    "cycle",
    "strategy",
    "node_count",
    "K",
    "hops",
    "accuracy",
    "accuracy_std",
    "mean_regret",
    "adv_sets_sent",
];

pub fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// A trained network ready to run cycles.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: SimConfig,
    pub overlay: Overlay,
    pub nodes: Vec<Node>,
    last_adv: Vec<Advertisement>,
    last_sent: Vec<Option<u64>>,
    /// Latest computed advertisement per node, recomputed only when dirty.
    pending: Vec<Option<Advertisement>>,
    /// Nodes whose routing models changed since `pending` was computed.
    dirty: Vec<bool>,
    /// Nodes holding a table, per predicting variable.
    holders: BTreeMap<VariableId, Vec<usize>>,
    /// Query targets with the combinations they were trained under.
    catalog: Vec<(VariableId, Vec<Vec<VariableId>>)>,
    cycle: usize,
}

impl Network {
    /// Trains the synthetic workload and generates the overlay.
    pub fn build(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let schema = Arc::new(config.schema()?);
        let workload = generate_workload(config)?;
        let pgms = workload.train(&schema, config.pseudocount)?;
        Self::from_models(config, pgms)
    }

    /// Generates the overlay for already trained models.
    pub fn from_models(config: &SimConfig, pgms: Vec<DiscretePgm>) -> Result<Self> {
        let overlay = if pgms.len() >= config.attachment.m0 {
            topology::generate(
                &config.attachment,
                &pgms,
                config.edge_limit,
                derive_seed(config.seed, TAG_TOPOLOGY),
            )?
        } else {
            // too small for the clique seed: fully connect
            let mut o = Overlay::empty(pgms.len(), config.edge_limit, config.seed);
            for a in 0..pgms.len() {
                for b in a + 1..pgms.len() {
                    o.add_edge(a, b);
                }
            }
            o
        };
        Self::from_parts(config, pgms, overlay)
    }

    pub fn from_parts(config: &SimConfig, pgms: Vec<DiscretePgm>, overlay: Overlay) -> Result<Self> {
        if pgms.len() != overlay.node_count() {
            return Err(EngineError::Config(format!(
                "{} models for an overlay of {} nodes",
                pgms.len(),
                overlay.node_count()
            )));
        }
        let nodes: Vec<Node> = pgms
            .into_iter()
            .enumerate()
            .map(|(i, pgm)| Node::new(NodeId::from(i), pgm, overlay.neighbors(i)))
            .collect();
        let mut holders: BTreeMap<VariableId, Vec<usize>> = BTreeMap::new();
        let mut combos: BTreeMap<VariableId, BTreeSet<Vec<VariableId>>> = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            for table in node.pgm.tables() {
                holders.entry(table.predicting()).or_default().push(i);
                combos
                    .entry(table.predicting())
                    .or_default()
                    .insert(table.contexts().to_vec());
            }
        }
        let catalog = combos
            .into_iter()
            .map(|(v, set)| (v, set.into_iter().collect()))
            .collect();
        let n = nodes.len();
        Ok(Self {
            config: config.clone(),
            overlay,
            last_adv: (0..n).map(|i| Advertisement::empty(NodeId::from(i))).collect(),
            last_sent: vec![None; n],
            pending: vec![None; n],
            dirty: vec![true; n],
            nodes,
            holders,
            catalog,
            cycle: 0,
        })
    }

    /// Resets routing state so the same trained network can run again.
    pub fn reset(&mut self) {
        for node in &mut self.nodes {
            node.models.iter_mut().for_each(|m| m.entries.clear());
        }
        for (i, adv) in self.last_adv.iter_mut().enumerate() {
            *adv = Advertisement::empty(NodeId::from(i));
        }
        self.last_sent.iter_mut().for_each(|s| *s = None);
        self.pending.iter_mut().for_each(|p| *p = None);
        self.dirty.iter_mut().for_each(|d| *d = true);
        self.cycle = 0;
    }

    /// Variables some node trained, with their trained combinations.
    pub fn catalog(&self) -> &[(VariableId, Vec<Vec<VariableId>>)] {
        &self.catalog
    }

    /// Oracle restricted to the nodes that trained the target; equal to
    /// [`oracle_best`] over all nodes.
    pub fn oracle(&self, query: &Query) -> f64 {
        match self.holders.get(&query.target) {
            Some(list) => list
                .iter()
                .filter_map(|&i| self.nodes[i].answering_entropy(query))
                .fold(f64::INFINITY, f64::min),
            None => uniform_entropy(query, &self.nodes),
        }
    }

    /// Phase one: every node whose summary changed enough advertises it to
    /// all neighbors. Summaries are computed from the state at cycle start.
    /// Returns `(messages, sets transmitted)`.
    pub fn propagate(&mut self) -> (usize, usize) {
        let now = self.cycle as u64;
        let policy = self.config.policy;
        let k = self.config.k;
        for (i, node) in self.nodes.iter().enumerate() {
            if self.dirty[i] {
                self.pending[i] = Some(node.advertisement(&policy, k));
                self.dirty[i] = false;
            }
        }
        let sending: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| {
                let current = self.pending[i].as_ref().expect("computed above");
                should_advertise(&self.last_adv[i], current, self.last_sent[i], now, &policy)
            })
            .collect();
        let mut messages = 0;
        let mut sets = 0;
        for i in sending {
            let adv = self.pending[i].clone().expect("computed above");
            let neighbors = self.nodes[i].neighbors.clone();
            for nb in &neighbors {
                let model = self.nodes[nb.index()]
                    .model_mut(NodeId::from(i))
                    .expect("overlay adjacency is symmetric");
                model
                    .integrate(&adv, k)
                    .expect("aggregated advertisements respect K");
                self.dirty[nb.index()] = true;
                messages += 1;
                sets += adv.set_count();
            }
            self.last_adv[i] = adv;
            self.last_sent[i] = Some(now);
        }
        (messages, sets)
    }

    /// Routes `query` from its issuer until it returns. Returns the finished
    /// query and the number of forwards.
    pub fn route<R: Rng>(&self, query: Query, strategy: Strategy, rng: &mut R) -> (Query, usize, usize) {
        let issuer = query.issuer.index();
        let mut decision = match strategy {
            Strategy::Abs => issue_query(&self.nodes[issuer], query),
            Strategy::RandomWalk => random_walk_issue(&self.nodes[issuer], query, rng),
        };
        let mut forwards = 0;
        let mut adjacency_violations = 0;
        let mut at = issuer;
        while let Decision::Forward { to, query } = decision {
            if !self.overlay.are_adjacent(at, to.index()) {
                adjacency_violations += 1;
            }
            forwards += 1;
            at = to.index();
            decision = match strategy {
                Strategy::Abs => process_query(&self.nodes[at], query),
                Strategy::RandomWalk => random_walk_step(&self.nodes[at], query, rng),
            };
        }
        (decision.into_query(), forwards, adjacency_violations)
    }

    fn draw_query<R: Rng>(&self, issuer: usize, rng: &mut R) -> Option<Query> {
        if self.catalog.is_empty() {
            return None;
        }
        let (target, combos) = &self.catalog[rng.random_range(0..self.catalog.len())];
        let combo = &combos[rng.random_range(0..combos.len())];
        let mut ctx = ContextAssignment::new();
        for &c in combo {
            let states = self.nodes[issuer]
                .pgm
                .schema()
                .cardinality(c)
                .expect("catalog variables come from the schema");
            ctx.bind(c, rng.random_range(0..states)).expect("context variable");
        }
        Some(Query::new(NodeId::from(issuer), *target, ctx, self.config.hops()))
    }

    /// Runs one full cycle with `strategy` and records its metrics.
    pub fn run_cycle<R: Rng, W: Rng>(
        &mut self,
        strategy: Strategy,
        query_rng: &mut R,
        walk_rng: &mut W,
        violations: &mut Violations,
    ) -> CycleMetrics {
        self.cycle += 1;
        let (adv_messages, adv_sets_sent) = self.propagate();
        let hops = self.config.hops();
        let mut m = CycleMetrics {
            cycle: self.cycle,
            issued: 0,
            hits: 0,
            unanswered: 0,
            accuracy: 0.0,
            accuracy_std: 0.0,
            mean_achieved: 0.0,
            mean_optimal: 0.0,
            mean_regret: 0.0,
            adv_messages,
            adv_sets_sent,
            forwards: 0,
        };
        let mut achieved_sum = 0.0;
        let mut regret_sum = 0.0;
        let mut answered = 0usize;
        let mut optimal_sum = 0.0;
        for issuer in 0..self.nodes.len() {
            let Some(query) = self.draw_query(issuer, query_rng) else {
                continue;
            };
            let (query, forwards, adjacency) = self.route(query, strategy, walk_rng);
            violations.adjacency += adjacency;
            if !self.nodes[issuer].neighbors.is_empty() && forwards != hops as usize {
                violations.hop_accounting += 1;
            }
            m.forwards += forwards;
            m.issued += 1;
            let optimal = self.oracle(&query);
            optimal_sum += optimal;
            match accuracy(query.quality, optimal, HIT_TOLERANCE) {
                Ok(j) => {
                    if j.hit {
                        m.hits += 1;
                    }
                    if query.quality.is_finite() {
                        answered += 1;
                        achieved_sum += query.quality;
                        regret_sum += j.regret;
                    } else {
                        m.unanswered += 1;
                    }
                }
                Err(_) => violations.oracle += 1,
            }
        }
        if m.issued > 0 {
            let p = m.hits as f64 / m.issued as f64;
            m.accuracy = p;
            m.accuracy_std = (p * (1.0 - p)).sqrt();
            m.mean_optimal = optimal_sum / m.issued as f64;
        }
        if answered > 0 {
            m.mean_achieved = achieved_sum / answered as f64;
            m.mean_regret = regret_sum / answered as f64;
        }
        m
    }

    /// Runs `config.cycles` cycles from a clean routing state.
    pub fn run(&mut self, strategy: Strategy) -> TrialMetrics {
        self.reset();
        let seed = self.config.seed;
        let mut query_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_QUERIES));
        let mut walk_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_WALK));
        let mut violations = Violations::default();
        let cycles = (0..self.config.cycles)
            .map(|_| self.run_cycle(strategy, &mut query_rng, &mut walk_rng, &mut violations))
            .collect();
        TrialMetrics {
            strategy,
            node_count: self.nodes.len(),
            k: self.config.k,
            hops: self.config.hops(),
            seed,
            cycles,
            oracle_violations: violations.oracle,
            adjacency_violations: violations.adjacency,
            hop_accounting_violations: violations.hop_accounting,
            topology: self.overlay.report,
        }
    }
}

/// Invariant violations counted during a trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Violations {
    pub oracle: usize,
    pub adjacency: usize,
    pub hop_accounting: usize,
}

/// Builds the network for `config` and runs its strategy.
pub fn run_trial(config: &SimConfig) -> Result<TrialMetrics> {
    let mut net = Network::build(config)?;
    Ok(net.run(config.strategy))
}

/// Runs both strategies on the same trained network and overlay.
pub fn run_paired(config: &SimConfig) -> Result<(TrialMetrics, TrialMetrics)> {
    let mut net = Network::build(config)?;
    let abs = net.run(Strategy::Abs);
    let walk = net.run(Strategy::RandomWalk);
    Ok((abs, walk))
}
