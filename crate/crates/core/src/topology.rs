//! Clustered scale-free overlays.
//!
//! Nodes join one at a time and attach to existing nodes with probability
//! proportional to degree times the overlap of the trained predicting
//! variables, so nodes that learned similar things end up close together.
//! Per-node edge limits are hard caps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pgm::{DiscretePgm, VariableId};
use crate::routing::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("models use different schemas")]
    IncompatibleModels,
    #[error("every existing node is at its edge limit or unreachable")]
    NoAttachmentTarget,
    #[error("invalid attachment parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttachmentParams {
    /// Size of the initial clique.
    pub m0: usize,
    /// Edges requested by each arriving node.
    pub m: usize,
    /// Lower bound applied to the similarity factor.
    pub similarity_floor: f64,
}

impl Default for AttachmentParams {
    fn default() -> Self {
        Self {
            m0: 4,
            m: 3,
            similarity_floor: 0.05,
        }
    }
}

impl AttachmentParams {
    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.m < 1 || self.m >= self.m0 {
            return Err(TopologyError::InvalidParams(format!(
                "need 1 <= m < m0, got m = {}, m0 = {}",
                self.m, self.m0
            )));
        }
        if !(0.0..1.0).contains(&self.similarity_floor) {
            return Err(TopologyError::InvalidParams(format!(
                "similarity floor {} outside [0, 1)",
                self.similarity_floor
            )));
        }
        Ok(())
    }
}

/// Counters for irregularities met while generating an overlay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    /// Arrivals that found fewer than `m` attachment targets.
    pub short_attachments: usize,
    /// Components joined to the main component afterwards.
    pub repaired_components: usize,
}

/// Undirected overlay graph with per-node degree caps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlay {
    adjacency: Vec<BTreeSet<u32>>,
    edge_limits: Vec<usize>,
    pub rng_seed: u64,
    pub report: GenerationReport,
}

impl Overlay {
    /// Edgeless overlay; `None` limits mean unbounded degree.
    pub fn empty(nodes: usize, edge_limit: Option<usize>, seed: u64) -> Self {
        Self {
            adjacency: vec![BTreeSet::new(); nodes],
            edge_limits: vec![edge_limit.unwrap_or(usize::MAX); nodes],
            rng_seed: seed,
            report: GenerationReport::default(),
        }
    }

    /// Overlay from an explicit edge list.
    pub fn from_edges(nodes: usize, edges: &[(u32, u32)]) -> Self {
        let mut o = Self::empty(nodes, None, 0);
        for &(a, b) in edges {
            o.add_edge(a as usize, b as usize);
        }
        o
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn degree(&self, n: usize) -> usize {
        self.adjacency[n].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(BTreeSet::len).collect()
    }

    pub fn edge_limit(&self, n: usize) -> usize {
        self.edge_limits[n]
    }

    pub fn neighbors(&self, n: usize) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency[n].iter().map(|&v| NodeId(v))
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].contains(&(b as u32))
    }

    /// Edges as `(u, v)` with `u < v`, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(u, adj)| {
            adj.iter()
                .filter(move |&&v| (u as u32) < v)
                .map(move |&v| (u as u32, v))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).max().unwrap_or(0)
    }

    /// Adds `a–b`; returns false for self-loops and duplicates.
    pub fn add_edge(&mut self, a: usize, b: usize) -> bool {
        if a == b || self.adjacency[a].contains(&(b as u32)) {
            return false;
        }
        self.adjacency[a].insert(b as u32);
        self.adjacency[b].insert(a as u32);
        true
    }

    fn saturated(&self, n: usize) -> bool {
        self.degree(n) >= self.edge_limits[n]
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.node_count()];
        let mut out = Vec::new();
        for start in 0..self.node_count() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u] {
                    if !seen[v as usize] {
                        seen[v as usize] = true;
                        comp.push(v as usize);
                        queue.push_back(v as usize);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    /// Hop distances from `src` (`usize::MAX` when unreachable).
    pub fn distances_from(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v as usize] == usize::MAX {
                    dist[v as usize] = dist[u] + 1;
                    queue.push_back(v as usize);
                }
            }
        }
        dist
    }

    /// Writes one `u v` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }

    /// Parses the `u v` edge-list format.
    pub fn read_edge_list(nodes: usize, text: &str) -> Result<Self, String> {
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace().map(str::parse::<u32>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) if (a as usize) < nodes && (b as usize) < nodes => {
                    edges.push((a, b))
                }
                _ => return Err(format!("line {}: expected `u v`", i + 1)),
            }
        }
        Ok(Self::from_edges(nodes, &edges))
    }
}

/// Number of nodes with each degree.
pub fn degree_histogram(overlay: &Overlay) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for d in overlay.degrees() {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

/// Writes `degree,count` rows.
pub fn write_histogram_csv<W: Write>(hist: &BTreeMap<usize, usize>, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["degree", "count"])?;
    for (d, c) in hist {
        w.write_record([d.to_string(), c.to_string()])?;
    }
    w.flush()
}

/// Least-squares line through the log-log degree survival function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `log10 P(D >= k)` against `log10 k` over the distinct positive
/// degrees of the histogram.
pub fn survival_fit(hist: &BTreeMap<usize, usize>) -> Option<PowerLawFit> {
    let total: usize = hist.values().sum();
    let mut remaining = total;
    let mut pts = Vec::new();
    for (&k, &count) in hist {
        if k > 0 {
            pts.push(((k as f64).log10(), (remaining as f64 / total as f64).log10()));
        }
        remaining -= count;
    }
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some(PowerLawFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: pts.len(),
    })
}

/// Overlap coefficient `|A ∩ B| / min(|A|, |B|)`, zero if either is empty.
pub fn overlap(a: &BTreeSet<VariableId>, b: &BTreeSet<VariableId>) -> f64 {
    let smaller = a.len().min(b.len());
    if smaller == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / smaller as f64
}

/// Overlap of the trained predicting variables of two models.
pub fn similarity(a: &DiscretePgm, b: &DiscretePgm) -> Result<f64, TopologyError> {
    if a.schema() != b.schema() {
        return Err(TopologyError::IncompatibleModels);
    }
    Ok(overlap(&a.trained_set(), &b.trained_set()))
}

/// Normalized attachment weights `k_y/Σk · max(s_y, floor)`, zero for nodes
/// at their limit.
pub fn attachment_weights(
    degrees: &[usize],
    limits: &[usize],
    similarities: &[f64],
    floor: f64,
) -> Result<Vec<f64>, TopologyError> {
    let degree_sum: usize = degrees.iter().sum();
    if degree_sum == 0 {
        return Err(TopologyError::NoAttachmentTarget);
    }
    let mut w: Vec<f64> = degrees
        .iter()
        .zip(limits)
        .zip(similarities)
        .map(|((&k, &limit), &s)| {
            if k < limit {
                k as f64 / degree_sum as f64 * s.max(floor)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(TopologyError::NoAttachmentTarget);
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Attachment distribution of an arriving model over `existing` nodes of
/// `overlay`.
pub fn attachment_probabilities(
    overlay: &Overlay,
    arriving: &DiscretePgm,
    existing: &[(NodeId, &DiscretePgm)],
    floor: f64,
) -> Result<Vec<f64>, TopologyError> {
    let mut degrees = Vec::with_capacity(existing.len());
    let mut limits = Vec::with_capacity(existing.len());
    let mut sims = Vec::with_capacity(existing.len());
    for (id, pgm) in existing {
        degrees.push(overlay.degree(id.index()));
        limits.push(overlay.edge_limit(id.index()));
        sims.push(similarity(arriving, pgm)?);
    }
    attachment_weights(&degrees, &limits, &sims, floor)
}

/// Similarity-weighted preferential attachment over `pgms` in order.
pub fn generate(
    params: &AttachmentParams,
    pgms: &[DiscretePgm],
    edge_limit: Option<usize>,
    seed: u64,
) -> Result<Overlay, TopologyError> {
    if let Some(first) = pgms.first() {
        if pgms.iter().any(|p| p.schema() != first.schema()) {
            return Err(TopologyError::IncompatibleModels);
        }
    }
    let trained: Vec<BTreeSet<VariableId>> = pgms.iter().map(DiscretePgm::trained_set).collect();
    generate_with(params, pgms.len(), edge_limit, seed, |a, b| {
        overlap(&trained[a], &trained[b])
    })
}

/// Plain preferential attachment (similarity fixed at one).
pub fn generate_unweighted(
    params: &AttachmentParams,
    nodes: usize,
    edge_limit: Option<usize>,
    seed: u64,
) -> Result<Overlay, TopologyError> {
    generate_with(params, nodes, edge_limit, seed, |_, _| 1.0)
}

/// Attachment process with an arbitrary pairwise similarity.
pub fn generate_with(
    params: &AttachmentParams,
    nodes: usize,
    edge_limit: Option<usize>,
    seed: u64,
    similarity: impl Fn(usize, usize) -> f64,
) -> Result<Overlay, TopologyError> {
    params.validate()?;
    if nodes < params.m0 {
        return Err(TopologyError::InvalidParams(format!(
            "{nodes} nodes is fewer than m0 = {}",
            params.m0
        )));
    }
    if edge_limit.is_some_and(|l| l + 1 < params.m0) {
        return Err(TopologyError::InvalidParams(
            "edge limit cannot hold the initial clique".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overlay = Overlay::empty(nodes, edge_limit, seed);
    for a in 0..params.m0 {
        for b in a + 1..params.m0 {
            overlay.add_edge(a, b);
        }
    }
    let mut weights = Vec::with_capacity(nodes);
    for x in params.m0..nodes {
        let degree_sum: usize = (0..x).map(|y| overlay.degree(y)).sum();
        weights.clear();
        weights.extend((0..x).map(|y| {
            if degree_sum == 0 || overlay.saturated(y) {
                0.0
            } else {
                overlay.degree(y) as f64 / degree_sum as f64
                    * similarity(x, y).max(params.similarity_floor)
            }
        }));
        let mut targets = Vec::with_capacity(params.m);
        for _ in 0..params.m {
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                break;
            }
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (y, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(y);
                    if r < w {
                        break;
                    }
                    r -= w;
                }
            }
            let y = pick.expect("positive total has a positive weight");
            weights[y] = 0.0;
            targets.push(y);
        }
        if targets.len() < params.m {
            overlay.report.short_attachments += 1;
        }
        for y in targets {
            overlay.add_edge(x, y);
        }
    }
    repair_connectivity(&mut overlay);
    Ok(overlay)
}

/// Joins every component other than the one holding node 0 to the
/// highest-degree unsaturated node of the main component.
fn repair_connectivity(overlay: &mut Overlay) {
    let comps = overlay.components();
    if comps.len() <= 1 {
        return;
    }
    let main: BTreeSet<usize> = comps[0].iter().copied().collect();
    for comp in &comps[1..] {
        let Some(&anchor) = comp.iter().find(|&&n| !overlay.saturated(n)) else {
            continue;
        };
        let hub = main
            .iter()
            .copied()
            .filter(|&n| !overlay.saturated(n))
            .max_by_key(|&n| (overlay.degree(n), std::cmp::Reverse(n)));
        if let Some(hub) = hub {
            overlay.add_edge(anchor, hub);
            overlay.report.repaired_components += 1;
        }
    }
}

/// Mean similarity over the endpoints of every edge.
pub fn mean_edge_similarity(overlay: &Overlay, similarity: impl Fn(usize, usize) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (u, v) in overlay.edges() {
        sum += similarity(u as usize, v as usize);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
