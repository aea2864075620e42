//! Aggregation-based routing: nodes advertise per-variable entropy summaries
//! to their neighbors, keep one routing model per neighbor, and forward
//! queries toward the neighbor promising the lowest remaining uncertainty.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pgm::{self, ContextAssignment, DiscretePgm, VariableId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("advertisement from {got} applied to the routing model of {expected}")]
    WrongNeighbor { expected: NodeId, got: NodeId },
    #[error("malformed advertisement for {var}: {reason}")]
    Malformed { var: VariableId, reason: String },
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(v: usize) -> Self {
        NodeId(v as u32)
    }
}

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Advertised quality summary for one predicting variable in one context
/// combination: the joint entropy plus the marginal entropy of each context.
///
/// A set without context entropies is the reduced, joint-only form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySet {
    pub predicting: VariableId,
    pub joint: f64,
    #[serde(with = "crate::map_as_pairs")]
    pub context_entropies: BTreeMap<VariableId, f64>,
    /// Total per-hop inflation already folded into `joint`.
    pub hop_inflation_applied: f64,
}

impl EntropySet {
    pub fn new(
        predicting: VariableId,
        joint: f64,
        context_entropies: impl IntoIterator<Item = (VariableId, f64)>,
    ) -> Self {
        Self {
            predicting,
            joint,
            context_entropies: context_entropies.into_iter().collect(),
            hop_inflation_applied: 0.0,
        }
    }

    /// Summary of one trained table.
    pub fn from_table(table: &pgm::JointTable) -> pgm::Result<Self> {
        let (joint, marginals) = table.entropy_summary()?;
        Ok(Self::new(table.predicting(), joint, marginals))
    }

    pub fn is_reduced(&self) -> bool {
        self.context_entropies.is_empty()
    }

    /// The context combination this set describes.
    pub fn combination(&self) -> Vec<VariableId> {
        self.context_entropies.keys().copied().collect()
    }

    /// Bit set of the combination's context indices (indices below 64).
    pub fn combination_mask(&self) -> u64 {
        self.context_entropies
            .keys()
            .fold(0u64, |m, v| m | 1u64 << (v.index & 63))
    }

    /// Joint-only form of this set.
    pub fn reduced(&self) -> Self {
        Self {
            predicting: self.predicting,
            joint: self.joint,
            context_entropies: BTreeMap::new(),
            hop_inflation_applied: self.hop_inflation_applied,
        }
    }

    pub fn inflated(&self, by: f64) -> Self {
        let mut out = self.clone();
        out.joint += by;
        out.hop_inflation_applied += by;
        out
    }

    /// Entropy remaining when every context of the combination is observed.
    pub fn fully_conditioned(&self) -> f64 {
        self.context_entropies
            .values()
            .fold(self.joint, |h, c| h - c)
            .max(0.0)
    }

    /// Joint entropy minus the entropies of the contexts that `ctx` binds and
    /// this set knows, clamped at zero.
    pub fn score(&self, ctx: &ContextAssignment) -> f64 {
        let mut h = self.joint;
        for (var, ent) in &self.context_entropies {
            if ctx.contains(*var) {
                h -= ent;
            }
        }
        if h < 0.0 {
            pgm::record_clamp();
            0.0
        } else {
            h
        }
    }
}

/// Summaries a node sends to all of its neighbors in one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Advertisement {
    pub origin: NodeId,
    #[serde(with = "crate::map_as_pairs")]
    pub sets: BTreeMap<VariableId, Vec<EntropySet>>,
}

impl Advertisement {
    pub fn empty(origin: NodeId) -> Self {
        Self {
            origin,
            sets: BTreeMap::new(),
        }
    }

    pub fn set_count(&self) -> usize {
        self.sets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Every advertised `(variable, combination)` key.
    pub fn keys(&self) -> BTreeSet<(VariableId, Vec<VariableId>)> {
        self.sets
            .iter()
            .flat_map(|(v, list)| list.iter().map(move |s| (*v, s.combination())))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("advertisement serializes")
    }
}

/// What a node knows about the knowledge reachable through one neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingModel {
    pub neighbor: NodeId,
    #[serde(with = "crate::map_as_pairs")]
    pub entries: BTreeMap<VariableId, Vec<EntropySet>>,
}

impl RoutingModel {
    pub fn new(neighbor: NodeId) -> Self {
        Self {
            neighbor,
            entries: BTreeMap::new(),
        }
    }

    pub fn sets(&self, var: VariableId) -> &[EntropySet] {
        self.entries.get(&var).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Replaces the entries of every variable present in `adv`; other
    /// variables are kept. A malformed advertisement leaves the model as is.
    pub fn integrate(&mut self, adv: &Advertisement, k: usize) -> Result<(), RoutingError> {
        if adv.origin != self.neighbor {
            return Err(RoutingError::WrongNeighbor {
                expected: self.neighbor,
                got: adv.origin,
            });
        }
        for (var, list) in &adv.sets {
            if list.len() > k {
                return Err(RoutingError::Malformed {
                    var: *var,
                    reason: format!("{} sets exceed K = {k}", list.len()),
                });
            }
            let combos: BTreeSet<Vec<VariableId>> =
                list.iter().map(EntropySet::combination).collect();
            if combos.len() != list.len() {
                return Err(RoutingError::Malformed {
                    var: *var,
                    reason: "duplicate context combination".into(),
                });
            }
            if let Some(s) = list.iter().find(|s| s.predicting != *var) {
                return Err(RoutingError::Malformed {
                    var: *var,
                    reason: format!("set describes {}", s.predicting),
                });
            }
        }
        for (var, list) in &adv.sets {
            let mut list = list.clone();
            list.sort_by(|a, b| a.joint.total_cmp(&b.joint));
            self.entries.insert(*var, list);
        }
        Ok(())
    }

    /// Best score this neighbor offers for `query`, `+∞` without entries.
    pub fn score(&self, query: &Query) -> f64 {
        score_query_against_sets(self.sets(query.target), query)
    }
}

/// Knobs controlling when and what a node advertises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvertisementPolicy {
    /// Minimum change of a matched joint entropy that warrants re-sending.
    pub change_threshold: f64,
    /// Minimum number of cycles between two advertisements.
    pub min_interval: u64,
    /// Local sets whose fully conditioned entropy exceeds this are sent in
    /// joint-only form.
    pub quality_threshold: f64,
    /// Added to every set taken over from a routing model.
    pub hop_inflation: f64,
}

impl AdvertisementPolicy {
    pub const DEFAULT_CHANGE_THRESHOLD: f64 = 0.05;
    pub const DEFAULT_HOP_INFLATION: f64 = 0.01;
    pub const QUALITY_FRACTION: f64 = 0.8;

    /// Defaults with the quality gate at 80% of the maximum entropy of a
    /// predicting variable with `predicting_states` states.
    pub fn for_states(predicting_states: usize) -> Self {
        Self {
            change_threshold: Self::DEFAULT_CHANGE_THRESHOLD,
            min_interval: 1,
            quality_threshold: Self::QUALITY_FRACTION * (predicting_states as f64).log2(),
            hop_inflation: Self::DEFAULT_HOP_INFLATION,
        }
    }
}

impl Default for AdvertisementPolicy {
    fn default() -> Self {
        Self::for_states(8)
    }
}

/// Full entropy sets of every trained table of `pgm`, keyed by variable.
pub fn local_entropy_sets(pgm: &DiscretePgm) -> BTreeMap<VariableId, EntropySet> {
    pgm.tables()
        .filter_map(|t| EntropySet::from_table(t).ok().map(|s| (t.predicting(), s)))
        .collect()
}

/// Builds what `origin` advertises from its model and its routing models.
pub fn build_advertisement(
    origin: NodeId,
    pgm: &DiscretePgm,
    models: &[RoutingModel],
    policy: &AdvertisementPolicy,
    k: usize,
) -> Advertisement {
    aggregate(origin, &local_entropy_sets(pgm), models, policy, k)
}

/// Aggregation step behind [`build_advertisement`] working on precomputed
/// local sets.
///
/// Per variable, candidates are grouped by context combination; each group
/// keeps its lowest joint entropy and the `k` lowest groups survive. Ties
/// prefer the local set, then lower neighbor ids.
pub fn aggregate(
    origin: NodeId,
    local: &BTreeMap<VariableId, EntropySet>,
    models: &[RoutingModel],
    policy: &AdvertisementPolicy,
    k: usize,
) -> Advertisement {
    assert!(k >= 1, "K must be at least 1");
    // (mask, effective joint, candidate) per variable; earlier candidates win
    // ties, so locals go first and models follow in neighbor order
    let mut groups: Groups<'_> = BTreeMap::new();
    for set in local.values() {
        if set.fully_conditioned() > policy.quality_threshold {
            offer(&mut groups, set.predicting, 0, set.joint, Candidate::Reduced(set));
        } else {
            offer(&mut groups, set.predicting, set.combination_mask(), set.joint, Candidate::Local(set));
        }
    }
    let mut ordered: Vec<&RoutingModel> = models.iter().collect();
    ordered.sort_by_key(|m| m.neighbor);
    for model in ordered {
        for (var, list) in &model.entries {
            for set in list {
                offer(
                    &mut groups,
                    *var,
                    set.combination_mask(),
                    set.joint + policy.hop_inflation,
                    Candidate::Received(set),
                );
            }
        }
    }
    let sets = groups
        .into_iter()
        .map(|(var, mut list)| {
            list.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            list.truncate(k);
            let sets = list
                .into_iter()
                .map(|(_, _, cand)| match cand {
                    Candidate::Local(s) => s.clone(),
                    Candidate::Reduced(s) => s.reduced(),
                    Candidate::Received(s) => s.inflated(policy.hop_inflation),
                })
                .collect();
            (var, sets)
        })
        .collect();
    Advertisement { origin, sets }
}

type Groups<'a> = BTreeMap<VariableId, Vec<(u64, f64, Candidate<'a>)>>;

fn offer<'a>(groups: &mut Groups<'a>, var: VariableId, mask: u64, joint: f64, cand: Candidate<'a>) {
    let slot = groups.entry(var).or_default();
    match slot.iter_mut().find(|(m, _, _)| *m == mask) {
        Some(held) if held.1 <= joint => {}
        Some(held) => *held = (mask, joint, cand),
        None => slot.push((mask, joint, cand)),
    }
}

#[derive(Clone, Copy)]
enum Candidate<'a> {
    Local(&'a EntropySet),
    Reduced(&'a EntropySet),
    Received(&'a EntropySet),
}

/// Whether `current` should replace `previous` at the neighbors.
pub fn should_advertise(
    previous: &Advertisement,
    current: &Advertisement,
    last_sent: Option<u64>,
    now: u64,
    policy: &AdvertisementPolicy,
) -> bool {
    if let Some(last) = last_sent {
        if now.saturating_sub(last) < policy.min_interval {
            return false;
        }
    }
    if previous.sets.len() != current.sets.len() {
        return true;
    }
    let mut changed = false;
    for ((pv, plist), (cv, clist)) in previous.sets.iter().zip(&current.sets) {
        if pv != cv || plist.len() != clist.len() {
            return true;
        }
        for s in clist {
            let mask = s.combination_mask();
            match plist.iter().find(|p| p.combination_mask() == mask) {
                None => return true,
                Some(p) => changed |= (s.joint - p.joint).abs() > policy.change_threshold,
            }
        }
    }
    changed
}

/// Lowest remaining entropy any of `sets` promises for `query`; `+∞` when
/// `sets` is empty.
pub fn score_query_against_sets(sets: &[EntropySet], query: &Query) -> f64 {
    sets.iter()
        .filter(|s| s.predicting == query.target)
        .map(|s| s.score(&query.ctx))
        .fold(f64::INFINITY, f64::min)
}

mod quality_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(q: &f64, s: S) -> Result<S::Ok, S::Error> {
        if q.is_finite() {
            s.serialize_some(q)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// A request for a prediction of `target` in context `ctx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub target: VariableId,
    pub ctx: ContextAssignment,
    pub hops_remaining: u32,
    pub result: Option<Vec<f64>>,
    /// Remaining entropy of `result` in bits; `+∞` until answered.
    #[serde(with = "quality_serde")]
    pub quality: f64,
    pub answered_by: Option<NodeId>,
    pub visited: Vec<NodeId>,
    pub issuer: NodeId,
}

impl Query {
    pub fn new(issuer: NodeId, target: VariableId, ctx: ContextAssignment, hops: u32) -> Self {
        Self {
            target,
            ctx,
            hops_remaining: hops,
            result: None,
            quality: f64::INFINITY,
            answered_by: None,
            visited: Vec::new(),
            issuer,
        }
    }

    /// Most likely state of the current result.
    pub fn prediction(&self) -> Option<usize> {
        self.result.as_ref().and_then(|r| {
            r.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("query serializes")
    }
}

/// State of one participant: its model, neighbors and routing models.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub pgm: DiscretePgm,
    /// Sorted ascending; `models[i]` belongs to `neighbors[i]`.
    pub neighbors: Vec<NodeId>,
    pub models: Vec<RoutingModel>,
    local_sets: BTreeMap<VariableId, EntropySet>,
}

impl Node {
    pub fn new(id: NodeId, pgm: DiscretePgm, neighbors: impl IntoIterator<Item = NodeId>) -> Self {
        let mut neighbors: Vec<NodeId> = neighbors.into_iter().collect();
        neighbors.sort();
        neighbors.dedup();
        let models = neighbors.iter().map(|&n| RoutingModel::new(n)).collect();
        let local_sets = local_entropy_sets(&pgm);
        Self {
            id,
            pgm,
            neighbors,
            models,
            local_sets,
        }
    }

    /// Full entropy sets of the node's own tables.
    pub fn local_sets(&self) -> &BTreeMap<VariableId, EntropySet> {
        &self.local_sets
    }

    pub fn model(&self, neighbor: NodeId) -> Option<&RoutingModel> {
        self.neighbors
            .binary_search(&neighbor)
            .ok()
            .map(|i| &self.models[i])
    }

    pub fn model_mut(&mut self, neighbor: NodeId) -> Option<&mut RoutingModel> {
        self.neighbors
            .binary_search(&neighbor)
            .ok()
            .map(move |i| &mut self.models[i])
    }

    /// Remaining entropy of answering `query` locally; `None` when the node
    /// never trained the target.
    pub fn answering_entropy(&self, query: &Query) -> Option<f64> {
        self.local_sets.get(&query.target).map(|s| s.score(&query.ctx))
    }

    pub fn advertisement(&self, policy: &AdvertisementPolicy, k: usize) -> Advertisement {
        aggregate(self.id, &self.local_sets, &self.models, policy, k)
    }

    /// Overwrites the query's answer when the local model is strictly better.
    pub fn improve(&self, query: &mut Query) {
        let Some(local) = self.answering_entropy(query) else {
            return;
        };
        if local < query.quality {
            if let Ok(dist) = self.pgm.predict_restricted(query.target, &query.ctx) {
                query.result = Some(dist);
                query.quality = local;
                query.answered_by = Some(self.id);
            }
        }
    }

    /// Neighbors a query may move to: the unvisited ones, or all of them
    /// once every neighbor has been visited.
    pub fn forward_candidates(&self, query: &Query) -> Vec<usize> {
        let fresh: Vec<usize> = (0..self.neighbors.len())
            .filter(|&i| !query.visited.contains(&self.neighbors[i]))
            .collect();
        if fresh.is_empty() {
            (0..self.neighbors.len()).collect()
        } else {
            fresh
        }
    }

    /// Candidate neighbor with the lowest routing score; ties go to the
    /// lowest id.
    pub fn best_neighbor(&self, query: &Query) -> Option<NodeId> {
        self.forward_candidates(query)
            .into_iter()
            .map(|i| (self.models[i].score(query), self.neighbors[i]))
            .min_by(|a, b| match a.0.total_cmp(&b.0) {
                Ordering::Equal => a.1.cmp(&b.1),
                o => o,
            })
            .map(|(_, n)| n)
    }
}

/// Outcome of handling a query at one node.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Forward { to: NodeId, query: Query },
    Return(Query),
}

impl Decision {
    pub fn query(&self) -> &Query {
        match self {
            Decision::Forward { query, .. } | Decision::Return(query) => query,
        }
    }

    pub fn into_query(self) -> Query {
        match self {
            Decision::Forward { query, .. } | Decision::Return(query) => query,
        }
    }
}

/// Shared handling of a query at `node`: optional hop decrement, local
/// improvement, visit bookkeeping and forwarding through `select`.
pub fn handle_query(
    node: &Node,
    mut query: Query,
    decrement: bool,
    select: impl FnOnce(&Node, &Query) -> Option<NodeId>,
) -> Decision {
    if decrement {
        query.hops_remaining = query.hops_remaining.saturating_sub(1);
    }
    node.improve(&mut query);
    query.visited.push(node.id);
    if query.hops_remaining == 0 {
        return Decision::Return(query);
    }
    match select(node, &query) {
        Some(to) => Decision::Forward { to, query },
        None => Decision::Return(query),
    }
}

/// Handles a query received from a neighbor: one hop is consumed on receipt.
pub fn process_query(node: &Node, query: Query) -> Decision {
    handle_query(node, query, true, Node::best_neighbor)
}

/// Handles a freshly issued query at its issuer; no hop is consumed.
pub fn issue_query(node: &Node, query: Query) -> Decision {
    handle_query(node, query, false, Node::best_neighbor)
}
