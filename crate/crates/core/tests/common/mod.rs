//! Brute-force oracles and invariant checks shared by the property suite and
//! the acceptance target. Checks return `Err(description)` on violation.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use edgeknow::engine::{self, oracle_best, Network, SimConfig, Strategy as Routing};
use edgeknow::pgm::{entropy, ContextAssignment, DiscretePgm, JointTable, Schema, VariableId};
use edgeknow::routing::{
    aggregate, issue_query, process_query, AdvertisementPolicy,
    Decision, EntropySet, NodeId, Query, RoutingModel,
};
use edgeknow::topology::{self, overlap, AttachmentParams, Overlay};
use proptest::prelude::*;

pub type Check = Result<(), String>;

pub const EPS: f64 = 1e-9;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn h(masses: &[f64]) -> f64 {
    let total: f64 = masses.iter().sum();
    masses
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.log2()
        })
        .sum()
}

/// A dense table over a predicting variable and up to three contexts,
/// described independently of the library's layout code.
#[derive(Debug, Clone)]
pub struct TableCase {
    /// Cardinalities: predicting first, then contexts in ascending order.
    pub cards: Vec<usize>,
    pub counts: Vec<f64>,
}

impl TableCase {
    pub fn context_ids(&self) -> Vec<VariableId> {
        (0..self.cards.len() as u32 - 1).map(VariableId::context).collect()
    }

    pub fn build(&self) -> JointTable {
        let contexts: Vec<(VariableId, usize)> = self
            .context_ids()
            .into_iter()
            .zip(self.cards[1..].iter().copied())
            .collect();
        JointTable::from_counts(VariableId::predicting(0), self.cards[0], &contexts, self.counts.clone())
            .expect("valid case")
    }

    /// Coordinates of cell `i`: the last axis varies fastest.
    fn coords(&self, mut i: usize) -> Vec<usize> {
        let mut out = vec![0; self.cards.len()];
        for axis in (0..self.cards.len()).rev() {
            out[axis] = i % self.cards[axis];
            i /= self.cards[axis];
        }
        out
    }

    /// Entropy of the marginal over `axes` by explicit enumeration.
    pub fn brute_entropy(&self, axes: &[usize]) -> f64 {
        let mut groups: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let coords = self.coords(i);
            let key: Vec<usize> = axes.iter().map(|&a| coords[a]).collect();
            *groups.entry(key).or_insert(0.0) += c;
        }
        h(&groups.values().copied().collect::<Vec<_>>())
    }

    /// True conditional entropy `H(P | given axes)` as the weighted average
    /// of per-slice entropies.
    pub fn brute_conditional(&self, given: &[usize]) -> f64 {
        let total: f64 = self.counts.iter().sum();
        let mut slices: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let coords = self.coords(i);
            let key: Vec<usize> = given.iter().map(|&a| coords[a]).collect();
            let slot = slices.entry(key).or_insert_with(|| vec![0.0; self.cards[0]]);
            slot[coords[0]] += c;
        }
        slices
            .values()
            .map(|row| {
                let mass: f64 = row.iter().sum();
                if mass > 0.0 {
                    mass / total * h(row)
                } else {
                    0.0
                }
            })
            .sum()
    }
}

pub fn arb_table() -> impl Strategy<Value = TableCase> {
    (2usize..=4, prop::collection::vec(1usize..=3, 0..=3)).prop_flat_map(|(p, ctx)| {
        let mut cards = vec![p];
        cards.extend(ctx);
        let cells: usize = cards.iter().product();
        prop::collection::vec(0u32..20, cells)
            .prop_filter("needs mass", |c| c.iter().any(|&x| x > 0))
            .prop_map(move |counts| TableCase {
                cards: cards.clone(),
                counts: counts.into_iter().map(f64::from).collect(),
            })
    })
}

/// Entropy, marginals and literal conditional entropy against enumeration.
pub fn check_table(case: &TableCase) -> Check {
    let table = case.build();
    let all: Vec<usize> = (0..case.cards.len()).collect();
    let joint = table.joint_entropy().map_err(|e| e.to_string())?;
    let brute_joint = case.brute_entropy(&all);
    ensure((joint - brute_joint).abs() <= EPS, || {
        format!("joint {joint} vs brute {brute_joint}")
    })?;
    let max_joint: f64 = case.cards.iter().map(|&c| (c as f64).log2()).sum();
    ensure(joint >= 0.0 && joint <= max_joint + EPS, || format!("joint {joint} out of bounds"))?;

    let ids = case.context_ids();
    let mut marginals = vec![table.marginal_entropy(VariableId::predicting(0)).unwrap()];
    for c in &ids {
        marginals.push(table.marginal_entropy(*c).map_err(|e| e.to_string())?);
    }
    for (axis, &m) in marginals.iter().enumerate() {
        let brute = case.brute_entropy(&[axis]);
        ensure((m - brute).abs() <= EPS, || format!("marginal {axis}: {m} vs {brute}"))?;
        ensure(m >= 0.0 && m <= (case.cards[axis] as f64).log2() + EPS, || {
            format!("marginal {axis} = {m} out of bounds")
        })?;
        ensure(joint >= m - EPS, || format!("joint {joint} below marginal {m}"))?;
    }

    let empty = table
        .conditional_entropy(&BTreeSet::new())
        .map_err(|e| e.to_string())?;
    ensure(empty == joint, || format!("H(X|∅) = {empty} differs from H(X) = {joint}"))?;

    for subset in 0u32..(1 << ids.len()) {
        let given: BTreeSet<VariableId> = ids
            .iter()
            .enumerate()
            .filter(|(i, _)| subset & (1 << i) != 0)
            .map(|(_, v)| *v)
            .collect();
        let literal = given
            .iter()
            .fold(brute_joint, |acc, v| acc - case.brute_entropy(&[v.index as usize + 1]));
        let got = table.conditional_entropy_unclamped(&given).unwrap();
        ensure((got - literal).abs() <= EPS, || {
            format!("conditional given {given:?}: {got} vs {literal}")
        })?;
        let clamped = table.conditional_entropy(&given).unwrap();
        ensure(clamped >= 0.0 && (clamped - literal.max(0.0)).abs() <= EPS, || {
            format!("clamped conditional {clamped}")
        })?;
    }
    Ok(())
}

/// Tables whose contexts are mutually independent.
#[derive(Debug, Clone)]
pub struct IndependentCase {
    pub table: TableCase,
}

pub fn arb_independent() -> impl Strategy<Value = IndependentCase> {
    (2usize..=4, prop::collection::vec(2usize..=3, 1..=3)).prop_flat_map(|(p, ctx)| {
        let ctx_dists: Vec<BoxedStrategy<Vec<u32>>> = ctx
            .iter()
            .map(|&c| prop::collection::vec(1u32..10, c).boxed())
            .collect();
        let cells: usize = ctx.iter().product();
        (
            ctx_dists,
            prop::collection::vec(prop::collection::vec(0u32..10, p), cells),
        )
            .prop_filter("rows need mass", |(_, rows)| {
                rows.iter().all(|r| r.iter().any(|&x| x > 0))
            })
            .prop_map(move |(dists, rows)| {
                // p(c1..cr) = Π p(ci); p(P | c) from the row of that cell
                let mut cards = vec![p];
                cards.extend(ctx.iter().copied());
                let mut counts = vec![0.0; p * cells];
                for cell in 0..cells {
                    let mut rem = cell;
                    let mut weight = 1.0;
                    for (axis, &c) in ctx.iter().enumerate().rev() {
                        let s = rem % c;
                        rem /= c;
                        let d = &dists[axis];
                        weight *= f64::from(d[s]) / d.iter().map(|&x| f64::from(x)).sum::<f64>();
                    }
                    let row = &rows[cell];
                    let row_total: f64 = row.iter().map(|&x| f64::from(x)).sum();
                    for (state, &x) in row.iter().enumerate() {
                        counts[state * cells + cell] = weight * f64::from(x) / row_total;
                    }
                }
                IndependentCase {
                    table: TableCase { cards, counts },
                }
            })
    })
}

/// With independent contexts the literal difference equals the true
/// conditional entropy.
pub fn check_independent(case: &IndependentCase) -> Check {
    let t = case.table.build();
    let ids = case.table.context_ids();
    let given: BTreeSet<VariableId> = ids.iter().copied().collect();
    let literal = t.conditional_entropy_unclamped(&given).unwrap();
    let axes: Vec<usize> = (1..case.table.cards.len()).collect();
    let truth = case.table.brute_conditional(&axes);
    ensure((literal - truth).abs() <= EPS, || {
        format!("literal {literal} vs true conditional {truth}")
    })
}

pub fn arb_distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..50, 1..12)
        .prop_filter("mass", |v| v.iter().any(|&x| x > 0))
        .prop_map(|v| {
            let total: f64 = v.iter().map(|&x| f64::from(x)).sum();
            v.into_iter().map(|x| f64::from(x) / total).collect()
        })
}

pub fn check_entropy_bounds(dist: &[f64]) -> Check {
    let e = entropy(dist).map_err(|e| e.to_string())?;
    let max = (dist.len() as f64).log2();
    ensure(e >= 0.0 && e <= max + EPS, || format!("H = {e} outside [0, {max}]"))?;
    ensure((e - h(dist)).abs() <= EPS, || format!("H = {e} vs brute {}", h(dist)))
}

/// Observations for one predicting variable under a fixed combination.
#[derive(Debug, Clone)]
pub struct ObservationCase {
    pub combination: Vec<u32>,
    pub rows: Vec<(Vec<usize>, usize)>,
    pub order: Vec<usize>,
}

pub fn arb_observations() -> impl Strategy<Value = ObservationCase> {
    prop::sample::subsequence(vec![0u32, 1, 2], 0..=3).prop_flat_map(|combination| {
        let width = combination.len();
        prop::collection::vec((prop::collection::vec(0usize..3, width), 0usize..4), 1..40)
            .prop_flat_map(move |rows| {
                let n = rows.len();
                let combination = combination.clone();
                Just((0..n).collect::<Vec<_>>())
                    .prop_shuffle()
                    .prop_map(move |order| ObservationCase {
                        combination: combination.clone(),
                        rows: rows.clone(),
                        order,
                    })
            })
    })
}

fn train_rows(schema: &Arc<Schema>, case: &ObservationCase, order: &[usize]) -> DiscretePgm {
    let mut pgm = DiscretePgm::new(schema.clone());
    for &i in order {
        let (states, outcome) = &case.rows[i];
        let ctx = ContextAssignment::from_pairs(case.combination.iter().copied().zip(states.iter().copied()));
        pgm.observe(VariableId::predicting(0), &ctx, *outcome).unwrap();
    }
    pgm
}

pub fn check_observe_order(case: &ObservationCase) -> Check {
    let schema = Arc::new(Schema::uniform(1, 4, 3, 3).unwrap());
    let natural: Vec<usize> = (0..case.rows.len()).collect();
    let a = train_rows(&schema, case, &natural);
    let b = train_rows(&schema, case, &case.order);
    ensure(a == b, || "training depends on observation order".into())
}

pub fn arb_var_sets() -> impl Strategy<Value = (BTreeSet<u32>, BTreeSet<u32>)> {
    (
        prop::collection::btree_set(0u32..12, 0..8),
        prop::collection::btree_set(0u32..12, 0..8),
    )
}

pub fn check_similarity(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> Check {
    let a: BTreeSet<VariableId> = a.iter().map(|&i| VariableId::predicting(i)).collect();
    let b: BTreeSet<VariableId> = b.iter().map(|&i| VariableId::predicting(i)).collect();
    let ab = overlap(&a, &b);
    ensure(ab == overlap(&b, &a), || "overlap is not symmetric".into())?;
    ensure((0.0..=1.0).contains(&ab), || format!("overlap {ab} outside [0,1]"))?;
    if !a.is_empty() {
        ensure(overlap(&a, &a) == 1.0, || "self overlap is not 1".into())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct OverlayCase {
    pub nodes: usize,
    pub m0: usize,
    pub m: usize,
    pub limit: Option<usize>,
    pub seed: u64,
}

pub fn arb_overlay() -> impl Strategy<Value = OverlayCase> {
    (2usize..6, 1usize..4, 0usize..80, prop::option::of(0usize..8), any::<u64>())
        .prop_filter_map("m < m0", |(m0, m, extra, slack, seed)| {
            (m < m0).then(|| OverlayCase {
                nodes: m0 + extra,
                m0,
                m,
                // the initial clique needs m0 - 1 edges per node
                limit: slack.map(|s| m0.max(m + 1) + s),
                seed,
            })
        })
}

pub fn check_overlay(case: &OverlayCase) -> Check {
    let params = AttachmentParams {
        m0: case.m0,
        m: case.m,
        similarity_floor: 0.05,
    };
    let sim = |a: usize, b: usize| ((a * 7 + b * 7) % 10) as f64 / 10.0;
    let o = topology::generate_with(&params, case.nodes, case.limit, case.seed, sim)
        .map_err(|e| e.to_string())?;
    let again = topology::generate_with(&params, case.nodes, case.limit, case.seed, sim).unwrap();
    ensure(o == again, || "generation is not deterministic".into())?;
    if let Some(limit) = case.limit {
        ensure(o.max_degree() <= limit, || {
            format!("max degree {} above limit {limit}", o.max_degree())
        })?;
    }
    ensure(o.is_connected(), || "overlay is not connected".into())?;
    for (a, b) in o.edges() {
        ensure(a != b, || format!("self loop at {a}"))?;
        ensure(o.are_adjacent(b as usize, a as usize), || "asymmetric adjacency".into())?;
    }
    let degree_sum: usize = o.degrees().iter().sum();
    ensure(degree_sum == 2 * o.edge_count(), || "degree sum mismatch".into())
}

/// Random local sets and routing models for one node.
#[derive(Debug, Clone)]
pub struct AggregateCase {
    pub local: BTreeMap<VariableId, EntropySet>,
    pub models: Vec<RoutingModel>,
    pub k: usize,
    pub policy: AdvertisementPolicy,
}

fn arb_set(var: VariableId) -> impl Strategy<Value = EntropySet> {
    (
        prop::sample::subsequence(vec![0u32, 1, 2, 3], 0..=3),
        2.0f64..9.0,
        prop::collection::vec(0.1f64..1.9, 3),
    )
        .prop_map(move |(combo, joint, ents)| {
            EntropySet::new(
                var,
                joint,
                combo.iter().zip(ents).map(|(&c, e)| (VariableId::context(c), e)),
            )
        })
}

pub fn arb_aggregate() -> impl Strategy<Value = AggregateCase> {
    let vars = [VariableId::predicting(0), VariableId::predicting(1)];
    let local = prop::collection::btree_map(prop::sample::select(vars.to_vec()), arb_set(vars[0]), 0..=2)
        .prop_map(|m| {
            m.into_iter()
                .map(|(v, mut s)| {
                    s.predicting = v;
                    (v, s)
                })
                .collect::<BTreeMap<_, _>>()
        });
    let model_sets = prop::collection::vec(
        (prop::sample::select(vars.to_vec()), arb_set(vars[0])),
        0..8,
    );
    (local, prop::collection::vec(model_sets, 0..4), 1usize..5, 0.5f64..4.0).prop_map(
        |(local, raw_models, k, threshold)| {
            let models = raw_models
                .into_iter()
                .enumerate()
                .map(|(i, sets)| {
                    let mut m = RoutingModel::new(NodeId(i as u32 + 1));
                    for (v, mut s) in sets {
                        s.predicting = v;
                        let list = m.entries.entry(v).or_default();
                        if !list.iter().any(|x| x.combination() == s.combination()) {
                            list.push(s);
                        }
                    }
                    m
                })
                .collect();
            AggregateCase {
                local,
                models,
                k,
                policy: AdvertisementPolicy {
                    quality_threshold: threshold,
                    ..AdvertisementPolicy::default()
                },
            }
        },
    )
}

/// Aggregation against an explicit group-min, sort and truncate.
pub fn check_aggregate(case: &AggregateCase) -> Check {
    let adv = aggregate(NodeId(0), &case.local, &case.models, &case.policy, case.k);
    let mut expected: BTreeMap<VariableId, BTreeMap<Vec<VariableId>, f64>> = BTreeMap::new();
    let mut offer = |var: VariableId, combo: Vec<VariableId>, joint: f64| {
        let slot = expected.entry(var).or_default().entry(combo).or_insert(f64::INFINITY);
        if joint < *slot {
            *slot = joint;
        }
    };
    for (v, s) in &case.local {
        if s.fully_conditioned() > case.policy.quality_threshold {
            offer(*v, Vec::new(), s.joint);
        } else {
            offer(*v, s.combination(), s.joint);
        }
    }
    for m in &case.models {
        for (v, list) in &m.entries {
            for s in list {
                offer(*v, s.combination(), s.joint + case.policy.hop_inflation);
            }
        }
    }
    for (v, groups) in expected {
        let mut ranked: Vec<(f64, Vec<VariableId>)> = groups.into_iter().map(|(c, j)| (j, c)).collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
        ranked.truncate(case.k);
        let got = adv.sets.get(&v).cloned().unwrap_or_default();
        ensure(got.len() == ranked.len(), || {
            format!("{v}: {} sets advertised, expected {}", got.len(), ranked.len())
        })?;
        ensure(got.len() <= case.k, || "more than K sets".into())?;
        for (joint, combo) in ranked {
            let found = got
                .iter()
                .find(|s| s.combination() == combo)
                .ok_or_else(|| format!("{v}: combination {combo:?} missing"))?;
            ensure((found.joint - joint).abs() <= EPS, || {
                format!("{v} {combo:?}: joint {} expected {joint}", found.joint)
            })?;
        }
    }
    Ok(())
}

/// An advertisement with more than K sets for a variable is rejected and
/// leaves the model untouched.
pub fn check_oversized(case: &AggregateCase) -> Check {
    let big = aggregate(NodeId(0), &case.local, &case.models, &case.policy, 64);
    let widest = big.sets.values().map(Vec::len).max().unwrap_or(0);
    if widest == 0 {
        return Ok(());
    }
    let mut model = RoutingModel::new(NodeId(0));
    model.entries.insert(VariableId::predicting(7), vec![]);
    let before = model.clone();
    let k = widest - 1;
    ensure(model.integrate(&big, k).is_err(), || {
        format!("{widest} sets accepted under K = {k}")
    })?;
    ensure(model == before, || "rejected advertisement mutated the model".into())?;
    ensure(model.integrate(&big, widest).is_ok(), || "valid advertisement rejected".into())
}

/// A small random simulation setup.
#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub config: SimConfig,
}

pub fn arb_network() -> impl Strategy<Value = NetworkCase> {
    (4usize..14, 1usize..4, 1usize..4, 1usize..4, 0u32..6, any::<u64>()).prop_map(
        |(nodes, predicting, k, per_node, hops, seed)| {
            let predicting = predicting.max(per_node);
            NetworkCase {
                config: SimConfig {
                    node_count: nodes,
                    predicting_var_count: predicting,
                    context_var_count: 3,
                    contexts_per_table: 2,
                    combinations_pool: 3,
                    vars_trained_per_node: per_node,
                    observations_per_var: 40,
                    k,
                    hop_budget: engine::HopBudget::Fixed(hops),
                    cycles: 3,
                    attachment: AttachmentParams {
                        m0: 3,
                        m: 2,
                        similarity_floor: 0.05,
                    },
                    seed,
                    ..SimConfig::default()
                },
            }
        },
    )
}

/// Walks one query hop by hop and checks the trajectory invariants.
pub fn check_trajectory(net: &Network, query: Query) -> Check {
    let hops = query.hops_remaining;
    let issuer = query.issuer.index();
    let mut at = issuer;
    let mut decision = issue_query(&net.nodes[at], query);
    let mut last_quality = f64::INFINITY;
    let mut forwards = 0;
    loop {
        let q = decision.query();
        ensure(q.quality <= last_quality, || "quality increased along the path".into())?;
        last_quality = q.quality;
        let best_visited = q
            .visited
            .iter()
            .filter_map(|n| net.nodes[n.index()].pgm.answering_entropy(q.target, &q.ctx))
            .fold(f64::INFINITY, f64::min);
        ensure((q.quality - best_visited).abs() <= EPS || q.quality == best_visited, || {
            format!("quality {} differs from best visited {best_visited}", q.quality)
        })?;
        match decision {
            Decision::Forward { to, query } => {
                ensure(net.overlay.are_adjacent(at, to.index()), || {
                    format!("forward {at} -> {to} between non-neighbors")
                })?;
                forwards += 1;
                at = to.index();
                decision = process_query(&net.nodes[at], query);
            }
            Decision::Return(q) => {
                if !net.nodes[issuer].neighbors.is_empty() {
                    ensure(forwards == hops as usize, || {
                        format!("{forwards} forwards for a budget of {hops}")
                    })?;
                    ensure(q.visited.len() == hops as usize + 1, || {
                        format!("{} visits for a budget of {hops}", q.visited.len())
                    })?;
                }
                let optimal = oracle_best(&q, &net.nodes);
                ensure(q.quality >= optimal - engine::HIT_TOLERANCE, || {
                    format!("achieved {} beats the optimum {optimal}", q.quality)
                })?;
                return Ok(());
            }
        }
    }
}

/// Runs a few cycles and checks every query trajectory plus the trial
/// counters of both strategies.
pub fn check_network(case: &NetworkCase) -> Check {
    let mut net = Network::build(&case.config).map_err(|e| e.to_string())?;
    for strategy in [Routing::Abs, Routing::RandomWalk] {
        let m = net.run(strategy);
        ensure(
            m.oracle_violations + m.adjacency_violations + m.hop_accounting_violations == 0,
            || format!("{strategy}: violations recorded {m:?}"),
        )?;
        for c in &m.cycles {
            ensure((0.0..=1.0).contains(&c.accuracy), || "accuracy outside [0,1]".into())?;
            ensure(c.hits <= c.issued, || "more hits than queries".into())?;
        }
    }
    // converged routing state: walk fresh queries manually
    let hops = case.config.hops();
    for (target, combos) in net.catalog().to_vec() {
        for combo in combos {
            for issuer in 0..net.nodes.len() {
                let ctx = ContextAssignment::from_pairs(combo.iter().map(|c| (c.index, issuer % 4)));
                let q = Query::new(NodeId::from(issuer), target, ctx, hops);
                check_trajectory(&net, q)?;
            }
        }
    }
    Ok(())
}

/// Hop distances between all node pairs.
pub fn all_distances(overlay: &Overlay) -> Vec<Vec<usize>> {
    (0..overlay.node_count())
        .map(|s| {
            let mut dist = vec![usize::MAX; overlay.node_count()];
            let mut queue = VecDeque::from([s]);
            dist[s] = 0;
            while let Some(u) = queue.pop_front() {
                for v in overlay.neighbors(u) {
                    if dist[v.index()] == usize::MAX {
                        dist[v.index()] = dist[u] + 1;
                        queue.push_back(v.index());
                    }
                }
            }
            dist
        })
        .collect()
}

/// Expected advertisement of node `z` once propagation has settled with K
/// covering every group: per variable and combination, the best
/// `joint + inflation · distance` over all nodes.
pub fn settled_advertisement(
    net: &Network,
    dist: &[Vec<usize>],
    z: usize,
) -> BTreeMap<VariableId, BTreeMap<Vec<VariableId>, f64>> {
    let policy = net.config.policy;
    let mut out: BTreeMap<VariableId, BTreeMap<Vec<VariableId>, f64>> = BTreeMap::new();
    for (y, node) in net.nodes.iter().enumerate() {
        if dist[z][y] == usize::MAX {
            continue;
        }
        for (v, s) in node.local_sets() {
            let combo = if s.fully_conditioned() > policy.quality_threshold {
                Vec::new()
            } else {
                s.combination()
            };
            let value = s.joint + policy.hop_inflation * dist[z][y] as f64;
            let slot = out.entry(*v).or_default().entry(combo).or_insert(f64::INFINITY);
            if value < *slot {
                *slot = value;
            }
        }
    }
    out
}

/// Compares every routing model with the settled advertisement of its
/// neighbor.
pub fn check_settled(net: &Network) -> Check {
    let dist = all_distances(&net.overlay);
    for (x, node) in net.nodes.iter().enumerate() {
        for model in &node.models {
            let expected = settled_advertisement(net, &dist, model.neighbor.index());
            for (v, groups) in &expected {
                let got = model.sets(*v);
                ensure(got.len() == groups.len(), || {
                    format!("node {x} via {}: {} sets for {v}, expected {}", model.neighbor, got.len(), groups.len())
                })?;
                for s in got {
                    let want = groups
                        .get(&s.combination())
                        .ok_or_else(|| format!("unexpected combination {:?}", s.combination()))?;
                    ensure((s.joint - want).abs() <= 1e-9, || {
                        format!(
                            "node {x} via {} {v} {:?}: joint {} expected {want}",
                            model.neighbor,
                            s.combination(),
                            s.joint
                        )
                    })?;
                }
            }
        }
    }
    Ok(())
}

/// Run `check` over `cases` generated cases; returns the first failure.
pub fn run_cases<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(&S::Value) -> Check,
) -> Result<u32, String>
where
    S::Value: std::fmt::Debug,
{
    use proptest::test_runner::{Config, TestCaseError, TestRunner};
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |v| check(&v).map_err(TestCaseError::fail))
        .map(|_| cases)
        .map_err(|e| e.to_string())
}
