//! Discrete per-node models: counting-based training and the entropy
//! quantities used to judge how well a model can answer a query.
//!
//! Every predicting variable that a node has observed owns one [`JointTable`]:
//! a dense count tensor over `(predicting state × context states)` seeded with a
//! uniform pseudocount. All entropies are in bits, with `0·log 0 ≡ 0`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a vector sums to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

static CLAMPED_CONDITIONALS: AtomicU64 = AtomicU64::new(0);

/// Number of conditional-entropy evaluations (process wide) whose literal
/// subtraction went negative and was clamped to zero.
pub fn clamp_events() -> u64 {
    CLAMPED_CONDITIONALS.load(Ordering::Relaxed)
}

pub(crate) fn record_clamp() {
    CLAMPED_CONDITIONALS.fetch_add(1, Ordering::Relaxed);
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PgmError {
    #[error("unknown variable {0}")]
    UnknownVariable(VariableId),
    #[error("variable {var} has no state {state} (cardinality {cardinality})")]
    InvalidState {
        var: VariableId,
        state: usize,
        cardinality: usize,
    },
    #[error("context binding for {target} does not match its trained combination {expected:?}")]
    ContextMismatch {
        target: VariableId,
        expected: Vec<VariableId>,
    },
    #[error("input is not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("no knowledge about {0}")]
    NoKnowledge(VariableId),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

pub type Result<T> = std::result::Result<T, PgmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VariableKind {
    Predicting,
    Context,
}

/// A random variable of the shared model schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariableId {
    pub kind: VariableKind,
    pub index: u32,
}

impl VariableId {
    pub const fn predicting(index: u32) -> Self {
        Self {
            kind: VariableKind::Predicting,
            index,
        }
    }

    pub const fn context(index: u32) -> Self {
        Self {
            kind: VariableKind::Context,
            index,
        }
    }

    pub fn is_predicting(&self) -> bool {
        self.kind == VariableKind::Predicting
    }

    pub fn is_context(&self) -> bool {
        self.kind == VariableKind::Context
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            VariableKind::Predicting => write!(f, "P{}", self.index),
            VariableKind::Context => write!(f, "C{}", self.index),
        }
    }
}

/// Variable layout shared by every node of one simulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    predicting_cardinalities: Vec<usize>,
    context_cardinalities: Vec<usize>,
    /// Per predicting variable, the context indices it may depend on.
    dependency_map: Vec<BTreeSet<u32>>,
}

impl Schema {
    pub fn new(
        predicting_cardinalities: Vec<usize>,
        context_cardinalities: Vec<usize>,
        dependency_map: Vec<BTreeSet<u32>>,
    ) -> Result<Self> {
        if let Some(c) = predicting_cardinalities
            .iter()
            .chain(&context_cardinalities)
            .find(|&&c| c < 2)
        {
            return Err(PgmError::InvalidSchema(format!(
                "cardinality {c} is below 2"
            )));
        }
        if dependency_map.len() != predicting_cardinalities.len() {
            return Err(PgmError::InvalidSchema(format!(
                "dependency map has {} entries for {} predicting variables",
                dependency_map.len(),
                predicting_cardinalities.len()
            )));
        }
        let context_count = context_cardinalities.len() as u32;
        if dependency_map.iter().flatten().any(|&c| c >= context_count) {
            return Err(PgmError::InvalidSchema(
                "dependency map names an unknown context variable".into(),
            ));
        }
        Ok(Self {
            predicting_cardinalities,
            context_cardinalities,
            dependency_map,
        })
    }

    /// Every predicting variable may depend on every context variable.
    pub fn uniform(
        predicting_count: usize,
        predicting_states: usize,
        context_count: usize,
        context_states: usize,
    ) -> Result<Self> {
        let all: BTreeSet<u32> = (0..context_count as u32).collect();
        Self::new(
            vec![predicting_states; predicting_count],
            vec![context_states; context_count],
            vec![all; predicting_count],
        )
    }

    pub fn predicting_count(&self) -> usize {
        self.predicting_cardinalities.len()
    }

    pub fn context_count(&self) -> usize {
        self.context_cardinalities.len()
    }

    pub fn cardinality(&self, var: VariableId) -> Result<usize> {
        let table = match var.kind {
            VariableKind::Predicting => &self.predicting_cardinalities,
            VariableKind::Context => &self.context_cardinalities,
        };
        table
            .get(var.index as usize)
            .copied()
            .ok_or(PgmError::UnknownVariable(var))
    }

    /// Whether `target` may be trained against context variable `ctx`.
    pub fn may_depend(&self, target: VariableId, ctx: VariableId) -> bool {
        target.is_predicting()
            && ctx.is_context()
            && self
                .dependency_map
                .get(target.index as usize)
                .is_some_and(|deps| deps.contains(&ctx.index))
    }

    pub fn predicting_variables(&self) -> impl Iterator<Item = VariableId> {
        (0..self.predicting_count() as u32).map(VariableId::predicting)
    }
}

/// Observed states for a subset of context variables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextAssignment {
    #[serde(with = "crate::map_as_pairs")]
    bindings: BTreeMap<VariableId, usize>,
}

impl ContextAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an assignment from `(context index, state)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, usize)>) -> Self {
        Self {
            bindings: pairs
                .into_iter()
                .map(|(c, s)| (VariableId::context(c), s))
                .collect(),
        }
    }

    pub fn bind(&mut self, var: VariableId, state: usize) -> Result<()> {
        if !var.is_context() {
            return Err(PgmError::UnknownVariable(var));
        }
        self.bindings.insert(var, state);
        Ok(())
    }

    pub fn get(&self, var: VariableId) -> Option<usize> {
        self.bindings.get(&var).copied()
    }

    pub fn contains(&self, var: VariableId) -> bool {
        self.bindings.contains_key(&var)
    }

    pub fn variables(&self) -> impl Iterator<Item = VariableId> + '_ {
        self.bindings.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VariableId, usize)> + '_ {
        self.bindings.iter().map(|(v, s)| (*v, *s))
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for (&var, &state) in &self.bindings {
            let cardinality = schema.cardinality(var)?;
            if state >= cardinality {
                return Err(PgmError::InvalidState {
                    var,
                    state,
                    cardinality,
                });
            }
        }
        Ok(())
    }
}

/// `−Σ p·log2 p` over a probability vector.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    check_distribution(dist)?;
    Ok(entropy_unchecked(dist))
}

fn check_distribution(dist: &[f64]) -> Result<()> {
    if dist.is_empty() {
        return Err(PgmError::NotADistribution("empty vector".into()));
    }
    if let Some(p) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(PgmError::NotADistribution(format!("entry {p}")));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(PgmError::NotADistribution(format!("sums to {sum}")));
    }
    Ok(())
}

fn entropy_unchecked(dist: &[f64]) -> f64 {
    let h: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    h.max(0.0)
}

/// Entropy of a vector of non-negative masses after normalization.
fn entropy_of_masses(masses: &[f64], total: f64) -> f64 {
    let h: f64 = masses
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Joint count tensor of one predicting variable and its context combination.
///
/// Cells are laid out with the predicting state as the slowest axis followed
/// by the contexts in ascending [`VariableId`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    predicting: VariableId,
    predicting_states: usize,
    contexts: Vec<VariableId>,
    context_states: Vec<usize>,
    counts: Vec<f64>,
    pseudocount: f64,
}

impl JointTable {
    /// A table holding `pseudocount` in every cell.
    pub fn uniform(
        predicting: VariableId,
        predicting_states: usize,
        contexts: &[(VariableId, usize)],
        pseudocount: f64,
    ) -> Result<Self> {
        if !(pseudocount > 0.0 && pseudocount.is_finite()) {
            return Err(PgmError::NotADistribution(format!(
                "pseudocount {pseudocount} must be positive"
            )));
        }
        let mut table = Self::zeroed(predicting, predicting_states, contexts)?;
        table.counts.iter_mut().for_each(|c| *c = pseudocount);
        table.pseudocount = pseudocount;
        Ok(table)
    }

    /// A table with explicit cell masses (layout as documented on the type).
    /// The recorded pseudocount is zero.
    pub fn from_counts(
        predicting: VariableId,
        predicting_states: usize,
        contexts: &[(VariableId, usize)],
        counts: Vec<f64>,
    ) -> Result<Self> {
        let mut table = Self::zeroed(predicting, predicting_states, contexts)?;
        if counts.len() != table.counts.len() {
            return Err(PgmError::NotADistribution(format!(
                "expected {} cells, got {}",
                table.counts.len(),
                counts.len()
            )));
        }
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(PgmError::NotADistribution("negative cell".into()));
        }
        table.counts = counts;
        Ok(table)
    }

    fn zeroed(
        predicting: VariableId,
        predicting_states: usize,
        contexts: &[(VariableId, usize)],
    ) -> Result<Self> {
        if !predicting.is_predicting() {
            return Err(PgmError::UnknownVariable(predicting));
        }
        let mut sorted = contexts.to_vec();
        sorted.sort_by_key(|(v, _)| *v);
        if let Some((v, _)) = sorted.iter().find(|(v, _)| !v.is_context()) {
            return Err(PgmError::UnknownVariable(*v));
        }
        if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(PgmError::InvalidSchema("duplicate context".into()));
        }
        let context_states: Vec<usize> = sorted.iter().map(|(_, s)| *s).collect();
        let cells = predicting_states * context_states.iter().product::<usize>();
        Ok(Self {
            predicting,
            predicting_states,
            contexts: sorted.into_iter().map(|(v, _)| v).collect(),
            context_states,
            counts: vec![0.0; cells],
            pseudocount: 0.0,
        })
    }

    pub fn predicting(&self) -> VariableId {
        self.predicting
    }

    pub fn predicting_states(&self) -> usize {
        self.predicting_states
    }

    /// The context combination, ascending.
    pub fn contexts(&self) -> &[VariableId] {
        &self.contexts
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn pseudocount(&self) -> f64 {
        self.pseudocount
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    fn context_cells(&self) -> usize {
        self.context_states.iter().product()
    }

    fn context_position(&self, var: VariableId) -> Option<usize> {
        self.contexts.binary_search(&var).ok()
    }

    /// Mixed-radix offset of a full context binding; `None` when a context
    /// of the table is unbound or out of range.
    fn context_offset(&self, ctx: &ContextAssignment) -> Option<usize> {
        let mut offset = 0;
        for (var, &states) in self.contexts.iter().zip(&self.context_states) {
            let s = ctx.get(*var)?;
            if s >= states {
                return None;
            }
            offset = offset * states + s;
        }
        Some(offset)
    }

    /// Adds one unit of mass to the cell `(outcome, ctx)`.
    pub fn increment(&mut self, outcome: usize, ctx: &ContextAssignment) -> Result<()> {
        if outcome >= self.predicting_states {
            return Err(PgmError::InvalidState {
                var: self.predicting,
                state: outcome,
                cardinality: self.predicting_states,
            });
        }
        if ctx.len() != self.contexts.len() || ctx.variables().ne(self.contexts.iter().copied()) {
            return Err(PgmError::ContextMismatch {
                target: self.predicting,
                expected: self.contexts.clone(),
            });
        }
        let offset = self.context_offset(ctx).ok_or_else(|| {
            let (var, state) = ctx
                .iter()
                .zip(&self.context_states)
                .find(|((_, s), card)| s >= card)
                .map(|((v, s), _)| (v, s))
                .unwrap_or((self.predicting, outcome));
            PgmError::InvalidState {
                var,
                state,
                cardinality: self.cardinality_of(var).unwrap_or(0),
            }
        })?;
        let idx = outcome * self.context_cells() + offset;
        self.counts[idx] += 1.0;
        Ok(())
    }

    fn cardinality_of(&self, var: VariableId) -> Option<usize> {
        if var == self.predicting {
            Some(self.predicting_states)
        } else {
            self.context_position(var).map(|i| self.context_states[i])
        }
    }

    fn checked_total(&self) -> Result<f64> {
        let total = self.total();
        if self.counts.is_empty() || !(total > 0.0) {
            return Err(PgmError::NotADistribution("table has no mass".into()));
        }
        Ok(total)
    }

    /// Normalized probability tensor in cell layout.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let total = self.checked_total()?;
        Ok(self.counts.iter().map(|c| c / total).collect())
    }

    /// Entropy of the full normalized tensor.
    pub fn joint_entropy(&self) -> Result<f64> {
        let total = self.checked_total()?;
        Ok(entropy_of_masses(&self.counts, total))
    }

    /// Unnormalized marginal masses along `var`.
    fn marginal_masses(&self, var: VariableId) -> Result<Vec<f64>> {
        let cells = self.context_cells();
        if var == self.predicting {
            return Ok(self
                .counts
                .chunks(cells)
                .map(|row| row.iter().sum())
                .collect());
        }
        let pos = self
            .context_position(var)
            .ok_or(PgmError::UnknownVariable(var))?;
        let states = self.context_states[pos];
        let stride: usize = self.context_states[pos + 1..].iter().product();
        let mut out = vec![0.0; states];
        for (i, &c) in self.counts.iter().enumerate() {
            out[(i / stride) % states] += c;
        }
        Ok(out)
    }

    /// Marginal distribution of one variable of the table.
    pub fn marginal(&self, var: VariableId) -> Result<Vec<f64>> {
        let total = self.checked_total()?;
        Ok(self
            .marginal_masses(var)?
            .into_iter()
            .map(|m| m / total)
            .collect())
    }

    pub fn marginal_entropy(&self, var: VariableId) -> Result<f64> {
        let total = self.checked_total()?;
        Ok(entropy_of_masses(&self.marginal_masses(var)?, total))
    }

    /// Joint entropy minus the marginal entropy of each given context, in
    /// ascending variable order. May be negative for correlated contexts.
    pub fn conditional_entropy_unclamped(&self, given: &BTreeSet<VariableId>) -> Result<f64> {
        if let Some(v) = given
            .iter()
            .find(|v| self.context_position(**v).is_none())
        {
            return Err(PgmError::UnknownVariable(*v));
        }
        let mut h = self.joint_entropy()?;
        for &c in given {
            h -= self.marginal_entropy(c)?;
        }
        Ok(h)
    }

    /// Remaining uncertainty once `given` contexts are observed; negative
    /// results are clamped to zero and counted in [`clamp_events`].
    pub fn conditional_entropy(&self, given: &BTreeSet<VariableId>) -> Result<f64> {
        let h = self.conditional_entropy_unclamped(given)?;
        if h < 0.0 {
            record_clamp();
            Ok(0.0)
        } else {
            Ok(h)
        }
    }

    /// Joint entropy and the marginal entropy of every context, computed in
    /// one pass over the counts.
    pub fn entropy_summary(&self) -> Result<(f64, Vec<(VariableId, f64)>)> {
        let joint = self.joint_entropy()?;
        let mut marginals = Vec::with_capacity(self.contexts.len());
        for &c in &self.contexts {
            marginals.push((c, self.marginal_entropy(c)?));
        }
        Ok((joint, marginals))
    }

    /// Distribution over predicting states after fixing the bound contexts of
    /// `ctx` and summing out the unbound ones. Bindings for contexts outside
    /// the table are ignored.
    pub fn predict(&self, ctx: &ContextAssignment) -> Result<Vec<f64>> {
        let cells = self.context_cells();
        let mut out = vec![0.0; self.predicting_states];
        for (outcome, row) in self.counts.chunks(cells).enumerate() {
            for (offset, &mass) in row.iter().enumerate() {
                if self.offset_matches(offset, ctx) {
                    out[outcome] += mass;
                }
            }
        }
        let total: f64 = out.iter().sum();
        if !(total > 0.0) {
            return Err(PgmError::NotADistribution(
                "context slice has no mass".into(),
            ));
        }
        out.iter_mut().for_each(|p| *p /= total);
        Ok(out)
    }

    fn offset_matches(&self, mut offset: usize, ctx: &ContextAssignment) -> bool {
        for (var, &states) in self.contexts.iter().zip(&self.context_states).rev() {
            let s = offset % states;
            offset /= states;
            if ctx.get(*var).is_some_and(|bound| bound != s) {
                return false;
            }
        }
        true
    }
}

/// One node's model: a joint table per trained predicting variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePgm {
    schema: Arc<Schema>,
    #[serde(with = "crate::map_as_pairs")]
    tables: BTreeMap<VariableId, JointTable>,
    #[serde(with = "crate::map_as_pairs")]
    observation_count: BTreeMap<VariableId, u64>,
    pseudocount: f64,
}

impl DiscretePgm {
    pub const DEFAULT_PSEUDOCOUNT: f64 = 1.0;

    pub fn new(schema: Arc<Schema>) -> Self {
        Self::with_pseudocount(schema, Self::DEFAULT_PSEUDOCOUNT)
    }

    pub fn with_pseudocount(schema: Arc<Schema>, pseudocount: f64) -> Self {
        Self {
            schema,
            tables: BTreeMap::new(),
            observation_count: BTreeMap::new(),
            pseudocount,
        }
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn table(&self, var: VariableId) -> Option<&JointTable> {
        self.tables.get(&var)
    }

    pub fn tables(&self) -> impl Iterator<Item = &JointTable> {
        self.tables.values()
    }

    pub fn observation_count(&self, var: VariableId) -> u64 {
        self.observation_count.get(&var).copied().unwrap_or(0)
    }

    /// Predicting variables with at least one observation.
    pub fn trained_set(&self) -> BTreeSet<VariableId> {
        self.observation_count
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(v, _)| *v)
            .collect()
    }

    /// Records one observation of `target` in context `ctx`. The first
    /// observation fixes the table's context combination to `ctx`'s keys.
    pub fn observe(
        &mut self,
        target: VariableId,
        ctx: &ContextAssignment,
        outcome: usize,
    ) -> Result<()> {
        if !target.is_predicting() {
            return Err(PgmError::UnknownVariable(target));
        }
        let states = self.schema.cardinality(target)?;
        if outcome >= states {
            return Err(PgmError::InvalidState {
                var: target,
                state: outcome,
                cardinality: states,
            });
        }
        ctx.validate(&self.schema)?;
        if let Some(v) = ctx.variables().find(|v| !self.schema.may_depend(target, *v)) {
            return Err(PgmError::UnknownVariable(v));
        }
        if !self.tables.contains_key(&target) {
            let contexts = ctx
                .variables()
                .map(|v| Ok((v, self.schema.cardinality(v)?)))
                .collect::<Result<Vec<_>>>()?;
            let table = JointTable::uniform(target, states, &contexts, self.pseudocount)?;
            self.tables.insert(target, table);
        }
        let table = self.tables.get_mut(&target).expect("table just ensured");
        table.increment(outcome, ctx)?;
        *self.observation_count.entry(target).or_insert(0) += 1;
        Ok(())
    }

    pub fn predict(&self, target: VariableId, ctx: &ContextAssignment) -> Result<Vec<f64>> {
        let table = self.tables.get(&target).ok_or(PgmError::NoKnowledge(target))?;
        if let Some(v) = ctx
            .variables()
            .find(|v| !table.contexts().contains(v))
        {
            return Err(PgmError::UnknownVariable(v));
        }
        table.predict(ctx)
    }

    /// Conditional entropy of answering a query for `target` given `ctx`,
    /// restricted to the contexts the table knows. `None` when untrained.
    pub fn answering_entropy(&self, target: VariableId, ctx: &ContextAssignment) -> Option<f64> {
        let table = self.tables.get(&target)?;
        let given: BTreeSet<VariableId> = ctx
            .variables()
            .filter(|v| table.contexts().contains(v))
            .collect();
        table.conditional_entropy(&given).ok()
    }

    /// [`Self::predict`] restricted to the bindings the table knows.
    pub fn predict_restricted(
        &self,
        target: VariableId,
        ctx: &ContextAssignment,
    ) -> Result<Vec<f64>> {
        let table = self.tables.get(&target).ok_or(PgmError::NoKnowledge(target))?;
        table.predict(ctx)
    }
}
