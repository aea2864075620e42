//! Entropy-guided query routing over a network of nodes that each train a
//! local discrete model.
//!
//! - [`pgm`]: per-node count tables and the entropy arithmetic.
//! - [`routing`]: entropy-set advertisements, per-neighbor routing models and
//!   query forwarding.
//! - [`topology`]: similarity-weighted preferential-attachment overlays.
//! - [`engine`]: the cycle-based simulator, workloads, baseline and oracle.
//! - [`experiment`]: experiment specs, sweeps and the CSV artifacts behind the
//!   `edgeknow` binary.
//!
//! The `examples/` directory has one runnable program per capability.

pub mod engine;
pub mod experiment;
pub mod pgm;
pub mod routing;
pub mod topology;

pub use pgm::{ContextAssignment, DiscretePgm, JointTable, PgmError, Schema, VariableId};
pub use routing::{
    Advertisement, AdvertisementPolicy, Decision, EntropySet, Node, NodeId, Query, RoutingModel,
};

/// Serializes a map as a list of `(key, value)` pairs so that structured keys
/// survive formats with string-only object keys.
pub(crate) mod map_as_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, serializer: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize,
        V: Serialize,
        S: Serializer,
    {
        serializer.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(deserializer: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(deserializer)?.into_iter().collect())
    }
}
