//! Bipartite Graph Index: per-cell cache linking queries to the tree nodes
//! they fully cover and those nodes to their materialized object sets.

use super::NodeId;
use crate::ids::{ObjectId, QueryId};
use crate::cell::DetMap;
use std::collections::BTreeSet;

/// A cached node is identified by its slot and the version it had when the
/// object set was materialized. A newer node version makes the entry stale.
pub type NodeKey = (NodeId, u64);

#[derive(Debug, Default, Clone)]
pub struct Bgi {
    qs: BTreeSet<QueryId>,
    ns: DetMap<QueryId, Vec<NodeKey>>,
    // one entry per node slot; only the latest materialized version is kept
    os: DetMap<NodeId, (u64, Vec<ObjectId>)>,
}

impl Bgi {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached object set of `node` at exactly `version`, if any.
    pub fn lookup(&self, node: NodeId, version: u64) -> Option<&[ObjectId]> {
        match self.os.get(&node) {
            Some((v, objs)) if *v == version => Some(objs),
            _ => None,
        }
    }

    pub fn store(&mut self, node: NodeId, version: u64, objects: Vec<ObjectId>) {
        self.os.insert(node, (version, objects));
    }

    /// Replaces the node set of `q` with `keys`.
    pub(crate) fn set_nodes(&mut self, q: QueryId, keys: Vec<NodeKey>) {
        self.qs.insert(q);
        self.ns.insert(q, keys);
    }

    /// Drops `q` from the index. Materialized sets stay; they are keyed by node.
    pub fn forget(&mut self, q: QueryId) {
        self.qs.remove(&q);
        self.ns.remove(&q);
    }

    pub fn queries(&self) -> &BTreeSet<QueryId> {
        &self.qs
    }

    pub fn nodes_of(&self, q: QueryId) -> &[NodeKey] {
        self.ns.get(&q).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of materialized node sets held, including stale ones.
    pub fn cached_sets(&self) -> usize {
        self.os.len()
    }

    /// Checks that every node referenced by a query has a materialized set of
    /// the referenced version, or a newer one (stale references are allowed).
    pub fn check_references(&self) -> Result<(), String> {
        for (q, keys) in &self.ns {
            if !self.qs.contains(q) {
                return Err(format!("{q} has nodes but is not in the query set"));
            }
            for (node, version) in keys {
                match self.os.get(node) {
                    Some((v, _)) if v >= version => {}
                    _ => return Err(format!("{q} references uncached node {node}@{version}")),
                }
            }
        }
        Ok(())
    }
}
