//! Graph data model shared by the attribution and refinement passes.
//!
//! Two representations are supported: the leveled [`ReasoningGraph`] that a
//! single model's reasoning trace is decomposed into, and the
//! [`InteractionGraph`] projected from a multi-agent interaction log. Both are
//! immutable in structure once built; only scores on an interaction graph are
//! mutated during refinement.

mod cig;
mod hdag;
mod tier;

use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Display;

pub use cig::{
    CigEdge, CigNode, ErrorTag, InteractionGraph, InteractionGraphDoc, LogEdge, NodeKey, Role,
    Status,
};
pub use hdag::{
    Difficulty, EdgeKind, HdagEdge, HdagNode, Level, NodeId, ReasoningGraph, ReasoningGraphDoc,
    Violation,
};
pub use tier::{assign_tier, Tier};

/// Schema version carried by graph documents.
pub const GRAPH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("edge {from} -> {to} references a missing endpoint")]
    DanglingEdge { from: String, to: String },
    #[error("score `{field}` of `{owner}` is {value}, outside [0, 1]")]
    ScoreOutOfRange {
        owner: String,
        field: &'static str,
        value: f64,
    },
    #[error("agent `{agent}` has no instance for round {round}")]
    UnresolvedRound { agent: String, round: u32 },
    #[error("cycle survives unrolling through {}", .0.join(", "))]
    Cycle(Vec<String>),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
}

/// Index-based adjacency view implemented by both graph types.
pub trait Topology {
    type Key: Ord + Clone + Display;

    fn node_count(&self) -> usize;
    fn key(&self, idx: usize) -> &Self::Key;
    fn index_of(&self, key: &Self::Key) -> Option<usize>;
    fn children(&self, idx: usize) -> &[usize];
    fn parents(&self, idx: usize) -> &[usize];

    fn require(&self, key: &Self::Key) -> Result<usize, GraphError> {
        self.index_of(key)
            .ok_or_else(|| GraphError::UnknownNode(key.to_string()))
    }
}

/// Nodes that feed `v` directly.
pub fn get_parents<G: Topology>(g: &G, v: &G::Key) -> Result<BTreeSet<G::Key>, GraphError> {
    let i = g.require(v)?;
    Ok(g.parents(i).iter().map(|&p| g.key(p).clone()).collect())
}

/// Every node reachable from `v` along out-edges, excluding `v` itself.
pub fn get_descendants<G: Topology>(g: &G, v: &G::Key) -> Result<BTreeSet<G::Key>, GraphError> {
    let start = g.require(v)?;
    Ok(descendant_indices(g, start)
        .into_iter()
        .map(|i| g.key(i).clone())
        .collect())
}

pub(crate) fn descendant_indices<G: Topology>(g: &G, start: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<usize> = g.children(start).iter().copied().collect();
    while let Some(i) = queue.pop_front() {
        if i != start && seen.insert(i) {
            queue.extend(g.children(i).iter().copied());
        }
    }
    seen
}

/// Kahn's algorithm with ties broken by ascending key. On failure returns the
/// indices that could not be ordered.
pub(crate) fn kahn_order<G: Topology>(g: &G) -> Result<Vec<usize>, Vec<usize>> {
    let n = g.node_count();
    let mut indegree: Vec<usize> = (0..n).map(|i| g.parents(i).len()).collect();
    let mut ready: BTreeSet<(G::Key, usize)> = (0..n)
        .filter(|&i| indegree[i] == 0)
        .map(|i| (g.key(i).clone(), i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, i)) = ready.pop_first() {
        order.push(i);
        for &c in g.children(i) {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert((g.key(c).clone(), c));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        let placed: BTreeSet<usize> = order.into_iter().collect();
        Err((0..n).filter(|i| !placed.contains(i)).collect())
    }
}

/// Of the unordered remainder of a failed Kahn pass, keep only nodes that lie
/// on a cycle (those that can reach themselves).
pub(crate) fn nodes_on_cycles<G: Topology>(g: &G, remainder: &[usize]) -> Vec<usize> {
    remainder
        .iter()
        .copied()
        .filter(|&i| descendant_indices_incl_self_cycle(g, i))
        .collect()
}

fn descendant_indices_incl_self_cycle<G: Topology>(g: &G, start: usize) -> bool {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<usize> = g.children(start).iter().copied().collect();
    while let Some(i) = queue.pop_front() {
        if i == start {
            return true;
        }
        if seen.insert(i) {
            queue.extend(g.children(i).iter().copied());
        }
    }
    false
}

pub(crate) fn check_unit(
    owner: &dyn Display,
    field: &'static str,
    value: f64,
) -> Result<(), GraphError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(GraphError::ScoreOutOfRange {
            owner: owner.to_string(),
            field,
            value,
        })
    }
}

#[cfg(test)]
mod tests {
    use alloc::vec::Vec;

    use super::*;
    use crate::fixtures::{cig_edge, cig_node};
    use crate::refinement::complete_binary_tree;

    fn dag(ids: &[&str], edges: &[(&str, &str)]) -> InteractionGraph {
        let nodes = ids
            .iter()
            .map(|id| cig_node(id, 0, Role::Coder, 1.0))
            .collect();
        let edges = edges
            .iter()
            .map(|(a, b)| cig_edge(a, b, 1.0, 1.0))
            .collect();
        InteractionGraph::new(nodes, edges).unwrap()
    }

    fn k(id: &str) -> NodeKey {
        NodeKey::new(id, 0)
    }

    #[test]
    fn parents_of_diamond_sink() {
        let g = dag(
            &["a", "b", "c", "d"],
            &[("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")],
        );
        assert_eq!(get_parents(&g, &k("d")).unwrap(), [k("b"), k("c")].into());
        assert!(get_parents(&g, &k("a")).unwrap().is_empty());
        assert!(matches!(
            get_parents(&g, &k("z")),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn descendants_of_chain_and_tree() {
        let g = dag(&["a", "b", "c"], &[("a", "b"), ("b", "c")]);
        assert_eq!(
            get_descendants(&g, &k("a")).unwrap(),
            [k("b"), k("c")].into()
        );
        assert!(get_descendants(&g, &k("c")).unwrap().is_empty());
        let tree = complete_binary_tree(4);
        let left = get_descendants(&tree, &k("t2")).unwrap();
        let expected: Vec<NodeKey> = ["t4", "t5", "t8", "t9", "t10", "t11"]
            .iter()
            .map(|s| k(s))
            .collect();
        assert_eq!(left, expected.into_iter().collect());
    }
}
