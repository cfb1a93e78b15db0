use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::{kahn_order, nodes_on_cycles, GraphError, Tier, Topology, GRAPH_SCHEMA_VERSION};
use crate::Digest;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        NodeId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

/// Abstraction level, ordered from the goal (0) down to atomic operations (4).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Goal,
    Strategy,
    Tactic,
    Step,
    Operation,
}

impl Level {
    pub fn index(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    DecomposesTo,
    DependsOn,
    Enables,
    Validates,
    Contradicts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdagNode {
    pub id: NodeId,
    pub level: Level,
    pub difficulty: Difficulty,
    #[serde(default)]
    pub domain: String,
    pub content_hash: Digest,
    pub tier: Tier,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub high_stakes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdagEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

/// A single violated structural rule reported by
/// [`ReasoningGraph::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    Cycle {
        nodes: Vec<NodeId>,
    },
    LevelOrder {
        from: NodeId,
        to: NodeId,
        from_level: Level,
        to_level: Level,
    },
    Unreachable {
        node: NodeId,
    },
    LeafLevel {
        node: NodeId,
        level: Level,
    },
}

impl Violation {
    pub fn rule(&self) -> &'static str {
        match self {
            Violation::Cycle { .. } => "cycle",
            Violation::LevelOrder { .. } => "level_order",
            Violation::Unreachable { .. } => "unreachable",
            Violation::LeafLevel { .. } => "leaf_level",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle { nodes } => {
                f.write_str("cycle through")?;
                for n in nodes {
                    write!(f, " {n}")?;
                }
                Ok(())
            }
            Violation::LevelOrder {
                from,
                to,
                from_level,
                to_level,
            } => write!(
                f,
                "edge {from} -> {to} goes from {from_level:?} up to {to_level:?}"
            ),
            Violation::Unreachable { node } => {
                write!(f, "node {node} is not reachable from the goal")
            }
            Violation::LeafLevel { node, level } => {
                write!(
                    f,
                    "leaf {node} sits at {level:?}, expected Step or Operation"
                )
            }
        }
    }
}

/// Serialized form of a [`ReasoningGraph`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasoningGraphDoc {
    pub v: u32,
    pub goal_id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_id: Option<NodeId>,
    pub nodes: Vec<HdagNode>,
    pub edges: Vec<HdagEdge>,
}

/// Leveled reasoning graph. Construction checks referential integrity only;
/// the structural rules are checked by [`validate`](Self::validate) and
/// reported as data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ReasoningGraphDoc", into = "ReasoningGraphDoc")]
pub struct ReasoningGraph {
    nodes: Vec<HdagNode>,
    edges: Vec<HdagEdge>,
    goal_id: NodeId,
    answer_id: Option<NodeId>,
    index: BTreeMap<NodeId, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
}

impl ReasoningGraph {
    pub fn new(
        nodes: Vec<HdagNode>,
        edges: Vec<HdagEdge>,
        goal_id: NodeId,
        answer_id: Option<NodeId>,
    ) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(n.id.to_string()));
            }
        }
        for id in core::iter::once(&goal_id).chain(answer_id.as_ref()) {
            if !index.contains_key(id) {
                return Err(GraphError::UnknownNode(id.to_string()));
            }
        }
        let mut children = alloc::vec![Vec::new(); nodes.len()];
        let mut parents = alloc::vec![Vec::new(); nodes.len()];
        for e in &edges {
            let (Some(&u), Some(&v)) = (index.get(&e.from), index.get(&e.to)) else {
                return Err(GraphError::DanglingEdge {
                    from: e.from.to_string(),
                    to: e.to.to_string(),
                });
            };
            children[u].push(v);
            parents[v].push(u);
        }
        Ok(ReasoningGraph {
            nodes,
            edges,
            goal_id,
            answer_id,
            index,
            children,
            parents,
        })
    }

    pub fn nodes(&self) -> &[HdagNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[HdagEdge] {
        &self.edges
    }

    pub fn goal_id(&self) -> &NodeId {
        &self.goal_id
    }

    pub fn answer_id(&self) -> Option<&NodeId> {
        self.answer_id.as_ref()
    }

    pub fn node(&self, id: &NodeId) -> Option<&HdagNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    /// Checks acyclicity, level ordering along edges, reachability from the
    /// goal and the leaf-level rule. An empty report means the graph is
    /// well formed.
    ///
    /// Level ordering is non-strict: edges between nodes on the same level
    /// (sibling `validates` or `contradicts` links) are admitted.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        if let Err(rest) = kahn_order(self) {
            let mut nodes: Vec<NodeId> = nodes_on_cycles(self, &rest)
                .into_iter()
                .map(|i| self.nodes[i].id.clone())
                .collect();
            nodes.sort();
            out.push(Violation::Cycle { nodes });
        }

        for e in &self.edges {
            let (u, v) = (
                &self.nodes[self.index[&e.from]],
                &self.nodes[self.index[&e.to]],
            );
            if u.level.index() > v.level.index() {
                out.push(Violation::LevelOrder {
                    from: u.id.clone(),
                    to: v.id.clone(),
                    from_level: u.level,
                    to_level: v.level,
                });
            }
        }

        let goal = self.index[&self.goal_id];
        let mut reached = super::descendant_indices(self, goal);
        reached.insert(goal);
        let mut unreachable: Vec<&NodeId> = (0..self.nodes.len())
            .filter(|i| !reached.contains(i))
            .map(|i| &self.nodes[i].id)
            .collect();
        unreachable.sort();
        out.extend(
            unreachable
                .into_iter()
                .map(|n| Violation::Unreachable { node: n.clone() }),
        );

        let mut bad_leaves: Vec<&HdagNode> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| {
                self.children[*i].is_empty() && !matches!(n.level, Level::Step | Level::Operation)
            })
            .map(|(_, n)| n)
            .collect();
        bad_leaves.sort_by(|a, b| a.id.cmp(&b.id));
        out.extend(bad_leaves.into_iter().map(|n| Violation::LeafLevel {
            node: n.id.clone(),
            level: n.level,
        }));
        out
    }

    /// In-neighbours of `id` joined by an edge of one of `kinds`.
    pub fn parents_by_kind(&self, id: &NodeId, kinds: &[EdgeKind]) -> Vec<&NodeId> {
        self.edges
            .iter()
            .filter(|e| &e.to == id && kinds.contains(&e.kind))
            .map(|e| &e.from)
            .collect()
    }

    /// Longest edge-count distance from the goal, for nodes reachable from it.
    pub fn depths(&self) -> BTreeMap<NodeId, usize> {
        let mut depth = BTreeMap::new();
        let Ok(order) = kahn_order(self) else {
            return depth;
        };
        let goal = self.index[&self.goal_id];
        let mut dist: Vec<Option<usize>> = alloc::vec![None; self.nodes.len()];
        dist[goal] = Some(0);
        for i in order {
            if let Some(d) = dist[i] {
                for &c in &self.children[i] {
                    dist[c] = Some(dist[c].map_or(d + 1, |x: usize| x.max(d + 1)));
                }
            }
        }
        for (i, d) in dist.into_iter().enumerate() {
            if let Some(d) = d {
                depth.insert(self.nodes[i].id.clone(), d);
            }
        }
        depth
    }
}

impl Topology for ReasoningGraph {
    type Key = NodeId;

    fn node_count(&self) -> usize {
        self.nodes.len()
    }
    fn key(&self, idx: usize) -> &NodeId {
        &self.nodes[idx].id
    }
    fn index_of(&self, key: &NodeId) -> Option<usize> {
        self.index.get(key).copied()
    }
    fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }
    fn parents(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }
}

impl TryFrom<ReasoningGraphDoc> for ReasoningGraph {
    type Error = GraphError;

    fn try_from(doc: ReasoningGraphDoc) -> Result<Self, Self::Error> {
        if doc.v != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::SchemaVersion(doc.v));
        }
        ReasoningGraph::new(doc.nodes, doc.edges, doc.goal_id, doc.answer_id)
    }
}

impl From<ReasoningGraph> for ReasoningGraphDoc {
    fn from(g: ReasoningGraph) -> Self {
        ReasoningGraphDoc {
            v: GRAPH_SCHEMA_VERSION,
            goal_id: g.goal_id,
            answer_id: g.answer_id,
            nodes: g.nodes,
            edges: g.edges,
        }
    }
}
