use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use super::{check_unit, kahn_order, nodes_on_cycles, GraphError, Topology, GRAPH_SCHEMA_VERSION};
use crate::Digest;

/// One agent state: the agent identifier plus the round it was produced in.
/// Cyclic conversations are unrolled into one key per (agent, round).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeKey {
    pub id: String,
    pub round: u32,
}

impl NodeKey {
    pub fn new(id: impl Into<String>, round: u32) -> Self {
        NodeKey {
            id: id.into(),
            round,
        }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.id, self.round)
    }
}

impl FromStr for NodeKey {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.rsplit_once('#') {
            Some((id, round)) => round
                .parse()
                .map(|round| NodeKey::new(id, round))
                .map_err(|_| GraphError::UnknownNode(s.to_string())),
            None => Ok(NodeKey::new(s, 0)),
        }
    }
}

impl Serialize for NodeKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <alloc::borrow::Cow<'de, str>>::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Planner,
    Coder,
    Reviewer,
    Aggregator,
    Other(String),
}

impl Role {
    pub fn as_str(&self) -> &str {
        match self {
            Role::Planner => "planner",
            Role::Coder => "coder",
            Role::Reviewer => "reviewer",
            Role::Aggregator => "aggregator",
            Role::Other(tag) => tag,
        }
    }
}

impl From<&str> for Role {
    fn from(s: &str) -> Self {
        match s {
            "planner" => Role::Planner,
            "coder" => Role::Coder,
            "reviewer" => Role::Reviewer,
            "aggregator" => Role::Aggregator,
            other => Role::Other(other.to_string()),
        }
    }
}

impl Serialize for Role {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <alloc::borrow::Cow<'de, str>>::deserialize(d)?;
        Ok(Role::from(s.as_ref()))
    }
}

/// Fault classification of a node.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    #[default]
    Unaudited,
    Valid,
    InvalidRoot,
    InvalidCascade,
    Negligent,
}

/// Kind of mistake recorded against a node at ingestion. Drives the choice of
/// repair feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTag {
    Factual,
    Arithmetic,
    Logical,
    Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CigNode {
    /// Agent identifier. Unique together with `round`.
    pub id: String,
    #[serde(default)]
    pub round: u32,
    pub role: Role,
    pub input_hash: Digest,
    pub output_hash: Digest,
    pub validity_score: f64,
    #[serde(default)]
    pub status: Status,
    /// Set on reviewer outputs that signed off on their input.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub approved: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_tag: Option<ErrorTag>,
    /// Similarity of this output to the same agent's previous-round output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity_to_prev: Option<f64>,
}

impl CigNode {
    pub fn key(&self) -> NodeKey {
        NodeKey::new(self.id.clone(), self.round)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CigEdge {
    pub from: NodeKey,
    pub to: NodeKey,
    pub protocol_score: f64,
    pub fidelity_score: f64,
}

/// Agent-level message as it appears in an interaction log.
///
/// Endpoints are resolved against node instances: the sender is the latest
/// instance of `from` at or before the message round, the receiver the
/// earliest instance of `to` at or after it. Explicit `from_round` /
/// `to_round` override the lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEdge {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from_round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_round: Option<u32>,
    pub protocol_score: f64,
    pub fidelity_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionGraphDoc {
    pub v: u32,
    pub nodes: Vec<CigNode>,
    pub edges: Vec<LogEdge>,
}

/// Causal interaction graph over unrolled agent states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InteractionGraphDoc", into = "InteractionGraphDoc")]
pub struct InteractionGraph {
    nodes: Vec<CigNode>,
    edges: Vec<CigEdge>,
    keys: Vec<NodeKey>,
    index: BTreeMap<NodeKey, usize>,
    children: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl InteractionGraph {
    pub fn new(nodes: Vec<CigNode>, edges: Vec<CigEdge>) -> Result<Self, GraphError> {
        let mut index = BTreeMap::new();
        let keys: Vec<NodeKey> = nodes.iter().map(CigNode::key).collect();
        for (i, (n, key)) in nodes.iter().zip(&keys).enumerate() {
            check_unit(key, "validity_score", n.validity_score)?;
            if let Some(s) = n.similarity_to_prev {
                check_unit(key, "similarity_to_prev", s)?;
            }
            if index.insert(key.clone(), i).is_some() {
                return Err(GraphError::DuplicateNode(key.to_string()));
            }
        }
        let mut children = alloc::vec![Vec::new(); nodes.len()];
        let mut parents = alloc::vec![Vec::new(); nodes.len()];
        let mut in_edges = alloc::vec![Vec::new(); nodes.len()];
        for (ei, e) in edges.iter().enumerate() {
            let (Some(&u), Some(&v)) = (index.get(&e.from), index.get(&e.to)) else {
                return Err(GraphError::DanglingEdge {
                    from: e.from.to_string(),
                    to: e.to.to_string(),
                });
            };
            let owner = alloc::format!("{} -> {}", e.from, e.to);
            check_unit(&owner, "protocol_score", e.protocol_score)?;
            check_unit(&owner, "fidelity_score", e.fidelity_score)?;
            if !children[u].contains(&v) {
                children[u].push(v);
                parents[v].push(u);
            }
            in_edges[v].push(ei);
        }
        Ok(InteractionGraph {
            nodes,
            edges,
            keys,
            index,
            children,
            parents,
            in_edges,
        })
    }

    /// Builds a graph from nodes and agent-level messages, unrolling message
    /// endpoints onto per-round node instances.
    pub fn from_log(nodes: Vec<CigNode>, log: Vec<LogEdge>) -> Result<Self, GraphError> {
        let mut rounds: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
        for n in &nodes {
            rounds.entry(n.id.as_str()).or_default().push(n.round);
        }
        for r in rounds.values_mut() {
            r.sort_unstable();
        }
        let lookup = |agent: &str, round: u32, latest_before: bool| -> Result<u32, GraphError> {
            let unresolved = || GraphError::UnresolvedRound {
                agent: agent.to_string(),
                round,
            };
            let rs = rounds
                .get(agent)
                .ok_or_else(|| GraphError::UnknownNode(agent.to_string()))?;
            if latest_before {
                rs.iter()
                    .rev()
                    .find(|&&x| x <= round)
                    .copied()
                    .ok_or_else(unresolved)
            } else {
                rs.iter()
                    .find(|&&x| x >= round)
                    .copied()
                    .ok_or_else(unresolved)
            }
        };
        let mut edges = Vec::with_capacity(log.len());
        for e in log {
            let r = e.round.or(e.to_round).unwrap_or(0);
            let from_round = match e.from_round {
                Some(x) => x,
                None => lookup(&e.from, r, true)?,
            };
            let to_round = match e.to_round {
                Some(x) => x,
                None => lookup(&e.to, r, false)?,
            };
            edges.push(CigEdge {
                from: NodeKey::new(e.from, from_round),
                to: NodeKey::new(e.to, to_round),
                protocol_score: e.protocol_score,
                fidelity_score: e.fidelity_score,
            });
        }
        Self::new(nodes, edges)
    }

    pub fn nodes(&self) -> &[CigNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[CigEdge] {
        &self.edges
    }

    pub fn node(&self, key: &NodeKey) -> Option<&CigNode> {
        self.index.get(key).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, key: &NodeKey) -> bool {
        self.index.contains_key(key)
    }

    /// Edges whose receiver is `key`.
    pub fn incoming_edges(&self, key: &NodeKey) -> impl Iterator<Item = &CigEdge> {
        let list = self
            .index
            .get(key)
            .map(|&i| self.in_edges[i].as_slice())
            .unwrap_or(&[]);
        list.iter().map(move |&ei| &self.edges[ei])
    }

    /// Deterministic topological order, ties broken by ascending key.
    pub fn topo_sort(&self) -> Result<Vec<NodeKey>, GraphError> {
        match kahn_order(self) {
            Ok(order) => Ok(order.into_iter().map(|i| self.keys[i].clone()).collect()),
            Err(rest) => {
                let mut on_cycle: Vec<String> = nodes_on_cycles(self, &rest)
                    .into_iter()
                    .map(|i| self.keys[i].to_string())
                    .collect();
                on_cycle.sort();
                Err(GraphError::Cycle(on_cycle))
            }
        }
    }

    pub fn set_validity(&mut self, key: &NodeKey, score: f64) -> Result<(), GraphError> {
        let i = self.require(key)?;
        check_unit(key, "validity_score", score)?;
        self.nodes[i].validity_score = score;
        Ok(())
    }

    pub fn set_similarity(&mut self, key: &NodeKey, score: Option<f64>) -> Result<(), GraphError> {
        let i = self.require(key)?;
        if let Some(s) = score {
            check_unit(key, "similarity_to_prev", s)?;
        }
        self.nodes[i].similarity_to_prev = score;
        Ok(())
    }

    pub fn set_status(&mut self, key: &NodeKey, status: Status) -> Result<(), GraphError> {
        let i = self.require(key)?;
        self.nodes[i].status = status;
        Ok(())
    }

    /// Overwrites the scores of every edge received by `key`.
    pub fn set_incoming_scores(
        &mut self,
        key: &NodeKey,
        protocol: f64,
        fidelity: f64,
    ) -> Result<(), GraphError> {
        let i = self.require(key)?;
        check_unit(key, "protocol_score", protocol)?;
        check_unit(key, "fidelity_score", fidelity)?;
        for &ei in &self.in_edges[i] {
            self.edges[ei].protocol_score = protocol;
            self.edges[ei].fidelity_score = fidelity;
        }
        Ok(())
    }
}

impl Topology for InteractionGraph {
    type Key = NodeKey;

    fn node_count(&self) -> usize {
        self.nodes.len()
    }
    fn key(&self, idx: usize) -> &NodeKey {
        &self.keys[idx]
    }
    fn index_of(&self, key: &NodeKey) -> Option<usize> {
        self.index.get(key).copied()
    }
    fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }
    fn parents(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }
}

impl TryFrom<InteractionGraphDoc> for InteractionGraph {
    type Error = GraphError;

    fn try_from(doc: InteractionGraphDoc) -> Result<Self, Self::Error> {
        if doc.v != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::SchemaVersion(doc.v));
        }
        InteractionGraph::from_log(doc.nodes, doc.edges)
    }
}

impl From<InteractionGraph> for InteractionGraphDoc {
    fn from(g: InteractionGraph) -> Self {
        let edges = g
            .edges
            .into_iter()
            .map(|e| LogEdge {
                from: e.from.id,
                to: e.to.id,
                round: None,
                from_round: Some(e.from.round),
                to_round: Some(e.to.round),
                protocol_score: e.protocol_score,
                fidelity_score: e.fidelity_score,
            })
            .collect();
        InteractionGraphDoc {
            v: GRAPH_SCHEMA_VERSION,
            nodes: g.nodes,
            edges,
        }
    }
}
