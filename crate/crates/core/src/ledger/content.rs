//! Per-node access control over sealed content.
//!
//! Every node's content is sealed under its own key token. A seat auditing a
//! node is handed the tokens for that node and its immediate parents, so no
//! seat sees more context than it needs. Sealing is modelled as possession
//! gating: opening a blob requires holding the token of its node.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::SeatId;
use crate::graph::{NodeId, ReasoningGraph, Topology};
use crate::Digest;

pub type KeyToken = Digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Sealed {
    node: NodeId,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContentError {
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("no blob with id {0}")]
    UnknownBlob(Digest),
    #[error("seat {seat} holds no key for node `{node}`")]
    AccessDenied { seat: SeatId, node: NodeId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentStore {
    secret: Digest,
    blobs: BTreeMap<Digest, Sealed>,
    node_keys: BTreeMap<NodeId, KeyToken>,
    /// Nodes each seat was granted directly.
    grants: BTreeMap<SeatId, BTreeSet<NodeId>>,
    held: BTreeMap<SeatId, BTreeSet<KeyToken>>,
}

impl ContentStore {
    pub fn new(secret: Digest) -> Self {
        ContentStore {
            secret,
            blobs: BTreeMap::new(),
            node_keys: BTreeMap::new(),
            grants: BTreeMap::new(),
            held: BTreeMap::new(),
        }
    }

    fn key_for(&mut self, node: &NodeId) -> KeyToken {
        let secret = self.secret;
        *self.node_keys.entry(node.clone()).or_insert_with(|| {
            Digest::hash_parts(&[b"node-key", secret.as_bytes(), node.as_str().as_bytes()])
        })
    }

    /// Stores `bytes` as the content of `node` and returns the content id.
    pub fn seal(&mut self, node: &NodeId, bytes: &[u8]) -> Digest {
        self.key_for(node);
        let id = Digest::hash_parts(&[node.as_str().as_bytes(), &[0], bytes]);
        self.blobs.insert(
            id,
            Sealed {
                node: node.clone(),
                bytes: bytes.to_vec(),
            },
        );
        id
    }

    /// Hands `seat` the keys of `node` and its immediate parents and returns
    /// exactly those keys.
    pub fn grant_access(
        &mut self,
        seat: SeatId,
        node: &NodeId,
        g: &ReasoningGraph,
    ) -> Result<BTreeSet<KeyToken>, ContentError> {
        let idx = g
            .index_of(node)
            .ok_or_else(|| ContentError::UnknownNode(node.clone()))?;
        let scope: Vec<NodeId> = core::iter::once(idx)
            .chain(g.parents(idx).iter().copied())
            .map(|i| g.key(i).clone())
            .collect();
        let keys: BTreeSet<KeyToken> = scope.iter().map(|n| self.key_for(n)).collect();
        self.grants.entry(seat).or_default().insert(node.clone());
        self.held
            .entry(seat)
            .or_default()
            .extend(keys.iter().copied());
        Ok(keys)
    }

    pub fn granted_nodes(&self, seat: SeatId) -> BTreeSet<NodeId> {
        self.grants.get(&seat).cloned().unwrap_or_default()
    }

    fn holds(&self, seat: SeatId, node: &NodeId) -> bool {
        match (self.held.get(&seat), self.node_keys.get(node)) {
            (Some(held), Some(k)) => held.contains(k),
            _ => false,
        }
    }

    pub fn open(&self, seat: SeatId, id: &Digest) -> Result<&[u8], ContentError> {
        let blob = self.blobs.get(id).ok_or(ContentError::UnknownBlob(*id))?;
        if !self.holds(seat, &blob.node) {
            return Err(ContentError::AccessDenied {
                seat,
                node: blob.node.clone(),
            });
        }
        Ok(&blob.bytes)
    }

    /// Nodes whose content `seat` can open.
    pub fn openable_nodes(&self, seat: SeatId) -> BTreeSet<NodeId> {
        self.node_keys
            .keys()
            .filter(|n| self.holds(seat, n))
            .cloned()
            .collect()
    }

    /// Whether `seat` can open every node of `g`.
    pub fn can_reconstruct(&self, seat: SeatId, g: &ReasoningGraph) -> bool {
        g.nodes().iter().all(|n| self.holds(seat, &n.id))
    }
}
