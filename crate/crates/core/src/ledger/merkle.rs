use crate::graph::ReasoningGraph;
use crate::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree over an empty list")]
    EmptyList,
}

pub fn leaf_hash(d: &Digest) -> Digest {
    Digest::hash_parts(&[&[0x00], d.as_bytes()])
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    Digest::hash_parts(&[&[0x01], left.as_bytes(), right.as_bytes()])
}

/// Root over `digests` in order. Leaves and internal nodes carry distinct
/// prefix bytes; a level of odd length pairs its last node with itself.
pub fn merkle_root(digests: &[Digest]) -> Result<Digest, MerkleError> {
    if digests.is_empty() {
        return Err(MerkleError::EmptyList);
    }
    let mut level: alloc::vec::Vec<Digest> = digests.iter().map(leaf_hash).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| node_hash(&pair[0], pair.get(1).unwrap_or(&pair[0])))
            .collect();
    }
    Ok(level[0])
}

/// Root over the content hashes of a graph's nodes, in node order.
pub fn graph_root(g: &ReasoningGraph) -> Result<Digest, MerkleError> {
    let digests: alloc::vec::Vec<Digest> = g.nodes().iter().map(|n| n.content_hash).collect();
    merkle_root(&digests)
}
