//! Small hand-built graphs shared by tests, examples and the command line.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::graph::{
    assign_tier, CigEdge, CigNode, Difficulty, EdgeKind, HdagEdge, HdagNode, InteractionGraph,
    Level, NodeId, NodeKey, ReasoningGraph, Role, Status,
};
use crate::Digest;

pub fn hdag_node(id: &str, level: Level, difficulty: Difficulty, domain: &str) -> HdagNode {
    let mut n = HdagNode {
        id: NodeId::from(id),
        level,
        difficulty,
        domain: domain.to_string(),
        content_hash: Digest::hash(id.as_bytes()),
        tier: crate::graph::Tier::Llm,
        high_stakes: false,
    };
    n.tier = assign_tier(&n);
    n
}

pub fn hdag_edge(from: &str, to: &str, kind: EdgeKind) -> HdagEdge {
    HdagEdge {
        from: from.into(),
        to: to.into(),
        kind,
    }
}

/// Eleven-node decomposition of `∫ x² eˣ dx` by two rounds of integration by
/// parts: goal `v0`, strategy `v1`, tactics `v2`/`v3`, steps `v4`–`v7` and
/// operations `v8`–`v10`. `v9` combines the partial results into the answer;
/// `v10` checks it by differentiation.
pub fn integration_hdag() -> ReasoningGraph {
    use Difficulty::*;
    use EdgeKind::*;
    use Level::*;
    let nodes = alloc::vec![
        hdag_node("v0", Goal, Medium, "calculus"),
        hdag_node("v1", Strategy, Medium, "calculus"),
        hdag_node("v2", Tactic, Medium, "calculus"),
        hdag_node("v3", Tactic, Medium, "calculus"),
        hdag_node("v4", Step, Easy, "calculus"),
        hdag_node("v5", Step, Medium, "calculus"),
        hdag_node("v6", Step, Easy, "calculus"),
        hdag_node("v7", Step, Medium, "calculus"),
        hdag_node("v8", Operation, Easy, "algebra"),
        hdag_node("v9", Operation, Easy, "algebra"),
        hdag_node("v10", Operation, Easy, "algebra"),
    ];
    let edges = alloc::vec![
        hdag_edge("v0", "v1", DecomposesTo),
        hdag_edge("v1", "v2", DecomposesTo),
        hdag_edge("v1", "v3", DecomposesTo),
        hdag_edge("v2", "v3", Enables),
        hdag_edge("v2", "v4", DecomposesTo),
        hdag_edge("v2", "v5", DecomposesTo),
        hdag_edge("v3", "v6", DecomposesTo),
        hdag_edge("v3", "v7", DecomposesTo),
        hdag_edge("v4", "v5", DependsOn),
        hdag_edge("v6", "v7", DependsOn),
        hdag_edge("v5", "v7", DependsOn),
        hdag_edge("v7", "v8", DecomposesTo),
        hdag_edge("v5", "v9", DependsOn),
        hdag_edge("v7", "v9", DependsOn),
        hdag_edge("v8", "v9", DependsOn),
        hdag_edge("v9", "v10", Validates),
    ];
    ReasoningGraph::new(nodes, edges, "v0".into(), Some("v9".into()))
        .expect("fixture is well formed")
}

pub fn cig_node(id: &str, round: u32, role: Role, validity_score: f64) -> CigNode {
    CigNode {
        id: String::from(id),
        round,
        role,
        input_hash: Digest::hash_parts(&[b"in:", id.as_bytes()]),
        output_hash: Digest::hash_parts(&[b"out:", id.as_bytes()]),
        validity_score,
        status: Status::Unaudited,
        approved: false,
        error_tag: None,
        similarity_to_prev: None,
    }
}

pub fn cig_edge(from: &str, to: &str, protocol_score: f64, fidelity_score: f64) -> CigEdge {
    CigEdge {
        from: NodeKey::new(from, 0),
        to: NodeKey::new(to, 0),
        protocol_score,
        fidelity_score,
    }
}

/// Planner → Coder → Reviewer → Aggregator with clean hand-offs. The coder
/// produces a bad output (0.3), the reviewer approves it anyway with a
/// confident score, and the aggregator inherits the damage (0.4).
pub fn review_pipeline() -> InteractionGraph {
    let mut reviewer = cig_node("reviewer", 0, Role::Reviewer, 0.9);
    reviewer.approved = true;
    let nodes = alloc::vec![
        cig_node("planner", 0, Role::Planner, 0.9),
        cig_node("coder", 0, Role::Coder, 0.3),
        reviewer,
        cig_node("aggregator", 0, Role::Aggregator, 0.4),
    ];
    let edges: Vec<CigEdge> = [
        ("planner", "coder"),
        ("coder", "reviewer"),
        ("reviewer", "aggregator"),
    ]
    .into_iter()
    .map(|(a, b)| cig_edge(a, b, 1.0, 1.0))
    .collect();
    InteractionGraph::new(nodes, edges).expect("fixture is well formed")
}

/// [`review_pipeline`] with every output fixed.
pub fn healthy_pipeline() -> InteractionGraph {
    let mut g = review_pipeline();
    for id in ["planner", "coder", "reviewer", "aggregator"] {
        g.set_validity(&NodeKey::new(id, 0), 0.95)
            .expect("node exists");
    }
    g
}
