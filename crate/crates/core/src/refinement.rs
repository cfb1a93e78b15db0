//! Surgical repair of an audited interaction graph.
//!
//! A repair round prunes every root cause and negligent reviewer together
//! with everything downstream of them, freezes the remaining valid work, and
//! asks a [`Regenerator`] for new outputs of the pruned nodes in topological
//! order. The loop re-audits after each round.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::attribution::{localize_faults, AuditThresholds, FaultReport};
use crate::graph::{
    descendant_indices, get_descendants, CigEdge, CigNode, ErrorTag, GraphError, InteractionGraph,
    NodeKey, Role, Status, Topology,
};
use crate::Digest;

pub const DEFAULT_MAX_ROUNDS: u32 = 5;
pub const INITIAL_TEMPERATURE: f64 = 0.7;
pub const TEMPERATURE_STEP: f64 = 0.1;

/// Sampling temperature for a repair round.
pub fn temperature(round: u32) -> f64 {
    INITIAL_TEMPERATURE + TEMPERATURE_STEP * f64::from(round)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Corrective,
    Directive,
    Divergence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub kind: FeedbackKind,
    pub template_id: String,
}

impl Feedback {
    fn new(kind: FeedbackKind, template_id: &str) -> Self {
        Feedback {
            kind,
            template_id: template_id.to_string(),
        }
    }
}

/// Picks the feedback strategy for a node about to be regenerated.
/// A looping agent always gets divergence feedback; otherwise the error tag
/// decides, with untagged nodes falling back on their status.
pub fn select_feedback(node: &CigNode, status: Status, stationary: bool) -> Feedback {
    use FeedbackKind::*;
    if stationary {
        return Feedback::new(Divergence, "divergence.loop");
    }
    match (node.error_tag, status) {
        (Some(ErrorTag::Strategy), _) => Feedback::new(Directive, "directive.strategy"),
        (Some(ErrorTag::Factual), _) => Feedback::new(Corrective, "corrective.factual"),
        (Some(ErrorTag::Arithmetic), _) => Feedback::new(Corrective, "corrective.arithmetic"),
        (Some(ErrorTag::Logical), _) => Feedback::new(Corrective, "corrective.logical"),
        (None, Status::Negligent) => Feedback::new(Corrective, "corrective.review"),
        (None, Status::InvalidRoot) => Feedback::new(Corrective, "corrective.root"),
        (None, _) => Feedback::new(Corrective, "corrective.inherited"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairPlan {
    pub round: u32,
    pub temperature: f64,
    pub prune_set: BTreeSet<NodeKey>,
    pub frozen_set: BTreeSet<NodeKey>,
    /// Pruned nodes in topological order.
    pub repair_targets: Vec<NodeKey>,
    pub feedback: BTreeMap<NodeKey, Feedback>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefineError {
    #[error("report has no root causes or negligent nodes")]
    NothingToRepair,
    #[error("error depth {error_depth} outside 1..={max_depth} (tree depth limit {limit})")]
    DepthOutOfRange {
        error_depth: u32,
        max_depth: u32,
        limit: u32,
    },
    #[error("regenerator failed on {node} in round {round}: {message}")]
    RegeneratorFailure {
        round: u32,
        node: NodeKey,
        message: String,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub fn plan_repair(
    g: &InteractionGraph,
    report: &FaultReport,
    round: u32,
) -> Result<RepairPlan, RefineError> {
    let seeds = report.repair_seeds();
    if seeds.is_empty() {
        return Err(RefineError::NothingToRepair);
    }
    let mut prune_set = BTreeSet::new();
    for s in &seeds {
        prune_set.extend(get_descendants(g, s)?);
        prune_set.insert(s.clone());
    }
    let frozen_set = report
        .statuses
        .iter()
        .filter(|(k, s)| **s == Status::Valid && !prune_set.contains(*k))
        .map(|(k, _)| k.clone())
        .collect();
    let repair_targets: Vec<NodeKey> = g
        .topo_sort()?
        .into_iter()
        .filter(|k| prune_set.contains(k))
        .collect();
    let feedback = repair_targets
        .iter()
        .map(|k| {
            let node = g.node(k).expect("target drawn from graph");
            let status = report.status(k).unwrap_or_default();
            let looping = report.stationary_agents.contains(&k.id);
            (k.clone(), select_feedback(node, status, looping))
        })
        .collect();
    Ok(RepairPlan {
        round,
        temperature: temperature(round),
        prune_set,
        frozen_set,
        repair_targets,
        feedback,
    })
}

/// What the regenerator is asked to redo.
#[derive(Debug, Clone, Copy)]
pub struct RepairRequest<'a> {
    pub round: u32,
    pub node: &'a CigNode,
    pub status: Status,
    pub feedback: &'a Feedback,
    pub temperature: f64,
}

/// Scores of a regenerated node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regenerated {
    pub validity_score: f64,
    /// New (protocol, fidelity) scores for every edge the node receives.
    pub incoming: Option<(f64, f64)>,
    pub similarity_to_prev: Option<f64>,
}

impl Regenerated {
    pub fn score(validity_score: f64) -> Self {
        Regenerated {
            validity_score,
            incoming: None,
            similarity_to_prev: None,
        }
    }
}

/// Produces new outputs for pruned nodes. Implemented for closures.
pub trait Regenerator {
    type Error: Display;

    fn regenerate(&mut self, req: &RepairRequest<'_>) -> Result<Regenerated, Self::Error>;
}

impl<F, E> Regenerator for F
where
    F: FnMut(&RepairRequest<'_>) -> Result<Regenerated, E>,
    E: Display,
{
    type Error = E;

    fn regenerate(&mut self, req: &RepairRequest<'_>) -> Result<Regenerated, E> {
        self(req)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AllValid,
    MaxRounds,
    Stationary,
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub report: FaultReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<RepairPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementOutcome {
    pub graph: InteractionGraph,
    pub log: Vec<RoundRecord>,
    pub termination: Termination,
    /// Index of the final audit round.
    pub rounds: u32,
}

/// Audit, prune and regenerate until every node is valid, `max_rounds`
/// repair rounds have run, or a looping agent produces a round with the same
/// status histogram as the one before. Final statuses are written back onto
/// the returned graph.
pub fn run_refinement_loop<R: Regenerator>(
    mut g: InteractionGraph,
    th: &AuditThresholds,
    regenerator: &mut R,
    max_rounds: u32,
) -> Result<RefinementOutcome, RefineError> {
    let mut log: Vec<RoundRecord> = Vec::new();
    let mut round = 0u32;
    loop {
        let report = localize_faults(&g, th)?;
        let stalled = !report.stationary_agents.is_empty()
            && log
                .last()
                .is_some_and(|prev| prev.report.status_histogram() == report.status_histogram());
        let termination = if report.all_valid() {
            Some(Termination::AllValid)
        } else if round >= max_rounds {
            Some(Termination::MaxRounds)
        } else if stalled {
            Some(Termination::Stationary)
        } else {
            None
        };

        if let Some(t) = termination {
            for (k, s) in &report.statuses {
                g.set_status(k, *s)?;
            }
            log.push(RoundRecord {
                round,
                report,
                plan: None,
                termination: Some(t),
            });
            return Ok(RefinementOutcome {
                graph: g,
                log,
                termination: t,
                rounds: round,
            });
        }

        let plan = plan_repair(&g, &report, round)?;
        for key in &plan.repair_targets {
            let node = g.node(key).expect("planned target exists").clone();
            let req = RepairRequest {
                round,
                node: &node,
                status: report.status(key).unwrap_or_default(),
                feedback: &plan.feedback[key],
                temperature: plan.temperature,
            };
            let out =
                regenerator
                    .regenerate(&req)
                    .map_err(|e| RefineError::RegeneratorFailure {
                        round,
                        node: key.clone(),
                        message: e.to_string(),
                    })?;
            g.set_validity(key, out.validity_score)?;
            g.set_similarity(key, out.similarity_to_prev)?;
            if let Some((p, f)) = out.incoming {
                g.set_incoming_scores(key, p, f)?;
            }
        }
        log.push(RoundRecord {
            round,
            report,
            plan: Some(plan),
            termination: None,
        });
        round += 1;
    }
}

/// Digest of the scores and incoming edges of one node. Equal digests across
/// rounds show the node was left untouched.
pub fn node_state_digest(g: &InteractionGraph, key: &NodeKey) -> Option<Digest> {
    let n = g.node(key)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(key.to_string().as_bytes());
    buf.extend_from_slice(&n.validity_score.to_bits().to_le_bytes());
    buf.extend_from_slice(
        &n.similarity_to_prev
            .map_or(u64::MAX, f64::to_bits)
            .to_le_bytes(),
    );
    buf.push(u8::from(n.approved));
    for e in g.incoming_edges(key) {
        buf.extend_from_slice(e.from.to_string().as_bytes());
        buf.extend_from_slice(&e.protocol_score.to_bits().to_le_bytes());
        buf.extend_from_slice(&e.fidelity_score.to_bits().to_le_bytes());
    }
    Some(Digest::hash(&buf))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairCost {
    /// Nodes regenerated by a surgical repair: the failed node and its
    /// descendants.
    pub surgical: usize,
    /// Nodes regenerated by a global retry.
    pub global: usize,
    pub savings: f64,
}

/// Surgical versus global cost of repairing `node`, counted in nodes.
pub fn repair_cost_at(g: &InteractionGraph, node: &NodeKey) -> Result<RepairCost, GraphError> {
    let idx = g.require(node)?;
    let surgical = 1 + descendant_indices(g, idx).len();
    let global = g.node_count();
    Ok(RepairCost {
        surgical,
        global,
        savings: 1.0 - surgical as f64 / global as f64,
    })
}

/// Largest tree depth [`repair_cost`] will build.
pub const MAX_TREE_DEPTH: u32 = 20;

/// Repair cost for an error at depth `error_depth` (root = 1) of a complete
/// binary tree with `max_depth` levels.
pub fn repair_cost(error_depth: u32, max_depth: u32) -> Result<RepairCost, RefineError> {
    if error_depth < 1 || error_depth > max_depth || max_depth > MAX_TREE_DEPTH {
        return Err(RefineError::DepthOutOfRange {
            error_depth,
            max_depth,
            limit: MAX_TREE_DEPTH,
        });
    }
    let tree = complete_binary_tree(max_depth);
    // leftmost node at the given depth, in heap numbering
    let key = NodeKey::new(tree_node_id(1usize << (error_depth - 1)), 0);
    Ok(repair_cost_at(&tree, &key)?)
}

fn tree_node_id(heap_index: usize) -> String {
    format!("t{heap_index}")
}

/// Complete binary tree with `depth` levels (2^depth − 1 nodes) as an
/// interaction graph. Nodes are `t1`…`tN` in heap order, all valid.
pub fn complete_binary_tree(depth: u32) -> InteractionGraph {
    let n = (1usize << depth) - 1;
    let nodes = (1..=n)
        .map(|i| CigNode {
            id: tree_node_id(i),
            round: 0,
            role: Role::Other("worker".to_string()),
            input_hash: Digest::ZERO,
            output_hash: Digest::ZERO,
            validity_score: 1.0,
            status: Status::Unaudited,
            approved: false,
            error_tag: None,
            similarity_to_prev: None,
        })
        .collect();
    let edges = (2..=n)
        .map(|i| CigEdge {
            from: NodeKey::new(tree_node_id(i / 2), 0),
            to: NodeKey::new(tree_node_id(i), 0),
            protocol_score: 1.0,
            fidelity_score: 1.0,
        })
        .collect();
    InteractionGraph::new(nodes, edges).expect("tree is well formed")
}
