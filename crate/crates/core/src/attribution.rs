//! Dual-layer audit of interaction graphs and trace-level validity of
//! reasoning graphs.
//!
//! [`localize_faults`] walks an [`InteractionGraph`] in topological order so a
//! node's parents are always classified before the node itself. Each node is
//! then put in exactly one [`Status`]:
//!
//! | condition (first match wins)                         | status            |
//! |------------------------------------------------------|-------------------|
//! | an incoming edge scores below `tau_edge`             | `InvalidRoot`     |
//! | score ≥ `tau_node`, approving reviewer, bad parent   | `Negligent`       |
//! | score ≥ `tau_node`                                   | `Valid`           |
//! | score < `tau_node`, some parent not `Valid`          | `InvalidCascade`  |
//! | score < `tau_node`, all parents `Valid`              | `InvalidRoot`     |

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::graph::{
    EdgeKind, GraphError, InteractionGraph, Level, NodeId, NodeKey, ReasoningGraph, Role, Status,
    Topology,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditThresholds {
    pub tau_node: f64,
    pub tau_edge: f64,
    pub tau_stat: f64,
}

impl Default for AuditThresholds {
    fn default() -> Self {
        AuditThresholds {
            tau_node: 0.8,
            tau_edge: 0.8,
            tau_stat: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("threshold `{name}` = {value} must lie in (0, 1]")]
pub struct ThresholdError {
    pub name: &'static str,
    pub value: f64,
}

impl AuditThresholds {
    pub fn new(tau_node: f64, tau_edge: f64, tau_stat: f64) -> Result<Self, ThresholdError> {
        let th = AuditThresholds {
            tau_node,
            tau_edge,
            tau_stat,
        };
        th.check()?;
        Ok(th)
    }

    pub fn check(&self) -> Result<(), ThresholdError> {
        for (name, value) in [
            ("tau_node", self.tau_node),
            ("tau_edge", self.tau_edge),
            ("tau_stat", self.tau_stat),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ThresholdError { name, value });
            }
        }
        Ok(())
    }
}

/// An incoming edge that failed the protocol or fidelity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeBreach {
    pub from: NodeKey,
    pub to: NodeKey,
    pub protocol_score: f64,
    pub fidelity_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultReport {
    pub statuses: BTreeMap<NodeKey, Status>,
    pub root_causes: BTreeSet<NodeKey>,
    pub cascades: BTreeSet<NodeKey>,
    pub negligent: BTreeSet<NodeKey>,
    pub stationary_agents: BTreeSet<String>,
    /// Edges whose failure put their receiver in `root_causes`.
    pub edge_breaches: Vec<EdgeBreach>,
    /// Approving reviewers that scored below `tau_node` under an invalid
    /// parent. They are labelled `InvalidCascade`; the flag records that the
    /// negligence branch was skipped.
    pub ambiguous_reviewers: BTreeSet<NodeKey>,
}

impl FaultReport {
    pub fn all_valid(&self) -> bool {
        self.statuses.values().all(|s| *s == Status::Valid)
    }

    pub fn status(&self, key: &NodeKey) -> Option<Status> {
        self.statuses.get(key).copied()
    }

    /// Nodes that need repair: root causes and negligent reviewers.
    pub fn repair_seeds(&self) -> BTreeSet<NodeKey> {
        self.root_causes.union(&self.negligent).cloned().collect()
    }

    /// Count of nodes per status, used to detect rounds without progress.
    pub fn status_histogram(&self) -> BTreeMap<Status, usize> {
        let mut h = BTreeMap::new();
        for s in self.statuses.values() {
            *h.entry(*s).or_insert(0) += 1;
        }
        h
    }
}

/// Classifies every node of `g`. See the module docs for the case table.
pub fn localize_faults(
    g: &InteractionGraph,
    th: &AuditThresholds,
) -> Result<FaultReport, GraphError> {
    localize_faults_observed(g, th, |_, _| {})
}

/// [`localize_faults`] with a callback invoked as each node is classified, in
/// classification order.
pub fn localize_faults_observed(
    g: &InteractionGraph,
    th: &AuditThresholds,
    mut observe: impl FnMut(&NodeKey, Status),
) -> Result<FaultReport, GraphError> {
    let order = g.topo_sort()?;
    let mut report = FaultReport::default();

    for key in order {
        let idx = g.require(&key)?;
        let node = &g.nodes()[idx];
        let propagated = g
            .parents(idx)
            .iter()
            .any(|&p| report.statuses.get(g.key(p)) != Some(&Status::Valid));

        let breaches: Vec<EdgeBreach> = g
            .incoming_edges(&key)
            .filter(|e| e.protocol_score < th.tau_edge || e.fidelity_score < th.tau_edge)
            .map(|e| EdgeBreach {
                from: e.from.clone(),
                to: e.to.clone(),
                protocol_score: e.protocol_score,
                fidelity_score: e.fidelity_score,
            })
            .collect();

        let approving_reviewer = node.role == Role::Reviewer && node.approved;
        let status = if !breaches.is_empty() {
            report.edge_breaches.extend(breaches);
            Status::InvalidRoot
        } else if node.validity_score >= th.tau_node {
            if approving_reviewer && propagated {
                Status::Negligent
            } else {
                Status::Valid
            }
        } else if propagated {
            if approving_reviewer {
                report.ambiguous_reviewers.insert(key.clone());
            }
            Status::InvalidCascade
        } else {
            Status::InvalidRoot
        };

        match status {
            Status::InvalidRoot => report.root_causes.insert(key.clone()),
            Status::InvalidCascade => report.cascades.insert(key.clone()),
            Status::Negligent => report.negligent.insert(key.clone()),
            _ => false,
        };
        observe(&key, status);
        report.statuses.insert(key, status);
    }

    report.stationary_agents = detect_stationarity(g, th);
    Ok(report)
}

/// Agents with an output at least `tau_stat` similar to the same agent's
/// previous output. The similarity is carried on the later output, whether
/// that is a later round of a cyclic conversation or a regenerated node.
pub fn detect_stationarity(g: &InteractionGraph, th: &AuditThresholds) -> BTreeSet<String> {
    g.nodes()
        .iter()
        .filter(|n| n.similarity_to_prev.is_some_and(|s| s >= th.tau_stat))
        .map(|n| n.id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("no verdict for node `{0}`")]
    MissingVerdict(NodeId),
    #[error("no answer node is marked and no operation node has a validates in-edge")]
    NoAnswerNode,
}

/// One violated trace-validity condition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum TraceFailure {
    CriticalPath { failed: Vec<NodeId> },
    Contradiction { from: NodeId, to: NodeId },
    UnresolvedRoot { nodes: Vec<NodeId> },
}

impl fmt::Display for TraceFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceFailure::CriticalPath { failed } => {
                write!(f, "critical path:")?;
                for n in failed {
                    write!(f, " {n}")?;
                }
                Ok(())
            }
            TraceFailure::Contradiction { from, to } => {
                write!(f, "unresolved contradiction: {from} -> {to}")
            }
            TraceFailure::UnresolvedRoot { nodes } => {
                write!(f, "root causes remain after refinement:")?;
                for n in nodes {
                    write!(f, " {n}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceVerdict {
    pub valid: bool,
    pub answer: NodeId,
    pub critical_path: BTreeSet<NodeId>,
    pub reasons: Vec<TraceFailure>,
}

/// The node holding the final answer: the marked answer node, or else the
/// deepest operation-level node with a `validates` in-edge (ties broken by
/// ascending id).
pub fn answer_node(g: &ReasoningGraph) -> Result<NodeId, TraceError> {
    if let Some(a) = g.answer_id() {
        return Ok(a.clone());
    }
    let depths = g.depths();
    g.nodes()
        .iter()
        .filter(|n| n.level == Level::Operation)
        .filter(|n| !g.parents_by_kind(&n.id, &[EdgeKind::Validates]).is_empty())
        .map(|n| (depths.get(&n.id).copied().unwrap_or(0), &n.id))
        // deepest first, then smallest id
        .min_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, id)| id.clone())
        .ok_or(TraceError::NoAnswerNode)
}

/// The answer node together with every node it transitively rests on through
/// `decomposes_to`, `depends_on` or `validates` edges.
pub fn critical_path(g: &ReasoningGraph) -> Result<BTreeSet<NodeId>, TraceError> {
    const STRUCTURAL: [EdgeKind; 3] = [
        EdgeKind::DecomposesTo,
        EdgeKind::DependsOn,
        EdgeKind::Validates,
    ];
    let answer = answer_node(g)?;
    let mut path = BTreeSet::new();
    let mut stack = alloc::vec![answer];
    while let Some(n) = stack.pop() {
        if path.insert(n.clone()) {
            stack.extend(g.parents_by_kind(&n, &STRUCTURAL).into_iter().cloned());
        }
    }
    Ok(path)
}

/// Trace validity with no refinement bookkeeping.
pub fn trace_validity(
    g: &ReasoningGraph,
    verdicts: &BTreeMap<NodeId, bool>,
) -> Result<TraceVerdict, TraceError> {
    trace_validity_with_roots(g, verdicts, &BTreeSet::new())
}

/// A trace is valid iff every critical-path node passes, no `contradicts`
/// edge joins two passing nodes, and `remaining_roots` (root causes still
/// open after refinement) is empty.
pub fn trace_validity_with_roots(
    g: &ReasoningGraph,
    verdicts: &BTreeMap<NodeId, bool>,
    remaining_roots: &BTreeSet<NodeId>,
) -> Result<TraceVerdict, TraceError> {
    for n in g.nodes() {
        if !verdicts.contains_key(&n.id) {
            return Err(TraceError::MissingVerdict(n.id.clone()));
        }
    }
    let answer = answer_node(g)?;
    let path = critical_path(g)?;
    let mut reasons = Vec::new();

    let failed: Vec<NodeId> = path.iter().filter(|n| !verdicts[*n]).cloned().collect();
    if !failed.is_empty() {
        reasons.push(TraceFailure::CriticalPath { failed });
    }
    for e in g.edges().iter().filter(|e| e.kind == EdgeKind::Contradicts) {
        if verdicts[&e.from] && verdicts[&e.to] {
            reasons.push(TraceFailure::Contradiction {
                from: e.from.clone(),
                to: e.to.clone(),
            });
        }
    }
    if !remaining_roots.is_empty() {
        reasons.push(TraceFailure::UnresolvedRoot {
            nodes: remaining_roots.iter().cloned().collect(),
        });
    }

    Ok(TraceVerdict {
        valid: reasons.is_empty(),
        answer,
        critical_path: path,
        reasons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{
        cig_edge, cig_node, healthy_pipeline, integration_hdag, review_pipeline,
    };
    use crate::graph::CigNode;

    fn k(id: &str) -> NodeKey {
        NodeKey::new(id, 0)
    }

    #[test]
    fn review_pipeline_statuses() {
        let r = localize_faults(&review_pipeline(), &AuditThresholds::default()).unwrap();
        assert_eq!(r.status(&k("planner")), Some(Status::Valid));
        assert_eq!(r.status(&k("coder")), Some(Status::InvalidRoot));
        assert_eq!(r.status(&k("reviewer")), Some(Status::Negligent));
        assert_eq!(r.status(&k("aggregator")), Some(Status::InvalidCascade));
        assert_eq!(r.root_causes, [k("coder")].into());
        assert!(r.edge_breaches.is_empty() && r.ambiguous_reviewers.is_empty());
    }

    #[test]
    fn clean_pipeline_is_all_valid() {
        let r = localize_faults(&healthy_pipeline(), &AuditThresholds::default()).unwrap();
        assert!(r.all_valid());
        assert!(r.repair_seeds().is_empty());
    }

    #[test]
    fn protocol_breach_roots_the_receiver() {
        let nodes = alloc::vec![
            cig_node("a", 0, Role::Planner, 1.0),
            cig_node("b", 0, Role::Coder, 1.0)
        ];
        let g = InteractionGraph::new(nodes, alloc::vec![cig_edge("a", "b", 0.5, 1.0)]).unwrap();
        let r = localize_faults(&g, &AuditThresholds::default()).unwrap();
        assert_eq!(r.status(&k("b")), Some(Status::InvalidRoot));
        assert_eq!(r.edge_breaches.len(), 1);
        assert_eq!(r.edge_breaches[0].from, k("a"));
    }

    #[test]
    fn failing_approving_reviewer_is_cascade_and_flagged() {
        let mut g = review_pipeline();
        g.set_validity(&k("reviewer"), 0.5).unwrap();
        let r = localize_faults(&g, &AuditThresholds::default()).unwrap();
        assert_eq!(r.status(&k("reviewer")), Some(Status::InvalidCascade));
        assert_eq!(r.ambiguous_reviewers, [k("reviewer")].into());
    }

    #[test]
    fn stationarity_scan() {
        let th = AuditThresholds::default();
        let mk = |sims: &[Option<f64>]| {
            let nodes = sims
                .iter()
                .zip(0u32..)
                .map(|(s, r)| CigNode {
                    similarity_to_prev: *s,
                    ..cig_node("a", r, Role::Coder, 1.0)
                })
                .collect();
            InteractionGraph::new(nodes, Vec::new()).unwrap()
        };
        assert_eq!(
            detect_stationarity(&mk(&[None, Some(0.97)]), &th),
            ["a".into()].into()
        );
        assert!(detect_stationarity(&mk(&[None, Some(0.90)]), &th).is_empty());
        assert_eq!(
            detect_stationarity(&mk(&[None, Some(0.80), Some(0.96)]), &th),
            ["a".into()].into()
        );
        assert!(detect_stationarity(&mk(&[None, None]), &th).is_empty());
    }

    #[test]
    fn thresholds_are_range_checked() {
        assert!(AuditThresholds::new(0.8, 0.8, 0.95).is_ok());
        assert_eq!(
            AuditThresholds::new(0.0, 0.8, 0.95).unwrap_err().name,
            "tau_node"
        );
        assert_eq!(
            AuditThresholds::new(0.8, 1.2, 0.95).unwrap_err().name,
            "tau_edge"
        );
    }

    fn verdicts(g: &ReasoningGraph, failing: &[&str]) -> BTreeMap<NodeId, bool> {
        g.nodes()
            .iter()
            .map(|n| (n.id.clone(), !failing.contains(&n.id.as_str())))
            .collect()
    }

    #[test]
    fn trace_validity_conditions() {
        let g = integration_hdag();
        assert!(trace_validity(&g, &verdicts(&g, &[])).unwrap().valid);

        let bad = trace_validity(&g, &verdicts(&g, &["v5"])).unwrap();
        assert!(!bad.valid);
        assert!(bad.reasons[0].to_string().starts_with("critical path"));

        let off_path = trace_validity(&g, &verdicts(&g, &["v10"])).unwrap();
        assert!(off_path.valid);
        assert!(!off_path.critical_path.contains(&NodeId::from("v10")));

        let mut v = verdicts(&g, &[]);
        v.remove(&NodeId::from("v3"));
        assert_eq!(
            trace_validity(&g, &v),
            Err(TraceError::MissingVerdict("v3".into()))
        );

        let roots: BTreeSet<NodeId> = [NodeId::from("v4")].into();
        let open = trace_validity_with_roots(&g, &verdicts(&g, &[]), &roots).unwrap();
        assert!(matches!(
            open.reasons.as_slice(),
            [TraceFailure::UnresolvedRoot { .. }]
        ));
    }

    #[test]
    fn contradiction_between_passing_nodes_fails() {
        let base = integration_hdag();
        let mut edges = base.edges().to_vec();
        edges.push(crate::fixtures::hdag_edge(
            "v4",
            "v6",
            EdgeKind::Contradicts,
        ));
        let g = ReasoningGraph::new(base.nodes().to_vec(), edges, "v0".into(), Some("v9".into()))
            .unwrap();
        let all = trace_validity(&g, &verdicts(&g, &[])).unwrap();
        assert_eq!(
            all.reasons,
            [TraceFailure::Contradiction {
                from: "v4".into(),
                to: "v6".into()
            }]
        );
        // once one side fails the contradiction is resolved, but v6 is on the path
        let resolved = trace_validity(&g, &verdicts(&g, &["v6"])).unwrap();
        assert!(matches!(
            resolved.reasons.as_slice(),
            [TraceFailure::CriticalPath { .. }]
        ));
    }

    #[test]
    fn answer_falls_back_to_deepest_validated_operation() {
        let base = integration_hdag();
        let g = ReasoningGraph::new(
            base.nodes().to_vec(),
            base.edges().to_vec(),
            "v0".into(),
            None,
        )
        .unwrap();
        assert_eq!(answer_node(&g).unwrap(), NodeId::from("v10"));
        let no_validates: Vec<_> = base
            .edges()
            .iter()
            .filter(|e| e.kind != EdgeKind::Validates)
            .cloned()
            .collect();
        let g =
            ReasoningGraph::new(base.nodes().to_vec(), no_validates, "v0".into(), None).unwrap();
        assert_eq!(answer_node(&g), Err(TraceError::NoAnswerNode));
    }
}
