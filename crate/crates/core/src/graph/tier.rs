use serde::{Deserialize, Serialize};

use super::{Difficulty, HdagNode, Level};

/// Auditor tier a node is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Computational,
    Llm,
    Human,
}

/// Routes a node to an auditor tier from its level, difficulty and
/// high-stakes flag.
///
/// Operations always go to deterministic checkers. Steps split on difficulty
/// alone. Goal, strategy and tactic nodes go to model auditors unless they are
/// hard or flagged high-stakes.
pub fn assign_tier(node: &HdagNode) -> Tier {
    match (node.level, node.difficulty) {
        (Level::Operation, _) => Tier::Computational,
        (Level::Step, Difficulty::Hard) => Tier::Human,
        (Level::Step, _) => Tier::Llm,
        (Level::Goal | Level::Strategy | Level::Tactic, Difficulty::Hard) => Tier::Human,
        (Level::Goal | Level::Strategy | Level::Tactic, _) if node.high_stakes => Tier::Human,
        (Level::Goal | Level::Strategy | Level::Tactic, _) => Tier::Llm,
    }
}
