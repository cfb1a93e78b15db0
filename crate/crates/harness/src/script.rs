//! JSON-lines scripts driving the audit ledger, one action per line:
//!
//! ```text
//! {"action": "register", "seat": 1, "args": {"tier": "human", "stake": 3.0}}
//! {"action": "create", "args": {"graph": "trace.json", "segments": [{"node": "v9", "tier": "human", "k": 2}]}}
//! {"action": "commit", "session": 0, "segment": 0, "seat": 1, "args": {"vote": true, "salt": "s1"}}
//! {"action": "close", "session": 0, "segment": 0}
//! {"action": "reveal", "session": 0, "segment": 0, "seat": 1, "args": {"vote": true, "salt": "s1"}}
//! {"action": "finalize_segment", "session": 0, "segment": 0, "args": {"tau": 0.66}}
//! {"action": "finalize_trace", "session": 0}
//! {"action": "settle", "session": 0}
//! ```
//!
//! Salts are arbitrary strings, hashed to 32 bytes. Graph paths are relative
//! to the script.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use audit_core::economics::EconomicParams;
use audit_core::graph::{GraphError, ReasoningGraph, ReasoningGraphDoc, Tier};
use audit_core::ledger::{
    commitment, graph_root, AuditSession, Event, Ledger, LedgerError, MerkleError, SeatId,
    SeatRecord, SegmentRequest, SessionId, SessionStatus,
};
use audit_core::Digest;

use crate::formats::{read_json, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Register,
    SetAvailable,
    Create,
    Commit,
    Close,
    Reveal,
    FinalizeSegment,
    FinalizeTrace,
    Settle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptLine {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seat: Option<SeatId>,
    #[serde(default)]
    pub args: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterArgs {
    tier: Tier,
    stake: f64,
    #[serde(default)]
    malicious: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AvailableArgs {
    available: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateArgs {
    graph: PathBuf,
    segments: Vec<SegmentRequest>,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum CommitArgs {
    Plain { vote: bool, salt: String },
    Sealed { commitment: Digest },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RevealArgs {
    vote: bool,
    salt: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TauArgs {
    tau: f64,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SettleArgs {
    #[serde(default)]
    econ: Option<EconomicParams>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("action {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("action {line}: graph {path}: {source}")]
    Graph {
        line: usize,
        path: PathBuf,
        source: GraphError,
    },
    #[error("action {line}: graph {path}: {source}")]
    Merkle {
        line: usize,
        path: PathBuf,
        source: MerkleError,
    },
    #[error("action {line}: {source}")]
    Rejected { line: usize, source: LedgerError },
}

impl ScriptError {
    /// Malformed input is a configuration problem; everything else is a
    /// well-formed request the graph or ledger refused.
    pub fn is_config(&self) -> bool {
        matches!(self, ScriptError::Format(_) | ScriptError::Malformed { .. })
    }
}

pub fn salt(s: &str) -> Digest {
    Digest::hash_parts(&[b"salt:", s.as_bytes()])
}

pub fn session_seed(seed: u64) -> Digest {
    Digest::hash_parts(&[b"session-seed", &seed.to_be_bytes()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session: SessionId,
    pub status: SessionStatus,
    pub trace_valid: Option<bool>,
    pub settled: bool,
    pub payouts: BTreeMap<SeatId, f64>,
    pub events: usize,
    pub state_digest: Digest,
    /// Digest of the session rebuilt from its own event log.
    pub replay_digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptOutcome {
    pub seats: Vec<SeatRecord>,
    pub sessions: Vec<SessionSummary>,
    /// Every event in the order it was emitted.
    #[serde(skip)]
    pub events: Vec<Event>,
    /// Graph files read, in order.
    #[serde(skip)]
    pub inputs: Vec<PathBuf>,
}

impl ScriptOutcome {
    pub fn replay_consistent(&self) -> bool {
        self.sessions
            .iter()
            .all(|s| s.state_digest == s.replay_digest)
    }
}

struct Runner<'a> {
    base: &'a Path,
    default_seed: u64,
    ledger: Ledger,
    graphs: BTreeMap<SessionId, ReasoningGraph>,
    events: Vec<Event>,
    inputs: Vec<PathBuf>,
}

fn args<T: DeserializeOwned>(line: usize, v: &Value) -> Result<T, ScriptError> {
    let v = if v.is_null() {
        Value::Object(Default::default())
    } else {
        v.clone()
    };
    serde_json::from_value(v).map_err(|e| ScriptError::Malformed {
        line,
        message: format!("args: {e}"),
    })
}

fn need<T: Copy>(line: usize, field: &str, v: Option<T>) -> Result<T, ScriptError> {
    v.ok_or_else(|| ScriptError::Malformed {
        line,
        message: format!("missing `{field}`"),
    })
}

impl Runner<'_> {
    fn step(&mut self, line: usize, s: &ScriptLine) -> Result<(), ScriptError> {
        let rejected = |source| ScriptError::Rejected { line, source };
        let session = || need(line, "session", s.session);
        let segment = || need(line, "segment", s.segment);
        let seat = || need(line, "seat", s.seat);
        match s.action {
            Action::Register => {
                let a: RegisterArgs = args(line, &s.args)?;
                self.ledger
                    .register_seat(seat()?, a.tier, a.stake, a.malicious)
                    .map_err(rejected)?;
            }
            Action::SetAvailable => {
                let a: AvailableArgs = args(line, &s.args)?;
                self.ledger
                    .set_available(seat()?, a.available)
                    .map_err(rejected)?;
            }
            Action::Create => {
                let a: CreateArgs = args(line, &s.args)?;
                let path = self.base.join(&a.graph);
                let doc: ReasoningGraphDoc = read_json(&path)?;
                let g = ReasoningGraph::try_from(doc).map_err(|source| ScriptError::Graph {
                    line,
                    path: path.clone(),
                    source,
                })?;
                let root = graph_root(&g).map_err(|source| ScriptError::Merkle {
                    line,
                    path: path.clone(),
                    source,
                })?;
                self.inputs.push(path);
                let seed = session_seed(a.seed.unwrap_or(self.default_seed));
                let id = self
                    .ledger
                    .create_session(root, &a.segments, seed)
                    .map_err(rejected)?;
                self.graphs.insert(id, g);
                self.collect(id, |_| true);
            }
            Action::Commit => {
                let c = match args(line, &s.args)? {
                    CommitArgs::Plain { vote, salt: x } => commitment(vote, &salt(&x)),
                    CommitArgs::Sealed { commitment } => commitment,
                };
                let e = self
                    .ledger
                    .commit_vote(session()?, segment()?, seat()?, c)
                    .map_err(rejected)?;
                self.events.push(e);
            }
            Action::Close => {
                let e = self
                    .ledger
                    .close_commit(session()?, segment()?)
                    .map_err(rejected)?;
                self.events.push(e);
            }
            Action::Reveal => {
                let a: RevealArgs = args(line, &s.args)?;
                let e = self
                    .ledger
                    .reveal_vote(session()?, segment()?, seat()?, a.vote, salt(&a.salt))
                    .map_err(rejected)?;
                self.events.push(e);
            }
            Action::FinalizeSegment => {
                let a: TauArgs = args(line, &s.args)?;
                let id = session()?;
                let before = self.ledger.session(id).map_err(rejected)?.events.len();
                self.ledger
                    .finalize_segment(id, segment()?, a.tau)
                    .map_err(rejected)?;
                self.collect(id, |seq| seq >= before);
            }
            Action::FinalizeTrace => {
                let id = session()?;
                let g = self
                    .graphs
                    .get(&id)
                    .ok_or(LedgerError::UnknownSession(id))
                    .map_err(rejected)?;
                let before = self.ledger.session(id).map_err(rejected)?.events.len();
                self.ledger.finalize_trace(id, g).map_err(rejected)?;
                self.collect(id, |seq| seq >= before);
            }
            Action::Settle => {
                let a: SettleArgs = args(line, &s.args)?;
                let ep = a.econ.unwrap_or_else(EconomicParams::calibration);
                let events = self.ledger.settle(session()?, &ep).map_err(rejected)?;
                self.events.extend(events);
            }
        }
        Ok(())
    }

    fn collect(&mut self, id: SessionId, keep: impl Fn(usize) -> bool) {
        let s = self.ledger.session(id).expect("session exists");
        self.events.extend(
            s.events
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, e)| e.clone()),
        );
    }
}

fn summarize(s: &AuditSession) -> Result<SessionSummary, LedgerError> {
    let replayed = AuditSession::replay(&s.events)?;
    Ok(SessionSummary {
        session: s.session_id,
        status: s.status,
        trace_valid: s.trace_valid,
        settled: s.settled,
        payouts: s.payouts.clone(),
        events: s.events.len(),
        state_digest: s.state_digest(),
        replay_digest: replayed.state_digest(),
    })
}

/// Runs `lines` against a fresh ledger. `base` resolves graph paths;
/// `default_seed` seeds sessions whose `create` gives none.
pub fn run_script(
    lines: &[ScriptLine],
    base: &Path,
    default_seed: u64,
) -> Result<ScriptOutcome, ScriptError> {
    let mut r = Runner {
        base,
        default_seed,
        ledger: Ledger::new(),
        graphs: BTreeMap::new(),
        events: Vec::new(),
        inputs: Vec::new(),
    };
    for (i, line) in lines.iter().enumerate() {
        r.step(i + 1, line)?;
    }
    let sessions = r
        .ledger
        .sessions()
        .map(summarize)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| ScriptError::Rejected {
            line: lines.len(),
            source,
        })?;
    Ok(ScriptOutcome {
        seats: r.ledger.seats().cloned().collect(),
        sessions,
        events: r.events,
        inputs: r.inputs,
    })
}
