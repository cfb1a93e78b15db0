use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use super::committee::CommitteeSeat;
use super::{LedgerError, SeatId, SessionId};
use crate::attribution::TraceFailure;
use crate::graph::{NodeId, Tier};
use crate::Digest;

/// Blinding value mixed into a vote commitment.
pub type Salt = Digest;

/// `SHA-256(vote_byte ‖ salt)` with vote byte `0x01` for pass, `0x00` for fail.
pub fn commitment(vote: bool, salt: &Salt) -> Digest {
    Digest::hash_parts(&[&[u8::from(vote)], salt.as_bytes()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Commit,
    Reveal,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Finalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reveal {
    pub vote: bool,
    pub salt: Salt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: u32,
    pub node: NodeId,
    pub tier: Tier,
    pub committee: Vec<CommitteeSeat>,
    pub commitments: BTreeMap<SeatId, Digest>,
    pub reveals: BTreeMap<SeatId, Reveal>,
    pub verdict: Option<bool>,
    pub pass_weight: Option<f64>,
    pub non_revealers: BTreeSet<SeatId>,
    pub phase: Phase,
}

impl SegmentRecord {
    fn in_committee(&self, seat: SeatId) -> bool {
        self.committee.iter().any(|c| c.seat == seat)
    }

    /// Stake-normalized weight of pass reveals, and the committee seats that
    /// did not reveal.
    pub fn tally(&self) -> (f64, BTreeSet<SeatId>) {
        let total: f64 = self.committee.iter().map(|c| c.stake).sum();
        let mut pass = 0.0;
        let mut silent = BTreeSet::new();
        for c in &self.committee {
            match self.reveals.get(&c.seat) {
                Some(r) if r.vote => pass += c.stake,
                Some(_) => {}
                None => {
                    silent.insert(c.seat);
                }
            }
        }
        let weight = if total > 0.0 { pass / total } else { 0.0 };
        (weight, silent)
    }
}

/// Committee assignment for one segment, fixed at session creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub segment: u32,
    pub node: NodeId,
    pub tier: Tier,
    pub committee: Vec<CommitteeSeat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlashReason {
    NonReveal,
    Misaligned,
    Honeypot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated {
        trace_root: Digest,
        seed: Digest,
        segments: Vec<SegmentPlan>,
    },
    VoteCommitted {
        segment: u32,
        seat: SeatId,
        commitment: Digest,
    },
    /// The commit window of a segment closed; reveals may begin.
    CommitClosed { segment: u32 },
    VoteRevealed {
        segment: u32,
        seat: SeatId,
        vote: bool,
        salt: Salt,
    },
    SegmentFinalized {
        segment: u32,
        verdict: bool,
        pass_weight: f64,
        non_revealers: Vec<SeatId>,
    },
    TraceFinalized {
        valid: bool,
        reasons: Vec<TraceFailure>,
    },
    AuditorSlashed {
        segment: u32,
        seat: SeatId,
        amount: f64,
        reason: SlashReason,
    },
    RewardPaid {
        segment: u32,
        seat: SeatId,
        amount: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub session: SessionId,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One audit session. Every state change goes through [`apply`](Self::apply),
/// which validates it and appends the matching event, so a session rebuilt by
/// [`replay`](Self::replay) from its log is identical to the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSession {
    pub session_id: SessionId,
    pub trace_root: Digest,
    pub seed: Digest,
    pub segments: Vec<SegmentRecord>,
    pub status: SessionStatus,
    pub trace_valid: Option<bool>,
    pub settled: bool,
    /// Net settlement per seat.
    pub payouts: BTreeMap<SeatId, f64>,
    pub events: Vec<Event>,
}

impl AuditSession {
    pub fn create(
        session_id: SessionId,
        trace_root: Digest,
        seed: Digest,
        plans: Vec<SegmentPlan>,
    ) -> Self {
        let segments = plans
            .iter()
            .map(|p| SegmentRecord {
                segment_id: p.segment,
                node: p.node.clone(),
                tier: p.tier,
                committee: p.committee.clone(),
                commitments: BTreeMap::new(),
                reveals: BTreeMap::new(),
                verdict: None,
                pass_weight: None,
                non_revealers: BTreeSet::new(),
                phase: Phase::Commit,
            })
            .collect();
        let created = Event {
            seq: 0,
            session: session_id,
            kind: EventKind::SessionCreated {
                trace_root,
                seed,
                segments: plans,
            },
        };
        AuditSession {
            session_id,
            trace_root,
            seed,
            segments,
            status: SessionStatus::Open,
            trace_valid: None,
            settled: false,
            payouts: BTreeMap::new(),
            events: alloc::vec![created],
        }
    }

    pub fn segment(&self, segment: u32) -> Result<&SegmentRecord, LedgerError> {
        self.segments
            .iter()
            .find(|s| s.segment_id == segment)
            .ok_or(LedgerError::UnknownSegment {
                session: self.session_id,
                segment,
            })
    }

    fn segment_mut(&mut self, segment: u32) -> Result<&mut SegmentRecord, LedgerError> {
        let session = self.session_id;
        self.segments
            .iter_mut()
            .find(|s| s.segment_id == segment)
            .ok_or(LedgerError::UnknownSegment { session, segment })
    }

    fn in_phase(
        &mut self,
        segment: u32,
        expected: Phase,
    ) -> Result<&mut SegmentRecord, LedgerError> {
        let rec = self.segment_mut(segment)?;
        if rec.phase != expected {
            return Err(LedgerError::WrongPhase {
                segment,
                expected,
                actual: rec.phase,
            });
        }
        Ok(rec)
    }

    /// Per-node verdicts; a node audited by several segments passes only if
    /// all of them pass. `None` while any segment is open.
    pub fn node_verdicts(&self) -> Option<BTreeMap<NodeId, bool>> {
        let mut out = BTreeMap::new();
        for s in &self.segments {
            let v = s.verdict?;
            *out.entry(s.node.clone()).or_insert(true) &= v;
        }
        Some(out)
    }

    /// Validates `kind` against the current state, applies it and appends it
    /// to the event log.
    pub fn apply(&mut self, kind: EventKind) -> Result<&Event, LedgerError> {
        let settlement = matches!(
            kind,
            EventKind::AuditorSlashed { .. } | EventKind::RewardPaid { .. }
        );
        if self.status == SessionStatus::Finalized && !settlement {
            return Err(LedgerError::SessionClosed(self.session_id));
        }
        match &kind {
            EventKind::SessionCreated { .. } => {
                return Err(LedgerError::Replay("session created twice"));
            }
            EventKind::VoteCommitted {
                segment,
                seat,
                commitment,
            } => {
                let rec = self.in_phase(*segment, Phase::Commit)?;
                if !rec.in_committee(*seat) {
                    return Err(LedgerError::NotInCommittee {
                        segment: *segment,
                        seat: *seat,
                    });
                }
                if rec.commitments.contains_key(seat) {
                    return Err(LedgerError::DuplicateCommit {
                        segment: *segment,
                        seat: *seat,
                    });
                }
                rec.commitments.insert(*seat, *commitment);
            }
            EventKind::CommitClosed { segment } => {
                self.in_phase(*segment, Phase::Commit)?.phase = Phase::Reveal;
            }
            EventKind::VoteRevealed {
                segment,
                seat,
                vote,
                salt,
            } => {
                let rec = self.in_phase(*segment, Phase::Reveal)?;
                let c = *rec.commitments.get(seat).ok_or(LedgerError::NoCommitment {
                    segment: *segment,
                    seat: *seat,
                })?;
                if rec.reveals.contains_key(seat) {
                    return Err(LedgerError::DuplicateReveal {
                        segment: *segment,
                        seat: *seat,
                    });
                }
                if commitment(*vote, salt) != c {
                    return Err(LedgerError::HashMismatch {
                        segment: *segment,
                        seat: *seat,
                    });
                }
                rec.reveals.insert(
                    *seat,
                    Reveal {
                        vote: *vote,
                        salt: *salt,
                    },
                );
            }
            EventKind::SegmentFinalized {
                segment,
                verdict,
                pass_weight,
                non_revealers,
            } => {
                let rec = self.segment_mut(*segment)?;
                match rec.phase {
                    Phase::Done => return Err(LedgerError::AlreadyFinalized { segment: *segment }),
                    Phase::Commit => {
                        return Err(LedgerError::WrongPhase {
                            segment: *segment,
                            expected: Phase::Reveal,
                            actual: Phase::Commit,
                        })
                    }
                    Phase::Reveal => {}
                }
                rec.verdict = Some(*verdict);
                rec.pass_weight = Some(*pass_weight);
                rec.non_revealers = non_revealers.iter().copied().collect();
                rec.phase = Phase::Done;
            }
            EventKind::TraceFinalized { valid, .. } => {
                let pending: Vec<u32> = self
                    .segments
                    .iter()
                    .filter(|s| s.phase != Phase::Done)
                    .map(|s| s.segment_id)
                    .collect();
                if !pending.is_empty() {
                    return Err(LedgerError::SegmentsPending(pending));
                }
                self.trace_valid = Some(*valid);
                self.status = SessionStatus::Finalized;
            }
            EventKind::AuditorSlashed { seat, amount, .. }
            | EventKind::RewardPaid { seat, amount, .. } => {
                if self.status != SessionStatus::Finalized {
                    return Err(LedgerError::NotFinalized(self.session_id));
                }
                let signed = if matches!(kind, EventKind::RewardPaid { .. }) {
                    *amount
                } else {
                    -*amount
                };
                *self.payouts.entry(*seat).or_insert(0.0) += signed;
                self.settled = true;
            }
        }
        let seq = self.events.len() as u64;
        self.events.push(Event {
            seq,
            session: self.session_id,
            kind,
        });
        Ok(self.events.last().expect("just pushed"))
    }

    /// Rebuilds a session from its event log.
    pub fn replay(events: &[Event]) -> Result<AuditSession, LedgerError> {
        let (first, rest) = events
            .split_first()
            .ok_or(LedgerError::Replay("empty event log"))?;
        let EventKind::SessionCreated {
            trace_root,
            seed,
            segments,
        } = &first.kind
        else {
            return Err(LedgerError::Replay(
                "log does not start with session creation",
            ));
        };
        if first.seq != 0 {
            return Err(LedgerError::Replay("sequence numbers must start at 0"));
        }
        let mut s = AuditSession::create(first.session, *trace_root, *seed, segments.clone());
        for ev in rest {
            if ev.session != s.session_id {
                return Err(LedgerError::Replay("event belongs to another session"));
            }
            if ev.seq != s.events.len() as u64 {
                return Err(LedgerError::Replay("sequence numbers must be consecutive"));
            }
            s.apply(ev.kind.clone())?;
        }
        Ok(s)
    }

    /// Digest of the full session state.
    pub fn state_digest(&self) -> Digest {
        let mut c = Canon::default();
        c.u64(self.session_id);
        c.digest(&self.trace_root);
        c.digest(&self.seed);
        c.u64(self.segments.len() as u64);
        for s in &self.segments {
            c.u64(u64::from(s.segment_id));
            c.str(s.node.as_str());
            c.u64(s.tier as u64);
            c.u64(s.committee.len() as u64);
            for m in &s.committee {
                c.u64(m.seat);
                c.f64(m.stake);
            }
            c.u64(s.commitments.len() as u64);
            for (seat, d) in &s.commitments {
                c.u64(*seat);
                c.digest(d);
            }
            c.u64(s.reveals.len() as u64);
            for (seat, r) in &s.reveals {
                c.u64(*seat);
                c.u64(u64::from(r.vote));
                c.digest(&r.salt);
            }
            c.opt(s.verdict.map(u64::from));
            c.opt(s.pass_weight.map(f64::to_bits));
            c.u64(s.non_revealers.len() as u64);
            for seat in &s.non_revealers {
                c.u64(*seat);
            }
            c.u64(s.phase as u64);
        }
        c.u64(self.status as u64);
        c.opt(self.trace_valid.map(u64::from));
        c.u64(u64::from(self.settled));
        c.u64(self.payouts.len() as u64);
        for (seat, x) in &self.payouts {
            c.u64(*seat);
            c.f64(*x);
        }
        c.u64(self.events.len() as u64);
        c.finish()
    }
}

/// Unambiguous, length-prefixed hashing of state fields.
#[derive(Default)]
struct Canon(Sha256);

impl Canon {
    fn u64(&mut self, x: u64) {
        self.0.update(x.to_be_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.u64(x.to_bits());
    }
    fn opt(&mut self, x: Option<u64>) {
        match x {
            None => self.u64(0),
            Some(v) => {
                self.u64(1);
                self.u64(v);
            }
        }
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.update(s.as_bytes());
    }
    fn digest(&mut self, d: &Digest) {
        self.0.update(d.as_bytes());
    }
    fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}
