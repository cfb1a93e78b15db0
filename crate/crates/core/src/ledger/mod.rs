//! In-process audit-session ledger.
//!
//! Segments of a trace are audited by stake-weighted committees that vote in
//! two phases: seats first commit to `SHA-256(vote ‖ salt)`, then reveal.
//! Phase changes are explicit operations rather than timers. Once every
//! segment is final the trace verdict is recorded and the session can be
//! settled, paying aligned seats and slashing the rest.

mod committee;
mod content;
mod merkle;
mod session;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

pub use committee::{select_committee, Candidate, CommitteeError, CommitteeSeat};
pub use content::{ContentError, ContentStore, KeyToken};
pub use merkle::{graph_root, leaf_hash, merkle_root, node_hash, MerkleError};
pub use session::{
    commitment, AuditSession, Event, EventKind, Phase, Reveal, Salt, SegmentPlan, SegmentRecord,
    SessionStatus, SlashReason,
};

use crate::attribution::{trace_validity, TraceError, TraceVerdict};
use crate::economics::{slash_probability, EconError, EconomicParams, SeatState};
use crate::graph::{NodeId, ReasoningGraph, Tier};
use crate::Digest;

pub type SeatId = u64;
pub type SessionId = u64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LedgerError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session {session} has no segment {segment}")]
    UnknownSegment { session: SessionId, segment: u32 },
    #[error("unknown seat {0}")]
    UnknownSeat(SeatId),
    #[error("seat {0} is already registered")]
    DuplicateSeat(SeatId),
    #[error("stake {0} must be non-negative and finite")]
    InvalidStake(f64),
    #[error("tau = {0} must lie in (0, 1]")]
    InvalidTau(f64),
    #[error("segment {segment} is in the {actual:?} phase, expected {expected:?}")]
    WrongPhase {
        segment: u32,
        expected: Phase,
        actual: Phase,
    },
    #[error("seat {seat} is not on the committee of segment {segment}")]
    NotInCommittee { segment: u32, seat: SeatId },
    #[error("seat {seat} already committed on segment {segment}")]
    DuplicateCommit { segment: u32, seat: SeatId },
    #[error("seat {seat} has no commitment on segment {segment}")]
    NoCommitment { segment: u32, seat: SeatId },
    #[error("seat {seat} already revealed on segment {segment}")]
    DuplicateReveal { segment: u32, seat: SeatId },
    #[error("reveal of seat {seat} on segment {segment} does not match its commitment")]
    HashMismatch { segment: u32, seat: SeatId },
    #[error("segment {segment} is already finalized")]
    AlreadyFinalized { segment: u32 },
    #[error("segments still open: {0:?}")]
    SegmentsPending(Vec<u32>),
    #[error("session {0} is not finalized")]
    NotFinalized(SessionId),
    #[error("session {0} is finalized and accepts no further votes")]
    SessionClosed(SessionId),
    #[error("session {0} is already settled")]
    AlreadySettled(SessionId),
    #[error("segment {segment} audits node `{node}`, which the graph does not contain")]
    ForeignNode { segment: u32, node: NodeId },
    #[error("invalid event log: {0}")]
    Replay(&'static str),
    #[error(transparent)]
    Committee(#[from] CommitteeError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Economics(#[from] EconError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatRecord {
    pub id: SeatId,
    pub tier: Tier,
    pub available: bool,
    pub state: SeatState,
}

/// Request for one audited segment of a new session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub node: NodeId,
    pub tier: Tier,
    pub k: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    seats: BTreeMap<SeatId, SeatRecord>,
    sessions: BTreeMap<SessionId, AuditSession>,
    next_session: SessionId,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_seat(
        &mut self,
        id: SeatId,
        tier: Tier,
        stake: f64,
        is_malicious: bool,
    ) -> Result<(), LedgerError> {
        if !(stake >= 0.0 && stake.is_finite()) {
            return Err(LedgerError::InvalidStake(stake));
        }
        if self.seats.contains_key(&id) {
            return Err(LedgerError::DuplicateSeat(id));
        }
        let state = SeatState::new(stake, is_malicious);
        self.seats.insert(
            id,
            SeatRecord {
                id,
                tier,
                available: true,
                state,
            },
        );
        Ok(())
    }

    pub fn set_available(&mut self, id: SeatId, available: bool) -> Result<(), LedgerError> {
        self.seats
            .get_mut(&id)
            .ok_or(LedgerError::UnknownSeat(id))?
            .available = available;
        Ok(())
    }

    pub fn seat(&self, id: SeatId) -> Option<&SeatRecord> {
        self.seats.get(&id)
    }

    pub fn seats(&self) -> impl Iterator<Item = &SeatRecord> {
        self.seats.values()
    }

    pub fn session(&self, id: SessionId) -> Result<&AuditSession, LedgerError> {
        self.sessions
            .get(&id)
            .ok_or(LedgerError::UnknownSession(id))
    }

    fn session_mut(&mut self, id: SessionId) -> Result<&mut AuditSession, LedgerError> {
        self.sessions
            .get_mut(&id)
            .ok_or(LedgerError::UnknownSession(id))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &AuditSession> {
        self.sessions.values()
    }

    /// Opens a session and draws a committee for every segment from `seed`.
    /// Segments are numbered from 0 in request order.
    pub fn create_session(
        &mut self,
        trace_root: Digest,
        segments: &[SegmentRequest],
        seed: Digest,
    ) -> Result<SessionId, LedgerError> {
        let id = self.next_session;
        let candidates: Vec<Candidate> = self
            .seats
            .values()
            .map(|s| Candidate {
                id: s.id,
                stake: s.state.stake,
                tier: s.tier,
                available: s.available,
            })
            .collect();
        let plans = segments
            .iter()
            .zip(0u32..)
            .map(|(req, i)| {
                let seg_seed =
                    Digest::hash_parts(&[seed.as_bytes(), &id.to_be_bytes(), &i.to_be_bytes()]);
                let committee = select_committee(&candidates, req.tier, req.k, &seg_seed)?;
                Ok(SegmentPlan {
                    segment: i,
                    node: req.node.clone(),
                    tier: req.tier,
                    committee,
                })
            })
            .collect::<Result<Vec<_>, LedgerError>>()?;
        self.sessions
            .insert(id, AuditSession::create(id, trace_root, seed, plans));
        self.next_session += 1;
        Ok(id)
    }

    pub fn commit_vote(
        &mut self,
        session: SessionId,
        segment: u32,
        seat: SeatId,
        commitment: Digest,
    ) -> Result<Event, LedgerError> {
        let s = self.session_mut(session)?;
        s.apply(EventKind::VoteCommitted {
            segment,
            seat,
            commitment,
        })
        .cloned()
    }

    /// Ends the commit window of a segment.
    pub fn close_commit(&mut self, session: SessionId, segment: u32) -> Result<Event, LedgerError> {
        self.session_mut(session)?
            .apply(EventKind::CommitClosed { segment })
            .cloned()
    }

    pub fn reveal_vote(
        &mut self,
        session: SessionId,
        segment: u32,
        seat: SeatId,
        vote: bool,
        salt: Salt,
    ) -> Result<Event, LedgerError> {
        let s = self.session_mut(session)?;
        s.apply(EventKind::VoteRevealed {
            segment,
            seat,
            vote,
            salt,
        })
        .cloned()
    }

    /// Closes the reveal window. The segment passes when the normalized stake
    /// of pass reveals reaches `tau`; committee seats that did not reveal are
    /// recorded for slashing.
    pub fn finalize_segment(
        &mut self,
        session: SessionId,
        segment: u32,
        tau: f64,
    ) -> Result<bool, LedgerError> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(LedgerError::InvalidTau(tau));
        }
        let s = self.session_mut(session)?;
        let (pass_weight, silent) = s.segment(segment)?.tally();
        let verdict = pass_weight >= tau - 1e-12;
        s.apply(EventKind::SegmentFinalized {
            segment,
            verdict,
            pass_weight,
            non_revealers: silent.into_iter().collect(),
        })?;
        Ok(verdict)
    }

    /// Judges the whole trace from the segment verdicts and closes the
    /// session.
    pub fn finalize_trace(
        &mut self,
        session: SessionId,
        g: &ReasoningGraph,
    ) -> Result<TraceVerdict, LedgerError> {
        let s = self.session_mut(session)?;
        if s.status == SessionStatus::Finalized {
            return Err(LedgerError::SessionClosed(session));
        }
        let verdicts = s.node_verdicts().ok_or_else(|| {
            LedgerError::SegmentsPending(
                s.segments
                    .iter()
                    .filter(|x| x.phase != Phase::Done)
                    .map(|x| x.segment_id)
                    .collect(),
            )
        })?;
        for seg in &s.segments {
            if g.node(&seg.node).is_none() {
                return Err(LedgerError::ForeignNode {
                    segment: seg.segment_id,
                    node: seg.node.clone(),
                });
            }
        }
        let verdict = trace_validity(g, &verdicts)?;
        s.apply(EventKind::TraceFinalized {
            valid: verdict.valid,
            reasons: verdict.reasons.clone(),
        })?;
        Ok(verdict)
    }

    /// Pays or slashes every committee seat of every segment, in segment and
    /// committee order. Seats that voted with the verdict earn `R`; seats
    /// that did not reveal lose `P`; misaligned seats lose `P` with the slash
    /// probability of their current reputation, drawn from a generator
    /// seeded by the session. Reputations are updated as each vote is
    /// settled.
    pub fn settle(
        &mut self,
        session: SessionId,
        ep: &EconomicParams,
    ) -> Result<Vec<Event>, LedgerError> {
        ep.check()?;
        let s = self
            .sessions
            .get_mut(&session)
            .ok_or(LedgerError::UnknownSession(session))?;
        if s.status != SessionStatus::Finalized {
            return Err(LedgerError::NotFinalized(session));
        }
        if s.settled {
            return Err(LedgerError::AlreadySettled(session));
        }
        let mut rng = ChaCha20Rng::from_seed(
            Digest::hash_parts(&[b"settle", s.seed.as_bytes(), &session.to_be_bytes()]).0,
        );
        let start = s.events.len();
        let mut pending = Vec::new();
        for seg in &s.segments {
            let verdict = seg.verdict.ok_or(LedgerError::NotFinalized(session))?;
            for member in &seg.committee {
                let seat = self
                    .seats
                    .get_mut(&member.seat)
                    .ok_or(LedgerError::UnknownSeat(member.seat))?;
                let (segment, id) = (seg.segment_id, member.seat);
                let event = match seg.reveals.get(&id) {
                    None => {
                        seat.state.record(false, true, ep);
                        Some(EventKind::AuditorSlashed {
                            segment,
                            seat: id,
                            amount: ep.penalty,
                            reason: SlashReason::NonReveal,
                        })
                    }
                    Some(r) if r.vote == verdict => {
                        seat.state.record(true, false, ep);
                        Some(EventKind::RewardPaid {
                            segment,
                            seat: id,
                            amount: ep.reward,
                        })
                    }
                    Some(_) => {
                        let p = slash_probability(seat.state.reputation, ep);
                        let slashed = unit_f64(&mut rng) < p;
                        seat.state.record(false, slashed, ep);
                        slashed.then_some(EventKind::AuditorSlashed {
                            segment,
                            seat: id,
                            amount: ep.penalty,
                            reason: SlashReason::Misaligned,
                        })
                    }
                };
                pending.extend(event);
            }
        }
        for kind in pending {
            s.apply(kind)?;
        }
        Ok(s.events[start..].to_vec())
    }
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
