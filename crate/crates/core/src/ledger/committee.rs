use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::SeatId;
use crate::graph::Tier;
use crate::Digest;

/// A seat as seen by committee selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: SeatId,
    pub stake: f64,
    pub tier: Tier,
    pub available: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommitteeSeat {
    pub seat: SeatId,
    pub stake: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommitteeError {
    #[error("committee of {needed} {tier:?} seats requested but only {available} are eligible")]
    InsufficientSeats {
        tier: Tier,
        needed: u32,
        available: usize,
    },
}

/// Uniform draw in (0, 1) derived from `seed` and the seat id.
fn keyed_uniform(seed: &Digest, seat: SeatId) -> f64 {
    let h = Digest::hash_parts(&[seed.as_bytes(), &seat.to_be_bytes()]);
    let mut top = [0u8; 8];
    top.copy_from_slice(&h.0[..8]);
    ((u64::from_be_bytes(top) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Draws `k` distinct available seats of tier `tier` without replacement,
/// each draw proportional to stake, by weighted reservoir sampling: every
/// seat gets key `ln(u) / stake` with `u` hashed from `(seed, id)`, and the
/// `k` largest keys win. Zero-stake seats are never chosen. Seats are
/// returned in draw order.
pub fn select_committee(
    seats: &[Candidate],
    tier: Tier,
    k: u32,
    seed: &Digest,
) -> Result<Vec<CommitteeSeat>, CommitteeError> {
    let mut keyed: Vec<(f64, &Candidate)> = seats
        .iter()
        .filter(|s| s.available && s.tier == tier && s.stake > 0.0)
        .map(|s| (libm::log(keyed_uniform(seed, s.id)) / s.stake, s))
        .collect();
    if keyed.len() < k as usize {
        return Err(CommitteeError::InsufficientSeats {
            tier,
            needed: k,
            available: keyed.len(),
        });
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    Ok(keyed
        .into_iter()
        .take(k as usize)
        .map(|(_, s)| CommitteeSeat {
            seat: s.id,
            stake: s.stake,
        })
        .collect())
}
