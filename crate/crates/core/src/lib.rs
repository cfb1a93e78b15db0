//! Protocol engine for decentralized auditing of reasoning traces and
//! multi-agent runs.
//!
//! The crate is `no_std` with `alloc`; everything here is a pure function of
//! its inputs or a single-writer state machine. File formats, simulation and
//! the command line live in the `audit-harness` crate.
//!
//! * [`graph`]: hierarchical reasoning graphs and causal interaction graphs.
//! * [`attribution`]: dual-layer audit and deterministic root-cause
//!   classification.
//! * [`refinement`]: prune/freeze/repair planning and the regeneration loop.
//! * [`consensus`]: closed-form segment, trace and committee probabilities.
//! * [`economics`]: reputation, slashing, payoffs and horizon tail bounds.
//! * [`ledger`]: in-process audit-session ledger with commit-reveal voting.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod attribution;
pub mod consensus;
pub mod digest;
pub mod economics;
pub mod fixtures;
pub mod graph;
pub mod ledger;
pub mod refinement;

pub use digest::Digest;
