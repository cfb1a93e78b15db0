//! File formats, Monte Carlo verification and command implementations for
//! the `audit` binary.

pub mod commands;
pub mod formats;
pub mod manifest;
pub mod montecarlo;
pub mod script;
