//! Unfolding-based partial-order reduction for small multi-threaded programs
//! with mutexes and condition variables.
//!
//! Programs are written in a small DSL ([`model`]), interpreted by a labeled
//! transition system ([`semantics`]) and explored by building the prime event
//! structure of their runs ([`pes`], [`explorer`]).

pub mod model;
pub mod semantics;
pub mod independence;
pub mod cutoff;
pub mod pes;
pub mod cex;
pub mod races;
pub mod explorer;
pub mod oracle;
pub mod report;
