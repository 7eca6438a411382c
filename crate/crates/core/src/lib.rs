//! Proximity-based device pairing simulator.
//!
//! Two devices exchange interleaved radio probes while one is swiped past
//! the other, swap encrypted power records, reconstruct the pathloss trace
//! and accept the pairing only if it shows a deep, narrow valley with
//! fading variation consistent with a co-located peer.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod chanmodel;
pub mod cli;
pub mod crypto;
pub mod detect;
pub mod error;
pub mod harness;
pub mod protocol;
pub mod record;
pub mod rng;

pub use error::{Error, Result};
