//! Region-based approximate inference for discrete graphical models.
//!
//! The crate covers static inference (sum-product BP, parent-to-child
//! generalized BP, region free energies, naive mean field) and inference over
//! time with path beliefs: DynBP and a space-time GBP comparator. Every
//! approximate solver can be checked against the brute-force oracle in
//! [`exact`].

pub mod cli;
pub mod error;
pub mod dynbp;
pub mod exact;
pub mod gbp;
pub mod io;
pub mod ising;
pub mod kikuchi;
pub mod model;
pub mod motion;
pub mod par;
pub mod region;
pub mod report;
pub mod temporal;

pub use error::{Error, Result};
