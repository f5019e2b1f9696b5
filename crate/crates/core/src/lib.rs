//! Data-free backdoor auditing of classifier prediction heads.
//!
//! A head is probed with random latent vectors; backdoored heads respond with
//! a skewed class distribution concentrated on the attack target.

pub mod detector;
pub mod eval;
pub mod headspec;
pub mod indicators;
pub mod json;
pub mod probe;
pub mod rng;
pub mod synth;
pub mod zoo;
pub mod cli;
