//! Iterative discovery of interpretable image factors.
//!
//! A language model proposes yes/no questions about street-level images, a
//! multimodal model answers them per image, and an ordinary least squares
//! fit against the outcome keeps the questions whose coefficients are
//! significant. Pruned questions are replaced by new proposals until the
//! set stops improving on held-out data.

pub mod client;
pub mod discovery;
pub mod domain;
pub mod hypogen;
pub mod ingest;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod vqa;
