//! Relational pseudo-labelling toolkit: caption parsing and grounding,
//! relation tagging, gated cross-modal fusion kernels, triplet matching
//! losses and detection-style evaluation.

pub mod caption;
pub mod fusion;
pub mod geometry;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod tagging;
