//! Sequence labeling toolkit for clinical handover information extraction.

pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod eval;
pub mod numerics;
pub mod pipeline;
pub mod tokenizer;
