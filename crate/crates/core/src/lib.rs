//! Retrieval-augmented zero-shot ECG diagnosis.
//!
//! The pipeline runs delineation, feature extraction, rule-based pre-diagnosis,
//! retrieval over a two-collection knowledge store, prompt assembly and structured
//! LLM verdict parsing, plus an evaluation harness over PTB-XL superclasses.

pub mod delineation;
pub mod eval;
pub mod features;
pub mod filter;
pub mod fixtures;
pub mod knowledge;
pub mod llm;
pub mod minicorpus;
pub mod pipeline;
pub mod prompt;
pub mod ptbxl;
pub mod rules;
pub mod superclass;
pub mod synth;

pub use superclass::{Superclass, SuperclassFlags};
