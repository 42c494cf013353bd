//! Entity disambiguation against a knowledge base.
//!
//! The pipeline runs in three steps: candidate generation from hyperlink
//! anchor statistics with a pluggable retrieval backup ([`candidates`]), an
//! auxiliary-context prompt that asks a chat model what the mention
//! represents ([`prompting`]), and a multiple-choice selection prompt whose
//! options are the candidates' first knowledge-base sentences plus a final
//! "None" catch-all. [`instruct`] exports the same construction as a
//! chat-format instruction-tuning dataset, and [`eval`] scores predictions
//! with in-KB micro-F1 and attributes errors to the step that caused them.

pub mod candidates;
pub mod config;
pub mod eval;
pub mod instruct;
pub mod kb;
pub mod llm;
pub mod pipeline;
pub mod prompting;
