//! Turns a corpus of unrelated sentences into a pretraining dataset of
//! LLM-written NLU task examples, each paired with the plan that produced it.
//!
//! The pipeline samples five sentences at a time, asks a chat model to plan
//! and write a paragraph framing an NLU task, scores each candidate paragraph
//! for coherency several times, keeps the better of two plans, drops anything
//! below the score threshold and groups the survivors by task.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod curator;
pub mod dataset_io;
pub mod digest;
pub mod gateway;
pub mod parser;
pub mod pipeline;
pub mod prompting;
pub mod sampler;

pub use config::PipelineConfig;
pub use pipeline::{Pipeline, PipelineError, RunReport};
