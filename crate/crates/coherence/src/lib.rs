//! Trace-coherence evaluation for math reasoning traces.
//!
//! Given sampled responses from a base model and an RL-post-trained model on
//! grade-school math problems, this crate scores final-answer correctness,
//! audits the arithmetic inside each trace deterministically, tags reasoning
//! errors with an LLM judge grounded in a First-Order-Logic error taxonomy,
//! and aggregates Pass@K accuracy, Pass@K trace coherence, base-vs-RL
//! pattern partitions, confusion matrices, and judge-calibration statistics
//! into reproducible reports.

pub mod judge;
pub mod metrics;
pub mod model;
mod par;
pub mod pipeline;
mod scan;
pub mod steps;

pub use model::{
    answers_equal, normalize_answer, parse_gold, Answer, CoherenceOutcome, ErrorTag, Judgment,
    JudgmentStatus, ModelId, Pattern, ProblemRecord, ResponseTrace, RolloutSet,
};
pub use steps::{audit_trace, audit_traces, detect_boxed, extract_equations, verify_step};
