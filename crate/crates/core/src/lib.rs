//! Table-to-text generation with a controllable hallucination level.
//!
//! Training targets are scored for unsupported content, bucketed into five
//! control tags, and a source-conditioned model learns one copy weight per
//! tag so that the tag acts as a knob at generation time.

pub mod cond;
pub mod corpus;
pub mod eval;
pub mod generate;
pub mod halscore;
pub mod model_io;
pub mod ngram;
pub mod synth;
pub mod tokenizer;
