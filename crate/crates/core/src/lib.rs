//! Streaming intent detection for human-human support calls.
//!
//! The pipeline: generate or load diarized call transcripts, train a
//! dual multi-task recurrent model (intent-boundary detection plus intent
//! classification over a shared embedding), run word-at-a-time inference
//! with optional lookahead and conversational context, and evaluate both
//! offline (P/R/F1) and by replaying conversations in real time
//! (Acc, Acc@RT, Acc@RP, MTD, MPD).

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numkernel;
pub mod objective;
pub mod runconfig;
pub mod stream;
pub mod syngen;

pub use error::{Error, Result};
