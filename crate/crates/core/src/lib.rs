//! Length-controllable caption generation.
//!
//! A caption's target length is expressed as a *length level*, a contiguous
//! range of word counts with its own learned embedding added to every token
//! embedding. Two decoders share one transformer implementation:
//!
//! * a non-autoregressive masked-LM that fills a fixed `[MASK]` canvas and
//!   refines it with a mask-predict-update loop in a fixed number of passes;
//! * an autoregressive baseline decoding greedily, one pass per token.
//!
//! Everything runs on a small built-in tensor kernel with reverse-mode
//! differentiation, trained on a synthetic scene-captioning corpus.

pub mod bench;
pub mod config;
pub mod data;
pub mod decoding;
pub mod levels;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;

pub use levels::{LengthLevelPlan, LevelRange};
