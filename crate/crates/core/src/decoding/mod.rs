//! Inference: mask-predict-update refinement for the non-autoregressive
//! model and greedy left-to-right decoding for the autoregressive baseline.
//!
//! Both decoders talk to the network through [`Scorer`], which makes forward
//! passes countable and lets tests substitute scripted distributions.

mod ar;
mod nar;

pub use ar::{decode_ar, ArDecode};
pub use nar::{
    apply_eos_decay, decode_nar, init_canvas, num_masks, refine_step, select_lowest, CaptionState, NarDecode, StepTrace,
};

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::data::{Region, EOS};
use crate::levels::{LengthLevelPlan, LevelError};
use crate::model::{forward_ar, forward_nar, ModelError, ModelParams};
use crate::tensor::{softmax, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error("invalid decode configuration: {}", .0.join("; "))]
    Config(Vec<String>),
}

/// One forward pass: per-position probability rows `[L × V]` for `tokens`.
pub trait Scorer: Sync {
    fn probs(&self, regions: &[Region], tokens: &[usize], level: usize) -> Result<Tensor<f32>, ModelError>;
}

/// Bidirectional scorer over a canvas.
pub struct NarScorer<'a>(pub &'a ModelParams<f32>);

impl Scorer for NarScorer<'_> {
    fn probs(&self, regions: &[Region], tokens: &[usize], level: usize) -> Result<Tensor<f32>, ModelError> {
        Ok(softmax(&forward_nar(self.0, regions, tokens, level)?))
    }
}

/// Causal scorer over a `[BOS]`-prefixed input.
pub struct ArScorer<'a>(pub &'a ModelParams<f32>);

impl Scorer for ArScorer<'_> {
    fn probs(&self, regions: &[Region], tokens: &[usize], level: usize) -> Result<Tensor<f32>, ModelError> {
        Ok(softmax(&forward_ar(self.0, regions, tokens, level)?))
    }
}

/// Wraps a scorer and counts forward passes.
pub struct Counting<S> {
    pub inner: S,
    count: AtomicUsize,
}

impl<S> Counting<S> {
    pub fn new(inner: S) -> Self {
        Counting { inner, count: AtomicUsize::new(0) }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::Relaxed);
    }
}

impl<S: Scorer> Scorer for Counting<S> {
    fn probs(&self, regions: &[Region], tokens: &[usize], level: usize) -> Result<Tensor<f32>, ModelError> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.probs(regions, tokens, level)
    }
}

/// Refinement budget and update rules for one non-autoregressive decode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Refinement steps `T`, including the initial full prediction.
    pub steps: usize,
    /// `[EOS]` decay factor in `(0, 1]`; 1 disables the decay.
    pub gamma: f32,
    /// Zero-based target level.
    pub level: usize,
    /// Carried into outputs for provenance; greedy decoding draws no random numbers.
    pub seed: u64,
    /// Average old and new confidences at unmasked positions. When off,
    /// only masked positions update their confidence.
    pub global_update: bool,
    /// Stop once a step masks nothing and leaves the tokens unchanged.
    pub early_stop: bool,
}

impl DecodeConfig {
    pub fn new(steps: usize, gamma: f32, level: usize) -> Self {
        DecodeConfig { steps, gamma, level, seed: 0, global_update: true, early_stop: true }
    }

    /// Per-level defaults: for the 4-level plan `T = 10, 15, 20, 25` and
    /// `γ = 1, 0.88, 0.95, 1`; for any other plan `T = L_high` of the level
    /// (25 for the single-level plan) and `γ = 1`.
    pub fn for_level(plan: &LengthLevelPlan, level: usize) -> Result<Self, LevelError> {
        let range = plan.range(level)?;
        if *plan == LengthLevelPlan::four_level() {
            const STEPS: [usize; 4] = [10, 15, 20, 25];
            const GAMMA: [f32; 4] = [1.0, 0.88, 0.95, 1.0];
            return Ok(Self::new(STEPS[level], GAMMA[level], level));
        }
        Ok(Self::new(range.high, 1.0, level))
    }

    pub fn validate(&self, plan: &LengthLevelPlan) -> Result<(), DecodeError> {
        let mut errs = Vec::new();
        if self.steps == 0 {
            errs.push("steps must be at least 1".to_string());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            errs.push(format!("gamma ({}) must lie in (0, 1]", self.gamma));
        }
        if self.level >= plan.num_levels() {
            errs.push(format!("level {} not in a plan with {} levels", self.level + 1, plan.num_levels()));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(DecodeError::Config(errs))
        }
    }
}

/// Tokens strictly before the first `[EOS]`.
pub fn effective(tokens: &[usize]) -> &[usize] {
    let end = tokens.iter().position(|&t| t == EOS).unwrap_or(tokens.len());
    &tokens[..end]
}

/// Index and value of the row maximum; ties go to the lower index.
pub(crate) fn argmax(row: &[f32]) -> (usize, f32) {
    let mut best = (0, row[0]);
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > best.1 {
            best = (i, p);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_stops_at_first_eos() {
        assert_eq!(effective(&[5, 6, EOS, 7, EOS]), &[5, 6]);
        assert_eq!(effective(&[EOS, EOS]), &[] as &[usize]);
        assert_eq!(effective(&[4, 4]), &[4, 4]);
    }

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), (1, 0.4));
    }

    #[test]
    fn defaults_per_level() {
        let p4 = LengthLevelPlan::four_level();
        let c = DecodeConfig::for_level(&p4, 1).unwrap();
        assert_eq!((c.steps, c.gamma), (15, 0.88));
        let c = DecodeConfig::for_level(&LengthLevelPlan::single_level(25), 0).unwrap();
        assert_eq!((c.steps, c.gamma), (25, 1.0));
        assert!(DecodeConfig::for_level(&p4, 4).is_err());
        let mut bad = DecodeConfig::new(0, 1.5, 9);
        bad.seed = 1;
        match bad.validate(&p4) {
            Err(DecodeError::Config(e)) => assert_eq!(e.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
