use super::{argmax, DecodeError, Scorer};
use crate::data::{Region, BOS, EOS};
use crate::levels::LengthLevelPlan;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArDecode {
    pub caption: Vec<usize>,
    pub passes: usize,
}

/// Greedy decoding from `[BOS]`, one token per pass, until `[EOS]`. A caption
/// that reaches the plan's maximum length gets one final pass whose
/// prediction is replaced by `[EOS]`, so `passes == caption.len() + 1`.
pub fn decode_ar(
    scorer: &dyn Scorer,
    regions: &[Region],
    level: usize,
    plan: &LengthLevelPlan,
) -> Result<ArDecode, DecodeError> {
    plan.range(level)?;
    let max = plan.max_length();
    let mut input = vec![BOS];
    let mut passes = 0;
    loop {
        let probs = scorer.probs(regions, &input, level)?;
        passes += 1;
        let (next, _) = argmax(probs.row(input.len() - 1));
        if next == EOS || input.len() > max {
            break;
        }
        input.push(next);
    }
    input.remove(0);
    Ok(ArDecode { caption: input, passes })
}
