use serde::{Deserialize, Serialize};

use super::{argmax, effective, DecodeConfig, DecodeError, Scorer};
use crate::data::{Region, EOS, MASK};
use crate::levels::{LengthLevelPlan, LevelError, LevelRange};
use crate::tensor::Tensor;

/// Fixed-length canvas under refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionState {
    pub tokens: Vec<usize>,
    pub confidences: Vec<f32>,
    /// Next step to run, 1-based.
    pub step: usize,
}

/// One step of a decode. Positions in `masked` are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub masked: Vec<usize>,
    pub tokens: Vec<usize>,
    pub confidences: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarDecode {
    /// Tokens before the first `[EOS]`.
    pub caption: Vec<usize>,
    pub canvas: Vec<usize>,
    pub trace: Vec<StepTrace>,
    pub passes: usize,
}

/// `L_high` copies of `[MASK]` with zero confidence.
pub fn init_canvas(level: usize, plan: &LengthLevelPlan) -> Result<CaptionState, LevelError> {
    let high = plan.range(level)?.high;
    Ok(CaptionState { tokens: vec![MASK; high], confidences: vec![0.0; high], step: 1 })
}

/// Multiplies `p_i([EOS])` by `gamma^(L_high - i)` for 1-based positions
/// `i ∈ [L_low, L_high]`. Rows are not renormalized.
pub fn apply_eos_decay(probs: &mut Tensor<f32>, gamma: f32, range: LevelRange) {
    if gamma == 1.0 {
        return;
    }
    let v = probs.cols();
    let rows = probs.rows();
    let data = probs.data_mut();
    for i in range.low..=range.high.min(rows) {
        data[(i - 1) * v + EOS] *= gamma.powi((range.high - i) as i32);
    }
}

/// `floor((T - t) / T · L_high)`.
pub fn num_masks(t: usize, steps: usize, l_high: usize) -> usize {
    (steps.saturating_sub(t) * l_high) / steps
}

/// The `n` positions with the lowest confidence, ties to the lower index,
/// returned in ascending position order (0-based).
pub fn select_lowest(confidences: &[f32], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]).then(a.cmp(&b)));
    let mut chosen = order[..n.min(order.len())].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Predict every position of `state` and update per the masked set.
fn predict_and_update(
    state: &mut CaptionState,
    masked: &[bool],
    scorer: &dyn Scorer,
    regions: &[Region],
    config: &DecodeConfig,
    range: LevelRange,
) -> Result<(), DecodeError> {
    let mut probs = scorer.probs(regions, &state.tokens, config.level)?;
    apply_eos_decay(&mut probs, config.gamma, range);
    for i in 0..state.tokens.len() {
        let (best, p) = argmax(probs.row(i));
        if masked[i] {
            state.tokens[i] = best;
            state.confidences[i] = p;
        } else if config.global_update {
            state.confidences[i] = (state.confidences[i] + p) / 2.0;
        }
    }
    Ok(())
}

/// One mask-predict-update step (`state.step >= 2`).
pub fn refine_step(
    state: &mut CaptionState,
    scorer: &dyn Scorer,
    regions: &[Region],
    config: &DecodeConfig,
    plan: &LengthLevelPlan,
) -> Result<StepTrace, DecodeError> {
    let range = plan.range(config.level)?;
    let n = num_masks(state.step, config.steps, range.high);
    let chosen = select_lowest(&state.confidences, n);
    let mut masked = vec![false; state.tokens.len()];
    for &i in &chosen {
        masked[i] = true;
        state.tokens[i] = MASK;
    }
    predict_and_update(state, &masked, scorer, regions, config, range)?;
    let trace = StepTrace {
        step: state.step,
        masked: chosen.iter().map(|i| i + 1).collect(),
        tokens: state.tokens.clone(),
        confidences: state.confidences.clone(),
    };
    state.step += 1;
    Ok(trace)
}

/// Full decode: step 1 predicts the all-`[MASK]` canvas, steps `2..=T`
/// refine it. At most `T` forward passes whatever `L_high` is.
pub fn decode_nar(
    scorer: &dyn Scorer,
    regions: &[Region],
    config: &DecodeConfig,
    plan: &LengthLevelPlan,
) -> Result<NarDecode, DecodeError> {
    config.validate(plan)?;
    let range = plan.range(config.level)?;
    let mut state = init_canvas(config.level, plan)?;
    let all = vec![true; range.high];
    predict_and_update(&mut state, &all, scorer, regions, config, range)?;
    let mut trace = vec![StepTrace {
        step: 1,
        masked: (1..=range.high).collect(),
        tokens: state.tokens.clone(),
        confidences: state.confidences.clone(),
    }];
    state.step = 2;
    let mut passes = 1;
    while state.step <= config.steps {
        let before = state.tokens.clone();
        let record = refine_step(&mut state, scorer, regions, config, plan)?;
        passes += 1;
        let idle = record.masked.is_empty() && state.tokens == before;
        trace.push(record);
        if config.early_stop && idle {
            break;
        }
    }
    Ok(NarDecode { caption: effective(&state.tokens).to_vec(), canvas: state.tokens, trace, passes })
}
