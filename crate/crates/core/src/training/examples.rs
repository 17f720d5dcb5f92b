use rand::seq::index;
use rand::Rng;

use crate::data::{Region, BOS, EOS, MASK};
use crate::levels::{LengthLevelPlan, LevelError};

/// One training sequence. `flags` marks the positions that contribute to the
/// loss; every other position is ignored by the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<'c> {
    pub regions: &'c [Region],
    pub level: usize,
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    pub flags: Vec<bool>,
}

/// Masked-LM example before it is attached to a scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedExample {
    pub level: usize,
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    pub flags: Vec<bool>,
}

/// Pads `reference` with `[EOS]` to the `L_high` of its level, draws
/// `m ~ U[1, L_high]` and replaces `m` distinct uniformly chosen positions
/// with `[MASK]`.
pub fn make_masked_example<R: Rng + ?Sized>(
    reference: &[usize],
    plan: &LengthLevelPlan,
    rng: &mut R,
) -> Result<MaskedExample, LevelError> {
    let level = plan.assign_level(reference.len())?;
    let l_high = plan.levels()[level].high;
    let m = rng.gen_range(1..=l_high);
    make_masked_example_with(reference, plan, m, rng)
}

/// [`make_masked_example`] with a caller-chosen mask count `m`
/// (clamped to `[1, L_high]`).
pub fn make_masked_example_with<R: Rng + ?Sized>(
    reference: &[usize],
    plan: &LengthLevelPlan,
    m: usize,
    rng: &mut R,
) -> Result<MaskedExample, LevelError> {
    let level = plan.assign_level(reference.len())?;
    let l_high = plan.levels()[level].high;
    let m = m.clamp(1, l_high);
    let mut target = reference.to_vec();
    target.resize(l_high, EOS);
    let mut input = target.clone();
    let mut flags = vec![false; l_high];
    for i in index::sample(rng, l_high, m) {
        input[i] = MASK;
        flags[i] = true;
    }
    Ok(MaskedExample { level, input, target, flags })
}

/// `[BOS] + reference` as input, `reference + [EOS]` as target, every
/// position supervised.
pub fn make_ar_example(reference: &[usize], plan: &LengthLevelPlan) -> Result<MaskedExample, LevelError> {
    let level = plan.assign_level(reference.len())?;
    let mut input = Vec::with_capacity(reference.len() + 1);
    input.push(BOS);
    input.extend_from_slice(reference);
    let mut target = reference.to_vec();
    target.push(EOS);
    let flags = vec![true; target.len()];
    Ok(MaskedExample { level, input, target, flags })
}

impl MaskedExample {
    pub fn attach(self, regions: &[Region]) -> Example<'_> {
        Example { regions, level: self.level, input: self.input, target: self.target, flags: self.flags }
    }

    pub fn mask_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}
