//! Control precision, Div-n, BLEU and length histograms, plus the
//! evaluation report that combines them.

mod report;

pub use report::{evaluate, AblationRow, EvalError, DecodeRecord, EvalReport, LevelRow, ModelReport, DIVERSITY_STEPS};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::levels::{LengthLevelPlan, LevelError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error("no {0}-grams in the caption set")]
    NoNgrams(usize),
    #[error("n must be positive")]
    ZeroOrder,
}

/// Fraction of decodes per level whose effective length lies in the
/// commanded level's range; `None` for levels without decodes.
pub fn control_precision(decodes: &[(usize, usize)], plan: &LengthLevelPlan) -> Result<Vec<Option<f64>>, MetricError> {
    let k = plan.num_levels();
    let mut hit = vec![0usize; k];
    let mut total = vec![0usize; k];
    for &(level, len) in decodes {
        let range = plan.range(level)?;
        total[level] += 1;
        hit[level] += usize::from(range.contains(len));
    }
    Ok(hit.iter().zip(&total).map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64)).collect())
}

fn ngrams(tokens: &[usize], n: usize) -> impl Iterator<Item = &[usize]> {
    tokens.windows(n)
}

/// Distinct n-grams over total n-grams across one caption set.
pub fn div_n(captions: &[Vec<usize>], n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::ZeroOrder);
    }
    let mut distinct = HashSet::new();
    let mut total = 0usize;
    for c in captions {
        for g in ngrams(c, n) {
            distinct.insert(g);
            total += 1;
        }
    }
    if total == 0 {
        return Err(MetricError::NoNgrams(n));
    }
    Ok(distinct.len() as f64 / total as f64)
}

/// Fraction of distinct captions in a set.
pub fn distinctness(captions: &[Vec<usize>]) -> f64 {
    if captions.is_empty() {
        return 0.0;
    }
    let distinct: HashSet<&Vec<usize>> = captions.iter().collect();
    distinct.len() as f64 / captions.len() as f64
}

/// Clipped n-gram matches and candidate n-gram count for one order.
fn clipped_counts(candidate: &[usize], references: &[Vec<usize>], n: usize) -> (usize, usize) {
    let mut cand: HashMap<&[usize], usize> = HashMap::new();
    for g in ngrams(candidate, n) {
        *cand.entry(g).or_default() += 1;
    }
    let mut max_ref: HashMap<&[usize], usize> = HashMap::new();
    for r in references {
        let mut counts: HashMap<&[usize], usize> = HashMap::new();
        for g in ngrams(r, n) {
            *counts.entry(g).or_default() += 1;
        }
        for (g, c) in counts {
            let e = max_ref.entry(g).or_default();
            *e = (*e).max(c);
        }
    }
    let matched = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_ref_len(c: usize, references: &[Vec<usize>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Running sums for corpus BLEU.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matched: Vec<usize>,
    pub total: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn new(max_n: usize) -> Self {
        BleuStats { matched: vec![0; max_n], total: vec![0; max_n], candidate_len: 0, reference_len: 0 }
    }

    pub fn add(&mut self, candidate: &[usize], references: &[Vec<usize>]) {
        for n in 1..=self.matched.len() {
            let (m, t) = clipped_counts(candidate, references, n);
            self.matched[n - 1] += m;
            self.total[n - 1] += t;
        }
        self.candidate_len += candidate.len();
        self.reference_len += closest_ref_len(candidate.len(), references);
    }

    /// BLEU with orders `1..=n`. Orders for which the candidates contain no
    /// n-grams at all are left out of the geometric mean.
    pub fn score(&self, n: usize) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for k in 0..n.min(self.matched.len()) {
            if self.total[k] == 0 {
                continue;
            }
            if self.matched[k] == 0 {
                return 0.0;
            }
            log_sum += (self.matched[k] as f64 / self.total[k] as f64).ln();
            orders += 1;
        }
        if orders == 0 {
            return 0.0;
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * (log_sum / orders as f64).exp()
    }
}

/// Sentence BLEU: clipped modified precision, geometric mean over orders
/// `1..=max_n` present in the candidate, brevity penalty against the
/// closest reference length. An empty candidate scores 0.
pub fn bleu(candidate: &[usize], references: &[Vec<usize>], max_n: usize) -> f64 {
    let mut s = BleuStats::new(max_n);
    s.add(candidate, references);
    s.score(max_n)
}

/// Corpus BLEU over `(candidate, references)` pairs.
pub fn corpus_bleu(pairs: &[(Vec<usize>, Vec<Vec<usize>>)], max_n: usize) -> f64 {
    let mut s = BleuStats::new(max_n);
    for (c, refs) in pairs {
        s.add(c, refs);
    }
    s.score(max_n)
}

/// Counts of lengths per plan level; lengths outside `[1, max]` (an empty
/// caption, for instance) go to `out_of_range`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthHistogram {
    pub per_level: Vec<usize>,
    pub out_of_range: usize,
}

impl LengthHistogram {
    pub fn total(&self) -> usize {
        self.per_level.iter().sum::<usize>() + self.out_of_range
    }

    pub fn fractions(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.per_level.iter().map(|&c| c as f64 / t).collect()
    }
}

pub fn length_histogram(lengths: impl IntoIterator<Item = usize>, plan: &LengthLevelPlan) -> LengthHistogram {
    let mut h = LengthHistogram { per_level: vec![0; plan.num_levels()], out_of_range: 0 };
    for len in lengths {
        match plan.bucket(len) {
            Some(l) => h.per_level[l] += 1,
            None => h.out_of_range += 1,
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_counts_inclusive_bounds() {
        let plan = LengthLevelPlan::four_level();
        let d: Vec<(usize, usize)> = [9, 10, 14, 15].iter().map(|&l| (1, l)).collect();
        let p = control_precision(&d, &plan).unwrap();
        assert_eq!(p, vec![None, Some(0.5), None, None]);
        assert_eq!(control_precision(&[(0, 3); 10], &plan).unwrap()[0], Some(1.0));
        assert!(control_precision(&[(4, 3)], &plan).is_err());
    }

    #[test]
    fn div_hand_counts() {
        assert_eq!(div_n(&[vec![1, 2], vec![1, 3]], 1).unwrap(), 0.75);
        assert_eq!(div_n(&[vec![4, 5, 6]], 1).unwrap(), 1.0);
        assert_eq!(div_n(&[vec![4, 5, 6], vec![4, 5, 6]], 1).unwrap(), 0.5);
        assert!(div_n(&[vec![4]], 2).is_err());
        assert_eq!(distinctness(&[vec![1], vec![1], vec![2], vec![3]]), 0.75);
    }

    #[test]
    fn bleu_bounds() {
        let x = vec![3, 4, 5, 6, 7];
        assert_eq!(bleu(&x, &[x.clone()], 4), 1.0);
        assert_eq!(bleu(&[9], &[vec![9]], 4), 1.0);
        assert_eq!(bleu(&x, &[vec![10, 11, 12]], 4), 0.0);
        assert_eq!(bleu(&[], &[x.clone()], 4), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        // Perfect precision, 7 tokens against a 10-token reference.
        let r: Vec<usize> = (0..10).collect();
        let c: Vec<usize> = (0..7).collect();
        let expected = (1.0f64 - 10.0 / 7.0).exp();
        assert!((bleu(&c, &[r], 4) - expected).abs() < 1e-12);
    }

    #[test]
    fn histogram_conserves() {
        let plan = LengthLevelPlan::four_level();
        let h = length_histogram([0, 3, 9, 10, 25, 26], &plan);
        assert_eq!(h.per_level, vec![2, 1, 0, 1]);
        assert_eq!(h.out_of_range, 2);
        assert_eq!(h.total(), 6);
    }
}
