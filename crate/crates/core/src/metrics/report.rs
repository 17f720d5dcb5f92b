use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{control_precision, distinctness, div_n, length_histogram, BleuStats, LengthHistogram, MetricError};
use crate::data::{Corpus, Scene};
use crate::decoding::{decode_ar, decode_nar, ArScorer, DecodeConfig, DecodeError, NarScorer};
use crate::levels::LengthLevelPlan;
use crate::model::{Checkpoint, ModelKind};

/// Step budgets used to draw several captions per image from a model that
/// has a single length level.
pub const DIVERSITY_STEPS: [usize; 4] = [10, 15, 20, 25];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub scene: usize,
    pub level: usize,
    pub caption: Vec<usize>,
    pub passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    /// One-based level of the model's plan.
    pub level: usize,
    pub low: usize,
    pub high: usize,
    pub decodes: usize,
    pub precision: f64,
    pub mean_length: f64,
    pub mean_passes: f64,
    /// BLEU@1..4.
    pub bleu: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub precision: f64,
    pub mean_length: f64,
    pub bleu4: f64,
    /// Fraction of decodes whose caption differs from the full decoder's.
    pub changed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub kind: ModelKind,
    pub plan: String,
    pub levels: Vec<LevelRow>,
    pub div1: f64,
    pub div2: f64,
    pub distinctness: f64,
    /// How the per-image caption set for diversity was drawn.
    pub diversity_source: String,
    /// Lengths of all level decodes bucketed by the histogram plan.
    pub histogram: LengthHistogram,
    /// Level (one-based) the ablation rows were measured on.
    pub ablation_level: Option<usize>,
    pub ablation: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub histogram_plan: String,
    pub scenes: usize,
    pub models: Vec<ModelReport>,
}

/// Corpus references for a caption commanded at `range` of a model plan.
/// When the model plan equals the corpus plan this is that level's set;
/// otherwise every corpus reference whose length falls in the range.
fn references_for(scene: &Scene, corpus_plan: &LengthLevelPlan, model_plan: &LengthLevelPlan, level: usize) -> Vec<Vec<usize>> {
    if model_plan == corpus_plan {
        return scene.references[level].clone();
    }
    let range = model_plan.levels()[level];
    let refs: Vec<Vec<usize>> = scene.references.iter().flatten().filter(|r| range.contains(r.len())).cloned().collect();
    if refs.is_empty() {
        scene.references.iter().flatten().cloned().collect()
    } else {
        refs
    }
}

fn decode_one(ckpt: &Checkpoint, scene: &Scene, config: &DecodeConfig) -> Result<(Vec<usize>, usize), DecodeError> {
    match ckpt.kind {
        ModelKind::NonAutoregressive => {
            let d = decode_nar(&NarScorer(&ckpt.params), &scene.regions, config, &ckpt.plan)?;
            Ok((d.caption, d.passes))
        }
        ModelKind::Autoregressive => {
            let d = decode_ar(&ArScorer(&ckpt.params), &scene.regions, config.level, &ckpt.plan)?;
            Ok((d.caption, d.passes))
        }
    }
}

/// Decodes every scene under `config_for(level)` at every level.
fn decode_all(
    ckpt: &Checkpoint,
    scenes: &[Scene],
    configs: &[DecodeConfig],
) -> Result<Vec<Vec<(Vec<usize>, usize)>>, DecodeError> {
    scenes
        .par_iter()
        .map(|scene| configs.iter().map(|c| decode_one(ckpt, scene, c)).collect())
        .collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-image Div-n averaged over images that contain at least one n-gram.
fn mean_div(sets: &[Vec<Vec<usize>>], n: usize) -> f64 {
    mean(sets.iter().filter_map(|s| div_n(s, n).ok()))
}

fn model_report(
    name: &str,
    ckpt: &Checkpoint,
    corpus: &Corpus,
    histogram_plan: &LengthLevelPlan,
    ablation_level: Option<usize>,
) -> Result<ModelReport, EvalError> {
    let plan = &ckpt.plan;
    let scenes = &corpus.scenes;
    let configs: Vec<DecodeConfig> = (0..plan.num_levels())
        .map(|l| DecodeConfig::for_level(plan, l))
        .collect::<Result<_, _>>()
        .map_err(DecodeError::from)?;
    let decoded = decode_all(ckpt, scenes, &configs)?;

    let mut levels = Vec::with_capacity(plan.num_levels());
    let pairs: Vec<(usize, usize)> =
        decoded.iter().flat_map(|per| per.iter().enumerate().map(|(l, (c, _))| (l, c.len()))).collect();
    let precision = control_precision(&pairs, plan)?;
    for (l, range) in plan.levels().iter().enumerate() {
        let mut stats = BleuStats::new(4);
        for (s, per) in decoded.iter().enumerate() {
            stats.add(&per[l].0, &references_for(&scenes[s], &corpus.plan, plan, l));
        }
        levels.push(LevelRow {
            level: l + 1,
            low: range.low,
            high: range.high,
            decodes: decoded.len(),
            precision: precision[l].unwrap_or(0.0),
            mean_length: mean(decoded.iter().map(|per| per[l].0.len() as f64)),
            mean_passes: mean(decoded.iter().map(|per| per[l].1 as f64)),
            bleu: [stats.score(1), stats.score(2), stats.score(3), stats.score(4)],
        });
    }
    let histogram = length_histogram(decoded.iter().flat_map(|per| per.iter().map(|(c, _)| c.len())), histogram_plan);

    let (sets, diversity_source): (Vec<Vec<Vec<usize>>>, String) =
        if plan.num_levels() > 1 || ckpt.kind == ModelKind::Autoregressive {
            (decoded.iter().map(|per| per.iter().map(|(c, _)| c.clone()).collect()).collect(), "one caption per level".into())
        } else {
            let steps: Vec<DecodeConfig> = DIVERSITY_STEPS.iter().map(|&t| DecodeConfig { steps: t, ..configs[0] }).collect();
            let d = decode_all(ckpt, scenes, &steps)?;
            (
                d.into_iter().map(|per| per.into_iter().map(|(c, _)| c).collect()).collect(),
                format!("one caption per refine budget T in {DIVERSITY_STEPS:?}"),
            )
        };
    let div1 = mean_div(&sets, 1);
    let div2 = mean_div(&sets, 2);
    let distinct = mean(sets.iter().map(|s| distinctness(s)));

    let mut ablation = Vec::new();
    let ablation_level = ablation_level.filter(|&l| l < plan.num_levels() && ckpt.kind == ModelKind::NonAutoregressive);
    if let Some(l) = ablation_level {
        let full = configs[l];
        let variants = [
            ("full", full),
            ("no global update", DecodeConfig { global_update: false, ..full }),
            ("no EOS decay", DecodeConfig { gamma: 1.0, ..full }),
            ("neither", DecodeConfig { global_update: false, gamma: 1.0, ..full }),
        ];
        let cfgs: Vec<DecodeConfig> = variants.iter().map(|v| v.1).collect();
        let d = decode_all(ckpt, scenes, &cfgs)?;
        for (v, (label, _)) in variants.iter().enumerate() {
            let mut stats = BleuStats::new(4);
            let mut hits = 0usize;
            let mut changed = 0usize;
            for (s, per) in d.iter().enumerate() {
                let cap = &per[v].0;
                stats.add(cap, &references_for(&scenes[s], &corpus.plan, plan, l));
                hits += usize::from(plan.levels()[l].contains(cap.len()));
                changed += usize::from(*cap != per[0].0);
            }
            let n = d.len().max(1) as f64;
            ablation.push(AblationRow {
                variant: label.to_string(),
                precision: hits as f64 / n,
                mean_length: mean(d.iter().map(|per| per[v].0.len() as f64)),
                bleu4: stats.score(4),
                changed: changed as f64 / n,
            });
        }
    }

    Ok(ModelReport {
        name: name.to_string(),
        kind: ckpt.kind,
        plan: plan.to_string(),
        levels,
        div1,
        div2,
        distinctness: distinct,
        diversity_source,
        histogram,
        ablation_level: ablation_level.map(|l| l + 1),
        ablation,
    })
}

/// Evaluates each named checkpoint on every scene of `corpus`. Decoded
/// lengths are bucketed by `histogram_plan`; `ablation_level` (zero-based)
/// adds the decoder ablation rows for non-autoregressive models.
pub fn evaluate(
    models: &[(String, &Checkpoint)],
    corpus: &Corpus,
    histogram_plan: &LengthLevelPlan,
    ablation_level: Option<usize>,
) -> Result<EvalReport, EvalError> {
    let hash = corpus.vocab.hash();
    let mut reports = Vec::with_capacity(models.len());
    for (name, ckpt) in models {
        if ckpt.vocab_hash != hash {
            return Err(EvalError::Mismatch(format!(
                "{name}: checkpoint vocabulary {} does not match corpus vocabulary {hash}",
                ckpt.vocab_hash
            )));
        }
        reports.push(model_report(name, ckpt, corpus, histogram_plan, ablation_level)?);
    }
    Ok(EvalReport {
        format: "lencap-eval 1".into(),
        histogram_plan: histogram_plan.to_string(),
        scenes: corpus.scenes.len(),
        models: reports,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text rendering.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} scenes, lengths bucketed by plan {}", self.scenes, self.histogram_plan);
        for m in &self.models {
            let _ = writeln!(out, "\n{} ({:?}, plan {})", m.name, m.kind, m.plan);
            let _ = writeln!(
                out,
                "  {:<10} {:>9} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7}",
                "level", "precision", "mean len", "passes", "B@1", "B@2", "B@3", "B@4"
            );
            for r in &m.levels {
                let _ = writeln!(
                    out,
                    "  {:<10} {:>9.3} {:>8.2} {:>7.2} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
                    format!("{} ({}-{})", r.level, r.low, r.high),
                    r.precision,
                    r.mean_length,
                    r.mean_passes,
                    r.bleu[0],
                    r.bleu[1],
                    r.bleu[2],
                    r.bleu[3]
                );
            }
            let _ = writeln!(
                out,
                "  Div-1 {:.3}  Div-2 {:.3}  distinct {:.3}  ({})",
                m.div1, m.div2, m.distinctness, m.diversity_source
            );
            let fr = m.histogram.fractions();
            let cells: Vec<String> = fr.iter().enumerate().map(|(i, f)| format!("L{}={:.3}", i + 1, f)).collect();
            let _ = writeln!(out, "  length histogram: {}  out-of-range={}", cells.join(" "), m.histogram.out_of_range);
            if let Some(level) = m.ablation_level {
                let _ = writeln!(out, "  ablation on level {level}:");
                let _ = writeln!(out, "    {:<18} {:>9} {:>8} {:>7} {:>8}", "variant", "precision", "mean len", "B@4", "changed");
                for a in &m.ablation {
                    let _ = writeln!(
                        out,
                        "    {:<18} {:>9.3} {:>8.2} {:>7.3} {:>8.3}",
                        a.variant, a.precision, a.mean_length, a.bleu4, a.changed
                    );
                }
            }
        }
        out
    }
}
