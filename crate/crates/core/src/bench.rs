//! Forward-pass counts and wall-clock latency of both decoders.
//!
//! Pass counts are exact and machine independent; latencies are host
//! dependent and only ever compared ordinally.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::decoding::{decode_ar, decode_nar, ArScorer, Counting, DecodeConfig, DecodeError, NarScorer, Scorer};
use crate::model::{Checkpoint, ModelKind};

/// Which decoder a workload runs through.
#[derive(Debug, Clone, Copy)]
pub enum Decoder<'a> {
    Nar { ckpt: &'a Checkpoint, config: DecodeConfig },
    Ar { ckpt: &'a Checkpoint, level: usize },
}

impl Decoder<'_> {
    fn run(&self, scorer: &dyn Scorer, scene: &Scene) -> Result<usize, DecodeError> {
        match *self {
            Decoder::Nar { ckpt, config } => Ok(decode_nar(scorer, &scene.regions, &config, &ckpt.plan)?.caption.len()),
            Decoder::Ar { ckpt, level } => Ok(decode_ar(scorer, &scene.regions, level, &ckpt.plan)?.caption.len()),
        }
    }

    fn decode(&self, scene: &Scene) -> Result<(), DecodeError> {
        match *self {
            Decoder::Nar { ckpt, .. } => self.run(&NarScorer(&ckpt.params), scene),
            Decoder::Ar { ckpt, .. } => self.run(&ArScorer(&ckpt.params), scene),
        }
        .map(|_| ())
    }
}

/// Exact forward passes of every decode in `workload`, with the caption length.
pub fn count_forward_passes(decoder: &Decoder<'_>, workload: &[Scene]) -> Result<Vec<(usize, usize)>, DecodeError> {
    workload
        .iter()
        .map(|scene| {
            let len;
            let passes;
            match *decoder {
                Decoder::Nar { ckpt, .. } => {
                    let s = Counting::new(NarScorer(&ckpt.params));
                    len = decoder.run(&s, scene)?;
                    passes = s.count();
                }
                Decoder::Ar { ckpt, .. } => {
                    let s = Counting::new(ArScorer(&ckpt.params));
                    len = decoder.run(&s, scene)?;
                    passes = s.count();
                }
            }
            Ok((passes, len))
        })
        .collect()
}

/// Per-decode latency statistics in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub median_ms: f64,
    pub p90_ms: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Runs the workload `warmup` times untimed, then `repetitions` times
/// sequentially. Each repetition yields the mean latency per decode.
pub fn wallclock(decoder: &Decoder<'_>, workload: &[Scene], repetitions: usize, warmup: usize) -> Result<Latency, DecodeError> {
    for _ in 0..warmup {
        for s in workload {
            decoder.decode(s)?;
        }
    }
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions.max(1) {
        let t0 = Instant::now();
        for s in workload {
            decoder.decode(s)?;
        }
        samples.push(t0.elapsed().as_secs_f64() * 1e3 / workload.len().max(1) as f64);
    }
    samples.sort_by(f64::total_cmp);
    Ok(Latency { median_ms: percentile(&samples, 0.5), p90_ms: percentile(&samples, 0.9) })
}

/// Decodes per second with the workload spread over the rayon pool.
pub fn throughput(decoder: &Decoder<'_>, workload: &[Scene]) -> Result<f64, DecodeError> {
    let t0 = Instant::now();
    workload.par_iter().try_for_each(|s| decoder.decode(s))?;
    Ok(workload.len() as f64 / t0.elapsed().as_secs_f64().max(1e-12))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub steps: Option<usize>,
    pub mean_passes: f64,
    pub max_passes: usize,
    pub mean_length: f64,
    pub latency: Latency,
    /// Mean passes of the reference row over this row's.
    pub pass_speedup: f64,
    /// Median latency of the reference row over this row's.
    pub wall_speedup: f64,
    pub throughput: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format: String,
    /// One-based level decoded.
    pub level: usize,
    pub scenes: usize,
    pub repetitions: usize,
    /// Label of the row speedups are relative to (the largest `T`).
    pub reference: String,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub steps: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    /// Zero-based level; defaults to the last level of the plan.
    pub level: Option<usize>,
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { steps: vec![10, 12, 15, 20, 25], repetitions: 5, warmup: 1, level: None, parallel: false }
    }
}

/// One row per refine budget for every non-autoregressive checkpoint and one
/// baseline row per autoregressive checkpoint.
pub fn run_bench(ckpts: &[(String, &Checkpoint)], workload: &[Scene], opts: &BenchOptions) -> Result<BenchReport, DecodeError> {
    let mut rows = Vec::new();
    let mut level_used = 0;
    for (name, ckpt) in ckpts {
        let level = opts.level.unwrap_or(ckpt.plan.num_levels() - 1);
        level_used = level;
        let defaults = DecodeConfig::for_level(&ckpt.plan, level)?;
        let decoders: Vec<(String, Option<usize>, Decoder)> = match ckpt.kind {
            ModelKind::NonAutoregressive => opts
                .steps
                .iter()
                .map(|&t| (format!("{name}: {t} refine steps"), Some(t), Decoder::Nar { ckpt, config: DecodeConfig { steps: t, ..defaults } }))
                .collect(),
            ModelKind::Autoregressive => vec![(format!("{name}: autoregressive"), None, Decoder::Ar { ckpt, level })],
        };
        for (label, steps, dec) in decoders {
            let counts = count_forward_passes(&dec, workload)?;
            let latency = wallclock(&dec, workload, opts.repetitions, opts.warmup)?;
            let throughput = if opts.parallel { Some(throughput(&dec, workload)?) } else { None };
            let n = counts.len().max(1) as f64;
            rows.push(BenchRow {
                label,
                steps,
                mean_passes: counts.iter().map(|c| c.0 as f64).sum::<f64>() / n,
                max_passes: counts.iter().map(|c| c.0).max().unwrap_or(0),
                mean_length: counts.iter().map(|c| c.1 as f64).sum::<f64>() / n,
                latency,
                pass_speedup: 1.0,
                wall_speedup: 1.0,
                throughput,
            });
        }
    }
    let reference = rows
        .iter()
        .filter(|r| r.steps.is_some())
        .max_by_key(|r| r.steps)
        .or(rows.first())
        .cloned();
    if let Some(reference) = &reference {
        for r in &mut rows {
            r.pass_speedup = reference.mean_passes / r.mean_passes;
            r.wall_speedup = reference.latency.median_ms / r.latency.median_ms;
        }
    }
    Ok(BenchReport {
        format: "lencap-bench 1".into(),
        level: level_used + 1,
        scenes: workload.len(),
        repetitions: opts.repetitions,
        reference: reference.map(|r| r.label).unwrap_or_default(),
        rows,
    })
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "level {}, {} scenes, {} repetitions; speedups relative to \"{}\"",
            self.level, self.scenes, self.repetitions, self.reference
        );
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "{:<width$} {:>7} {:>5} {:>7} {:>10} {:>10} {:>9} {:>9} {:>10}",
            "decoder", "passes", "max", "length", "median ms", "p90 ms", "x passes", "x wall", "decodes/s"
        );
        for r in &self.rows {
            let tp = r.throughput.map(|t| format!("{t:.1}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<width$} {:>7.2} {:>5} {:>7.2} {:>10.3} {:>10.3} {:>9.2} {:>9.2} {:>10}",
                r.label, r.mean_passes, r.max_passes, r.mean_length, r.latency.median_ms, r.latency.p90_ms, r.pass_speedup, r.wall_speedup, tp
            );
        }
        out
    }
}
