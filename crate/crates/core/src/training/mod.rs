//! Objectives, masking, optimizer and the training loop.
//!
//! The masked-LM objective trains the non-autoregressive decoder on
//! `[EOS]`-padded canvases with `m ~ U[1, L_high]` masked positions; the
//! teacher-forcing objective trains the autoregressive baseline. Both share
//! the batch machinery in [`step`].

mod examples;
mod optim;
mod step;

pub use examples::{make_ar_example, make_masked_example, make_masked_example_with, Example, MaskedExample};
pub use optim::{clip_global_norm, lr_at, AdamW};
pub use step::{batch_loss, masked_step, teacher_forcing_step, BatchLoss};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::levels::LengthLevelPlan;
use crate::model::{Checkpoint, ModelConfig, ModelError, ModelKind, ModelParams};
use crate::tensor::TensorError;

pub const LOSS_LOG_HEADER: &str = "# lencap-loss-log 1: iteration loss lr";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Masked-LM loss over `[MASK]` positions; produces a non-autoregressive model.
    Masked,
    /// Next-token loss; produces an autoregressive model.
    #[serde(alias = "ar")]
    TeacherForcing,
}

impl Objective {
    pub fn kind(self) -> ModelKind {
        match self {
            Objective::Masked => ModelKind::NonAutoregressive,
            Objective::TeacherForcing => ModelKind::Autoregressive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub peak_lr: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub objective: Objective,
    /// Write `checkpoint-<iteration>.ckpt` every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            iterations: 2000,
            peak_lr: 1e-3,
            warmup: 200,
            weight_decay: 1e-2,
            label_smoothing: 0.1,
            grad_clip: 1.0,
            seed: 0,
            objective: Objective::Masked,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.batch_size == 0 {
            errs.push("train.batch_size must be positive".to_string());
        }
        if self.iterations == 0 {
            errs.push("train.iterations must be positive".to_string());
        }
        if self.warmup >= self.iterations {
            errs.push(format!("train.warmup ({}) must be less than train.iterations ({})", self.warmup, self.iterations));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            errs.push(format!("train.peak_lr ({}) must be positive", self.peak_lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            errs.push(format!("train.weight_decay ({}) must be non-negative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            errs.push(format!("train.label_smoothing ({}) must lie in [0, 1)", self.label_smoothing));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            errs.push(format!("train.grad_clip ({}) must be positive", self.grad_clip));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f32,
    pub lr: f64,
}

/// A supervised sequence in the training pool: scene index and reference.
#[derive(Debug, Clone, Copy)]
struct PoolItem {
    scene: usize,
    corpus_level: usize,
    reference: usize,
}

/// Stateful training loop over one corpus.
pub struct Trainer<'c> {
    pub config: TrainConfig,
    pub plan: LengthLevelPlan,
    pub params: ModelParams<f32>,
    corpus: &'c Corpus,
    optimizer: AdamW,
    decays: Vec<bool>,
    pool: Vec<PoolItem>,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'c> Trainer<'c> {
    /// `model.vocab_size` and `model.num_levels` must match the corpus
    /// vocabulary and `plan`. References longer than the plan's maximum are
    /// excluded from the pool.
    pub fn new(config: TrainConfig, model: ModelConfig, corpus: &'c Corpus, plan: LengthLevelPlan) -> Result<Self, TrainError> {
        let mut errs = config.validate().err().unwrap_or_default();
        errs.extend(model.validate().err().unwrap_or_default());
        if model.vocab_size != corpus.vocab.len() {
            errs.push(format!("model.vocab_size ({}) differs from the corpus vocabulary ({})", model.vocab_size, corpus.vocab.len()));
        }
        if model.num_levels != plan.num_levels() {
            errs.push(format!("model.num_levels ({}) differs from the plan ({} levels)", model.num_levels, plan.num_levels()));
        }
        if model.max_positions < plan.max_length() + 1 {
            errs.push(format!(
                "model.max_positions ({}) must exceed the plan maximum length ({})",
                model.max_positions,
                plan.max_length()
            ));
        }
        let pool: Vec<PoolItem> = corpus
            .scenes
            .iter()
            .enumerate()
            .flat_map(|(s, scene)| {
                scene.references.iter().enumerate().flat_map(move |(l, refs)| {
                    (0..refs.len()).map(move |r| PoolItem { scene: s, corpus_level: l, reference: r })
                })
            })
            .filter(|it| plan.assign_level(corpus.scenes[it.scene].references[it.corpus_level][it.reference].len()).is_ok())
            .collect();
        if pool.is_empty() {
            errs.push("corpus holds no reference inside the plan's length range".into());
        }
        if !errs.is_empty() {
            return Err(TrainError::Config(errs));
        }
        let params = ModelParams::<f32>::init(model, config.seed);
        let optimizer = AdamW::new(&params.tensors, config.weight_decay as f32);
        let decays = params.specs.iter().map(|s| s.decays()).collect();
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e_5f62_6174);
        Ok(Trainer { config, plan, params, corpus, optimizer, decays, pool, rng, iteration: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draws the next batch: items uniformly with replacement, masking per
    /// example.
    pub fn next_batch(&mut self) -> Vec<Example<'c>> {
        let corpus = self.corpus;
        (0..self.config.batch_size)
            .map(|_| {
                let it = self.pool[self.rng.gen_range(0..self.pool.len())];
                let scene = &corpus.scenes[it.scene];
                let reference = &scene.references[it.corpus_level][it.reference];
                let ex = match self.config.objective {
                    Objective::Masked => make_masked_example(reference, &self.plan, &mut self.rng),
                    Objective::TeacherForcing => make_ar_example(reference, &self.plan),
                }
                .expect("pool holds in-range references only");
                ex.attach(&scene.regions)
            })
            .collect()
    }

    /// Forward, backward, clip and update on one fresh batch.
    pub fn step(&mut self) -> Result<LogEntry, TrainError> {
        let iteration = self.iteration + 1;
        let batch = self.next_batch();
        let smoothing = self.config.label_smoothing as f32;
        let diverged = |detail: String| TrainError::Divergence { iteration, detail };
        let out = match self.config.objective {
            Objective::Masked => masked_step(&self.params, &batch, smoothing),
            Objective::TeacherForcing => teacher_forcing_step(&self.params, &batch, smoothing),
        };
        let out = match out {
            Err(ModelError::Tensor(e @ TensorError::NonFinite { .. })) => return Err(diverged(e.to_string())),
            other => other?,
        };
        if !out.loss.is_finite() {
            return Err(diverged(format!("loss is {}", out.loss)));
        }
        let mut grads = out.grads.expect("gradients requested");
        if !grads.is_finite() {
            return Err(diverged("non-finite gradient".into()));
        }
        clip_global_norm(&mut grads, self.config.grad_clip as f32);
        let lr = lr_at(iteration, self.config.warmup, self.config.iterations, self.config.peak_lr);
        self.optimizer.step(&mut self.params.tensors, &grads, &self.decays, lr as f32);
        if !self.params.is_finite() {
            return Err(diverged("non-finite parameter after update".into()));
        }
        self.iteration = iteration;
        Ok(LogEntry { iteration, loss: out.loss, lr })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: self.config.objective.kind(),
            plan: self.plan.clone(),
            vocab_hash: self.corpus.vocab.hash(),
            iteration: self.iteration,
            params: self.params.clone(),
        }
    }
}

/// Output files of a training run inside `out_dir`.
pub fn final_checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("model.ckpt")
}

pub fn loss_log_path(out_dir: &Path) -> PathBuf {
    out_dir.join("loss.log")
}

/// Runs `config.iterations` steps. With `out_dir`, appends every step to
/// `loss.log`, writes periodic `checkpoint-<iteration>.ckpt` files and the
/// final `model.ckpt`.
pub fn train(
    config: TrainConfig,
    model: ModelConfig,
    corpus: &Corpus,
    plan: LengthLevelPlan,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&LogEntry),
) -> Result<(Checkpoint, Vec<LogEntry>), TrainError> {
    let mut trainer = Trainer::new(config, model, corpus, plan)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io(dir))?;
            let path = loss_log_path(dir);
            let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
            writeln!(w, "{LOSS_LOG_HEADER}").map_err(io(&path))?;
            Some((w, path))
        }
        None => None,
    };
    let mut log = Vec::with_capacity(trainer.config.iterations);
    while trainer.iteration() < trainer.config.iterations {
        let entry = trainer.step()?;
        progress(&entry);
        if let Some((w, path)) = log_file.as_mut() {
            writeln!(w, "{} {:.6} {:.6e}", entry.iteration, entry.loss, entry.lr).map_err(io(path))?;
        }
        log.push(entry);
        let every = trainer.config.checkpoint_every;
        if let Some(dir) = out_dir {
            if every > 0 && entry.iteration % every == 0 && entry.iteration < trainer.config.iterations {
                let path = dir.join(format!("checkpoint-{:06}.ckpt", entry.iteration));
                trainer.checkpoint().save(&path)?;
            }
        }
    }
    if let Some((mut w, path)) = log_file {
        w.flush().map_err(io(&path))?;
    }
    let ckpt = trainer.checkpoint();
    if let Some(dir) = out_dir {
        ckpt.save(&final_checkpoint_path(dir))?;
    }
    Ok((ckpt, log))
}
