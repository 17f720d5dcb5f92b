#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};

use lencap::data::{generate_corpus, Corpus, Region};
use lencap::decoding::Scorer;
use lencap::model::{ModelConfig, ModelError};
use lencap::tensor::{Gradients, Tape, Tensor, Var};
use lencap::LengthLevelPlan;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small transformer with the full architecture, cheap enough for
/// exhaustive finite differences.
pub fn tiny_config(vocab: usize, levels: usize) -> ModelConfig {
    let mut c = ModelConfig::new(vocab, levels);
    c.d_model = 8;
    c.heads = 2;
    c.layers = 2;
    c.ff_dim = 16;
    c
}

pub fn small_corpus(seed: u64, scenes: usize) -> Corpus {
    generate_corpus(seed, scenes, &LengthLevelPlan::four_level()).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`; zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central finite differences for every element of every input. Returns
/// the largest per-input relative error.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Var,
{
    let mut grads = Gradients::zeros_like(inputs);
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(t, i)).collect();
        let out = f(&mut tape, &vars);
        tape.backward(out, &mut grads).unwrap();
    }
    let eval = |xs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant_ref(t)).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut numeric = vec![0.0; inputs[i].numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let up = eval(&xs);
            xs[i].data_mut()[j] = orig - h;
            let down = eval(&xs);
            xs[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        worst = worst.max(rel_err(grads.tensors[i].data(), &numeric));
    }
    worst
}

/// Scorer driven by a closure over the canvas; counts calls.
pub struct FnScorer<F> {
    pub f: F,
    pub calls: AtomicUsize,
}

impl<F> FnScorer<F> {
    pub fn new(f: F) -> Self {
        FnScorer { f, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<F> Scorer for FnScorer<F>
where
    F: Fn(usize, &[usize]) -> Tensor<f32> + Sync,
{
    fn probs(&self, _regions: &[Region], tokens: &[usize], _level: usize) -> Result<Tensor<f32>, ModelError> {
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        Ok((self.f)(call, tokens))
    }
}

/// Probability rows from explicit `(token, prob)` peaks; the remaining mass
/// is spread evenly over the other tokens.
pub fn peaked_rows(vocab: usize, peaks: &[(usize, f32)]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(peaks.len() * vocab);
    for &(tok, p) in peaks {
        let rest = (1.0 - p) / (vocab - 1) as f32;
        data.extend((0..vocab).map(|v| if v == tok { p } else { rest }));
    }
    Tensor::new(vec![peaks.len(), vocab], data).unwrap()
}

pub mod grad_suite;
pub mod oracles;
