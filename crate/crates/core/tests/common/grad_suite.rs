//! Gradient checks shared by the unit suite and the acceptance run. Each
//! returns the largest relative error between reverse-mode and central
//! finite-difference gradients at 64-bit precision.

use lencap::data::{BOS, EOS, MASK};
use lencap::model::{forward, Attention, ModelParams};
use lencap::tensor::{Gradients, Tape, Var};
use rand::Rng;

use super::{grad_check, random_tensor, rel_err, rng, small_corpus, tiny_config};

/// Reduces any tensor to a scalar through fixed random weights so every
/// output element carries a distinct upstream gradient.
fn weighted_sum<'a>(tape: &mut Tape<'a, f64>, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let w = random_tensor(&mut rng(seed), &shape, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(x, w).unwrap();
    tape.sum(p).unwrap()
}

pub fn matmul() -> f64 {
    let mut r = rng(1);
    let inputs = [random_tensor(&mut r, &[4, 3], 1.0), random_tensor(&mut r, &[3, 2], 1.0)];
    grad_check(&inputs, |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 9)
    })
}

pub fn transpose_add_mul_scale() -> f64 {
    let mut r = rng(2);
    let inputs = [random_tensor(&mut r, &[3, 5], 1.0), random_tensor(&mut r, &[5, 3], 1.0)];
    grad_check(&inputs, |t, v| {
        let at = t.transpose(v[0]).unwrap();
        let s = t.add(at, v[1]).unwrap();
        let m = t.mul(s, v[1]).unwrap();
        let y = t.scale(m, 0.37).unwrap();
        weighted_sum(t, y, 3)
    })
}

pub fn add_row_and_gelu() -> f64 {
    let mut r = rng(3);
    let inputs = [random_tensor(&mut r, &[4, 6], 2.0), random_tensor(&mut r, &[6], 1.0)];
    grad_check(&inputs, |t, v| {
        let x = t.add_row(v[0], v[1]).unwrap();
        let y = t.gelu(x).unwrap();
        weighted_sum(t, y, 4)
    })
}

pub fn layer_norm() -> f64 {
    let mut r = rng(4);
    let inputs = [random_tensor(&mut r, &[3, 8], 2.0), random_tensor(&mut r, &[8], 1.0), random_tensor(&mut r, &[8], 1.0)];
    let affine = grad_check(&inputs, |t, v| {
        let y = t.layer_norm(v[0], Some(v[1]), Some(v[2]), 1e-5).unwrap();
        weighted_sum(t, y, 5)
    });
    let plain = grad_check(&inputs[..1], |t, v| {
        let y = t.layer_norm(v[0], None, None, 1e-5).unwrap();
        weighted_sum(t, y, 6)
    });
    affine.max(plain)
}

pub fn softmax() -> f64 {
    let mut r = rng(5);
    let inputs = [random_tensor(&mut r, &[4, 4], 2.0)];
    let plain = grad_check(&inputs, |t, v| {
        let y = t.softmax(v[0], None).unwrap();
        weighted_sum(t, y, 7)
    });
    let allowed: Vec<bool> = (0..16).map(|k| k % 4 <= k / 4).collect();
    let masked = grad_check(&inputs, |t, v| {
        let y = t.softmax(v[0], Some(&allowed)).unwrap();
        weighted_sum(t, y, 8)
    });
    plain.max(masked)
}

pub fn gather_slices_and_concats() -> f64 {
    let mut r = rng(6);
    let inputs = [random_tensor(&mut r, &[5, 4], 1.0), random_tensor(&mut r, &[3, 2], 1.0)];
    grad_check(&inputs, |t, v| {
        let g = t.gather(v[0], &[4, 0, 4]).unwrap();
        let c = t.slice_cols(g, 1, 2).unwrap();
        let cc = t.concat_cols(&[c, v[1]]).unwrap();
        let rows = t.slice_rows(v[0], 1, 2).unwrap();
        let top = t.concat_rows(&[cc, rows]).unwrap();
        weighted_sum(t, top, 10)
    })
}

pub fn cross_entropy() -> f64 {
    let mut r = rng(7);
    let inputs = [random_tensor(&mut r, &[5, 6], 2.0)];
    let targets = [1, 5, 0, 2, 2];
    let flags = [true, false, true, true, false];
    [0.0, 0.1]
        .iter()
        .map(|&s| grad_check(&inputs, |t, v| t.cross_entropy(v[0], &targets, &flags, s).unwrap()))
        .fold(0.0, f64::max)
}

/// Per-parameter errors of a smoothed cross-entropy through the full model.
fn model_errors(attention: Attention, tokens: &[usize], targets: &[usize], flags: &[bool]) -> Vec<(String, f64)> {
    let corpus = small_corpus(3, 2);
    let regions = &corpus.scenes[0].regions;
    let cfg = tiny_config(corpus.vocab.len(), 4);
    let mut params = ModelParams::<f32>::init(cfg, 5).cast::<f64>();
    // Give biases, gains and every table non-trivial values.
    let mut r = rng(8);
    for t in &mut params.tensors {
        for v in t.data_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    let loss = |p: &ModelParams<f64>, trainable: bool, grads: Option<&mut Gradients<f64>>| -> f64 {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, trainable);
        let logits = forward(&mut tape, p, &b, regions, tokens, 2, attention).unwrap();
        let l = tape.cross_entropy(logits, targets, flags, 0.1).unwrap();
        let v = tape.value(l).data()[0];
        if let Some(g) = grads {
            tape.backward(l, g).unwrap();
        }
        v
    };
    let mut grads = Gradients::zeros_like(&params.tensors);
    loss(&params, true, Some(&mut grads));
    let h = 1e-5;
    let mut out = Vec::new();
    for i in 0..params.tensors.len() {
        let mut numeric = vec![0.0; params.tensors[i].numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = params.tensors[i].data()[j];
            params.tensors[i].data_mut()[j] = orig + h;
            let up = loss(&params, false, None);
            params.tensors[i].data_mut()[j] = orig - h;
            let down = loss(&params, false, None);
            params.tensors[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        out.push((params.specs[i].name.clone(), rel_err(grads.tensors[i].data(), &numeric)));
    }
    out
}

pub fn masked_model_loss() -> Vec<(String, f64)> {
    let tokens = [MASK, 7, MASK, 12, MASK, EOS, MASK, EOS, EOS, MASK, 30, 31, MASK, EOS, EOS, MASK, EOS, EOS, EOS];
    let targets = [5, 7, 9, 12, 20, EOS, 40, EOS, EOS, EOS, 30, 31, EOS, EOS, EOS, EOS, EOS, EOS, EOS];
    let flags: Vec<bool> = tokens.iter().map(|&t| t == MASK).collect();
    model_errors(Attention::Bidirectional, &tokens, &targets, &flags)
}

pub fn teacher_forcing_model_loss() -> Vec<(String, f64)> {
    let tokens = [BOS, 5, 9, 12, 20, 33];
    let targets = [5, 9, 12, 20, 33, EOS];
    model_errors(Attention::Causal, &tokens, &targets, &[true; 6])
}

/// Every check by name.
pub fn all() -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = [
        ("matmul", matmul as fn() -> f64),
        ("transpose/add/mul/scale", transpose_add_mul_scale),
        ("add_row/gelu", add_row_and_gelu),
        ("layer_norm", layer_norm),
        ("softmax", softmax),
        ("gather/slice/concat", gather_slices_and_concats),
        ("cross_entropy", cross_entropy),
    ]
    .iter()
    .map(|(n, f)| (n.to_string(), f()))
    .collect();
    out.extend(masked_model_loss().into_iter().map(|(n, e)| (format!("masked model: {n}"), e)));
    out.extend(teacher_forcing_model_loss().into_iter().map(|(n, e)| (format!("teacher-forcing model: {n}"), e)));
    out
}
