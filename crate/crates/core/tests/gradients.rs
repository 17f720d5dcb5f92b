//! Central finite differences at 64-bit precision against reverse-mode
//! gradients, for every differentiable op and for the full model losses.

mod common;

use common::grad_suite;
use common::{random_tensor, rng};
use lencap::tensor::{Gradients, Tape, Tensor};

const TOL: f64 = 1e-6;

#[test]
fn matmul() {
    let e = grad_suite::matmul();
    assert!(e < TOL, "{e}");
}

#[test]
fn matmul_at_32_bit() {
    let mut r = rng(11);
    let a = random_tensor(&mut r, &[4, 3], 1.0).cast::<f32>();
    let b = random_tensor(&mut r, &[3, 2], 1.0).cast::<f32>();
    let w = random_tensor(&mut r, &[4, 2], 1.0).cast::<f32>();
    let loss = |a: &Tensor<f32>, b: &Tensor<f32>| -> f32 {
        a.matmul(b).unwrap().data().iter().zip(w.data()).map(|(x, y)| x * y).sum()
    };
    let mut grads = Gradients::zeros_like(&[a.clone(), b.clone()]);
    {
        let mut tape = Tape::new();
        let va = tape.param(&a, 0);
        let vb = tape.param(&b, 1);
        let y = tape.matmul(va, vb).unwrap();
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s, &mut grads).unwrap();
    }
    let h = 1e-2f32;
    let mut num = Vec::new();
    for j in 0..a.numel() {
        let (mut up, mut down) = (a.clone(), a.clone());
        up.data_mut()[j] += h;
        down.data_mut()[j] -= h;
        num.push(((loss(&up, &b) - loss(&down, &b)) / (2.0 * h)) as f64);
    }
    let an: Vec<f64> = grads.tensors[0].data().iter().map(|&x| x as f64).collect();
    assert!(common::rel_err(&an, &num) < 1e-4);
}

#[test]
fn transpose_add_mul_scale() {
    let e = grad_suite::transpose_add_mul_scale();
    assert!(e < TOL, "{e}");
}

#[test]
fn add_row_and_gelu() {
    let e = grad_suite::add_row_and_gelu();
    assert!(e < TOL, "{e}");
}

#[test]
fn layer_norm_affine_and_plain() {
    let e = grad_suite::layer_norm();
    assert!(e < TOL, "{e}");
}

#[test]
fn softmax_plain_and_masked() {
    let e = grad_suite::softmax();
    assert!(e < TOL, "{e}");
}

#[test]
fn gather_slices_and_concats() {
    let e = grad_suite::gather_slices_and_concats();
    assert!(e < TOL, "{e}");
}

#[test]
fn cross_entropy_with_smoothing_and_flags() {
    let e = grad_suite::cross_entropy();
    assert!(e < TOL, "{e}");
}

#[test]
fn full_model_masked_loss() {
    for (name, e) in grad_suite::masked_model_loss() {
        assert!(e < TOL, "{name}: rel err {e}");
    }
}

#[test]
fn full_model_teacher_forcing_loss() {
    for (name, e) in grad_suite::teacher_forcing_model_loss() {
        assert!(e < TOL, "{name}: rel err {e}");
    }
}
