//! Optimizer arithmetic, the smoothed loss, and short training runs.

mod common;

use common::{small_corpus, tiny_config};
use lencap::model::Checkpoint;
use lencap::tensor::{Gradients, Tape, Tensor};
use lencap::training::{clip_global_norm, lr_at, train, AdamW, Objective, TrainConfig, Trainer};
use lencap::LengthLevelPlan;

fn scalar(x: f32) -> Tensor<f32> {
    Tensor::new(vec![1], vec![x]).unwrap()
}

#[test]
fn adamw_steps_on_a_quadratic_match_hand_computation() {
    // f(w) = w^2, so g = 2w. Two steps with lr 0.1 and weight decay 0.5.
    let (lr, wd) = (0.1f64, 0.5f64);
    let mut params = vec![scalar(1.0)];
    let mut opt = AdamW::new(&params, wd as f32);
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=2 {
        let g = 2.0 * w;
        let grads = Gradients { tensors: vec![scalar(g as f32)] };
        opt.step(&mut params, &grads, &[true], lr as f32);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mhat = m / (1.0 - 0.9f64.powi(t));
        let vhat = v / (1.0 - 0.999f64.powi(t));
        w = w * (1.0 - lr * wd) - lr * mhat / (vhat.sqrt() + 1e-8);
        assert!((params[0].data()[0] as f64 - w).abs() < 1e-6, "step {t}");
    }
    assert_eq!(opt.steps_taken(), 2);

    let mut params = vec![scalar(1.0)];
    let mut opt = AdamW::new(&params, wd as f32);
    opt.step(&mut params, &Gradients { tensors: vec![scalar(2.0)] }, &[false], 0.1);
    assert!((params[0].data()[0] - 0.9).abs() < 1e-6);
}

#[test]
fn clipping_rescales_to_the_threshold() {
    let mut g = Gradients { tensors: vec![Tensor::new(vec![2], vec![3.0f32, 4.0]).unwrap()] };
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g.tensors[0].data()[0] - 0.6).abs() < 1e-7);
    let mut g = Gradients { tensors: vec![Tensor::new(vec![2], vec![0.3f32, 0.4]).unwrap()] };
    clip_global_norm(&mut g, 1.0);
    assert_eq!(g.tensors[0].data(), &[0.3, 0.4]);
}

#[test]
fn schedule_warms_up_linearly_then_decays() {
    assert!((lr_at(1, 200, 2000, 1e-3) - 5e-6).abs() < 1e-15);
    assert_eq!(lr_at(200, 200, 2000, 1e-3), 1e-3);
    assert!((lr_at(1100, 200, 2000, 1e-3) - 5e-4).abs() < 1e-12);
    let mut prev = f64::MAX;
    for it in 200..=2000 {
        let lr = lr_at(it, 200, 2000, 1e-3);
        assert!(lr <= prev);
        prev = lr;
    }
}

#[test]
fn smoothed_loss_matches_its_closed_form() {
    let logits = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 0.5, -1.0, 0.0, 3.0]).unwrap();
    let targets = [1, 2];
    let s = 0.1;
    let mut tape = Tape::new();
    let x = tape.constant_ref(&logits);
    let loss = tape.cross_entropy(x, &targets, &[true, true], s).unwrap();
    let got = tape.value(loss).data()[0];
    let mut want = 0.0;
    for i in 0..2 {
        let row = logits.row(i);
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        let nll = lse - row[targets[i]];
        let uniform = row.iter().map(|v| lse - v).sum::<f64>() / 3.0;
        want += (1.0 - s) * nll + s * uniform;
    }
    assert!((got - want / 2.0).abs() < 1e-12, "{got} vs {}", want / 2.0);
}

fn quick_config(objective: Objective, iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        iterations,
        warmup: 5,
        peak_lr: 3e-3,
        objective,
        checkpoint_every: 0,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let corpus = small_corpus(4, 12);
    let plan = LengthLevelPlan::four_level();
    let model = tiny_config(corpus.vocab.len(), 4);
    let run = || train(quick_config(Objective::Masked, 6), model.clone(), &corpus, plan.clone(), None, |_| {}).unwrap();
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let bits = |l: &[lencap::training::LogEntry]| l.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&la), bits(&lb));
}

#[test]
fn masked_and_teacher_forcing_losses_decrease() {
    let corpus = small_corpus(4, 12);
    let plan = LengthLevelPlan::four_level();
    let mut model = tiny_config(corpus.vocab.len(), 4);
    model.d_model = 64;
    model.heads = 4;
    model.ff_dim = 128;
    let iterations = 1500;
    let tenth = iterations / 10;
    for objective in [Objective::Masked, Objective::TeacherForcing] {
        let cfg = TrainConfig { warmup: 20, ..quick_config(objective, iterations) };
        let (_, log) = train(cfg, model.clone(), &corpus, plan.clone(), None, |_| {}).unwrap();
        let mean = |l: &[lencap::training::LogEntry]| l.iter().map(|e| e.loss).sum::<f32>() / l.len() as f32;
        let (head, tail) = (mean(&log[..tenth]), mean(&log[iterations - tenth..]));
        assert!(tail < head * 0.5, "{objective:?}: {head} -> {tail}");
    }
}

#[test]
fn writes_log_checkpoints_and_final_model() {
    let corpus = small_corpus(4, 6);
    let plan = LengthLevelPlan::single_level(25);
    let model = tiny_config(corpus.vocab.len(), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { checkpoint_every: 2, ..quick_config(Objective::Masked, 6) };
    let (ckpt, _) = train(cfg, model, &corpus, plan.clone(), Some(dir.path()), |_| {}).unwrap();
    let log = std::fs::read_to_string(dir.path().join("loss.log")).unwrap();
    assert_eq!(log.lines().count(), 7);
    assert!(log.starts_with("# lencap-loss-log 1"));
    assert!(dir.path().join("checkpoint-000002.ckpt").exists());
    assert!(dir.path().join("checkpoint-000004.ckpt").exists());
    assert!(!dir.path().join("checkpoint-000006.ckpt").exists());
    let saved = Checkpoint::load(&dir.path().join("model.ckpt")).unwrap();
    assert_eq!(saved.to_bytes(), ckpt.to_bytes());
    assert_eq!(saved.plan, plan);
    assert_eq!(saved.iteration, 6);
}

#[test]
fn mismatched_model_is_rejected_with_every_reason() {
    let corpus = small_corpus(4, 3);
    let mut model = tiny_config(corpus.vocab.len() + 1, 3);
    model.max_positions = 10;
    let err = Trainer::new(quick_config(Objective::Masked, 10), model, &corpus, LengthLevelPlan::four_level()).err().unwrap();
    match err {
        lencap::training::TrainError::Config(e) => assert_eq!(e.len(), 3, "{e:?}"),
        other => panic!("{other}"),
    }
}
