//! Goodness-of-fit checks on the masking sampler.

mod common;

use common::{rng, small_corpus};
use lencap::data::MASK;
use lencap::training::{make_masked_example, make_masked_example_with};
use lencap::LengthLevelPlan;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi_square_p(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn mask_count_is_uniform_over_the_canvas() {
    let corpus = small_corpus(2, 4);
    let plan = LengthLevelPlan::four_level();
    let reference = corpus.scenes[0].references[1][0].clone();
    let high = plan.range(1).unwrap().high;
    let mut r = rng(77);
    let mut counts = vec![0usize; high];
    for _ in 0..10_000 {
        let ex = make_masked_example(&reference, &plan, &mut r).unwrap();
        let m = ex.mask_count();
        assert!((1..=high).contains(&m));
        counts[m - 1] += 1;
    }
    let p = chi_square_p(&counts);
    assert!(p > 0.01, "p = {p}, counts {counts:?}");
}

#[test]
fn masked_positions_are_uniform() {
    let corpus = small_corpus(2, 4);
    let plan = LengthLevelPlan::four_level();
    let reference = corpus.scenes[0].references[3][0].clone();
    let mut r = rng(78);
    let mut counts = vec![0usize; 25];
    for _ in 0..4_000 {
        let ex = make_masked_example_with(&reference, &plan, 5, &mut r).unwrap();
        for (i, &t) in ex.input.iter().enumerate() {
            if t == MASK {
                counts[i] += 1;
            }
        }
    }
    assert_eq!(counts.iter().sum::<usize>(), 20_000);
    let p = chi_square_p(&counts);
    assert!(p > 0.01, "p = {p}");
}
