//! Brute-force n-gram metrics written with plain loops, independent of the
//! library's hash-map implementation.

use lencap::metrics::{bleu, div_n};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng;

/// Every n-gram of `s` in order, as owned vectors.
pub fn grams(s: &[usize], n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if s.len() >= n {
        for i in 0..=s.len() - n {
            out.push(s[i..i + n].to_vec());
        }
    }
    out
}

pub fn occurrences(list: &[Vec<usize>], g: &[usize]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

pub fn oracle_counts(c: &[usize], refs: &[Vec<usize>], n: usize) -> (usize, usize) {
    let cg = grams(c, n);
    let mut seen: Vec<Vec<usize>> = Vec::new();
    let mut matched = 0;
    for g in &cg {
        if seen.contains(g) {
            continue;
        }
        seen.push(g.clone());
        let mut best = 0;
        for r in refs {
            best = best.max(occurrences(&grams(r, n), g));
        }
        matched += occurrences(&cg, g).min(best);
    }
    (matched, cg.len())
}

pub fn oracle_ref_len(c: usize, refs: &[Vec<usize>]) -> usize {
    let mut best = refs[0].len();
    for r in refs {
        let (d, bd) = ((r.len() as i64 - c as i64).abs(), (best as i64 - c as i64).abs());
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    best
}

pub fn oracle_score(matched: &[usize], total: &[usize], c: usize, r: usize) -> f64 {
    if c == 0 {
        return 0.0;
    }
    let mut product = 1.0f64;
    let mut orders = 0;
    for k in 0..matched.len() {
        if total[k] == 0 {
            continue;
        }
        product *= matched[k] as f64 / total[k] as f64;
        orders += 1;
    }
    if orders == 0 || product == 0.0 {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * product.powf(1.0 / orders as f64)
}

pub fn oracle_bleu(c: &[usize], refs: &[Vec<usize>], max_n: usize) -> f64 {
    let (mut m, mut t) = (vec![0; max_n], vec![0; max_n]);
    for n in 1..=max_n {
        (m[n - 1], t[n - 1]) = oracle_counts(c, refs, n);
    }
    oracle_score(&m, &t, c.len(), oracle_ref_len(c.len(), refs))
}

pub fn oracle_div(captions: &[Vec<usize>], n: usize) -> Option<f64> {
    let mut all = Vec::new();
    for c in captions {
        all.extend(grams(c, n));
    }
    if all.is_empty() {
        return None;
    }
    let mut distinct: Vec<Vec<usize>> = Vec::new();
    for g in &all {
        if !distinct.contains(g) {
            distinct.push(g.clone());
        }
    }
    Some(distinct.len() as f64 / all.len() as f64)
}

pub fn sentence(r: &mut ChaCha8Rng, min: usize) -> Vec<usize> {
    let len = r.gen_range(min..=6);
    (0..len).map(|_| r.gen_range(3..7)).collect()
}

/// Largest |library - oracle| BLEU difference over `cases` random
/// candidate/reference sets of at most six tokens, for orders 1 to 4.
pub fn bleu_worst(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let c = sentence(&mut r, 0);
        let refs: Vec<Vec<usize>> = (0..r.gen_range(1..4)).map(|_| sentence(&mut r, 1)).collect();
        for max_n in 1..=4 {
            worst = worst.max((bleu(&c, &refs, max_n) - oracle_bleu(&c, &refs, max_n)).abs());
        }
    }
    worst
}

/// Largest Div-1/Div-2 difference over `cases` random caption sets;
/// infinite when the library and the oracle disagree on emptiness.
pub fn div_worst(seed: u64, cases: usize) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let caps: Vec<Vec<usize>> = (0..r.gen_range(1..5)).map(|_| sentence(&mut r, 0)).collect();
        for n in 1..=2 {
            let d = match (div_n(&caps, n), oracle_div(&caps, n)) {
                (Ok(a), Some(b)) => (a - b).abs(),
                (Err(_), None) => 0.0,
                _ => f64::INFINITY,
            };
            worst = worst.max(d);
        }
    }
    worst
}
