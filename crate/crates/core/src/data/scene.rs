use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{CATEGORIES, COLORS, SIZES};

pub const APPEARANCE_DIM: usize = 64;
pub const NUM_CLASSES: usize = CATEGORIES.len();
pub const GEOMETRY_DIM: usize = 5;
pub const MAX_REGIONS: usize = 8;

const APPEARANCE_NOISE: f64 = 0.1;
// Seed of the fixed attribute-to-appearance projection. Never changes between corpora.
const PROJECTION_SEED: u64 = 0x00C0_FFEE_5EED_0001;
const ATTRIBUTE_DIM: usize = NUM_CLASSES + COLORS.len() + SIZES.len();

/// Symbolic identity of a region; the grammar reads it, the model never does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectLabel {
    pub category: usize,
    pub color: usize,
    pub size: usize,
}

/// One detected object: appearance vector, class distribution and box geometry
/// `[x1, y1, x2, y2, area]` in normalized image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: ObjectLabel,
    pub appearance: Vec<f32>,
    pub class_probs: Vec<f32>,
    pub geometry: [f32; GEOMETRY_DIM],
    pub salience: f32,
}

impl Region {
    pub fn center(&self) -> (f32, f32) {
        let g = &self.geometry;
        ((g[0] + g[2]) / 2.0, (g[1] + g[3]) / 2.0)
    }

    pub fn check(&self) -> Result<(), String> {
        let sum: f32 = self.class_probs.iter().sum();
        if self.appearance.len() != APPEARANCE_DIM || self.class_probs.len() != NUM_CLASSES {
            return Err("feature dimensions".into());
        }
        if (sum - 1.0).abs() > 1e-5 {
            return Err(format!("class_probs sum to {sum}"));
        }
        let [x1, y1, x2, y2, area] = self.geometry;
        if !(0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0) {
            return Err(format!("bad box {:?}", self.geometry));
        }
        if ((x2 - x1) * (y2 - y1) - area).abs() > 1e-6 {
            return Err("area does not match box".into());
        }
        if !(self.salience > 0.0 && self.salience <= 1.0) {
            return Err(format!("salience {}", self.salience));
        }
        Ok(())
    }
}

/// A synthetic image with its reference captions. `references[level]` holds
/// the captions for that level (words only; the `[EOS]` terminator is implied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub regions: Vec<Region>,
    pub references: Vec<Vec<Vec<usize>>>,
}

impl Scene {
    /// Regions indices ordered by decreasing salience, ties by index.
    pub fn salience_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.regions.len()).collect();
        order.sort_by(|&a, &b| {
            self.regions[b].salience.total_cmp(&self.regions[a].salience).then(a.cmp(&b))
        });
        order
    }
}

fn projection() -> Vec<[f32; APPEARANCE_DIM]> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let normal = Normal::new(0.0, (1.0f64 / 3.0).sqrt()).unwrap();
    (0..ATTRIBUTE_DIM)
        .map(|_| std::array::from_fn(|_| normal.sample(&mut rng) as f32))
        .collect()
}

/// Draws the visual part of a scene: `num_objects` objects with distinct
/// categories and random color/size, features derived from those labels.
pub fn sample_regions(rng: &mut ChaCha8Rng, num_objects: usize) -> Vec<Region> {
    let proj = projection();
    let noise = Normal::new(0.0, APPEARANCE_NOISE).unwrap();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut categories: Vec<usize> = (0..NUM_CLASSES).collect();
    for i in 0..num_objects {
        let j = rng.gen_range(i..NUM_CLASSES);
        categories.swap(i, j);
    }
    categories[..num_objects]
        .iter()
        .map(|&category| {
            let label = ObjectLabel { category, color: rng.gen_range(0..COLORS.len()), size: rng.gen_range(0..SIZES.len()) };
            let active = [category, NUM_CLASSES + label.color, NUM_CLASSES + COLORS.len() + label.size];
            let appearance = (0..APPEARANCE_DIM)
                .map(|k| active.iter().map(|&a| proj[a][k]).sum::<f32>() + noise.sample(rng) as f32)
                .collect();

            let logits: Vec<f64> = (0..NUM_CLASSES)
                .map(|c| if c == category { 4.0 } else { 0.0 } + std_normal.sample(rng))
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let class_probs = logits.iter().map(|l| ((l - max).exp() / z) as f32).collect();

            let base = [0.12f32, 0.22, 0.4][label.size];
            let w = (base * rng.gen_range(0.8f32..1.25)).min(0.9);
            let h = (base * rng.gen_range(0.8f32..1.25)).min(0.9);
            let x1 = rng.gen_range(0.0..(1.0 - w));
            let y1 = rng.gen_range(0.0..(1.0 - h));
            let (x2, y2) = ((x1 + w).min(1.0), (y1 + h).min(1.0));
            let area = (x2 - x1) * (y2 - y1);
            Region {
                label,
                appearance,
                class_probs,
                geometry: [x1, y1, x2, y2, area],
                salience: area.sqrt().clamp(f32::MIN_POSITIVE, 1.0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 1..=MAX_REGIONS {
            let regions = sample_regions(&mut rng, m);
            assert_eq!(regions.len(), m);
            for r in &regions {
                r.check().unwrap();
            }
            let mut cats: Vec<_> = regions.iter().map(|r| r.label.category).collect();
            cats.sort();
            cats.dedup();
            assert_eq!(cats.len(), m);
        }
    }
}
