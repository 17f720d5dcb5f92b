//! Templated caption grammar whose verbosity is steered by a target length.
//!
//! A caption is an optional frame ("there is", "the image shows", ...) followed
//! by clauses joined with "and". A clause mentions one object or relates two
//! ("a red cat is left of a cube"). Starting from bare mentions of the `k` most
//! salient objects, random upgrades (frame, color, size, relation, and as a
//! last resort a location phrase) are applied until the target length is hit
//! exactly. `k` grows with the target, so longer levels mention more objects.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::scene::{Region, Scene};
use super::vocab::{Vocabulary, CATEGORIES, COLORS, EOS, SIZES};
use crate::levels::LevelRange;

const FRAMES: [&[&str]; 3] = [&["there", "is"], &["the", "image", "shows"], &["a", "picture", "of"]];
const MAX_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("scene with {regions} regions cannot be captioned within [{low}, {high}]")]
pub struct Unreachable {
    pub regions: usize,
    pub low: usize,
    pub high: usize,
}

#[derive(Debug, Clone, Copy)]
enum Clause {
    Mention(usize),
    Relation(usize, usize),
}

#[derive(Debug, Clone)]
struct Draft {
    frame: Option<usize>,
    clauses: Vec<Clause>,
    color: Vec<bool>,
    size: Vec<bool>,
    located: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
enum Upgrade {
    Frame(usize),
    Color(usize),
    Size(usize),
    Relate(usize),
    Locate(usize),
}

fn relation_words(a: &Region, b: &Region) -> &'static [&'static str] {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let (dx, dy) = (bx - ax, by - ay);
    if dx.hypot(dy) < 0.15 {
        &["next", "to"]
    } else if dx.abs() >= dy.abs() {
        if dx > 0.0 {
            &["left", "of"]
        } else {
            &["right", "of"]
        }
    } else if dy > 0.0 {
        &["above"]
    } else {
        &["below"]
    }
}

fn location_words(r: &Region) -> &'static [&'static str] {
    let (x, y) = r.center();
    if x < 1.0 / 3.0 {
        &["on", "the", "left"]
    } else if x > 2.0 / 3.0 {
        &["on", "the", "right"]
    } else if y < 1.0 / 3.0 {
        &["at", "the", "top"]
    } else if y > 2.0 / 3.0 {
        &["at", "the", "bottom"]
    } else {
        &["in", "the", "middle"]
    }
}

struct Renderer<'a> {
    regions: Vec<&'a Region>,
}

impl Renderer<'_> {
    fn noun_phrase(&self, d: &Draft, i: usize, out: &mut Vec<&'static str>) {
        let label = self.regions[i].label;
        out.push("a");
        if d.size[i] {
            out.push(SIZES[label.size]);
        }
        if d.color[i] {
            out.push(COLORS[label.color]);
        }
        out.push(CATEGORIES[label.category]);
        if d.located[i] {
            out.extend_from_slice(location_words(self.regions[i]));
        }
    }

    fn render(&self, d: &Draft) -> Vec<&'static str> {
        let mut out = Vec::with_capacity(32);
        if let Some(f) = d.frame {
            out.extend_from_slice(FRAMES[f]);
        }
        for (ci, clause) in d.clauses.iter().enumerate() {
            if ci > 0 {
                out.push("and");
            }
            match *clause {
                Clause::Mention(i) => self.noun_phrase(d, i, &mut out),
                Clause::Relation(a, b) => {
                    self.noun_phrase(d, a, &mut out);
                    out.push("is");
                    out.extend_from_slice(relation_words(self.regions[a], self.regions[b]));
                    self.noun_phrase(d, b, &mut out);
                }
            }
        }
        out
    }

    fn apply(&self, d: &Draft, u: Upgrade) -> Draft {
        let mut d = d.clone();
        match u {
            Upgrade::Frame(f) => d.frame = Some(f),
            Upgrade::Color(i) => d.color[i] = true,
            Upgrade::Size(i) => d.size[i] = true,
            Upgrade::Locate(i) => d.located[i] = true,
            Upgrade::Relate(c) => {
                if let (Clause::Mention(a), Clause::Mention(b)) = (d.clauses[c], d.clauses[c + 1]) {
                    d.clauses[c] = Clause::Relation(a, b);
                    d.clauses.remove(c + 1);
                }
            }
        }
        d
    }

    fn upgrades(&self, d: &Draft) -> (Vec<Upgrade>, Vec<Upgrade>) {
        let mut main = Vec::new();
        if d.frame.is_none() {
            main.extend((0..FRAMES.len()).map(Upgrade::Frame));
        }
        for i in 0..self.regions.len() {
            if !d.color[i] {
                main.push(Upgrade::Color(i));
            }
            if !d.size[i] {
                main.push(Upgrade::Size(i));
            }
        }
        for c in 0..d.clauses.len().saturating_sub(1) {
            if matches!((d.clauses[c], d.clauses[c + 1]), (Clause::Mention(_), Clause::Mention(_))) {
                main.push(Upgrade::Relate(c));
            }
        }
        let pads = (0..self.regions.len()).filter(|&i| !d.located[i]).map(Upgrade::Locate).collect();
        (main, pads)
    }

    /// Random upgrade walk towards exactly `target` words.
    fn build(&self, target: usize, rng: &mut ChaCha8Rng) -> Option<Vec<&'static str>> {
        let k = self.regions.len();
        let mut draft = Draft {
            frame: None,
            clauses: (0..k).map(Clause::Mention).collect(),
            color: vec![false; k],
            size: vec![false; k],
            located: vec![false; k],
        };
        loop {
            let words = self.render(&draft);
            if words.len() == target {
                return Some(words);
            }
            if words.len() > target {
                return None;
            }
            let (main, pads) = self.upgrades(&draft);
            let fits = |ups: Vec<Upgrade>| -> Vec<Draft> {
                ups.into_iter()
                    .map(|u| self.apply(&draft, u))
                    .filter(|nd| self.render(nd).len() <= target)
                    .collect()
            };
            let mut options = fits(main);
            if options.is_empty() {
                options = fits(pads);
            }
            draft = options.choose(rng)?.clone();
        }
    }
}

/// Number of objects to mention for a target length: one per six words,
/// limited by what the scene has and by the shortest possible rendering
/// (`3k - 1` words for `k` bare mentions).
fn objects_for(target: usize, available: usize) -> usize {
    let mut k = target.div_ceil(6).clamp(1, available.max(1));
    while k > 1 && 3 * k - 1 > target {
        k -= 1;
    }
    k
}

/// Grammar bound to a vocabulary.
pub struct CaptionGrammar<'v> {
    vocab: &'v Vocabulary,
}

impl<'v> CaptionGrammar<'v> {
    pub fn new(vocab: &'v Vocabulary) -> Self {
        CaptionGrammar { vocab }
    }

    /// Caption for `scene` with word count in `range`, terminated by `[EOS]`.
    /// Deterministic in `(scene, range, seed)`.
    pub fn caption(&self, scene: &Scene, range: LevelRange, seed: u64) -> Result<Vec<usize>, Unreachable> {
        let unreachable = Unreachable { regions: scene.regions.len(), low: range.low, high: range.high };
        if scene.regions.is_empty() {
            return Err(unreachable);
        }
        let order = scene.salience_order();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_ATTEMPTS {
            let target = rng.gen_range(range.low.max(2)..=range.high.max(2));
            if !range.contains(target) {
                break;
            }
            let k = objects_for(target, order.len());
            let renderer = Renderer { regions: order[..k].iter().map(|&i| &scene.regions[i]).collect() };
            if let Some(words) = renderer.build(target, &mut rng) {
                let mut ids: Vec<usize> = words.iter().map(|w| self.vocab.word(w)).collect();
                ids.push(EOS);
                return Ok(ids);
            }
        }
        Err(unreachable)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::{sample_regions, ObjectLabel};
    use crate::levels::LengthLevelPlan;

    fn single_object_scene() -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut regions = sample_regions(&mut rng, 1);
        regions[0].label = ObjectLabel { category: 0, color: 0, size: 1 };
        Scene { regions, references: vec![] }
    }

    #[test]
    fn single_object_level_one() {
        let vocab = Vocabulary::scene_grammar();
        let g = CaptionGrammar::new(&vocab);
        let scene = single_object_scene();
        let range = LengthLevelPlan::four_level().range(0).unwrap();
        for seed in 0..20 {
            let c = g.caption(&scene, range, seed).unwrap();
            assert_eq!(*c.last().unwrap(), EOS);
            let len = c.len() - 1;
            assert!(range.contains(len), "{}", vocab.detokenize(&c));
            assert!(c.contains(&vocab.word("ball")));
        }
        // a lone object cannot fill the longest level
        let top = LengthLevelPlan::four_level().range(3).unwrap();
        assert!(g.caption(&scene, top, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let vocab = Vocabulary::scene_grammar();
        let g = CaptionGrammar::new(&vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene = Scene { regions: sample_regions(&mut rng, 6), references: vec![] };
        let range = LengthLevelPlan::four_level().range(2).unwrap();
        assert_eq!(g.caption(&scene, range, 77), g.caption(&scene, range, 77));
    }

    #[test]
    fn objects_for_is_monotone() {
        for m in 1..=8 {
            let mut prev = 0;
            for t in 2..=25 {
                let k = objects_for(t, m);
                assert!(k >= prev && k <= m && 3 * k - 1 <= t.max(2));
                prev = k;
            }
        }
    }
}
