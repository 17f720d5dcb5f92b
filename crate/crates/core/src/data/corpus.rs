use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grammar::CaptionGrammar;
use super::scene::{sample_regions, Region, Scene, MAX_REGIONS};
use super::vocab::Vocabulary;
use crate::levels::LengthLevelPlan;

pub const CORPUS_FORMAT: &str = "lencap-corpus";
pub const CORPUS_VERSION: u32 = 1;
pub const REFERENCES_PER_LEVEL: usize = 2;
const MAX_REGENERATIONS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("could not generate scene {index} after {MAX_REGENERATIONS} attempts")]
    Generation { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    num_scenes: usize,
    plan: LengthLevelPlan,
    vocab_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub plan: LengthLevelPlan,
    pub vocab: Vocabulary,
    pub scenes: Vec<Scene>,
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of scene `index`: the `index`-th splitmix64 output after `master`.
pub fn scene_seed(master: u64, index: usize) -> u64 {
    splitmix64(master.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Samples a scene and its references; on an unreachable level the whole
/// scene is redrawn from the same stream.
pub fn generate_scene(seed: u64, plan: &LengthLevelPlan, vocab: &Vocabulary) -> Option<Scene> {
    let grammar = CaptionGrammar::new(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'attempt: for _ in 0..MAX_REGENERATIONS {
        let m = rng.gen_range(1..=MAX_REGIONS);
        let regions: Vec<Region> = sample_regions(&mut rng, m);
        let mut scene = Scene { regions, references: Vec::with_capacity(plan.num_levels()) };
        for range in plan.levels() {
            let mut refs = Vec::with_capacity(REFERENCES_PER_LEVEL);
            for _ in 0..REFERENCES_PER_LEVEL {
                match grammar.caption(&scene, *range, rng.gen()) {
                    Ok(mut c) => {
                        c.pop();
                        refs.push(c);
                    }
                    Err(_) => continue 'attempt,
                }
            }
            scene.references.push(refs);
        }
        return Some(scene);
    }
    None
}

pub fn generate_corpus(seed: u64, num_scenes: usize, plan: &LengthLevelPlan) -> Result<Corpus, CorpusError> {
    let vocab = Vocabulary::scene_grammar();
    let scenes = (0..num_scenes)
        .into_par_iter()
        .map(|i| generate_scene(scene_seed(seed, i), plan, &vocab).ok_or(CorpusError::Generation { index: i }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus { seed, plan: plan.clone(), vocab, scenes })
}

/// Sidecar vocabulary path: the corpus path with its extension replaced by `vocab`.
pub fn vocab_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("vocab")
}

impl Corpus {
    pub fn to_text(&self) -> String {
        let header = Header {
            format: CORPUS_FORMAT.into(),
            version: CORPUS_VERSION,
            seed: self.seed,
            num_scenes: self.scenes.len(),
            plan: self.plan.clone(),
            vocab_hash: self.vocab.hash(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.scenes {
            out.push_str(&serde_json::to_string(s).expect("scene serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, vocab: Vocabulary, path: &Path) -> Result<Self, CorpusError> {
        let perr = |line: usize, message: String| CorpusError::Parse { path: path.to_path_buf(), line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| perr(1, format!("header: {e}")))?;
        if header.format != CORPUS_FORMAT || header.version != CORPUS_VERSION {
            return Err(perr(1, format!("unsupported format {} v{}", header.format, header.version)));
        }
        if header.vocab_hash != vocab.hash() {
            return Err(perr(1, format!("vocabulary hash {} does not match sidecar {}", header.vocab_hash, vocab.hash())));
        }
        let mut scenes = Vec::with_capacity(header.num_scenes);
        for (line, text) in lines {
            if text.trim().is_empty() {
                continue;
            }
            let scene: Scene = serde_json::from_str(text).map_err(|e| perr(line, format!("scene record {}: {e}", line - 1)))?;
            validate_scene(&scene, &header.plan, &vocab).map_err(|m| perr(line, format!("scene record {}: {m}", line - 1)))?;
            scenes.push(scene);
        }
        if scenes.len() != header.num_scenes {
            return Err(perr(1, format!("header declares {} scenes, found {}", header.num_scenes, scenes.len())));
        }
        Ok(Corpus { seed: header.seed, plan: header.plan, vocab, scenes })
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        fn io(p: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
            move |source| CorpusError::Io { path: p.to_path_buf(), source }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io(dir))?;
        }
        fs::write(path, self.to_text()).map_err(io(path))?;
        let vp = vocab_path(path);
        fs::write(&vp, self.vocab.to_text()).map_err(io(&vp))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let vp = vocab_path(path);
        let vtext = fs::read_to_string(&vp).map_err(|source| CorpusError::Io { path: vp.clone(), source })?;
        let vocab = Vocabulary::from_text(&vtext).map_err(|m| CorpusError::Parse { path: vp.clone(), line: 1, message: m })?;
        let text = fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
        Self::from_text(&text, vocab, path)
    }
}

fn validate_scene(scene: &Scene, plan: &LengthLevelPlan, vocab: &Vocabulary) -> Result<(), String> {
    if scene.regions.is_empty() || scene.regions.len() > MAX_REGIONS {
        return Err(format!("{} regions", scene.regions.len()));
    }
    for (i, r) in scene.regions.iter().enumerate() {
        r.check().map_err(|m| format!("region {i}: {m}"))?;
    }
    if scene.references.len() != plan.num_levels() {
        return Err(format!("{} reference levels for a {}-level plan", scene.references.len(), plan.num_levels()));
    }
    for (level, refs) in scene.references.iter().enumerate() {
        let range = plan.levels()[level];
        for r in refs {
            if !range.contains(r.len()) {
                return Err(format!("level {} reference of length {}", level + 1, r.len()));
            }
            if let Some(&bad) = r.iter().find(|&&t| t >= vocab.len()) {
                return Err(format!("token index {bad} outside vocabulary"));
            }
        }
    }
    Ok(())
}
