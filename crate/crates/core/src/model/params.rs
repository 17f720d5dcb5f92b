use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::scene::{APPEARANCE_DIM, GEOMETRY_DIM, NUM_CLASSES};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Transformer shape. `vocab_size` and `num_levels` are fixed by the
/// vocabulary and the level plan the model is trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub num_levels: usize,
    pub appearance_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_levels: usize) -> Self {
        ModelConfig {
            d_model: 128,
            layers: 4,
            heads: 4,
            ff_dim: 512,
            max_positions: 32,
            vocab_size,
            num_levels,
            appearance_dim: APPEARANCE_DIM,
            num_classes: NUM_CLASSES,
        }
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("max_positions", self.max_positions),
            ("num_levels", self.num_levels),
            ("appearance_dim", self.appearance_dim),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                errs.push(format!("model.{name} must be positive"));
            }
        }
        if self.heads > 0 && self.d_model % self.heads != 0 {
            errs.push(format!("model.d_model ({}) must be divisible by model.heads ({})", self.d_model, self.heads));
        }
        if self.vocab_size < 4 {
            errs.push("model.vocab_size must include the special tokens and at least one word".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Index into [`ModelParams::tensors`].
pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockIds {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub qkv_weight: ParamId,
    pub qkv_bias: ParamId,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ff_in_weight: ParamId,
    pub ff_in_bias: ParamId,
    pub ff_out_weight: ParamId,
    pub ff_out_bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub word_table: ParamId,
    pub position_table: ParamId,
    pub level_table: ParamId,
    pub region_proj: ParamId,
    pub geom_class_proj: ParamId,
    pub segment_img: ParamId,
    pub blocks: Vec<BlockIds>,
    pub final_gain: ParamId,
    pub final_bias: ParamId,
    pub classifier_weight: ParamId,
    pub classifier_bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Parameter spec: name, shape, initializer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    /// Matrices and tables get weight decay; vectors do not.
    pub fn decays(&self) -> bool {
        self.shape.len() == 2
    }
}

/// Names, shapes and ids of every tensor, derived from the config alone.
pub fn layout(cfg: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let mut specs = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| {
        specs.push(ParamSpec { name, shape, init });
        specs.len() - 1
    };
    let d = cfg.d_model;
    let word_table = add("embeddings.word".into(), vec![cfg.vocab_size, d], Init::Normal);
    let position_table = add("embeddings.position".into(), vec![cfg.max_positions, d], Init::Normal);
    let level_table = add("embeddings.level".into(), vec![cfg.num_levels, d], Init::Normal);
    let region_proj = add("regions.appearance_proj".into(), vec![cfg.appearance_dim, d], Init::Normal);
    let geom_class_proj =
        add("regions.class_geometry_proj".into(), vec![cfg.num_classes + GEOMETRY_DIM, d], Init::Normal);
    let segment_img = add("regions.segment".into(), vec![d], Init::Normal);
    let blocks = (0..cfg.layers)
        .map(|i| {
            let mut p = |n: &str, shape: Vec<usize>, init| add(format!("blocks.{i}.{n}"), shape, init);
            BlockIds {
                ln1_gain: p("ln1.gain", vec![d], Init::Ones),
                ln1_bias: p("ln1.bias", vec![d], Init::Zeros),
                qkv_weight: p("attn.qkv.weight", vec![d, 3 * d], Init::Normal),
                qkv_bias: p("attn.qkv.bias", vec![3 * d], Init::Zeros),
                out_weight: p("attn.out.weight", vec![d, d], Init::Normal),
                out_bias: p("attn.out.bias", vec![d], Init::Zeros),
                ln2_gain: p("ln2.gain", vec![d], Init::Ones),
                ln2_bias: p("ln2.bias", vec![d], Init::Zeros),
                ff_in_weight: p("ff.in.weight", vec![d, cfg.ff_dim], Init::Normal),
                ff_in_bias: p("ff.in.bias", vec![cfg.ff_dim], Init::Zeros),
                ff_out_weight: p("ff.out.weight", vec![cfg.ff_dim, d], Init::Normal),
                ff_out_bias: p("ff.out.bias", vec![d], Init::Zeros),
            }
        })
        .collect();
    let final_gain = add("final_ln.gain".into(), vec![d], Init::Ones);
    let final_bias = add("final_ln.bias".into(), vec![d], Init::Zeros);
    let classifier_weight = add("classifier.weight".into(), vec![d, cfg.vocab_size], Init::Normal);
    let classifier_bias = add("classifier.bias".into(), vec![cfg.vocab_size], Init::Zeros);
    let layout = Layout {
        word_table,
        position_table,
        level_table,
        region_proj,
        geom_class_proj,
        segment_img,
        blocks,
        final_gain,
        final_bias,
        classifier_weight,
        classifier_bias,
    };
    (layout, specs)
}

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub specs: Vec<ParamSpec>,
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> ModelParams<F> {
    /// Gaussian(0, 0.02) weights and tables, zero biases, unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let (layout, specs) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let tensors = specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Normal => (0..n).map(|_| F::lit(normal.sample(&mut rng) as f32 as f64)).collect(),
                    Init::Zeros => vec![F::zero(); n],
                    Init::Ones => vec![F::one(); n],
                };
                Tensor::new(s.shape.clone(), data).expect("spec shape")
            })
            .collect();
        ModelParams { config, layout, specs, tensors }
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<F>>) -> Result<Self, String> {
        let (layout, specs) = layout(&config);
        if tensors.len() != specs.len() {
            return Err(format!("expected {} tensors, got {}", specs.len(), tensors.len()));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.shape != t.shape() {
                return Err(format!("{}: expected shape {:?}, got {:?}", s.name, s.shape, t.shape()));
            }
        }
        Ok(ModelParams { config, layout, specs, tensors })
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            specs: self.specs.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Records every parameter on `tape`; trainable leaves when `trainable`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, F>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| if trainable { tape.param(t, i) } else { tape.constant_ref(t) })
            .collect();
        Bound { vars }
    }
}

/// Tape handles of a parameter set, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id]
    }
}
