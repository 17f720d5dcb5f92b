use super::params::{Bound, ModelParams};
use super::ModelError;
use crate::data::scene::{Region, GEOMETRY_DIM};
use crate::tensor::{Scalar, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Self-attention pattern over the concatenated `[regions ; text]` sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attention {
    /// Every position sees every position (masked-LM decoder).
    Bidirectional,
    /// Regions see regions; text position `i` sees all regions and text `<= i`.
    Causal,
}

/// Where the first text token sits in the position table. Caption token
/// `s_i` (1-based) always lands on position `i`: the non-autoregressive
/// canvas starts at 1, the autoregressive input starts with `[BOS]` at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextOffset {
    Canvas,
    AfterBos,
}

impl TextOffset {
    fn first(self) -> usize {
        match self {
            TextOffset::Canvas => 1,
            TextOffset::AfterBos => 0,
        }
    }
}

/// `x_{s_i} = e_l + e_{w,s_i} + e_{p,i}` for every text position.
pub fn embed_tokens<'a, F: Scalar>(
    tape: &mut Tape<'a, F>,
    params: &ModelParams<F>,
    bound: &Bound,
    tokens: &[usize],
    level: usize,
    offset: TextOffset,
) -> Result<Var, ModelError> {
    let cfg = &params.config;
    if tokens.is_empty() {
        return Err(ModelError::Input("empty token sequence".into()));
    }
    if level >= cfg.num_levels {
        return Err(ModelError::Input(format!("level {level} >= {} levels", cfg.num_levels)));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(ModelError::Input(format!("token {t} >= vocabulary size {}", cfg.vocab_size)));
    }
    let first = offset.first();
    if first + tokens.len() > cfg.max_positions {
        return Err(ModelError::Input(format!(
            "{} text positions exceed the {}-entry position table",
            first + tokens.len(),
            cfg.max_positions
        )));
    }
    let l = &params.layout;
    let levels = tape.gather(bound.var(l.level_table), &vec![level; tokens.len()])?;
    let words = tape.gather(bound.var(l.word_table), tokens)?;
    let positions: Vec<usize> = (first..first + tokens.len()).collect();
    let pos = tape.gather(bound.var(l.position_table), &positions)?;
    let x = tape.add(levels, words)?;
    Ok(tape.add(x, pos)?)
}

/// `x_{r_i} = W_e^T f_e + W_p^T [LN(f_c), LN(f_l)] + e_img`, LN without
/// learned affine terms. Regions get no position embedding.
pub fn embed_regions<'a, F: Scalar>(
    tape: &mut Tape<'a, F>,
    params: &ModelParams<F>,
    bound: &Bound,
    regions: &[Region],
) -> Result<Var, ModelError> {
    let cfg = &params.config;
    if regions.is_empty() {
        return Err(ModelError::Input("scene has no regions".into()));
    }
    for r in regions {
        if r.appearance.len() != cfg.appearance_dim || r.class_probs.len() != cfg.num_classes {
            return Err(ModelError::Input(format!(
                "region features {}/{} do not match model {}/{}",
                r.appearance.len(),
                r.class_probs.len(),
                cfg.appearance_dim,
                cfg.num_classes
            )));
        }
    }
    let m = regions.len();
    let lift = |v: &[f32]| v.iter().map(|&x| F::lit(x as f64)).collect::<Vec<F>>();
    let fe = Tensor::new(vec![m, cfg.appearance_dim], regions.iter().flat_map(|r| lift(&r.appearance)).collect())?;
    let fc = Tensor::new(vec![m, cfg.num_classes], regions.iter().flat_map(|r| lift(&r.class_probs)).collect())?;
    let fl = Tensor::new(vec![m, GEOMETRY_DIM], regions.iter().flat_map(|r| lift(&r.geometry)).collect())?;

    let l = &params.layout;
    let eps = F::lit(LN_EPS);
    let fe = tape.constant(fe);
    let fc = tape.constant(fc);
    let fl = tape.constant(fl);
    let fc = tape.layer_norm(fc, None, None, eps)?;
    let fl = tape.layer_norm(fl, None, None, eps)?;
    let cl = tape.concat_cols(&[fc, fl])?;
    let visual = tape.matmul(fe, bound.var(l.region_proj))?;
    let location = tape.matmul(cl, bound.var(l.geom_class_proj))?;
    let x = tape.add(visual, location)?;
    Ok(tape.add_row(x, bound.var(l.segment_img))?)
}

fn attention_mask(regions: usize, text: usize, attention: Attention) -> Option<Vec<bool>> {
    match attention {
        Attention::Bidirectional => None,
        Attention::Causal => {
            let s = regions + text;
            let mut allowed = vec![false; s * s];
            for i in 0..s {
                for j in 0..s {
                    allowed[i * s + j] = j < regions || (i >= regions && j <= i);
                }
            }
            Some(allowed)
        }
    }
}

/// Text logits `[L × V]` for one example.
pub fn forward<'a, F: Scalar>(
    tape: &mut Tape<'a, F>,
    params: &ModelParams<F>,
    bound: &Bound,
    regions: &[Region],
    tokens: &[usize],
    level: usize,
    attention: Attention,
) -> Result<Var, ModelError> {
    let offset = match attention {
        Attention::Bidirectional => TextOffset::Canvas,
        Attention::Causal => TextOffset::AfterBos,
    };
    let cfg = &params.config;
    let r = embed_regions(tape, params, bound, regions)?;
    let t = embed_tokens(tape, params, bound, tokens, level, offset)?;
    let mut x = tape.concat_rows(&[r, t])?;
    let (m, n) = (regions.len(), tokens.len());
    let mask = attention_mask(m, n, attention);
    let eps = F::lit(LN_EPS);
    let d = cfg.d_model;
    let dh = cfg.head_dim();
    let score_scale = F::lit(1.0 / (dh as f64).sqrt());

    for b in &params.layout.blocks {
        let h = tape.layer_norm(x, Some(bound.var(b.ln1_gain)), Some(bound.var(b.ln1_bias)), eps)?;
        let qkv = tape.matmul(h, bound.var(b.qkv_weight))?;
        let qkv = tape.add_row(qkv, bound.var(b.qkv_bias))?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for head in 0..cfg.heads {
            let q = tape.slice_cols(qkv, head * dh, dh)?;
            let k = tape.slice_cols(qkv, d + head * dh, dh)?;
            let v = tape.slice_cols(qkv, 2 * d + head * dh, dh)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, score_scale)?;
            let probs = tape.softmax(scores, mask.as_deref())?;
            heads.push(tape.matmul(probs, v)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let a = tape.matmul(ctx, bound.var(b.out_weight))?;
        let a = tape.add_row(a, bound.var(b.out_bias))?;
        x = tape.add(x, a)?;

        let h = tape.layer_norm(x, Some(bound.var(b.ln2_gain)), Some(bound.var(b.ln2_bias)), eps)?;
        let f = tape.matmul(h, bound.var(b.ff_in_weight))?;
        let f = tape.add_row(f, bound.var(b.ff_in_bias))?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, bound.var(b.ff_out_weight))?;
        let f = tape.add_row(f, bound.var(b.ff_out_bias))?;
        x = tape.add(x, f)?;
    }

    let l = &params.layout;
    let text = tape.slice_rows(x, m, n)?;
    let y = tape.layer_norm(text, Some(bound.var(l.final_gain)), Some(bound.var(l.final_bias)), eps)?;
    let logits = tape.matmul(y, bound.var(l.classifier_weight))?;
    Ok(tape.add_row(logits, bound.var(l.classifier_bias))?)
}

/// Inference-only forward pass: logits as a plain tensor, nothing recorded
/// for differentiation.
pub fn logits<F: Scalar>(
    params: &ModelParams<F>,
    regions: &[Region],
    tokens: &[usize],
    level: usize,
    attention: Attention,
) -> Result<Tensor<F>, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward(&mut tape, params, &bound, regions, tokens, level, attention)?;
    Ok(tape.value(out).clone())
}

/// Bidirectional logits over a canvas: row `i` scores position `i + 1`.
pub fn forward_nar<F: Scalar>(
    params: &ModelParams<F>,
    regions: &[Region],
    tokens: &[usize],
    level: usize,
) -> Result<Tensor<F>, ModelError> {
    logits(params, regions, tokens, level, Attention::Bidirectional)
}

/// Causal logits; row `i` parameterizes the token after input `i`.
pub fn forward_ar<F: Scalar>(
    params: &ModelParams<F>,
    regions: &[Region],
    tokens: &[usize],
    level: usize,
) -> Result<Tensor<F>, ModelError> {
    logits(params, regions, tokens, level, Attention::Causal)
}

/// Batched [`forward_nar`]; one logits tensor per example.
pub fn forward_nar_batch<F: Scalar>(
    params: &ModelParams<F>,
    batch: &[(&[Region], &[usize], usize)],
) -> Result<Vec<Tensor<F>>, ModelError> {
    use rayon::prelude::*;
    batch
        .par_iter()
        .map(|&(regions, tokens, level)| forward_nar(params, regions, tokens, level))
        .collect()
}
