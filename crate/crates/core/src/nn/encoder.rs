//! Two-stream cross-modal encoder.
//!
//! The language stream embeds a leading `CLS` slot plus the instruction
//! tokens with learned positions; the vision stream projects region or view
//! features behind a leading `IMG` slot. Each stream runs its own
//! self-attention blocks, then co-attention layers let every stream attend
//! to the other. Pooled `h_CLS` / `h_IMG` come from a linear+tanh head on
//! the two leading rows.

use serde::{Deserialize, Serialize};

use super::attention::TransformerBlock;
use super::linear::{LayerNorm, Linear};
use crate::autodiff::{Array, Graph, ParamId, ParamStore, RngStream, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub lang_layers: usize,
    pub vis_layers: usize,
    pub align_layers: usize,
    pub vis_in_dim: usize,
    /// Learned positions on the vision stream (off for unordered panoramas).
    pub vis_positions: bool,
    pub max_vis: usize,
    pub ln_eps: f64,
}

impl EncoderConfig {
    pub fn toy(vocab_size: usize, max_len: usize, vis_in_dim: usize) -> Self {
        EncoderConfig {
            vocab_size,
            max_len,
            dim: 32,
            heads: 4,
            ff_dim: 64,
            lang_layers: 2,
            vis_layers: 2,
            align_layers: 1,
            vis_in_dim,
            vis_positions: false,
            max_vis: 64,
            ln_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossModalEncoder {
    pub cfg: EncoderConfig,
    tok_emb: ParamId,
    lang_pos: ParamId,
    vis_pos: Option<ParamId>,
    cls: ParamId,
    img: ParamId,
    vis_proj: Linear,
    lang_norm: LayerNorm,
    vis_norm: LayerNorm,
    lang_blocks: Vec<TransformerBlock>,
    vis_blocks: Vec<TransformerBlock>,
    /// `(language attends vision, vision attends language)` per layer.
    align: Vec<(TransformerBlock, TransformerBlock)>,
    pool_lang: Linear,
    pool_vis: Linear,
}

/// Output of the language-only part of the encoder.
#[derive(Clone)]
pub struct LanguageStream<'g> {
    pub seq: Var<'g>,
    pub attention: Vec<Array>,
}

pub struct FusedOutputs<'g> {
    /// `(N_l + 1) × d`, row 0 is CLS.
    pub lang_seq: Var<'g>,
    /// `(n + 1) × d`, row 0 is IMG.
    pub vis_seq: Var<'g>,
    pub h_cls: Var<'g>,
    pub h_img: Var<'g>,
    /// Every attention matrix produced, one per head per block.
    pub attention: Vec<Array>,
}

impl CrossModalEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: EncoderConfig, rng: &mut RngStream) -> Self {
        let d = cfg.dim;
        let block = |store: &mut ParamStore, n: String, rng: &mut RngStream| TransformerBlock::new(store, &n, d, cfg.heads, cfg.ff_dim, cfg.ln_eps, rng);
        let tok_emb = store.uniform(format!("{name}.tok_emb"), cfg.vocab_size, d, 0.5, rng);
        let lang_pos = store.uniform(format!("{name}.lang_pos"), cfg.max_len + 1, d, 0.1, rng);
        let vis_pos = cfg.vis_positions.then(|| store.uniform(format!("{name}.vis_pos"), cfg.max_vis + 1, d, 0.1, rng));
        let cls = store.uniform(format!("{name}.cls"), 1, d, 0.5, rng);
        let img = store.uniform(format!("{name}.img"), 1, d, 0.5, rng);
        let vis_proj = Linear::new(store, &format!("{name}.vis_proj"), cfg.vis_in_dim, d, rng);
        let lang_norm = LayerNorm::new(store, &format!("{name}.lang_norm"), d, cfg.ln_eps);
        let vis_norm = LayerNorm::new(store, &format!("{name}.vis_norm"), d, cfg.ln_eps);
        let lang_blocks = (0..cfg.lang_layers).map(|i| block(store, format!("{name}.lang.{i}"), rng)).collect();
        let vis_blocks = (0..cfg.vis_layers).map(|i| block(store, format!("{name}.vis.{i}"), rng)).collect();
        let align = (0..cfg.align_layers)
            .map(|i| (block(store, format!("{name}.align.{i}.l"), rng), block(store, format!("{name}.align.{i}.v"), rng)))
            .collect();
        let pool_lang = Linear::new(store, &format!("{name}.pool_lang"), d, d, rng);
        let pool_vis = Linear::new(store, &format!("{name}.pool_vis"), d, d, rng);
        CrossModalEncoder {
            cfg,
            tok_emb,
            lang_pos,
            vis_pos,
            cls,
            img,
            vis_proj,
            lang_norm,
            vis_norm,
            lang_blocks,
            vis_blocks,
            align,
            pool_lang,
            pool_vis,
        }
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    /// Parameter count implied by a config, without building anything.
    pub fn param_count(cfg: &EncoderConfig) -> usize {
        let d = cfg.dim;
        let linear = |i: usize, o: usize| i * o + o;
        let block = 4 * linear(d, d) + 2 * (2 * d) + linear(d, cfg.ff_dim) + linear(cfg.ff_dim, d);
        let blocks = cfg.lang_layers + cfg.vis_layers + 2 * cfg.align_layers;
        cfg.vocab_size * d
            + (cfg.max_len + 1) * d
            + if cfg.vis_positions { (cfg.max_vis + 1) * d } else { 0 }
            + 2 * d
            + linear(cfg.vis_in_dim, d)
            + 2 * (2 * d)
            + blocks * block
            + 2 * linear(d, d)
    }

    pub fn encode<'g>(&self, g: &'g Graph, store: &ParamStore, tokens: &[usize], visual: &Array) -> Result<FusedOutputs<'g>> {
        let lang = self.encode_language(g, store, tokens)?;
        self.fuse(g, store, lang, visual)
    }

    /// Language stream up to (not including) the co-attention layers. It does
    /// not depend on the visual input, so callers scoring many panoramas
    /// against one instruction can share it.
    pub fn encode_language<'g>(&self, g: &'g Graph, store: &ParamStore, tokens: &[usize]) -> Result<LanguageStream<'g>> {
        if tokens.is_empty() || tokens.len() > self.cfg.max_len {
            return Err(Error::contract(format!("instruction length {} outside 1..={}", tokens.len(), self.cfg.max_len)));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::TokenId(bad));
        }
        let words = g.param(store, self.tok_emb).gather_rows(tokens)?;
        let lang = g.concat_rows(&[g.param(store, self.cls), words])?;
        let lang = lang.add(g.param(store, self.lang_pos).slice_rows(0, tokens.len() + 1)?)?;
        let mut seq = self.lang_norm.forward(g, store, lang)?;
        let mut attention = Vec::new();
        for b in &self.lang_blocks {
            let out = b.forward(g, store, seq, seq)?;
            attention.extend(out.weights);
            seq = out.output;
        }
        Ok(LanguageStream { seq, attention })
    }

    /// Vision stream plus co-attention against an encoded language stream.
    pub fn fuse<'g>(&self, g: &'g Graph, store: &ParamStore, lang: LanguageStream<'g>, visual: &Array) -> Result<FusedOutputs<'g>> {
        let (n_vis, f) = visual.dims2();
        if f != self.cfg.vis_in_dim {
            return Err(Error::dim(format!("visual feature dim {f}, encoder expects {}", self.cfg.vis_in_dim)));
        }
        if self.vis_pos.is_some() && n_vis > self.cfg.max_vis {
            return Err(Error::contract(format!("{n_vis} visual inputs exceed max_vis {}", self.cfg.max_vis)));
        }
        let LanguageStream { seq: mut lang, mut attention } = lang;

        let regions = self.vis_proj.forward(g, store, g.constant(visual.clone()))?;
        let mut vis = g.concat_rows(&[g.param(store, self.img), regions])?;
        if let Some(pos) = self.vis_pos {
            vis = vis.add(g.param(store, pos).slice_rows(0, n_vis + 1)?)?;
        }
        let mut vis = self.vis_norm.forward(g, store, vis)?;
        for b in &self.vis_blocks {
            let out = b.forward(g, store, vis, vis)?;
            attention.extend(out.weights);
            vis = out.output;
        }
        for (to_vis, to_lang) in &self.align {
            let l = to_vis.forward(g, store, lang, vis)?;
            let v = to_lang.forward(g, store, vis, lang)?;
            attention.extend(l.weights);
            attention.extend(v.weights);
            lang = l.output;
            vis = v.output;
        }
        let h_cls = self.pool_lang.forward(g, store, lang.row(0)?)?.tanh();
        let h_img = self.pool_vis.forward(g, store, vis.row(0)?)?.tanh();
        Ok(FusedOutputs { lang_seq: lang, vis_seq: vis, h_cls, h_img, attention })
    }
}
