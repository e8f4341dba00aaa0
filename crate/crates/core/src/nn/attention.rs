//! Attentive pooling, multi-head attention and the post-norm transformer
//! block.

use super::linear::{LayerNorm, Linear};
use crate::autodiff::{Array, Graph, ParamStore, RngStream, Var};
use crate::error::{Error, Result};

/// Output of [`attentive_pool`]: the pooled row and the `n×1` weights.
pub struct Pooled<'g> {
    pub output: Var<'g>,
    pub weights: Var<'g>,
}

/// `weights = softmax(seq · (W·queryᵀ))`, `output = weightsᵀ · seq`.
///
/// `seq: n×d`, `query: 1×d_q`, `w: d×d_q`.
pub fn attentive_pool<'g>(seq: Var<'g>, query: Var<'g>, w: Var<'g>) -> Result<Pooled<'g>> {
    let (_, d) = seq.dims();
    let (wd, wq) = w.dims();
    if wd != d || query.dims() != (1, wq) {
        return Err(Error::dim(format!(
            "attentive_pool: seq {:?}, query {:?}, W {:?}",
            seq.dims(),
            query.dims(),
            w.dims()
        )));
    }
    let key = w.matmul(query.transpose())?; // d×1
    let scores = seq.matmul(key)?; // n×1
    let weights = scores.softmax(0)?;
    let output = weights.transpose().matmul(seq)?;
    Ok(Pooled { output, weights })
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
}

/// Attention output plus one `q×m` weight matrix per head.
pub struct Attended<'g> {
    pub output: Var<'g>,
    pub weights: Vec<Array>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut RngStream) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "head count {heads} must divide model dim {dim}");
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, query: Var<'g>, context: Var<'g>) -> Result<Attended<'g>> {
        let (_, qd) = query.dims();
        let (m, cd) = context.dims();
        if qd != self.dim || cd != self.dim {
            return Err(Error::dim(format!("attention dims {qd}/{cd}, expected {}", self.dim)));
        }
        if m == 0 {
            return Err(Error::contract("attention over an empty context"));
        }
        let q = self.q.forward(g, store, query)?;
        let k = self.k.forward(g, store, context)?;
        let v = self.v.forward(g, store, context)?;
        let dk = self.dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (s, e) = (h * dk, (h + 1) * dk);
            let qh = q.slice_cols(s, e)?;
            let kh = k.slice_cols(s, e)?;
            let vh = v.slice_cols(s, e)?;
            let a = qh.matmul(kh.transpose())?.scale(scale).softmax(1)?;
            weights.push((*a.value()).clone());
            outs.push(a.matmul(vh)?);
        }
        let heads = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        Ok(Attended { output: self.o.forward(g, store, heads)?, weights })
    }
}

/// Post-norm block: `x = LN(q + MHA(q, ctx))`, `y = LN(x + FFN(x))`.
/// With `ctx == q` it is a self-attention block.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

pub struct BlockOutput<'g> {
    pub output: Var<'g>,
    /// Attention sub-layer output before the residual and FFN.
    pub attended: Var<'g>,
    pub weights: Vec<Array>,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ff_dim: usize, eps: f64, rng: &mut RngStream) -> Self {
        TransformerBlock {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), dim, eps),
            ff1: Linear::new(store, &format!("{name}.ff1"), dim, ff_dim, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff_dim, dim, rng),
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), dim, eps),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, query: Var<'g>, context: Var<'g>) -> Result<BlockOutput<'g>> {
        let att = self.attn.forward(g, store, query, context)?;
        let x = self.norm1.forward(g, store, query.add(att.output)?)?;
        let f = self.ff2.forward(g, store, self.ff1.forward(g, store, x)?.relu())?;
        let y = self.norm2.forward(g, store, x.add(f)?)?;
        Ok(BlockOutput { output: y, attended: att.output, weights: att.weights })
    }
}
