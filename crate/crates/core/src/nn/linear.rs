use crate::autodiff::{Graph, ParamId, ParamStore, RngStream, Var};
use crate::error::Result;

/// `x·W + b` with `W: in×out`, Xavier-uniform initialised.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        let w = store.xavier(format!("{name}.w"), in_dim, out_dim, rng);
        let b = store.zeros(format!("{name}.b"), 1, out_dim);
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        x.matmul(g.param(store, self.w))?.add_row(g.param(store, self.b))
    }
}

/// Fully connected layers with ReLU between them and none on the output.
#[derive(Debug, Clone)]
pub struct LinearStack {
    pub layers: Vec<Linear>,
}

impl LinearStack {
    /// `dims = [in, hidden.., out]`; needs at least two entries.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut RngStream) -> Self {
        assert!(dims.len() >= 2, "a linear stack needs input and output dims");
        let layers = dims.windows(2).enumerate().map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng)).collect();
        LinearStack { layers }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

/// Learned gain and bias applied after row normalisation.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        LayerNorm { gain: store.ones(format!("{name}.gain"), 1, dim), bias: store.zeros(format!("{name}.bias"), 1, dim), eps }
    }

    pub fn forward<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>) -> Result<Var<'g>> {
        x.layer_norm(self.eps).mul_row(g.param(store, self.gain))?.add_row(g.param(store, self.bias))
    }
}
