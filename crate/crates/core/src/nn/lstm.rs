use crate::autodiff::{Array, Graph, ParamId, ParamStore, RngStream, Var};
use crate::error::{Error, Result};

/// Standard LSTM cell, gates ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let wx = store.xavier(format!("{name}.wx"), in_dim, 4 * hidden, rng);
        let wh = store.xavier(format!("{name}.wh"), hidden, 4 * hidden, rng);
        let b = store.zeros(format!("{name}.b"), 1, 4 * hidden);
        LstmCell { wx, wh, b, in_dim, hidden }
    }

    pub fn zero_state<'g>(&self, g: &'g Graph) -> (Var<'g>, Var<'g>) {
        (g.constant(Array::zeros(1, self.hidden)), g.constant(Array::zeros(1, self.hidden)))
    }

    /// One step on a `1×in` input.
    pub fn step<'g>(&self, g: &'g Graph, store: &ParamStore, x: Var<'g>, h: Var<'g>, c: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        if x.dims() != (1, self.in_dim) || h.dims() != (1, self.hidden) || c.dims() != (1, self.hidden) {
            return Err(Error::dim(format!(
                "lstm step: x {:?}, h {:?}, c {:?} for cell {}→{}",
                x.dims(),
                h.dims(),
                c.dims(),
                self.in_dim,
                self.hidden
            )));
        }
        let xz = x.matmul(g.param(store, self.wx))?;
        self.step_projected(g, store, xz, h, c)
    }

    /// Step given the precomputed input projection `x·Wx` (`1×4h`).
    fn step_projected<'g>(&self, g: &'g Graph, store: &ParamStore, xz: Var<'g>, h: Var<'g>, c: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let n = self.hidden;
        let z = xz.add(h.matmul(g.param(store, self.wh))?)?.add_row(g.param(store, self.b))?;
        let i = z.slice_cols(0, n)?.sigmoid();
        let f = z.slice_cols(n, 2 * n)?.sigmoid();
        let cand = z.slice_cols(2 * n, 3 * n)?.tanh();
        let o = z.slice_cols(3 * n, 4 * n)?.sigmoid();
        let c_next = f.mul(c)?.add(i.mul(cand)?)?;
        let h_next = o.mul(c_next.tanh())?;
        Ok((h_next, c_next))
    }

    /// Run over the rows of `seq` from a zero state; returns the `n×hidden`
    /// stack of hidden states in visiting order.
    pub fn run<'g>(&self, g: &'g Graph, store: &ParamStore, seq: Var<'g>, reverse: bool) -> Result<Var<'g>> {
        let (n, d) = seq.dims();
        if d != self.in_dim {
            return Err(Error::dim(format!("lstm input dim {d}, cell expects {}", self.in_dim)));
        }
        let proj = seq.matmul(g.param(store, self.wx))?;
        let (mut h, mut c) = self.zero_state(g);
        let mut outs = vec![None; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let (h2, c2) = self.step_projected(g, store, proj.row(t)?, h, c)?;
            h = h2;
            c = c2;
            outs[t] = Some(h);
        }
        let rows: Vec<Var<'g>> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
        g.concat_rows(&rows)
    }
}

/// Bidirectional LSTM; row `t` of the output is `[forward_t ‖ backward_t]`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    /// `out_dim` must be even; each direction gets half.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        assert!(out_dim.is_multiple_of(2), "bilstm output dim must be even");
        BiLstm {
            forward: LstmCell::new(store, &format!("{name}.fwd"), in_dim, out_dim / 2, rng),
            backward: LstmCell::new(store, &format!("{name}.bwd"), in_dim, out_dim / 2, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn encode<'g>(&self, g: &'g Graph, store: &ParamStore, seq: Var<'g>) -> Result<Var<'g>> {
        let f = self.forward.run(g, store, seq, false)?;
        let b = self.backward.run(g, store, seq, true)?;
        g.concat_cols(&[f, b])
    }

    /// The same parameters with the two directions exchanged.
    pub fn with_swapped_directions(&self) -> BiLstm {
        BiLstm { forward: self.backward.clone(), backward: self.forward.clone() }
    }
}
