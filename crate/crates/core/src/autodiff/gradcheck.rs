//! Central finite-difference checks.
//!
//! The checker only ever runs the forward closure, so it stays independent
//! of the reverse sweep it validates.

use super::array::Array;
use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::rng::RngStream;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small floor on the denominator, so coordinates
/// whose true gradient is ~0 are judged on absolute error.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl CheckReport {
    fn new() -> Self {
        CheckReport { checked: 0, max_rel_err: 0.0, worst: None }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = rel_err(analytic, numeric);
        if e > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(e);
            self.worst = Some((name.to_string(), index, analytic, numeric));
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err < tol
    }
}

/// Check d f / d inputs for a function of plain arrays. `f` builds a scalar
/// on the graph from one leaf per input.
pub fn check_inputs<F>(inputs: &[Array], f: F) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Array> = vars
        .iter()
        .map(|v| grads.wrt(*v).cloned().unwrap_or_else(|| Array::zeros(v.dims().0, v.dims().1)))
        .collect();

    let eval = |xs: &[Array]| -> Result<f64> {
        let g = Graph::no_grad();
        let vars: Vec<Var<'_>> = xs.iter().map(|a| g.constant(a.clone())).collect();
        Ok(f(&g, &vars)?.item())
    };

    let mut report = CheckReport::new();
    let mut xs = inputs.to_vec();
    for (k, a) in analytic.iter().enumerate() {
        for i in 0..a.len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + FD_STEP;
            let fp = eval(&xs)?;
            xs[k].data_mut()[i] = orig - FD_STEP;
            let fm = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            report.record(&format!("input{k}"), i, a.data()[i], (fp - fm) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}

/// Check parameter gradients of `loss(store)`. At most `per_param`
/// coordinates are sampled from each parameter (all of them when `None`).
pub fn check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    per_param: Option<usize>,
    rng: &mut RngStream,
    loss: F,
) -> Result<CheckReport>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let out = loss(&g, store)?;
    let grads = g.backward(out)?;
    let eval = |store: &ParamStore| -> Result<f64> {
        let g = Graph::no_grad();
        Ok(loss(&g, store)?.item())
    };

    let mut report = CheckReport::new();
    for &id in ids {
        let n = store.get(id).len();
        let coords: Vec<usize> = match per_param {
            Some(k) if k < n => (0..k).map(|_| rng.below(n)).collect(),
            _ => (0..n).collect(),
        };
        let analytic = grads.param(id).cloned();
        let name = store.name(id).to_string();
        for i in coords {
            let a = analytic.as_ref().map_or(0.0, |g| g.data()[i]);
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let fp = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let fm = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            report.record(&name, i, a, (fp - fm) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}
