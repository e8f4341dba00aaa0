//! Adam with coupled L2 weight decay, plus global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, weight_decay: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Array,
    pub v: Array,
}

impl Moments {
    pub fn zeros_like(a: &Array) -> Self {
        let (r, c) = a.dims2();
        Moments { m: Array::zeros(r, c), v: Array::zeros(r, c) }
    }
}

/// One Adam update of `param` in place. `t` is the 1-based step count.
pub fn adam_step(param: &mut Array, grad: &Array, state: &mut Moments, cfg: &AdamConfig, t: u64) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::dim(format!(
            "adam: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite("adam received a non-finite gradient".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let p = param.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for i in 0..p.len() {
        let g = grad.data()[i] + cfg.weight_decay * p[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        p[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over a whole [`ParamStore`]; parameters without a gradient this
/// step are left alone and keep their moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    state: Vec<Option<Moments>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, t: 0, state: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Array)]) -> Result<()> {
        self.t += 1;
        if self.state.len() < store.len() {
            self.state.resize(store.len(), None);
        }
        for (id, g) in grads {
            let param = store.get_mut(*id);
            let st = self.state[id.index()].get_or_insert_with(|| Moments::zeros_like(param));
            adam_step(param, g, st, &self.cfg, self.t)?;
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[(ParamId, Array)]) -> f64 {
    grads.iter().map(|(_, g)| g.norm_sq()).sum::<f64>().sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Array)], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.scale_in_place(k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_only_decays() {
        let cfg = AdamConfig { lr: 0.01, weight_decay: 0.1, ..Default::default() };
        let mut p = Array::row(vec![2.0, -1.0]);
        let mut st = Moments::zeros_like(&p);
        adam_step(&mut p, &Array::zeros(1, 2), &mut st, &cfg, 1).unwrap();
        assert!(p.get(0, 0) < 2.0 && p.get(0, 0) > 1.9);
        assert!(p.get(0, 1) > -1.0 && p.get(0, 1) < -0.9);

        let cfg = AdamConfig { weight_decay: 0.0, ..cfg };
        let mut q = Array::row(vec![2.0, -1.0]);
        let mut st = Moments::zeros_like(&q);
        adam_step(&mut q, &Array::zeros(1, 2), &mut st, &cfg, 1).unwrap();
        assert_eq!(q, Array::row(vec![2.0, -1.0]));
    }

    #[test]
    fn descends_on_square() {
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut x = Array::scalar(1.0);
        let mut st = Moments::zeros_like(&x);
        let grad = Array::scalar(2.0 * x.item());
        adam_step(&mut x, &grad, &mut st, &cfg, 1).unwrap();
        assert!(x.item() < 1.0);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut x = Array::scalar(1.0);
        let mut st = Moments::zeros_like(&x);
        let r = adam_step(&mut x, &Array::scalar(f64::NAN), &mut st, &AdamConfig::default(), 1);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![(ParamId(0), Array::row(vec![30.0, 40.0])), (ParamId(1), Array::row(vec![0.0, 0.0]))];
        let before = clip_global_norm(&mut g, 40.0);
        assert_eq!(before, 50.0);
        assert!((global_norm(&g) - 40.0).abs() < 1e-12);
        assert!((g[0].1.get(0, 0) - 24.0).abs() < 1e-12);
    }
}
