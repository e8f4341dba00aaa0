//! One decoding step and its components.

use std::rc::Rc;

use super::{Agent, EncoderArm, PointerArm};
use crate::autodiff::{Array, Graph, ParamStore, Var};
use crate::error::Result;
use crate::grounding::box_inputs;
use crate::nn::attentive_pool;
use crate::world::{Observation, ObservedBox};

// Cache slots; candidate views use `SLOT_VIEW + view`.
pub(crate) const SLOT_LANG: usize = 0;
pub(crate) const SLOT_STOP: usize = 1;
pub(crate) const SLOT_SCENE_SCORE: usize = 2;
pub(crate) const SLOT_OBJECT_SCORE: usize = 3;
pub(crate) const SLOT_VIEW: usize = 100;

/// Recurrent state of one episode. Memory rows are appended, never edited.
#[derive(Clone)]
pub struct DecoderState<'g> {
    pub h: Var<'g>,
    pub c: Var<'g>,
    /// Candidate row `v'` of the previous action (zeros before the first).
    pub prev_action: Var<'g>,
    pub memory: Vec<Var<'g>>,
    pub t: usize,
}

impl<'g> DecoderState<'g> {
    /// Record the chosen action of a step.
    pub fn commit(&mut self, out: &StepOutput<'g>, action: usize) -> Result<()> {
        self.h = out.h;
        self.c = out.c;
        self.prev_action = out.o_prime.row(action)?;
        self.t += 1;
        Ok(())
    }
}

pub struct StepOutput<'g> {
    /// `1×N_o`, STOP first.
    pub logits: Var<'g>,
    /// Progress estimate in `(0, 1)`, `1×1`.
    pub progress: Var<'g>,
    /// Value baseline, `1×1`.
    pub value: Var<'g>,
    /// Candidate rows `v'`, `N_o × (F_view + 4·tile + d_ground)`.
    pub o_prime: Var<'g>,
    pub x_tilde: Var<'g>,
    pub s_t: Var<'g>,
    pub s_att: Var<'g>,
    pub h: Var<'g>,
    pub c: Var<'g>,
    /// Every attention distribution of the step as rows summing to one.
    pub attention: Vec<Array>,
    pub panorama_weights: Array,
    pub instruction_weights: Array,
    pub candidate_weights: Array,
}

/// Indices of the `k` highest scores, ties to the earlier box.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean of the feature rows of the `k` best-scoring boxes.
pub fn top_k_mean(features: &Array, scores: &[f64], k: usize) -> Array {
    let idx = top_k_indices(scores, k);
    let cols = features.cols();
    let mut out = vec![0.0; cols];
    for &i in &idx {
        for (o, x) in out.iter_mut().zip(features.row_slice(i)) {
            *o += x;
        }
    }
    Array::row(out.into_iter().map(|x| x / idx.len() as f64).collect())
}

fn pooled_row(weights: &Var<'_>) -> Array {
    weights.value().transpose()
}

impl Agent {
    pub fn initial_state<'g>(&self, g: &'g Graph) -> DecoderState<'g> {
        let (h, c) = self.lstm.zero_state(g);
        DecoderState { h, c, prev_action: g.constant(Array::zeros(1, self.candidate_dim())), memory: Vec::new(), t: 0 }
    }

    fn frozen(&self) -> bool {
        !self.cfg.finetune_encoders
    }

    fn cached(&self, key: (usize, Vec<usize>, usize, usize), compute: impl FnOnce() -> Result<Array>) -> Result<Rc<Array>> {
        if let Some(a) = self.caches.arrays.borrow().get(&key) {
            return Ok(Rc::clone(a));
        }
        let a = Rc::new(compute()?);
        self.caches.arrays.borrow_mut().insert(key, Rc::clone(&a));
        Ok(a)
    }

    /// `ṽ_t = attentive_pool(V_t, h_{t−1}, W₁)`, `s_t = FC([a_{t−1}, ṽ_t])`;
    /// `s_t` is appended to the memory. Returns `s_t` and the view weights.
    pub fn memory_update<'g>(&self, g: &'g Graph, state: &mut DecoderState<'g>, panorama: &Array) -> Result<(Var<'g>, Var<'g>)> {
        let pooled = attentive_pool(g.constant(panorama.clone()), state.h, g.param(&self.store, self.w1))?;
        let s_t = self.fc_state.forward(g, &self.store, g.concat_cols(&[state.prev_action, pooled.output])?)?;
        state.memory.push(s_t);
        Ok((s_t, pooled.weights))
    }

    /// Instruction rows fed to the BiLSTM: the fused language sequence of
    /// the scene encoder run on the current panorama, or plain word
    /// embeddings for the simple-recurrent arm.
    pub fn instruction_rows<'g>(&self, g: &'g Graph, world: usize, tokens: &[usize], viewpoint: usize, panorama: &Array) -> Result<Var<'g>> {
        if self.cfg.encoder == EncoderArm::SimpleRecurrent {
            return g.param(&self.store, self.word_emb).gather_rows(tokens);
        }
        let rows = if self.frozen() {
            let a = self.cached((world, tokens.to_vec(), viewpoint, SLOT_LANG), || {
                let g2 = Graph::no_grad();
                Ok((*self.scene.encoder.encode(&g2, &self.store, tokens, panorama)?.lang_seq.value()).clone())
            })?;
            g.constant((*a).clone())
        } else {
            self.scene.encoder.encode(g, &self.store, tokens, panorama)?.lang_seq
        };
        if self.cfg.keep_cls {
            Ok(rows)
        } else {
            rows.slice_rows(1, rows.dims().0)
        }
    }

    /// `X_t = BiLSTM(rows)`, `x̃_t = attentive_pool(X_t, h_{t−1}, W₃)`.
    /// Returns `(X_t, x̃_t, weights)`.
    pub fn encode_instruction_context<'g>(&self, g: &'g Graph, rows: Var<'g>, h: Var<'g>) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
        let x = self.bilstm.encode(g, &self.store, rows)?;
        let pooled = attentive_pool(x, h, g.param(&self.store, self.w3))?;
        Ok((x, pooled.output, pooled.weights))
    }

    /// Summary `ṽ` of the boxes seen through one candidate: the mean fused
    /// feature of the top-k boxes by object-grounding score, zero when the
    /// view shows no box.
    pub fn view_comprehension<'g>(&self, g: &'g Graph, world: usize, tokens: &[usize], viewpoint: usize, slot: usize, boxes: &[&ObservedBox]) -> Result<Var<'g>> {
        let d = self.object.encoder.dim();
        if boxes.is_empty() {
            return Ok(g.constant(Array::zeros(1, d)));
        }
        match self.cfg.pointer {
            PointerArm::NoneProxy => {
                let mean = g.constant(box_inputs(boxes)?).mean_rows();
                self.proxy.forward(g, &self.store, mean)
            }
            PointerArm::ObjectGrounded if self.frozen() => {
                let a = self.cached((world, tokens.to_vec(), viewpoint, slot), || {
                    let g2 = Graph::no_grad();
                    let gr = self.object.ground(&g2, &self.store, tokens, boxes)?;
                    Ok(top_k_mean(&gr.features.value(), gr.logits.value().data(), self.cfg.top_k))
                })?;
                Ok(g.constant((*a).clone()))
            }
            PointerArm::ObjectGrounded => {
                let gr = self.object.ground(g, &self.store, tokens, boxes)?;
                let idx = top_k_indices(gr.logits.value().data(), self.cfg.top_k);
                Ok(gr.features.gather_rows(&idx)?.mean_rows())
            }
        }
    }

    /// Candidate rows `v' = [view feature ‖ tiled trig angles ‖ ṽ]`, STOP
    /// first with the learned stop feature and zero angles.
    pub fn candidate_rows<'g>(&self, g: &'g Graph, world: usize, tokens: &[usize], obs: &Observation<'_>) -> Result<Var<'g>> {
        let mut rows = Vec::with_capacity(obs.candidates.len());
        for (i, c) in obs.candidates.iter().enumerate() {
            let (view_feat, slot) = match c.view {
                Some(v) => (g.constant(obs.panorama.row_vec(v)), SLOT_VIEW + v),
                None => (g.param(&self.store, self.stop_view), SLOT_STOP),
            };
            let trig: Vec<f64> =
                (0..self.cfg.tile).flat_map(|_| [c.heading.cos(), c.heading.sin(), c.elevation.cos(), c.elevation.sin()]).collect();
            let boxes = obs.boxes_for(i);
            let comp = self.view_comprehension(g, world, tokens, obs.viewpoint, slot, &boxes)?;
            let parts = if trig.is_empty() { vec![view_feat, comp] } else { vec![view_feat, g.constant(Array::row(trig)), comp] };
            rows.push(g.concat_cols(&parts)?);
        }
        g.concat_rows(&rows)
    }

    /// `g(O'_t)` and `õ'_t = attentive_pool(g(O'_t), h_{t−1}, W₄)`.
    pub fn grounded_nav_feature<'g>(&self, g: &'g Graph, o_prime: Var<'g>, h: Var<'g>) -> Result<(Var<'g>, Var<'g>, Var<'g>)> {
        let go = self.g.forward(g, &self.store, o_prime)?;
        let pooled = attentive_pool(go, h, g.param(&self.store, self.w4))?;
        Ok((go, pooled.output, pooled.weights))
    }

    /// `N_mem` self-attention blocks over the memory, then `N_state` blocks
    /// of `s_t` attending to the result. With no blocks `s_t^a = s_t`.
    pub fn memory_attend<'g>(&self, g: &'g Graph, s_t: Var<'g>, memory: &[Var<'g>]) -> Result<(Var<'g>, Vec<Array>)> {
        let mut weights = Vec::new();
        if self.state_blocks.is_empty() {
            return Ok((s_t, weights));
        }
        let mut m = g.concat_rows(memory)?;
        for b in &self.mem_blocks {
            let out = b.forward(g, &self.store, m, m)?;
            weights.extend(out.weights);
            m = out.output;
        }
        let mut s = s_t;
        for b in &self.state_blocks {
            let out = b.forward(g, &self.store, s, m)?;
            weights.extend(out.weights);
            s = out.output;
        }
        Ok((s, weights))
    }

    /// One full step. `state` gains a memory row; call
    /// [`DecoderState::commit`] with the chosen action afterwards.
    pub fn decode_step<'g>(&self, g: &'g Graph, world: usize, tokens: &[usize], obs: &Observation<'_>, state: &mut DecoderState<'g>) -> Result<StepOutput<'g>> {
        let h_prev = state.h;
        let (s_t, pano_w) = self.memory_update(g, state, obs.panorama)?;
        let rows = self.instruction_rows(g, world, tokens, obs.viewpoint, obs.panorama)?;
        let (_, x_tilde, instr_w) = self.encode_instruction_context(g, rows, h_prev)?;
        let o_prime = self.candidate_rows(g, world, tokens, obs)?;
        let (go, o_tilde, cand_w) = self.grounded_nav_feature(g, o_prime, h_prev)?;
        let (s_att, mut attention) = self.memory_attend(g, s_t, &state.memory)?;
        let input = g.concat_cols(&[x_tilde, o_tilde, s_att])?;
        let (h, c) = self.lstm.step(g, &self.store, input, h_prev, state.c)?;
        let hx = g.concat_cols(&[h, x_tilde])?;
        let key = g.param(&self.store, self.w5).matmul(hx.transpose())?;
        let logits = go.matmul(key)?.transpose();
        let progress = self.progress.forward(g, &self.store, hx)?.sigmoid();
        let value = self.value.forward(g, &self.store, h)?;
        let (panorama_weights, instruction_weights, candidate_weights) = (pooled_row(&pano_w), pooled_row(&instr_w), pooled_row(&cand_w));
        attention.extend([panorama_weights.clone(), instruction_weights.clone(), candidate_weights.clone()]);
        Ok(StepOutput {
            logits,
            progress,
            value,
            o_prime,
            x_tilde,
            s_t,
            s_att,
            h,
            c,
            attention,
            panorama_weights,
            instruction_weights,
            candidate_weights,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_ties_and_truncation() {
        assert_eq!(top_k_indices(&[0.1, 0.9, 0.9, 0.3], 3), vec![1, 2, 3]);
        assert_eq!(top_k_indices(&[0.4], 3), vec![0]);
        let f = Array::from_rows(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(top_k_mean(&f, &[0.5], 3).data(), &[1.0, 0.0]);
        assert_eq!(top_k_mean(&f, &[0.5, 0.2], 3).data(), &[2.0, 1.0]);
    }
}
