//! Memory-augmented attentive action decoder.
//!
//! Each step embeds the current panorama into a scene memory, reads the
//! instruction through the scene-grounding encoder and a BiLSTM, describes
//! every navigable candidate with its facing view, its direction and the
//! object-grounding summary of the boxes it shows, attends over the memory
//! with transformer blocks, advances an LSTM and scores the candidates.

mod decoder;
mod rollout;

pub use decoder::{top_k_indices, top_k_mean, DecoderState, StepOutput};
pub use rollout::{
    argmax, final_grounding, fused_decide, rollout, select_action, teacher_action, ActionSource, AttentionSummary, FinalGrounding,
    FusionFlags, FusionInputs, Rollout, SelectMode, StepRecord, TraceStep, TRACE_SCHEMA,
};

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, ParamId, ParamStore, RngStream};
use crate::error::{Error, Result};
use crate::grounding::{ObjectGroundingModel, SceneGroundingModel, BOX_EXTRA_DIMS};
use crate::world::MAX_INSTRUCTION_LEN;
use crate::nn::{BiLstm, EncoderConfig, Linear, LinearStack, LstmCell, TransformerBlock};

/// Where the instruction representation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderArm {
    /// Word embeddings straight into the BiLSTM; no cross-modal encoder.
    SimpleRecurrent,
    /// Cross-modal encoder with random, untrained weights.
    Scratch,
    /// Cross-modal encoder pre-trained on scene grounding.
    SceneGrounded,
}

/// How candidate views are summarised from their boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointerArm {
    /// Mean raw box input through a trainable projection.
    NoneProxy,
    /// Top-k boxes of the pre-trained object grounding model.
    ObjectGrounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub encoder: EncoderArm,
    pub pointer: PointerArm,
    pub n_mem: usize,
    pub n_state: usize,
    /// LSTM hidden size `D_h`.
    pub hidden: usize,
    /// BiLSTM output width (rows of `X_t`).
    pub lang_dim: usize,
    /// Repeats of the `(cos θ, sin θ, cos φ, sin φ)` block.
    pub tile: usize,
    /// Output width of the candidate network `g`.
    pub g_dim: usize,
    pub g_hidden: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub top_k: usize,
    /// Keep the CLS row in `X_t`.
    pub keep_cls: bool,
    /// Train the two grounding encoders along with the policy.
    pub finetune_encoders: bool,
    pub lambda_sg: f64,
    pub lambda_og: f64,
    pub max_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            encoder: EncoderArm::SceneGrounded,
            pointer: PointerArm::ObjectGrounded,
            n_mem: 3,
            n_state: 3,
            hidden: 32,
            lang_dim: 32,
            tile: 4,
            g_dim: 32,
            g_hidden: 64,
            heads: 4,
            ff_dim: 64,
            top_k: 3,
            keep_cls: true,
            finetune_encoders: false,
            lambda_sg: 1.0,
            lambda_og: 1.0,
            max_steps: 20,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lang_dim.is_multiple_of(2) {
            return Err(Error::Config("lang_dim must be even for the BiLSTM".into()));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("{} heads do not divide hidden size {}", self.heads, self.hidden)));
        }
        if self.top_k == 0 || self.max_steps == 0 {
            return Err(Error::Config("top_k and max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Prefixes of the two grounding models inside the agent's store.
pub const SCENE_PREFIX: &str = "vil_enc";
pub const OBJECT_PREFIX: &str = "vil_ptr";

/// Frozen-encoder outputs keyed by (world, instruction, viewpoint, slot).
type CacheKey = (usize, Vec<usize>, usize, usize);

#[derive(Debug, Default)]
pub(crate) struct Caches {
    pub(crate) arrays: RefCell<HashMap<CacheKey, Rc<Array>>>,
    pub(crate) scalars: RefCell<HashMap<CacheKey, f64>>,
}

#[derive(Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub store: ParamStore,
    pub scene: SceneGroundingModel,
    pub object: ObjectGroundingModel,
    pub(crate) word_emb: ParamId,
    pub(crate) bilstm: BiLstm,
    pub(crate) w1: ParamId,
    pub(crate) fc_state: Linear,
    pub(crate) w3: ParamId,
    pub(crate) stop_view: ParamId,
    pub(crate) proxy: Linear,
    pub(crate) g: LinearStack,
    pub(crate) w4: ParamId,
    pub(crate) mem_blocks: Vec<TransformerBlock>,
    pub(crate) state_blocks: Vec<TransformerBlock>,
    pub(crate) lstm: LstmCell,
    pub(crate) w5: ParamId,
    pub(crate) progress: Linear,
    pub(crate) value: LinearStack,
    pub(crate) f_view: usize,
    pub(crate) caches: Caches,
}

impl Agent {
    pub fn new(cfg: AgentConfig, scene_cfg: EncoderConfig, object_cfg: EncoderConfig, f_view: usize, seed: u64) -> Result<Agent> {
        cfg.validate()?;
        if scene_cfg.vis_in_dim != f_view {
            return Err(Error::Config(format!("scene encoder takes {} visual dims, panoramas have {f_view}", scene_cfg.vis_in_dim)));
        }
        let rng = RngStream::new(seed);
        let mut store = ParamStore::new();
        let scene = SceneGroundingModel::new(&mut store, SCENE_PREFIX, scene_cfg.clone(), &mut rng.fork("scene"));
        let object = ObjectGroundingModel::new(&mut store, OBJECT_PREFIX, object_cfg.clone(), &mut rng.fork("object"));
        let mut r = rng.fork("policy");
        let d = scene_cfg.dim;
        let d_ground = object_cfg.dim;
        let box_in = object_cfg.vis_in_dim;
        if box_in < BOX_EXTRA_DIMS {
            return Err(Error::Config("object encoder input is narrower than the box geometry block".into()));
        }
        let v_dim = f_view + 4 * cfg.tile + d_ground;
        let h = cfg.hidden;
        let word_emb = store.uniform("policy.word_emb", scene_cfg.vocab_size, d, 0.5, &mut r);
        let bilstm = BiLstm::new(&mut store, "policy.bilstm", d, cfg.lang_dim, &mut r);
        let w1 = store.xavier("policy.w1", f_view, h, &mut r);
        let fc_state = Linear::new(&mut store, "policy.fc_state", v_dim + f_view, h, &mut r);
        let w3 = store.xavier("policy.w3", cfg.lang_dim, h, &mut r);
        let stop_view = store.uniform("policy.stop_view", 1, f_view, 0.5, &mut r);
        let proxy = Linear::new(&mut store, "policy.proxy", box_in, d_ground, &mut r);
        let g = LinearStack::new(&mut store, "policy.g", &[v_dim, cfg.g_hidden, cfg.g_dim], &mut r);
        let w4 = store.xavier("policy.w4", cfg.g_dim, h, &mut r);
        let block = |store: &mut ParamStore, name: String, r: &mut RngStream| TransformerBlock::new(store, &name, h, cfg.heads, cfg.ff_dim, 1e-6, r);
        let mem_blocks = (0..cfg.n_mem).map(|i| block(&mut store, format!("policy.mem.{i}"), &mut r)).collect();
        let state_blocks = (0..cfg.n_state).map(|i| block(&mut store, format!("policy.state.{i}"), &mut r)).collect();
        let lstm = LstmCell::new(&mut store, "policy.lstm", cfg.lang_dim + cfg.g_dim + h, h, &mut r);
        let w5 = store.xavier("policy.w5", cfg.g_dim, h + cfg.lang_dim, &mut r);
        let progress = Linear::new(&mut store, "policy.progress", h + cfg.lang_dim, 1, &mut r);
        let value = LinearStack::new(&mut store, "policy.value", &[h, h, 1], &mut r);
        Ok(Agent {
            cfg,
            store,
            scene,
            object,
            word_emb,
            bilstm,
            w1,
            fc_state,
            w3,
            stop_view,
            proxy,
            g,
            w4,
            mem_blocks,
            state_blocks,
            lstm,
            w5,
            progress,
            value,
            f_view,
            caches: Caches::default(),
        })
    }

    /// Agent whose two grounding encoders use [`EncoderConfig::toy`] sizes.
    pub fn with_toy_encoders(cfg: AgentConfig, vocab_size: usize, f_view: usize, f_box: usize, seed: u64) -> Result<Agent> {
        let scene = EncoderConfig::toy(vocab_size, MAX_INSTRUCTION_LEN, f_view);
        let object = EncoderConfig::toy(vocab_size, MAX_INSTRUCTION_LEN, f_box + BOX_EXTRA_DIMS);
        Agent::new(cfg, scene, object, f_view, seed)
    }

    /// Width of a candidate row `v'`.
    pub fn candidate_dim(&self) -> usize {
        self.f_view + 4 * self.cfg.tile + self.object.encoder.dim()
    }

    /// Copy pre-trained grounding weights in. `scene_prefix` / `object_prefix`
    /// name the models inside their source stores.
    pub fn load_grounding(&mut self, scene: Option<(&ParamStore, &str)>, object: Option<(&ParamStore, &str)>) -> Result<()> {
        for (src, dst) in [(scene, SCENE_PREFIX), (object, OBJECT_PREFIX)] {
            if let Some((store, prefix)) = src {
                let n = self.store.copy_prefixed_from(store, &format!("{prefix}."), &format!("{dst}."))?;
                if n == 0 {
                    return Err(Error::Checkpoint(format!("no parameters under {prefix:?} in the grounding checkpoint")));
                }
            }
        }
        self.clear_caches();
        Ok(())
    }

    /// Must be called after any change to frozen encoder weights.
    pub fn clear_caches(&self) {
        self.caches.arrays.borrow_mut().clear();
        self.caches.scalars.borrow_mut().clear();
    }

    /// Parameters excluded from training: both grounding models unless
    /// fine-tuning is on. A scratch encoder stays frozen at its random init.
    pub fn frozen_params(&self) -> Vec<ParamId> {
        if self.cfg.finetune_encoders {
            return Vec::new();
        }
        self.store.ids_with_prefix(&format!("{SCENE_PREFIX}.")).chain(self.store.ids_with_prefix(&format!("{OBJECT_PREFIX}."))).collect()
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        let frozen = self.frozen_params();
        self.store.ids().filter(|p| !frozen.contains(p)).collect()
    }
}
