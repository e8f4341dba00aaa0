//! Run profiles: every knob of a pipeline run in one TOML document.
//!
//! Missing keys fall back to the toy defaults, so a profile file only needs
//! the values it changes. `profiles/toy.toml` and `profiles/full.toml` in
//! the crate root are the two named profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, FusionFlags};
use crate::error::{Error, Result};
use crate::grounding::{GroundingTrainConfig, BOX_EXTRA_DIMS};
use crate::nn::EncoderConfig;
use crate::trainer::TrainConfig;
use crate::world::{DatasetConfig, MAX_INSTRUCTION_LEN};

/// Environment variable consulted for the default seed.
pub const SEED_ENV: &str = "REVERIE_SEED";

/// Size of both cross-modal encoders; input widths come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSizes {
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub lang_layers: usize,
    pub vis_layers: usize,
    pub align_layers: usize,
    pub vis_positions: bool,
    pub ln_eps: f64,
}

impl Default for EncoderSizes {
    fn default() -> Self {
        let t = EncoderConfig::toy(1, 1, 1);
        EncoderSizes {
            dim: t.dim,
            heads: t.heads,
            ff_dim: t.ff_dim,
            lang_layers: t.lang_layers,
            vis_layers: t.vis_layers,
            align_layers: t.align_layers,
            vis_positions: t.vis_positions,
            ln_eps: t.ln_eps,
        }
    }
}

impl EncoderSizes {
    pub fn encoder(&self, vocab_size: usize, vis_in_dim: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_len: MAX_INSTRUCTION_LEN,
            dim: self.dim,
            heads: self.heads,
            ff_dim: self.ff_dim,
            lang_layers: self.lang_layers,
            vis_layers: self.vis_layers,
            align_layers: self.align_layers,
            vis_in_dim,
            vis_positions: self.vis_positions,
            max_vis: 64,
            ln_eps: self.ln_eps,
        }
    }

    pub fn scene(&self, vocab_size: usize, f_view: usize) -> EncoderConfig {
        self.encoder(vocab_size, f_view)
    }

    pub fn object(&self, vocab_size: usize, f_box: usize) -> EncoderConfig {
        self.encoder(vocab_size, f_box + BOX_EXTRA_DIMS)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenePretrainConfig {
    pub samples: usize,
    pub eval_samples: usize,
    pub train: GroundingTrainConfig,
}

impl Default for ScenePretrainConfig {
    fn default() -> Self {
        ScenePretrainConfig { samples: 2000, eval_samples: 300, train: GroundingTrainConfig { epochs: 3, ..Default::default() } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectPretrainConfig {
    pub image_samples: usize,
    pub viewpoint_samples: usize,
    pub eval_samples: usize,
    /// Skip the viewpoint-based fine-tuning stage.
    pub image_only: bool,
    pub train: GroundingTrainConfig,
}

impl Default for ObjectPretrainConfig {
    fn default() -> Self {
        ObjectPretrainConfig {
            image_samples: 1000,
            viewpoint_samples: 1000,
            eval_samples: 300,
            image_only: false,
            train: GroundingTrainConfig { epochs: 4, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Episode split to evaluate: `train`, `val_seen` or `val_unseen`.
    pub split: String,
    pub fusion: FusionFlags,
    /// Interior bucket boundaries of the trace report in meters; empty
    /// means terciles of the evaluated set.
    pub trace_boundaries: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { split: "val_seen".into(), fusion: FusionFlags::BOTH, trace_boundaries: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Profile {
    pub name: String,
    pub seed: u64,
    pub data: DatasetConfig,
    pub encoder: EncoderSizes,
    pub scene: ScenePretrainConfig,
    pub object: ObjectPretrainConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for Profile {
    fn default() -> Self {
        Profile {
            name: "toy".into(),
            seed: 0,
            data: DatasetConfig::default(),
            encoder: EncoderSizes::default(),
            scene: ScenePretrainConfig::default(),
            object: ObjectPretrainConfig::default(),
            agent: AgentConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

const TOY: &str = include_str!("../profiles/toy.toml");
const FULL: &str = include_str!("../profiles/full.toml");

impl Profile {
    /// A checked-in profile by name.
    pub fn named(name: &str) -> Result<Profile> {
        match name {
            "toy" => Profile::from_toml(TOY),
            "full" => Profile::from_toml(FULL),
            other => Err(Error::Config(format!("unknown profile {other:?}; expected toy or full"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Profile> {
        let p: Profile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// A profile file path, or one of the built-in names.
    pub fn load(spec: &str) -> Result<Profile> {
        let path = Path::new(spec);
        if path.exists() {
            Profile::from_toml(&std::fs::read_to_string(path)?)
        } else {
            Profile::named(spec)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.world.validate()?;
        self.agent.validate()?;
        self.train.validate()?;
        if !self.encoder.dim.is_multiple_of(self.encoder.heads) {
            return Err(Error::Config(format!("{} heads do not divide encoder dim {}", self.encoder.heads, self.encoder.dim)));
        }
        if !["train", "val_seen", "val_unseen"].contains(&self.eval.split.as_str()) {
            return Err(Error::Config(format!("unknown split {:?}", self.eval.split)));
        }
        Ok(())
    }

    /// Propagate the top-level seed into every stage that draws randomness.
    pub fn with_seed(mut self, seed: u64) -> Profile {
        self.seed = seed;
        self.data.world.seed = seed;
        self.scene.train.seed = seed;
        self.object.train.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Seed from [`SEED_ENV`] when it is set to an integer.
    pub fn seed_from_env() -> Result<Option<u64>> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map(Some).map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(None),
        }
    }
}
