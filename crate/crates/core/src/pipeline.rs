//! The stages of a full run wired together from a [`Profile`]: grounding
//! pre-training, agent assembly, checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, EncoderArm, PointerArm};
use crate::autodiff::{ParamStore, RngStream};
use crate::config::Profile;
use crate::error::{Error, Result};
use crate::grounding::{
    evaluate_objects, evaluate_scene, sample_object_batch, sample_scene_batch, train_object_grounding, train_scene_grounding, ObjectEval,
    ObjectGroundingModel, SceneGroundingModel, Stage,
};
use crate::nn::EncoderConfig;
use crate::world::{Dataset, Vocab};

/// Parameter prefixes of the stand-alone grounding checkpoints.
pub const SCENE_MODEL: &str = "scene";
pub const OBJECT_MODEL: &str = "object";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub untrained_accuracy: f64,
    pub accuracy: f64,
    pub loss: f64,
    pub epoch_loss: Vec<f64>,
}

/// Train the scene-grounding scorer on training episodes; accuracy is
/// measured on seen-world validation episodes.
pub fn pretrain_scene(profile: &Profile, ds: &Dataset, vocab: &Vocab) -> Result<(ParamStore, SceneGroundingModel, SceneSummary)> {
    let rng = RngStream::new(profile.seed).fork("pretrain-scene");
    let train = sample_scene_batch(&ds.worlds, &ds.train, profile.scene.samples, &mut rng.fork("train"))?;
    let held_out = sample_scene_batch(&ds.worlds, &ds.val_seen, profile.scene.eval_samples, &mut rng.fork("held-out"))?;
    let mut store = ParamStore::new();
    let cfg = profile.encoder.scene(vocab.len(), ds.worlds[0].f_view);
    let model = SceneGroundingModel::new(&mut store, SCENE_MODEL, cfg, &mut rng.fork("init"));
    let (untrained_accuracy, _) = evaluate_scene(&model, &store, &ds.worlds, &held_out)?;
    let report = train_scene_grounding(&model, &mut store, &ds.worlds, &train, &profile.scene.train)?;
    let (accuracy, loss) = evaluate_scene(&model, &store, &ds.worlds, &held_out)?;
    Ok((store, model, SceneSummary { untrained_accuracy, accuracy, loss, epoch_loss: report.epoch_loss }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub untrained: ObjectEval,
    pub image_based: ObjectEval,
    /// Absent when the profile stops after the image-based stage.
    pub viewpoint_based: Option<ObjectEval>,
}

/// Two-stage object grounding: image-based pre-training, then
/// viewpoint-based fine-tuning. Evaluated on unseen-world viewpoints.
pub fn pretrain_object(profile: &Profile, ds: &Dataset, vocab: &Vocab) -> Result<(ParamStore, ObjectGroundingModel, ObjectSummary)> {
    let rng = RngStream::new(profile.seed).fork("pretrain-object");
    let cfg = &profile.object;
    let image = sample_object_batch(&ds.worlds, &ds.train, Stage::ImageBased, cfg.image_samples, &mut rng.fork("image"))?;
    let held_out = sample_object_batch(&ds.worlds, &ds.val_unseen, Stage::ViewpointBased, cfg.eval_samples, &mut rng.fork("held-out"))?;
    let mut store = ParamStore::new();
    let enc = profile.encoder.object(vocab.len(), ds.worlds[0].f_box);
    let mut model = ObjectGroundingModel::new(&mut store, OBJECT_MODEL, enc, &mut rng.fork("init"));
    let untrained = evaluate_objects(&model, &store, &held_out)?;
    train_object_grounding(&mut model, &mut store, &image, Stage::ImageBased, &cfg.train, false)?;
    let image_based = evaluate_objects(&model, &store, &held_out)?;
    let viewpoint_based = if cfg.image_only {
        None
    } else {
        let vp = sample_object_batch(&ds.worlds, &ds.train, Stage::ViewpointBased, cfg.viewpoint_samples, &mut rng.fork("viewpoint"))?;
        train_object_grounding(&mut model, &mut store, &vp, Stage::ViewpointBased, &cfg.train, false)?;
        Some(evaluate_objects(&model, &store, &held_out)?)
    };
    Ok((store, model, ObjectSummary { untrained, image_based, viewpoint_based }))
}

/// Build the agent for a configuration and copy in the grounding weights
/// its arms use: the scene model for the scene-grounded encoder and the
/// object model for the object-grounded pointer. Fusion at inference reads
/// both, so any checkpoint supplied is loaded.
pub fn build_agent(
    profile: &Profile,
    agent_cfg: &AgentConfig,
    ds: &Dataset,
    vocab: &Vocab,
    scene: Option<&ParamStore>,
    object: Option<&ParamStore>,
) -> Result<Agent> {
    let w = &ds.worlds[0];
    let scene_cfg = profile.encoder.scene(vocab.len(), w.f_view);
    let object_cfg = profile.encoder.object(vocab.len(), w.f_box);
    let mut agent = Agent::new(agent_cfg.clone(), scene_cfg, object_cfg, w.f_view, profile.seed)?;
    if agent_cfg.encoder == EncoderArm::SceneGrounded && scene.is_none() {
        return Err(Error::Config("the scene-grounded encoder needs a scene grounding checkpoint".into()));
    }
    if agent_cfg.pointer == PointerArm::ObjectGrounded && object.is_none() {
        return Err(Error::Config("the object-grounded pointer needs an object grounding checkpoint".into()));
    }
    // A scratch encoder keeps its random initialisation.
    let scene = scene.filter(|_| agent_cfg.encoder != EncoderArm::Scratch);
    agent.load_grounding(scene.map(|s| (s, SCENE_MODEL)), object.map(|s| (s, OBJECT_MODEL)))?;
    Ok(agent)
}

/// Everything needed to rebuild an agent besides its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentManifest {
    pub agent: AgentConfig,
    pub scene_encoder: EncoderConfig,
    pub object_encoder: EncoderConfig,
    pub f_view: usize,
}

/// Writes `agent.json` and `agent.params` into `dir`.
pub fn save_agent(agent: &Agent, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let manifest = AgentManifest {
        agent: agent.cfg.clone(),
        scene_encoder: agent.scene.encoder.cfg.clone(),
        object_encoder: agent.object.encoder.cfg.clone(),
        f_view: agent.f_view,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(dir.join("agent.json"), json)?;
    agent.store.save(dir.join("agent.params"))
}

pub fn load_agent(dir: impl AsRef<Path>) -> Result<Agent> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join("agent.json"))?;
    let m: AgentManifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("agent.json: {e}")))?;
    let mut agent = Agent::new(m.agent, m.scene_encoder, m.object_encoder, m.f_view, 0)?;
    let stored = ParamStore::load(dir.join("agent.params"))?;
    agent.store.load_from(&stored)?;
    agent.clear_caches();
    Ok(agent)
}
