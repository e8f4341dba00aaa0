//! Action selection, inference-time logit fusion and whole-episode rollouts.

use serde::{Deserialize, Serialize};

use super::decoder::{StepOutput, SLOT_OBJECT_SCORE, SLOT_SCENE_SCORE};
use super::Agent;
use crate::autodiff::graph::softmax_array;
use crate::autodiff::{Array, Graph, RngStream};
use crate::error::{Error, Result};
use crate::grounding::{best_object, GroundingChoice};
use crate::world::{observe, step, Episode, EpisodeState, Observation, ObservedBox, World};

pub const TRACE_SCHEMA: &str = "reverie.trace";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    /// Sample from the softmax of the logits.
    Train,
    /// Argmax, smallest index on ties.
    Infer,
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold(0, |b, (i, &x)| if x > xs[b] { i } else { b })
}

pub fn select_action(logits: &[f64], mode: SelectMode, rng: &mut RngStream) -> usize {
    match mode {
        SelectMode::Infer => argmax(logits),
        SelectMode::Train => {
            let probs = softmax_array(&Array::row(logits.to_vec()), 1);
            rng.categorical(probs.data())
        }
    }
}

/// Normalised grounding evidence for the current viewpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionInputs {
    pub lambda_sg: f64,
    pub lambda_og: f64,
    /// Scene-grounding score of the current viewpoint in `[0, 1]`.
    pub scene: f64,
    /// Best-object score at the current viewpoint in `[0, 1]`.
    pub object: f64,
}

/// Add `λ_sg·scene + λ_og·object` to the STOP logit and take the argmax.
/// Returns the action and the fused logits.
pub fn fused_decide(logits: &[f64], inputs: &FusionInputs) -> (usize, Vec<f64>) {
    let mut fused = logits.to_vec();
    if let Some(stop) = fused.first_mut() {
        *stop += inputs.lambda_sg * inputs.scene + inputs.lambda_og * inputs.object;
    }
    (argmax(&fused), fused)
}

/// Running min-max range of the scores seen so far in an episode.
#[derive(Debug, Clone, Copy, Default)]
struct RunningRange {
    lo: f64,
    hi: f64,
    seen: bool,
}

impl RunningRange {
    fn push(&mut self, x: f64) {
        if self.seen {
            self.lo = self.lo.min(x);
            self.hi = self.hi.max(x);
        } else {
            *self = RunningRange { lo: x, hi: x, seen: true };
        }
    }

    /// 0.5 when the range is degenerate.
    fn normalize(&self, x: f64) -> f64 {
        if !self.seen || self.hi - self.lo < 1e-12 {
            0.5
        } else {
            ((x - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
        }
    }
}

/// Which grounding scores are fused into the STOP logit at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FusionFlags {
    pub scene: bool,
    pub object: bool,
}

impl FusionFlags {
    pub const NONE: FusionFlags = FusionFlags { scene: false, object: false };
    pub const BOTH: FusionFlags = FusionFlags { scene: true, object: true };

    pub fn any(&self) -> bool {
        self.scene || self.object
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    /// Follow the shortest path; STOP at the target viewpoint.
    Teacher,
    /// Sample from the policy.
    Sample,
    /// Argmax of the policy logits, optionally fused with grounding scores.
    Greedy(FusionFlags),
}

/// Shortest-path action from `current` towards `target`.
pub fn teacher_action(world: &World, current: usize, target: usize) -> usize {
    if current == target {
        return 0;
    }
    let (path, _) = world.shortest_path(current, target);
    let next = path[1];
    1 + world.neighbors(current).iter().position(|h| h.to == next).expect("path follows edges")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    pub max: f64,
    pub entropy: f64,
}

impl AttentionSummary {
    pub fn of(weights: &Array) -> Self {
        let max = weights.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let entropy = -weights.data().iter().filter(|&&w| w > 0.0).map(|&w| w * w.ln()).sum::<f64>();
        AttentionSummary { max, entropy }
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub episode: String,
    pub t: usize,
    pub viewpoint: usize,
    /// Destination of each candidate; `None` is STOP.
    pub candidates: Vec<Option<usize>>,
    pub logits: Vec<f64>,
    /// Logits after fusion (equal to `logits` when fusion is off).
    pub fused: Vec<f64>,
    pub scene_score: Option<f64>,
    pub object_score: Option<f64>,
    /// `Σ_τ (l_τ[a_τ] + g_sg^τ + g_og^τ)` with raw scores, up to this step.
    pub literal_sum: f64,
    pub panorama_attention: AttentionSummary,
    pub instruction_attention: AttentionSummary,
    pub candidate_attention: AttentionSummary,
    pub action: usize,
    pub teacher: usize,
}

pub struct StepRecord<'g> {
    pub out: StepOutput<'g>,
    pub action: usize,
    pub teacher: usize,
    pub viewpoint: usize,
    /// Graph distance to the target before and after the action.
    pub dist_before: f64,
    pub dist_after: f64,
}

pub struct Rollout<'g> {
    pub episode: String,
    pub steps: Vec<StepRecord<'g>>,
    pub state: EpisodeState,
    /// False when the step budget ran out before STOP.
    pub stopped: bool,
    pub trace: Vec<TraceStep>,
}

impl Rollout<'_> {
    pub fn final_viewpoint(&self) -> usize {
        self.state.current
    }
}

/// Object chosen at the stop viewpoint and its best box.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalGrounding {
    pub choice: GroundingChoice,
    pub observed: ObservedBox,
}

impl Agent {
    /// Raw scene-grounding score of a viewpoint.
    pub fn scene_score(&self, world: &World, tokens: &[usize], viewpoint: usize) -> Result<f64> {
        let key = (world.id, tokens.to_vec(), viewpoint, SLOT_SCENE_SCORE);
        if let Some(&s) = self.caches.scalars.borrow().get(&key) {
            return Ok(s);
        }
        let s = self.scene.score(&self.store, tokens, &world.viewpoints[viewpoint].panorama)?;
        self.caches.scalars.borrow_mut().insert(key, s);
        Ok(s)
    }

    /// Highest box probability among the boxes anchored at a viewpoint.
    pub fn object_score(&self, world: &World, tokens: &[usize], viewpoint: usize) -> Result<Option<f64>> {
        let key = (world.id, tokens.to_vec(), viewpoint, SLOT_OBJECT_SCORE);
        if let Some(&s) = self.caches.scalars.borrow().get(&key) {
            return Ok((!s.is_nan()).then_some(s));
        }
        let obs = observe(world, viewpoint);
        let boxes = obs.anchored_boxes();
        let s = self.object.score_boxes(&self.store, tokens, &boxes)?.into_iter().fold(f64::NAN, f64::max);
        self.caches.scalars.borrow_mut().insert(key, s);
        Ok((!s.is_nan()).then_some(s))
    }
}

#[derive(Default)]
struct FusionTracker {
    scene: RunningRange,
    object: RunningRange,
    literal: f64,
}

impl FusionTracker {
    /// Raw and normalised scores of the current viewpoint; the pools also
    /// take in the neighbors' scores.
    fn observe(&mut self, agent: &Agent, world: &World, tokens: &[usize], obs: &Observation<'_>) -> Result<(f64, Option<f64>, FusionInputs)> {
        let here = obs.viewpoint;
        let around = std::iter::once(here).chain(obs.candidates.iter().filter_map(|c| c.destination));
        for v in around {
            self.scene.push(agent.scene_score(world, tokens, v)?);
            if let Some(s) = agent.object_score(world, tokens, v)? {
                self.object.push(s);
            }
        }
        let sg = agent.scene_score(world, tokens, here)?;
        let og = agent.object_score(world, tokens, here)?;
        let inputs = FusionInputs {
            lambda_sg: agent.cfg.lambda_sg,
            lambda_og: agent.cfg.lambda_og,
            scene: self.scene.normalize(sg),
            object: og.map_or(0.0, |s| self.object.normalize(s)),
        };
        Ok((sg, og, inputs))
    }
}

/// Run one episode from its start until STOP or the step budget.
pub fn rollout<'g>(agent: &Agent, g: &'g Graph, world: &World, episode: &Episode, source: ActionSource, rng: &mut RngStream) -> Result<Rollout<'g>> {
    if episode.world != world.id {
        return Err(Error::contract(format!("episode {} belongs to world {}, not {}", episode.id, episode.world, world.id)));
    }
    let mut state = EpisodeState::start(episode);
    let mut dec = agent.initial_state(g);
    let mut fusion = FusionTracker::default();
    let mut steps = Vec::new();
    let mut trace = Vec::new();
    while !state.done && steps.len() < agent.cfg.max_steps {
        let obs = observe(world, state.current);
        let out = agent.decode_step(g, world.id, &episode.tokens, &obs, &mut dec)?;
        let logits = out.logits.value().data().to_vec();
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("policy logits at step {} of {}", steps.len(), episode.id)));
        }
        let teacher = teacher_action(world, state.current, episode.target);
        let (mut scene_score, mut object_score, mut fused) = (None, None, logits.clone());
        let action = match source {
            ActionSource::Teacher => teacher,
            ActionSource::Sample => select_action(&logits, SelectMode::Train, rng),
            ActionSource::Greedy(flags) if flags.any() => {
                let (sg, og, mut inputs) = fusion.observe(agent, world, &episode.tokens, &obs)?;
                if !flags.scene {
                    inputs.lambda_sg = 0.0;
                }
                if !flags.object {
                    inputs.lambda_og = 0.0;
                }
                scene_score = Some(sg);
                object_score = og;
                let (a, f) = fused_decide(&logits, &inputs);
                fused = f;
                a
            }
            ActionSource::Greedy(_) => select_action(&logits, SelectMode::Infer, rng),
        };
        fusion.literal += logits[action] + scene_score.unwrap_or(0.0) + object_score.unwrap_or(0.0);
        let viewpoint = state.current;
        let dist_before = world.distance(viewpoint, episode.target);
        dec.commit(&out, action)?;
        step(world, &mut state, action)?;
        let dist_after = world.distance(state.current, episode.target);
        trace.push(TraceStep {
            episode: episode.id.clone(),
            t: steps.len() + 1,
            viewpoint,
            candidates: obs.candidates.iter().map(|c| c.destination).collect(),
            logits,
            fused,
            scene_score,
            object_score,
            literal_sum: fusion.literal,
            panorama_attention: AttentionSummary::of(&out.panorama_weights),
            instruction_attention: AttentionSummary::of(&out.instruction_weights),
            candidate_attention: AttentionSummary::of(&out.candidate_weights),
            action,
            teacher,
        });
        steps.push(StepRecord { out, action, teacher, viewpoint, dist_before, dist_after });
    }
    let stopped = state.done;
    Ok(Rollout { episode: episode.id.clone(), steps, state, stopped, trace })
}

/// Ground the instruction among every box observed at the stop viewpoint.
/// `None` when nothing is visible.
pub fn final_grounding(agent: &Agent, world: &World, tokens: &[usize], viewpoint: usize) -> Result<Option<FinalGrounding>> {
    let obs = observe(world, viewpoint);
    if obs.boxes.is_empty() {
        return Ok(None);
    }
    let boxes: Vec<&ObservedBox> = obs.boxes.iter().collect();
    let scores = agent.object.score_boxes(&agent.store, tokens, &boxes)?;
    let ids: Vec<usize> = boxes.iter().map(|b| b.object_id).collect();
    Ok(best_object(&scores, &ids).map(|choice| FinalGrounding { observed: obs.boxes[choice.box_index].clone(), choice }))
}
