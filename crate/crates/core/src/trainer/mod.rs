//! Policy training: teacher-forced imitation with a progress monitor, mixed
//! with advantage actor-critic on sampled rollouts and shaped rewards.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agent::{rollout, ActionSource, Agent, FusionFlags, Rollout};
use crate::autodiff::optim::{clip_global_norm, Adam, AdamConfig};
use crate::autodiff::{Array, Graph, ParamId, RngStream, Var};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, evaluate_agent};
use crate::world::{Episode, World};

/// `L = α·L_ce + β·L_pm + γ·L_RL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

impl LossWeights {
    pub const IMITATION_ONLY: LossWeights = LossWeights { alpha: 0.5, beta: 0.5, gamma: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative, got {self:?}")));
        }
        Ok(())
    }
}

/// Which quantity the progress monitor regresses onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProgressTarget {
    /// `(d₀ − d_t) / d₀`: 0 at the start, 1 at the target.
    #[default]
    ProgressMade,
    /// `d_t / d₀`: the remaining normalised distance.
    Remaining,
}

/// Shortest-path distance progress of `current` within an episode, in
/// `[0, 1]`. A zero-length episode counts as complete.
pub fn progress_target(world: &World, episode: &Episode, current: usize, kind: ProgressTarget) -> f64 {
    let d0 = world.distance(episode.start, episode.target);
    let dt = world.distance(current, episode.target);
    let made = if d0 == 0.0 { 1.0 } else { ((d0 - dt) / d0).clamp(0.0, 1.0) };
    match kind {
        ProgressTarget::ProgressMade => made,
        ProgressTarget::Remaining => 1.0 - made,
    }
}

/// Mean cross-entropy against the teacher actions and mean squared error
/// of the progress monitor over the steps of a rollout.
pub fn il_losses<'g>(r: &Rollout<'g>, world: &World, episode: &Episode, kind: ProgressTarget) -> Result<(Var<'g>, Var<'g>)> {
    let Some(first) = r.steps.first() else {
        return Err(Error::Empty(format!("rollout of {} has no steps", episode.id)));
    };
    let g = first.out.logits.graph();
    let mut ce = Vec::with_capacity(r.steps.len());
    let mut pm = Vec::with_capacity(r.steps.len());
    for s in &r.steps {
        ce.push(s.out.logits.log_softmax().pick(0, s.teacher)?.neg());
        let target = progress_target(world, episode, s.viewpoint, kind);
        pm.push(s.out.progress.add_scalar(-target).square());
    }
    Ok((g.concat_cols(&ce)?.mean(), g.concat_cols(&pm)?.mean()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Magnitude of the terminal reward.
    pub terminal: f64,
    pub discount: f64,
    /// Weight of the squared-advantage value regression term.
    pub value_coef: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { terminal: 3.0, discount: 0.9, value_coef: 0.5 }
    }
}

/// Per-step rewards: the reduction in shortest-path distance to the target,
/// plus `±terminal` on the last step depending on whether the final
/// viewpoint is within the success radius.
pub fn step_rewards(world: &World, episode: &Episode, r: &Rollout<'_>, cfg: &RewardConfig) -> Vec<f64> {
    let mut rewards: Vec<f64> = r.steps.iter().map(|s| s.dist_before - s.dist_after).collect();
    if let Some(last) = rewards.last_mut() {
        *last += if world.within_radius(r.final_viewpoint(), episode.target) { cfg.terminal } else { -cfg.terminal };
    }
    rewards
}

/// `G_t = r_t + γ·G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + discount * acc;
        out[t] = acc;
    }
    out
}

/// `(−Σ A_t·log π(a_t) + c_v·Σ A_t²) / T` with `A_t = G_t − v_t`; the
/// advantage is a constant in the policy term.
pub fn rl_loss<'g>(r: &Rollout<'g>, world: &World, episode: &Episode, cfg: &RewardConfig) -> Result<Var<'g>> {
    let Some(first) = r.steps.first() else {
        return Err(Error::Empty(format!("rollout of {} has no steps", episode.id)));
    };
    let g = first.out.logits.graph();
    let returns = discounted_returns(&step_rewards(world, episode, r, cfg), cfg.discount);
    let mut terms = Vec::with_capacity(r.steps.len());
    for (s, ret) in r.steps.iter().zip(returns) {
        let adv = s.out.value.neg().add_scalar(ret);
        let policy = s.out.logits.log_softmax().pick(0, s.action)?.mul(adv.detach())?.neg();
        terms.push(policy.add(adv.square().scale(cfg.value_coef))?);
    }
    Ok(g.concat_cols(&terms)?.mean())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub weights: LossWeights,
    pub rewards: RewardConfig,
    pub progress: ProgressTarget,
    /// Validate every this many iterations; 0 disables validation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 5e-4,
            clip: 40.0,
            weights: LossWeights::default(),
            rewards: RewardConfig::default(),
            progress: ProgressTarget::default(),
            eval_every: 250,
            eval_episodes: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.clip > 0.0) {
            return Err(Error::Config("lr and clip must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.rewards.discount) {
            return Err(Error::Config(format!("discount {} outside [0, 1]", self.rewards.discount)));
        }
        Ok(())
    }
}

/// Loss terms of one batch, averaged over its episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchLosses {
    pub total: f64,
    pub ce: f64,
    pub pm: f64,
    pub rl: f64,
}

/// Build the weighted batch loss on `g`. IL terms come from teacher-forced
/// rollouts, the RL term from sampled rollouts of the same episodes; the
/// sampled pass is skipped when `γ = 0`.
pub fn batch_loss<'g>(
    agent: &Agent,
    g: &'g Graph,
    worlds: &[World],
    batch: &[&Episode],
    cfg: &TrainConfig,
    rng: &mut RngStream,
) -> Result<(Var<'g>, BatchLosses, usize)> {
    let w = cfg.weights;
    let mut terms = Vec::with_capacity(batch.len());
    let mut parts = BatchLosses::default();
    let mut successes = 0;
    for ep in batch {
        let world = worlds.get(ep.world).ok_or_else(|| Error::contract(format!("episode {} names missing world {}", ep.id, ep.world)))?;
        let teacher = rollout(agent, g, world, ep, ActionSource::Teacher, rng)?;
        let (ce, pm) = il_losses(&teacher, world, ep, cfg.progress)?;
        let mut l = ce.scale(w.alpha).add(pm.scale(w.beta))?;
        parts.ce += ce.item();
        parts.pm += pm.item();
        if w.gamma > 0.0 {
            let sampled = rollout(agent, g, world, ep, ActionSource::Sample, rng)?;
            successes += usize::from(world.within_radius(sampled.final_viewpoint(), ep.target));
            let rl = rl_loss(&sampled, world, ep, &cfg.rewards)?;
            parts.rl += rl.item();
            l = l.add(rl.scale(w.gamma))?;
        }
        terms.push(l);
    }
    let n = batch.len() as f64;
    let loss = g.concat_cols(&terms)?.mean();
    parts = BatchLosses { total: loss.item(), ce: parts.ce / n, pm: parts.pm / n, rl: parts.rl / n };
    Ok((loss, parts, successes))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iteration: usize,
    pub losses: BatchLosses,
    pub grad_norm: f64,
    /// Success rate of this batch's sampled rollouts (absent under pure IL).
    pub sampled_success: Option<f64>,
    pub val_success: Option<f64>,
    pub val_spl: Option<f64>,
}

pub const TRAIN_LOG_SCHEMA: &str = "reverie.trainlog";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub iterations: usize,
    pub final_loss: f64,
    pub best_val_success: Option<f64>,
    pub best_iteration: Option<usize>,
    pub seconds: f64,
}

/// Train the policy in place. With validation episodes, the parameters
/// with the best validation success (ties to the earlier iteration) are
/// restored at the end. Log records go to `log` as JSON lines.
pub fn train_agent(
    agent: &mut Agent,
    worlds: &[World],
    train: &[Episode],
    val: &[Episode],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("no training episodes".into()));
    }
    let start = std::time::Instant::now();
    let rng = RngStream::new(cfg.seed).fork("train-agent");
    let mut order_rng = rng.fork("order");
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let frozen = agent.frozen_params();
    let val = &val[..val.len().min(cfg.eval_episodes)];
    let mut best: Option<(f64, usize, crate::autodiff::ParamStore)> = None;
    let mut order: Vec<usize> = Vec::new();
    let mut final_loss = f64::NAN;
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "{}", serde_json::json!({ "schema": TRAIN_LOG_SCHEMA, "version": 1 }))?;
    }
    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order_rng.shuffle(&mut order);
            }
            batch.push(&train[order.pop().expect("refilled")]);
        }
        let g = Graph::new();
        g.freeze(frozen.iter().copied());
        let mut step_rng = rng.fork_index("rollouts", it as u64);
        let (loss, parts, successes) = batch_loss(agent, &g, worlds, &batch, cfg, &mut step_rng)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {it}")));
        }
        let grads = g.backward(loss)?;
        let mut grads: Vec<(ParamId, Array)> = grads.params().into_iter().map(|(p, a)| (p, a.clone())).collect();
        if grads.iter().any(|(_, a)| !a.all_finite()) {
            return Err(Error::NonFinite(format!("gradient at iteration {it}")));
        }
        let grad_norm = clip_global_norm(&mut grads, cfg.clip);
        adam.step(&mut agent.store, &grads)?;
        if agent.cfg.finetune_encoders {
            agent.clear_caches();
        }
        final_loss = parts.total;

        let mut record = TrainLogRecord {
            iteration: it,
            losses: parts,
            grad_norm,
            sampled_success: (cfg.weights.gamma > 0.0).then(|| successes as f64 / batch.len() as f64),
            val_success: None,
            val_spl: None,
        };
        let due = cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.iterations);
        if due && !val.is_empty() {
            let (results, _) = evaluate_agent(agent, worlds, val, FusionFlags::NONE)?;
            let m = compute_metrics(&results)?;
            record.val_success = Some(m.success);
            record.val_spl = Some(m.spl);
            if best.as_ref().is_none_or(|(s, _, _)| m.success > *s) {
                best = Some((m.success, it, agent.store.clone()));
            }
        }
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?)?;
        }
    }
    let (best_val_success, best_iteration) = match best {
        Some((s, it, store)) => {
            agent.store.load_from(&store)?;
            agent.clear_caches();
            (Some(s), Some(it))
        }
        None => (None, None),
    };
    Ok(TrainSummary { iterations: cfg.iterations, final_loss, best_val_success, best_iteration, seconds: start.elapsed().as_secs_f64() })
}
