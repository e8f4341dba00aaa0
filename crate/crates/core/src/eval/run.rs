//! Running policies over episode sets.

use crate::agent::{final_grounding, rollout, ActionSource, Agent, FusionFlags, TraceStep};
use crate::autodiff::{Graph, RngStream};
use crate::error::{Error, Result};
use crate::world::{observe, step, Episode, EpisodeState, World};

use super::metrics::{EpisodeResult, GroundedBox};

fn world_of<'w>(worlds: &'w [World], ep: &Episode) -> Result<&'w World> {
    worlds.get(ep.world).filter(|w| w.id == ep.world).ok_or_else(|| Error::contract(format!("episode {} names missing world {}", ep.id, ep.world)))
}

/// Greedy inference with optional logit fusion, then final grounding at
/// the stop viewpoint. Returns per-episode results and the step traces.
pub fn evaluate_agent(agent: &Agent, worlds: &[World], episodes: &[Episode], fusion: FusionFlags) -> Result<(Vec<EpisodeResult>, Vec<TraceStep>)> {
    let mut results = Vec::with_capacity(episodes.len());
    let mut traces = Vec::new();
    let mut rng = RngStream::new(0);
    for ep in episodes {
        let world = world_of(worlds, ep)?;
        let g = Graph::no_grad();
        let r = rollout(agent, &g, world, ep, ActionSource::Greedy(fusion), &mut rng)?;
        let grounding = final_grounding(agent, world, &ep.tokens, r.final_viewpoint())?.map(|f| GroundedBox {
            object_id: f.choice.object_id,
            anchor: f.observed.anchor,
            view: f.observed.native_view,
            rect: f.observed.rect,
        });
        results.push(EpisodeResult::score(world, ep, r.state.trajectory.clone(), r.state.length, grounding)?);
        traces.extend(r.trace);
    }
    Ok((results, traces))
}

/// Uniform choice among all candidates (STOP included) at every step; the
/// grounding output is a uniformly chosen observed box.
pub fn random_policy_results(worlds: &[World], episodes: &[Episode], max_steps: usize, seed: u64) -> Result<Vec<EpisodeResult>> {
    let rng = RngStream::new(seed).fork("random-policy");
    episodes
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            let world = world_of(worlds, ep)?;
            let mut rng = rng.fork_index("episode", i as u64);
            let mut state = EpisodeState::start(ep);
            while !state.done && state.steps() < max_steps {
                let n = world.neighbors(state.current).len() + 1;
                step(world, &mut state, rng.below(n))?;
            }
            let obs = observe(world, state.current);
            let grounding = rng.choose(&obs.boxes).map(|b| GroundedBox { object_id: b.object_id, anchor: b.anchor, view: b.native_view, rect: b.rect });
            EpisodeResult::score(world, ep, state.trajectory, state.length, grounding)
        })
        .collect()
}
