//! Episodes, observations and movement.

use serde::{Deserialize, Serialize};

use super::language::{make_instruction, Vocab};
use super::{view_for_direction, BoundingBox, World};
use crate::autodiff::{Array, RngStream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub world: usize,
    pub instruction: String,
    pub tokens: Vec<usize>,
    pub start: usize,
    pub target: usize,
    pub target_object: usize,
    /// Shortest path from start to target, inclusive.
    pub path: Vec<usize>,
    pub path_length: f64,
}

/// A navigable choice. Index 0 of every observation is STOP, which has no
/// destination and no facing view.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub destination: Option<usize>,
    pub view: Option<usize>,
    pub heading: f64,
    pub elevation: f64,
}

impl Candidate {
    pub fn is_stop(&self) -> bool {
        self.destination.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedBox {
    pub object_id: usize,
    pub anchor: usize,
    /// View index in the anchor's own panorama, where `rect` lives.
    pub native_view: usize,
    /// View index in the observer's panorama the box is seen through.
    pub view: usize,
    pub rect: BoundingBox,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Observation<'w> {
    pub viewpoint: usize,
    pub panorama: &'w Array,
    pub candidates: Vec<Candidate>,
    pub boxes: Vec<ObservedBox>,
}

impl Observation<'_> {
    /// Boxes seen through a candidate: for a move, those in its facing view;
    /// for STOP, those anchored at the current viewpoint.
    pub fn boxes_for(&self, candidate: usize) -> Vec<&ObservedBox> {
        let c = &self.candidates[candidate];
        match c.view {
            Some(v) => self.boxes.iter().filter(|b| b.view == v).collect(),
            None => self.boxes.iter().filter(|b| b.anchor == self.viewpoint).collect(),
        }
    }

    pub fn anchored_boxes(&self) -> Vec<&ObservedBox> {
        self.boxes.iter().filter(|b| b.anchor == self.viewpoint).collect()
    }
}

/// STOP plus one candidate per neighbor, and every box anchored within the
/// observability radius.
pub fn observe(world: &World, current: usize) -> Observation<'_> {
    let mut candidates = vec![Candidate { destination: None, view: None, heading: 0.0, elevation: 0.0 }];
    for h in world.neighbors(current) {
        candidates.push(Candidate {
            destination: Some(h.to),
            view: Some(view_for_direction(h.heading, h.elevation)),
            heading: h.heading,
            elevation: h.elevation,
        });
    }
    let mut boxes = Vec::new();
    for o in &world.objects {
        if !world.within_radius(current, o.anchor) {
            continue;
        }
        let seen_through = (o.anchor != current).then(|| {
            let (h, e) = world.direction(current, o.anchor);
            view_for_direction(h, e)
        });
        for b in &o.boxes {
            boxes.push(ObservedBox {
                object_id: o.id,
                anchor: o.anchor,
                native_view: b.view,
                view: seen_through.unwrap_or(b.view),
                rect: b.rect,
                feature: b.feature.clone(),
            });
        }
    }
    Observation { viewpoint: current, panorama: &world.viewpoints[current].panorama, candidates, boxes }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub current: usize,
    pub trajectory: Vec<usize>,
    pub length: f64,
    pub done: bool,
}

impl EpisodeState {
    pub fn start(episode: &Episode) -> Self {
        EpisodeState { current: episode.start, trajectory: vec![episode.start], length: 0.0, done: false }
    }

    pub fn steps(&self) -> usize {
        self.trajectory.len() - 1
    }
}

/// Apply a candidate index: 0 stops, `k` moves to the `k`-th neighbor.
pub fn step(world: &World, state: &mut EpisodeState, action: usize) -> Result<()> {
    if state.done {
        return Err(Error::contract("episode already terminated"));
    }
    let neighbors = world.neighbors(state.current);
    if action > neighbors.len() {
        return Err(Error::contract(format!("action {action} out of range for {} candidates", neighbors.len() + 1)));
    }
    if action == 0 {
        state.done = true;
        return Ok(());
    }
    let h = neighbors[action - 1];
    state.current = h.to;
    state.length += h.length;
    state.trajectory.push(h.to);
    Ok(())
}

/// Sample episodes: a random target object, and a start a few hops away
/// and outside the success radius when the world allows it.
pub fn make_episodes(world: &World, count: usize, vocab: &Vocab, rng: &mut RngStream) -> Result<Vec<Episode>> {
    if world.objects.is_empty() {
        return Err(Error::Empty(format!("world {} has no objects", world.id)));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let object = &world.objects[rng.below(world.objects.len())];
        let target = object.anchor;
        let hops = world.hops_from(target);
        let far = |v: usize| v != target && !world.within_radius(v, target);
        let mut pool: Vec<usize> = (0..world.len()).filter(|&v| far(v) && matches!(hops[v], Some(2..=6))).collect();
        if pool.is_empty() {
            pool = (0..world.len()).filter(|&v| far(v)).collect();
        }
        if pool.is_empty() {
            pool = (0..world.len()).filter(|&v| v != target).collect();
        }
        let start = rng.choose(&pool).copied().unwrap_or(target);
        let (path, path_length) = world.shortest_path(start, target);
        let instr = make_instruction(world, object.id, vocab, rng)?;
        out.push(Episode {
            id: format!("{}-{}", world.id, k),
            world: world.id,
            instruction: instr.text,
            tokens: instr.tokens,
            start,
            target,
            target_object: object.id,
            path,
            path_length,
        });
    }
    Ok(out)
}
