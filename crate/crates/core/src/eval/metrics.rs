//! Per-episode outcomes and the six averaged navigation/grounding metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::iou;
use crate::world::{BoundingBox, Episode, World};

/// Box returned by the final grounding step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedBox {
    pub object_id: usize,
    /// Viewpoint whose panorama the box lives in, and the view index there.
    pub anchor: usize,
    pub view: usize,
    pub rect: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: String,
    pub world: usize,
    pub trajectory: Vec<usize>,
    pub path_length_m: f64,
    pub shortest_length_m: f64,
    pub nav_success: bool,
    pub oracle_success: bool,
    pub grounding: Option<GroundedBox>,
    pub rgs_success: bool,
}

impl EpisodeResult {
    /// Score a finished trajectory. The grounding counts only when the agent
    /// stopped within the success radius and the box overlaps one of the
    /// target object's boxes in the same image with IoU ≥ 0.5.
    pub fn score(world: &World, episode: &Episode, trajectory: Vec<usize>, path_length_m: f64, grounding: Option<GroundedBox>) -> Result<Self> {
        let last = *trajectory.last().ok_or_else(|| Error::Empty(format!("trajectory of {}", episode.id)))?;
        let nav_success = world.within_radius(last, episode.target);
        let oracle = oracle_success(&trajectory, world, episode)?;
        let rgs_success = nav_success && grounding.as_ref().is_some_and(|b| box_hits_target(world, episode, b));
        Ok(EpisodeResult {
            episode: episode.id.clone(),
            world: world.id,
            trajectory,
            path_length_m,
            shortest_length_m: episode.path_length,
            nav_success,
            oracle_success: oracle,
            grounding,
            rgs_success,
        })
    }

    /// `S · l / max(p, l)`.
    pub fn spl_term(&self, success: bool) -> f64 {
        if !success {
            return 0.0;
        }
        let denom = self.path_length_m.max(self.shortest_length_m);
        if denom <= 0.0 {
            1.0
        } else {
            self.shortest_length_m / denom
        }
    }
}

pub fn box_hits_target(world: &World, episode: &Episode, b: &GroundedBox) -> bool {
    let target = world.objects.iter().find(|o| o.id == episode.target_object);
    target.is_some_and(|o| o.anchor == b.anchor && o.boxes.iter().any(|t| t.view == b.view && iou(&t.rect, &b.rect) >= 0.5))
}

/// True iff some visited viewpoint lies within the success radius of the
/// target.
pub fn oracle_success(trajectory: &[usize], world: &World, episode: &Episode) -> Result<bool> {
    if trajectory.is_empty() {
        return Err(Error::Empty(format!("trajectory of {}", episode.id)));
    }
    Ok(trajectory.iter().any(|&v| world.within_radius(v, episode.target)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: usize,
    pub success: f64,
    pub oracle_success: f64,
    pub spl: f64,
    /// Mean trajectory length in meters.
    pub length: f64,
    pub rgs: f64,
    pub rg_spl: f64,
}

impl MetricsReport {
    /// `SPL ≤ Success ≤ OracleSuccess` and `RG-SPL ≤ RGS ≤ Success`, all
    /// within `[0, 1]`.
    pub fn is_consistent(&self) -> bool {
        let unit = |x: f64| (0.0..=1.0 + 1e-12).contains(&x);
        let le = |a: f64, b: f64| a <= b + 1e-12;
        [self.success, self.oracle_success, self.spl, self.rgs, self.rg_spl].into_iter().all(unit)
            && le(self.spl, self.success)
            && le(self.success, self.oracle_success)
            && le(self.rg_spl, self.rgs)
            && le(self.rgs, self.success)
            && self.length >= 0.0
    }
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::Empty("no episode results to score".into()));
    }
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&EpisodeResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    Ok(MetricsReport {
        episodes: results.len(),
        success: mean(&|r| flag(r.nav_success)),
        oracle_success: mean(&|r| flag(r.oracle_success)),
        spl: mean(&|r| r.spl_term(r.nav_success)),
        length: mean(&|r| r.path_length_m),
        rgs: mean(&|r| flag(r.rgs_success)),
        rg_spl: mean(&|r| r.spl_term(r.rgs_success)),
    })
}
