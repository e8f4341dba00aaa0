//! Grounding pre-training: scoring how well an instruction matches a
//! viewpoint (scene grounding) and which boxes it refers to (object
//! grounding).

mod object;
mod scene;

pub use object::{
    bce_with_logits, box_input, box_inputs, evaluate_objects, label_boxes, sample_object_batch, train_object_grounding, Grounded,
    ObjectEval, ObjectGroundingModel, ObjectSample, SampleBox, Stage, BOX_EXTRA_DIMS,
};
pub use scene::{evaluate_scene, CHOICES, sample_scene_batch, train_scene_grounding, Role, SceneGroundingModel, SceneSample};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::world::BoundingBox;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Mean box score per object id, sorted by id.
pub fn aggregate_object_scores(scores: &[f64], object_ids: &[usize]) -> Vec<(usize, f64)> {
    assert_eq!(scores.len(), object_ids.len(), "one object id per score");
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&s, &id) in scores.iter().zip(object_ids) {
        let e = acc.entry(id).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter().map(|(id, (sum, n))| (id, sum / n as f64)).collect()
}

/// Winning object of a scored box set and the index of its best box.
/// Ties go to the smaller object id, then the earlier box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingChoice {
    pub object_id: usize,
    pub object_score: f64,
    pub box_index: usize,
}

pub fn best_object(scores: &[f64], object_ids: &[usize]) -> Option<GroundingChoice> {
    let per_object = aggregate_object_scores(scores, object_ids);
    let (object_id, object_score) = per_object.into_iter().fold(None, |best: Option<(usize, f64)>, (id, s)| match best {
        Some((_, bs)) if bs >= s => best,
        _ => Some((id, s)),
    })?;
    let box_index = (0..scores.len())
        .filter(|&i| object_ids[i] == object_id)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if scores[b] >= scores[i] => Some(b),
            _ => Some(i),
        })?;
    Some(GroundingChoice { object_id, object_score, box_index })
}

/// Optimisation settings shared by both grounding trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub seed: u64,
}

impl Default for GroundingTrainConfig {
    fn default() -> Self {
        GroundingTrainConfig { epochs: 8, batch_size: 16, lr: 1e-3, weight_decay: 5e-4, clip: 40.0, seed: 0 }
    }
}

/// Per-epoch mean loss and training accuracy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    /// Loss of every optimizer step, in order.
    pub step_loss: Vec<f64>,
}
