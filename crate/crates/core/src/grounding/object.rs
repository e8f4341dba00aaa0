//! Object grounding: per-box scores trained with binary cross-entropy in
//! two stages, single images first and whole viewpoints second.

use serde::{Deserialize, Serialize};

use super::{best_object, GroundingTrainConfig, TrainReport};
use crate::autodiff::{clip_global_norm, Adam, AdamConfig, Array, Graph, ParamId, ParamStore, RngStream, Var};
use crate::error::{Error, Result};
use crate::nn::{CrossModalEncoder, EncoderConfig, Linear};
use crate::world::{observe, view_angles, Episode, ObservedBox, World, IMAGE_H, IMAGE_W};

/// Geometry and view dims appended to every box feature.
pub const BOX_EXTRA_DIMS: usize = 8;

pub type SampleBox = ObservedBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    ImageBased,
    ViewpointBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSample {
    pub world: usize,
    pub episode: String,
    pub viewpoint: usize,
    pub tokens: Vec<usize>,
    pub target_object: usize,
    pub stage: Stage,
    pub boxes: Vec<SampleBox>,
    /// 1 where the box overlaps a target box of the same image at IoU ≥ 0.5.
    pub labels: Vec<f64>,
}

impl ObjectSample {
    pub fn object_ids(&self) -> Vec<usize> {
        self.boxes.iter().map(|b| b.object_id).collect()
    }

    pub fn distinct_objects(&self) -> usize {
        let mut ids = self.object_ids();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// Label rule: positive iff the box lies in the same image as one of the
/// target's boxes (same anchor, same native view) with IoU ≥ 0.5.
pub fn label_boxes(world: &World, target_object: usize, boxes: &[SampleBox]) -> Vec<f64> {
    let target = &world.objects[target_object];
    boxes
        .iter()
        .map(|b| {
            let hit = b.anchor == target.anchor && target.boxes.iter().any(|t| t.view == b.native_view && t.rect.iou(&b.rect) >= 0.5);
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Samples at each episode's target viewpoint. Image-based samples hold the
/// boxes of one image that contains a target box; viewpoint-based samples
/// hold every box observable from the viewpoint.
pub fn sample_object_batch(worlds: &[World], episodes: &[Episode], stage: Stage, count: usize, rng: &mut RngStream) -> Result<Vec<ObjectSample>> {
    if episodes.is_empty() {
        return Err(Error::Empty("no episodes to sample object grounding from".into()));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let e = &episodes[rng.below(episodes.len())];
        let world = &worlds[e.world];
        let obs = observe(world, e.target);
        let target = &world.objects[e.target_object];
        let boxes: Vec<SampleBox> = match stage {
            Stage::ImageBased => {
                let tb = &target.boxes[rng.below(target.boxes.len())];
                obs.boxes.iter().filter(|b| b.anchor == target.anchor && b.native_view == tb.view).cloned().collect()
            }
            Stage::ViewpointBased => obs.boxes.clone(),
        };
        let labels = label_boxes(world, e.target_object, &boxes);
        out.push(ObjectSample {
            world: e.world,
            episode: e.id.clone(),
            viewpoint: e.target,
            tokens: e.tokens.clone(),
            target_object: e.target_object,
            stage,
            boxes,
            labels,
        });
    }
    Ok(out)
}

/// Region feature followed by normalised geometry and the observing view's
/// direction.
pub fn box_input(b: &SampleBox) -> Vec<f64> {
    let r = &b.rect;
    let (h, e) = view_angles(b.view);
    let mut v = b.feature.clone();
    v.extend([r.x / IMAGE_W, r.y / IMAGE_H, (r.x + r.w) / IMAGE_W, (r.y + r.h) / IMAGE_H, r.area() / (IMAGE_W * IMAGE_H), h.cos(), h.sin(), e]);
    v
}

pub fn box_inputs(boxes: &[&SampleBox]) -> Result<Array> {
    if boxes.is_empty() {
        return Err(Error::Empty("box set".into()));
    }
    Array::from_rows(&boxes.iter().map(|b| box_input(b)).collect::<Vec<_>>())
}

/// Per-box logits and the fused box rows they came from.
pub struct Grounded<'g> {
    /// `n×1`.
    pub logits: Var<'g>,
    /// `n×d`.
    pub features: Var<'g>,
}

#[derive(Debug, Clone)]
pub struct ObjectGroundingModel {
    pub encoder: CrossModalEncoder,
    pub head: Linear,
    pub prefix: String,
    /// Stages completed so far, in order.
    pub stages: Vec<Stage>,
}

impl ObjectGroundingModel {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: EncoderConfig, rng: &mut RngStream) -> Self {
        let encoder = CrossModalEncoder::new(store, &format!("{prefix}.enc"), cfg, rng);
        let head = Linear::new(store, &format!("{prefix}.head"), encoder.dim(), 1, rng);
        ObjectGroundingModel { encoder, head, prefix: prefix.to_string(), stages: Vec::new() }
    }

    pub fn param_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix(&format!("{}.", self.prefix)).collect()
    }

    /// `logit_i = w·(box_i ⊙ h_CLS) + b` over the fused box rows.
    pub fn ground<'g>(&self, g: &'g Graph, store: &ParamStore, tokens: &[usize], boxes: &[&SampleBox]) -> Result<Grounded<'g>> {
        let inputs = box_inputs(boxes)?;
        let fused = self.encoder.encode(g, store, tokens, &inputs)?;
        let features = fused.vis_seq.slice_rows(1, boxes.len() + 1)?;
        let logits = self.head.forward(g, store, features.mul_row(fused.h_cls)?)?;
        Ok(Grounded { logits, features })
    }

    /// Sigmoid box scores; empty input gives an empty result.
    pub fn score_boxes(&self, store: &ParamStore, tokens: &[usize], boxes: &[&SampleBox]) -> Result<Vec<f64>> {
        if boxes.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::no_grad();
        Ok(self.ground(&g, store, tokens, boxes)?.logits.sigmoid().value().data().to_vec())
    }

    pub fn sample_loss<'g>(&self, g: &'g Graph, store: &ParamStore, s: &ObjectSample) -> Result<(Var<'g>, Vec<f64>)> {
        let boxes: Vec<&SampleBox> = s.boxes.iter().collect();
        let z = self.ground(g, store, &s.tokens, &boxes)?.logits;
        let labels = g.constant(Array::matrix(s.labels.len(), 1, s.labels.clone())?);
        let loss = bce_with_logits(z, labels)?;
        let scores = z.value().data().iter().map(|&x| crate::autodiff::graph::sigmoid(x)).collect();
        Ok((loss, scores))
    }
}

/// Mean of `softplus(z) − y·z`, the numerically stable form of binary
/// cross-entropy on logits.
pub fn bce_with_logits<'g>(z: Var<'g>, y: Var<'g>) -> Result<Var<'g>> {
    let abs = z.relu().add(z.neg().relu())?;
    let softplus = z.relu().add(abs.neg().exp().add_scalar(1.0).log())?;
    Ok(softplus.sub(y.mul(z)?)?.mean())
}

fn hit(s: &ObjectSample, scores: &[f64]) -> bool {
    best_object(scores, &s.object_ids()).is_some_and(|c| c.object_id == s.target_object)
}

/// Train one stage. The viewpoint-based stage needs a model that has been
/// through the image-based stage unless `allow_out_of_order` is set.
pub fn train_object_grounding(
    model: &mut ObjectGroundingModel,
    store: &mut ParamStore,
    samples: &[ObjectSample],
    stage: Stage,
    cfg: &GroundingTrainConfig,
    allow_out_of_order: bool,
) -> Result<TrainReport> {
    if stage == Stage::ViewpointBased && !model.stages.contains(&Stage::ImageBased) && !allow_out_of_order {
        return Err(Error::contract("viewpoint-based object grounding needs an image-based initialisation"));
    }
    if samples.is_empty() {
        return Err(Error::Empty("object grounding needs at least one sample".into()));
    }
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let label = match stage {
        Stage::ImageBased => "object-image",
        Stage::ViewpointBased => "object-viewpoint",
    };
    let mut rng = RngStream::new(cfg.seed).fork(label);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let g = Graph::new();
            let mut total: Option<Var> = None;
            for &i in batch {
                let (l, scores) = model.sample_loss(&g, store, &samples[i])?;
                correct += usize::from(hit(&samples[i], &scores));
                total = Some(match total {
                    Some(t) => t.add(l)?,
                    None => l,
                });
            }
            let loss = total.expect("non-empty batch").scale(1.0 / batch.len() as f64);
            g.check_finite()?;
            let value = loss.item();
            let grads = g.backward(loss)?;
            let mut grads: Vec<(ParamId, Array)> = grads.params().into_iter().map(|(p, a)| (p, a.clone())).collect();
            clip_global_norm(&mut grads, cfg.clip);
            adam.step(store, &grads)?;
            report.step_loss.push(value);
            loss_sum += value * batch.len() as f64;
        }
        report.epoch_loss.push(loss_sum / samples.len() as f64);
        report.epoch_accuracy.push(correct as f64 / samples.len() as f64);
    }
    model.stages.push(stage);
    Ok(report)
}

/// Per-object top-1 accuracy next to the chance rate `mean(1/#objects)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectEval {
    pub accuracy: f64,
    pub chance: f64,
}

pub fn evaluate_objects(model: &ObjectGroundingModel, store: &ParamStore, samples: &[ObjectSample]) -> Result<ObjectEval> {
    if samples.is_empty() {
        return Err(Error::Empty("no object samples to evaluate".into()));
    }
    let (mut correct, mut chance) = (0usize, 0.0);
    for s in samples {
        let boxes: Vec<&SampleBox> = s.boxes.iter().collect();
        let scores = model.score_boxes(store, &s.tokens, &boxes)?;
        correct += usize::from(hit(s, &scores));
        chance += 1.0 / s.distinct_objects() as f64;
    }
    let n = samples.len() as f64;
    Ok(ObjectEval { accuracy: correct as f64 / n, chance: chance / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_inputs;
    use crate::world::{Dataset, DatasetConfig, Vocab, WorldConfig};

    fn small() -> Dataset {
        let cfg = DatasetConfig { train_worlds: 2, unseen_worlds: 0, train_episodes_per_world: 10, val_episodes_per_world: 0, world: WorldConfig::default() };
        Dataset::generate(&cfg, &Vocab::standard()).unwrap()
    }

    #[test]
    fn labels_follow_iou_rule() {
        let ds = small();
        let mut rng = RngStream::new(2);
        for stage in [Stage::ImageBased, Stage::ViewpointBased] {
            for s in sample_object_batch(&ds.worlds, &ds.train, stage, 50, &mut rng).unwrap() {
                assert!(s.labels.contains(&1.0));
                for (b, &l) in s.boxes.iter().zip(&s.labels) {
                    if b.object_id == s.target_object {
                        assert_eq!(l, 1.0);
                    }
                }
                if stage == Stage::ImageBased {
                    let v = s.boxes[0].native_view;
                    assert!(s.boxes.iter().all(|b| b.native_view == v && b.anchor == s.viewpoint));
                }
            }
        }
    }

    #[test]
    fn stage_order_is_enforced() {
        let ds = small();
        let vocab = Vocab::standard();
        let mut store = ParamStore::new();
        let mut model = ObjectGroundingModel::new(&mut store, "object", EncoderConfig::toy(vocab.len(), 16, 16 + BOX_EXTRA_DIMS), &mut RngStream::new(0));
        let samples = sample_object_batch(&ds.worlds, &ds.train, Stage::ViewpointBased, 2, &mut RngStream::new(0)).unwrap();
        let cfg = GroundingTrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(train_object_grounding(&mut model, &mut store, &samples, Stage::ViewpointBased, &cfg, false), Err(Error::Contract(_))));
        assert!(train_object_grounding(&mut model, &mut store, &samples, Stage::ViewpointBased, &cfg, true).is_ok());
    }

    #[test]
    fn bce_matches_closed_form_and_gradients() {
        let z = Array::matrix(3, 1, vec![0.3, -2.0, 5.0]).unwrap();
        let y = [1.0, 0.0, 0.0];
        let g = Graph::new();
        let l = bce_with_logits(g.constant(z.clone()), g.constant(Array::matrix(3, 1, y.to_vec()).unwrap())).unwrap().item();
        let expect: f64 = z
            .data()
            .iter()
            .zip(y)
            .map(|(&z, y)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((l - expect).abs() < 1e-12);
        let r = check_inputs(&[z], |g, v| bce_with_logits(v[0], g.constant(Array::matrix(3, 1, vec![1.0, 0.0, 1.0])?))).unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn all_negative_loss_is_bce_against_zeros() {
        let g = Graph::new();
        let z = g.constant(Array::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        let l = bce_with_logits(z, g.constant(Array::zeros(2, 1))).unwrap().item();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
