//! Scene grounding: 5-way choice of the viewpoint where an instruction's
//! path ends.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{GroundingTrainConfig, TrainReport};
use crate::autodiff::{clip_global_norm, Adam, AdamConfig, Array, Graph, ParamId, ParamStore, RngStream, Var};
use crate::error::{Error, Result};
use crate::nn::{CrossModalEncoder, EncoderConfig, LanguageStream, Linear};
use crate::world::{Episode, World};

pub const CHOICES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Last viewpoint of the path (the positive).
    PathEnd,
    /// Second-last viewpoint of the path.
    SecondLast,
    /// Earlier viewpoint of the same path.
    AlongPath,
    /// Viewpoint taken from another episode's path in the same world.
    OtherPath,
    /// Any remaining viewpoint, used only when the paths run out.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub world: usize,
    pub episode: String,
    pub tokens: Vec<usize>,
    pub candidates: Vec<usize>,
    pub roles: Vec<Role>,
    pub label: usize,
}

/// Draw `count` samples. Roles follow the path-end / second-last /
/// two along-path / one other-path recipe; when a path is too short the
/// missing negatives come from other paths in the same world. Candidate
/// order is shuffled so the label position carries no information.
pub fn sample_scene_batch(worlds: &[World], episodes: &[Episode], count: usize, rng: &mut RngStream) -> Result<Vec<SceneSample>> {
    if episodes.is_empty() {
        return Err(Error::Empty("no episodes to sample scene grounding from".into()));
    }
    let mut by_world: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, e) in episodes.iter().enumerate() {
        by_world.entry(e.world).or_default().push(i);
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let e = &episodes[rng.below(episodes.len())];
        let world = &worlds[e.world];
        if world.len() < CHOICES {
            return Err(Error::Config(format!("world {} has fewer than {CHOICES} viewpoints", world.id)));
        }
        let path = &e.path;
        let mut chosen: Vec<(usize, Role)> = vec![(*path.last().expect("non-empty path"), Role::PathEnd)];
        let taken = |c: &[(usize, Role)], v: usize| c.iter().any(|&(u, _)| u == v);

        let others: Vec<usize> = by_world[&e.world]
            .iter()
            .flat_map(|&i| episodes[i].path.iter().copied())
            .filter(|v| !path.contains(v))
            .collect();
        let draw_other = |chosen: &mut Vec<(usize, Role)>, rng: &mut RngStream| {
            let pool: Vec<usize> = others.iter().copied().filter(|&v| !taken(chosen, v)).collect();
            match rng.choose(&pool) {
                Some(&v) => chosen.push((v, Role::OtherPath)),
                None => {
                    let rest: Vec<usize> = (0..world.len()).filter(|&v| !taken(chosen, v)).collect();
                    chosen.push((*rng.choose(&rest).expect("world has enough viewpoints"), Role::Random));
                }
            }
        };

        if path.len() >= 2 && !taken(&chosen, path[path.len() - 2]) {
            chosen.push((path[path.len() - 2], Role::SecondLast));
        } else {
            draw_other(&mut chosen, rng);
        }
        let mut earlier: Vec<usize> = path[..path.len().saturating_sub(2)].iter().copied().filter(|&v| !taken(&chosen, v)).collect();
        earlier.dedup();
        rng.shuffle(&mut earlier);
        for k in 0..2 {
            match earlier.get(k) {
                Some(&v) => chosen.push((v, Role::AlongPath)),
                None => draw_other(&mut chosen, rng),
            }
        }
        draw_other(&mut chosen, rng);

        rng.shuffle(&mut chosen);
        let label = chosen.iter().position(|&(_, r)| r == Role::PathEnd).expect("positive present");
        out.push(SceneSample {
            world: e.world,
            episode: e.id.clone(),
            tokens: e.tokens.clone(),
            candidates: chosen.iter().map(|&(v, _)| v).collect(),
            roles: chosen.iter().map(|&(_, r)| r).collect(),
            label,
        });
    }
    Ok(out)
}

/// Cross-modal encoder over a panorama with `sc = W₂(h_CLS ⊙ h_IMG)`.
#[derive(Debug, Clone)]
pub struct SceneGroundingModel {
    pub encoder: CrossModalEncoder,
    pub head: Linear,
    pub prefix: String,
}

impl SceneGroundingModel {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: EncoderConfig, rng: &mut RngStream) -> Self {
        let encoder = CrossModalEncoder::new(store, &format!("{prefix}.enc"), cfg, rng);
        let head = Linear::new(store, &format!("{prefix}.head"), encoder.dim(), 1, rng);
        SceneGroundingModel { encoder, head, prefix: prefix.to_string() }
    }

    pub fn param_ids(&self, store: &ParamStore) -> Vec<ParamId> {
        store.ids_with_prefix(&format!("{}.", self.prefix)).collect()
    }

    pub fn score_var<'g>(&self, g: &'g Graph, store: &ParamStore, lang: LanguageStream<'g>, panorama: &Array) -> Result<Var<'g>> {
        let fused = self.encoder.fuse(g, store, lang, panorama)?;
        self.head.forward(g, store, fused.h_cls.mul(fused.h_img)?)
    }

    /// Scalar alignment score of an instruction with one panorama.
    pub fn score(&self, store: &ParamStore, tokens: &[usize], panorama: &Array) -> Result<f64> {
        let g = Graph::no_grad();
        let lang = self.encoder.encode_language(&g, store, tokens)?;
        Ok(self.score_var(&g, store, lang, panorama)?.item())
    }

    /// Scores of several panoramas against one instruction.
    pub fn score_many(&self, store: &ParamStore, tokens: &[usize], panoramas: &[&Array]) -> Result<Vec<f64>> {
        let g = Graph::no_grad();
        let lang = self.encoder.encode_language(&g, store, tokens)?;
        panoramas.iter().map(|p| Ok(self.score_var(&g, store, lang.clone(), p)?.item())).collect()
    }

    /// `1×5` score row for a sample.
    pub fn sample_scores<'g>(&self, g: &'g Graph, store: &ParamStore, worlds: &[World], s: &SceneSample) -> Result<Var<'g>> {
        let world = &worlds[s.world];
        let lang = self.encoder.encode_language(g, store, &s.tokens)?;
        let scores = s
            .candidates
            .iter()
            .map(|&v| self.score_var(g, store, lang.clone(), &world.viewpoints[v].panorama))
            .collect::<Result<Vec<_>>>()?;
        g.concat_cols(&scores)
    }

    /// Cross-entropy of the softmax over the candidate scores.
    pub fn sample_loss<'g>(&self, g: &'g Graph, store: &ParamStore, worlds: &[World], s: &SceneSample) -> Result<(Var<'g>, usize)> {
        let scores = self.sample_scores(g, store, worlds, s)?;
        let pred = argmax(scores.value().data());
        Ok((scores.log_softmax().pick(0, s.label)?.neg(), pred))
    }
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter().enumerate().fold(0, |b, (i, &x)| if x > xs[b] { i } else { b })
}

/// Minimise 5-way cross-entropy with Adam over shuffled mini-batches.
pub fn train_scene_grounding(
    model: &SceneGroundingModel,
    store: &mut ParamStore,
    worlds: &[World],
    samples: &[SceneSample],
    cfg: &GroundingTrainConfig,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::Empty("scene grounding needs at least one sample".into()));
    }
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() });
    let mut rng = RngStream::new(cfg.seed).fork("scene-train");
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let g = Graph::new();
            let mut total: Option<Var> = None;
            for &i in batch {
                let (l, pred) = model.sample_loss(&g, store, worlds, &samples[i])?;
                correct += usize::from(pred == samples[i].label);
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
    Ok(report)
}

/// `(accuracy, mean loss)` over a sample set, without training.
pub fn evaluate_scene(model: &SceneGroundingModel, store: &ParamStore, worlds: &[World], samples: &[SceneSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("no scene samples to evaluate".into()));
    }
    let (mut correct, mut loss) = (0usize, 0.0);
    for s in samples {
        let g = Graph::no_grad();
        let (l, pred) = model.sample_loss(&g, store, worlds, s)?;
        correct += usize::from(pred == s.label);
        loss += l.item();
    }
    Ok((correct as f64 / samples.len() as f64, loss / samples.len() as f64))
}
