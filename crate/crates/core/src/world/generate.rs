use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::features::FeatureBank;
use super::language::{CATEGORIES, COLORS, ROOM_TYPES, SIZES};
use super::{view_for_direction, BoundingBox, Edge, ObjectBox, Viewpoint, World, WorldObject, HEADINGS, IMAGE_H, IMAGE_W, N_VIEWS};
use crate::autodiff::{rng::splitmix64, Array, RngStream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_viewpoints: usize,
    pub n_rooms: usize,
    pub n_objects: usize,
    /// Maximum viewpoint degree.
    pub branching: usize,
    pub f_view: usize,
    pub f_box: usize,
    pub seed: u64,
    /// Seed of the shared semantic feature tables.
    pub bank_seed: u64,
    pub noise: f64,
    /// Per-world perturbation of the room prototypes.
    pub room_jitter: f64,
    /// Chance that an object gets a second box in the adjacent view.
    pub span_prob: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_viewpoints: 24,
            n_rooms: 5,
            n_objects: 16,
            branching: 3,
            f_view: 24,
            f_box: 16,
            seed: 0,
            bank_seed: 0x5eed_ba4c,
            noise: 0.1,
            room_jitter: 0.1,
            span_prob: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_viewpoints == 0 {
            return bad("n_viewpoints must be at least 1".into());
        }
        if self.n_rooms == 0 || self.n_rooms > self.n_viewpoints {
            return bad(format!("{} rooms cannot partition {} viewpoints", self.n_rooms, self.n_viewpoints));
        }
        if self.n_rooms > ROOM_TYPES.len() {
            return bad(format!("at most {} room types are available", ROOM_TYPES.len()));
        }
        if self.n_viewpoints > 2 && self.branching < 2 {
            return bad("branching below 2 cannot connect more than two viewpoints".into());
        }
        if self.n_viewpoints == 2 && self.branching < 1 {
            return bad("branching 0 cannot connect two viewpoints".into());
        }
        if self.f_view == 0 || self.f_box == 0 {
            return bad("feature dims must be positive".into());
        }
        Ok(())
    }
}

/// Seed of the `index`-th world of a dataset built from `base`.
pub fn world_seed(base: u64, index: usize) -> u64 {
    splitmix64(base ^ splitmix64(index as u64 + 1))
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Edge lengths are multiples of 2⁻¹⁰ m so that path sums and differences
/// of distances are exact in floating point.
pub const LENGTH_QUANTUM: f64 = 1.0 / 1024.0;

fn quantize(x: f64) -> f64 {
    (x / LENGTH_QUANTUM).round() * LENGTH_QUANTUM
}

/// Generate one world. Everything is a pure function of the config.
pub fn generate_world(cfg: &WorldConfig, id: usize) -> Result<World> {
    cfg.validate()?;
    let bank = FeatureBank::new(cfg.bank_seed, cfg.f_view, cfg.f_box);
    let root = RngStream::new(cfg.seed);
    let n = cfg.n_viewpoints;

    // Spatial tree plus a few loop-closing edges.
    let mut rng = root.fork("graph");
    let mut positions = vec![[0.0, 0.0, 0.0]];
    let mut degree = vec![0usize; n];
    let mut edges: Vec<Edge> = Vec::new();
    for i in 1..n {
        let open: Vec<usize> = (0..i).filter(|&p| degree[p] < cfg.branching).collect();
        let parent = *rng.choose(&open).expect("a tree with branching >= 2 always has an open node");
        let mut pos = positions[parent];
        for _ in 0..30 {
            let angle = rng.uniform_range(-PI, PI);
            let r = rng.uniform_range(2.5, 5.0);
            let dz = (0.3 * rng.normal()).clamp(-0.8, 0.8);
            let p = positions[parent];
            pos = [p[0] + r * angle.cos(), p[1] + r * angle.sin(), p[2] + dz];
            if positions.iter().all(|&q| dist3(q, pos) >= 2.0) {
                break;
            }
        }
        positions.push(pos);
        edges.push(Edge { a: parent, b: i, length: quantize(dist3(positions[parent], pos)) });
        degree[parent] += 1;
        degree[i] += 1;
    }
    for _ in 0..n / 6 {
        let u = rng.below(n);
        if degree[u] >= cfg.branching {
            continue;
        }
        let linked = |a: usize, b: usize, edges: &[Edge]| edges.iter().any(|e| (e.a == a && e.b == b) || (e.a == b && e.b == a));
        let best = (0..n)
            .filter(|&v| v != u && degree[v] < cfg.branching && !linked(u, v, &edges))
            .map(|v| (dist3(positions[u], positions[v]), v))
            .filter(|&(d, _)| d <= 5.5)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((d, v)) = best {
            edges.push(Edge { a: u.min(v), b: u.max(v), length: quantize(d) });
            degree[u] += 1;
            degree[v] += 1;
        }
    }
    let mut adj = vec![Vec::new(); n];
    for e in &edges {
        adj[e.a].push(e.b);
        adj[e.b].push(e.a);
    }

    // Rooms: multi-source BFS regions, each with a distinct room type.
    let mut rng = root.fork("rooms");
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut types: Vec<usize> = (0..ROOM_TYPES.len()).collect();
    rng.shuffle(&mut types);
    let mut room = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for (r, &seed_vp) in order.iter().take(cfg.n_rooms).enumerate() {
        room[seed_vp] = types[r];
        queue.push_back(seed_vp);
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if room[v] == usize::MAX {
                room[v] = room[u];
                queue.push_back(v);
            }
        }
    }

    // Objects, clustered a few per anchor.
    let mut rng = root.fork("objects");
    let mut objects: Vec<WorldObject> = Vec::new();
    while objects.len() < cfg.n_objects {
        let anchor = rng.below(n);
        let k = (2 + rng.below(3)).min(cfg.n_objects - objects.len());
        for _ in 0..k {
            let local: Vec<usize> = objects.iter().filter(|o| o.anchor == anchor).map(|o| o.category).collect();
            let mut triple = (0, 0, 0);
            for _ in 0..50 {
                let category = match rng.choose(&local) {
                    Some(&c) if rng.bernoulli(0.35) => c,
                    _ => rng.below(CATEGORIES.len()),
                };
                triple = (category, rng.below(COLORS.len()), rng.below(SIZES.len()));
                let clash = objects.iter().any(|o| room[o.anchor] == room[anchor] && (o.category, o.color, o.size) == triple);
                if !clash {
                    break;
                }
            }
            let id = objects.len();
            let taken: Vec<(usize, BoundingBox)> =
                objects.iter().filter(|o| o.anchor == anchor).flat_map(|o| o.boxes.iter().map(|b| (b.view, b.rect))).collect();
            let rects = place_boxes(&taken, cfg.span_prob, &mut rng);
            let boxes = rects
                .into_iter()
                .map(|(view, rect)| ObjectBox { object_id: id, view, rect, feature: bank.box_feature(triple.0, triple.1, triple.2, cfg.noise, &mut rng) })
                .collect();
            objects.push(WorldObject { id, category: triple.0, color: triple.1, size: triple.2, anchor, boxes });
        }
    }

    // Panoramas.
    let mut jitter_rng = root.fork("jitter");
    let protos: Vec<Vec<f64>> = (0..ROOM_TYPES.len())
        .map(|r| (0..cfg.f_view).map(|j| bank.room.get(r, j) + cfg.room_jitter * jitter_rng.normal()).collect())
        .collect();
    let mut rng = root.fork("panorama");
    let mut viewpoints = Vec::with_capacity(n);
    for v in 0..n {
        let mut data = Vec::with_capacity(N_VIEWS * cfg.f_view);
        let facing: Vec<(usize, usize)> = adj[v]
            .iter()
            .map(|&u| {
                let p = positions[v];
                let q = positions[u];
                let (dx, dy, dz) = (q[0] - p[0], q[1] - p[1], q[2] - p[2]);
                (view_for_direction(dy.atan2(dx), dz.atan2((dx * dx + dy * dy).sqrt())), u)
            })
            .collect();
        for view in 0..N_VIEWS {
            let other_room = facing.iter().filter(|&&(fv, u)| fv == view && room[u] != room[v]).map(|&(_, u)| room[u]).min();
            let elev = view / HEADINGS;
            let here: Vec<&WorldObject> = objects.iter().filter(|o| o.anchor == v && o.boxes.iter().any(|b| b.view == view)).collect();
            for j in 0..cfg.f_view {
                let mut x = match other_room {
                    Some(r) => 0.5 * protos[room[v]][j] + 0.5 * protos[r][j],
                    None => protos[room[v]][j],
                };
                x += bank.elevation.get(elev, j);
                for o in &here {
                    x += bank.category_view.get(o.category, j) + bank.color_view.get(o.color, j);
                }
                data.push(x + cfg.noise * rng.normal());
            }
        }
        viewpoints.push(Viewpoint { id: v, position: positions[v], room: room[v], panorama: Array::matrix(N_VIEWS, cfg.f_view, data)? });
    }

    World::from_parts(id, cfg.seed, cfg.f_view, cfg.f_box, viewpoints, edges, objects)
}

/// Pixel boxes for one object, avoiding heavy overlap with boxes already at
/// the same anchor. A spanning object is cut at the right edge of its view
/// and continues at the left edge of the next heading.
fn place_boxes(taken: &[(usize, BoundingBox)], span_prob: f64, rng: &mut RngStream) -> Vec<(usize, BoundingBox)> {
    const ELEVATION_CHOICES: [usize; 5] = [0, 1, 1, 1, 2];
    let mut last = Vec::new();
    let span = rng.bernoulli(span_prob);
    for _ in 0..30 {
        let heading = rng.below(HEADINGS);
        let elev = *rng.choose(&ELEVATION_CHOICES).expect("non-empty");
        let view = elev * HEADINGS + heading;
        let w = rng.uniform_range(60.0, 220.0);
        let h = rng.uniform_range(60.0, 200.0);
        let y = rng.uniform_range(0.0, IMAGE_H - h);
        let mut out = Vec::new();
        if span {
            let visible = (w * rng.uniform_range(0.3, 0.7)).max(20.0);
            out.push((view, BoundingBox::new(IMAGE_W - visible, y, visible, h)));
            let next = elev * HEADINGS + (heading + 1) % HEADINGS;
            out.push((next, BoundingBox::new(0.0, y, (w - visible).max(20.0), h)));
        } else {
            out.push((view, BoundingBox::new(rng.uniform_range(0.0, IMAGE_W - w), y, w, h)));
        }
        let clear = out.iter().all(|(v, r)| taken.iter().all(|(tv, tr)| tv != v || tr.iou(r) <= 0.3));
        last = out;
        if clear {
            break;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_infeasible_configs() {
        let cfg = WorldConfig { n_viewpoints: 3, n_rooms: 4, ..WorldConfig::default() };
        assert!(matches!(generate_world(&cfg, 0), Err(Error::Config(_))));
        let cfg = WorldConfig { n_viewpoints: 0, ..WorldConfig::default() };
        assert!(generate_world(&cfg, 0).is_err());
        let cfg = WorldConfig { n_viewpoints: 10, n_rooms: 9, ..WorldConfig::default() };
        assert!(generate_world(&cfg, 0).is_err());
    }

    #[test]
    fn single_viewpoint_world() {
        let cfg = WorldConfig { n_viewpoints: 1, n_rooms: 1, n_objects: 2, ..WorldConfig::default() };
        let w = generate_world(&cfg, 0).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w.edges.is_empty());
        assert!(w.objects.iter().all(|o| o.anchor == 0));
    }

    #[test]
    fn degree_and_box_invariants() {
        for seed in 0..10 {
            let cfg = WorldConfig { n_viewpoints: 40, seed, ..WorldConfig::default() };
            let w = generate_world(&cfg, 0).unwrap();
            assert!(w.max_degree() <= cfg.branching);
            assert_eq!(w.objects.len(), cfg.n_objects);
            for o in &w.objects {
                assert!(o.boxes.iter().all(|b| b.rect.in_frame() && b.object_id == o.id));
            }
            for e in &w.edges {
                assert!(e.length > 0.0);
            }
        }
    }

    #[test]
    fn some_objects_span_two_views() {
        let cfg = WorldConfig { n_objects: 60, seed: 4, ..WorldConfig::default() };
        let w = generate_world(&cfg, 0).unwrap();
        let spanning = w.objects.iter().filter(|o| o.boxes.len() == 2).count();
        assert!(spanning > 5 && spanning < 35, "{spanning}");
    }
}
