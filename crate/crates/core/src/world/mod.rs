//! Procedural viewpoint-graph worlds and the episode engine.
//!
//! A world is a connected graph of viewpoints with metric edges. Every
//! viewpoint carries a 36-view panorama of synthetic features (12 headings ×
//! 3 elevations) and may anchor objects whose bounding boxes live in those
//! views. Episodes pair a templated instruction with a start viewpoint and a
//! target object.

mod dataset;
mod features;
mod generate;
pub mod io;
mod language;
mod sim;

pub use dataset::{Dataset, DatasetConfig};
pub use features::FeatureBank;
pub use generate::{generate_world, world_seed, WorldConfig, LENGTH_QUANTUM};
pub use language::{make_instruction, Instruction, Vocab, CATEGORIES, COLORS, MAX_INSTRUCTION_LEN, ROOM_TYPES, SIZES};
pub use sim::{make_episodes, observe, step, Candidate, Episode, EpisodeState, ObservedBox, Observation};

use std::collections::{BinaryHeap, VecDeque};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};

pub const HEADINGS: usize = 12;
pub const ELEVATIONS: usize = 3;
pub const N_VIEWS: usize = HEADINGS * ELEVATIONS;
pub const IMAGE_W: f64 = 640.0;
pub const IMAGE_H: f64 = 480.0;
/// Observability and success radius, meters of shortest-path distance.
pub const SUCCESS_RADIUS: f64 = 3.0;

const CELL: f64 = PI / 6.0;

/// Wrap an angle into `[-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x == -PI && a > 0.0 {
        x = PI;
    }
    x
}

/// `(heading, elevation)` of a view index; index = elevation·12 + heading.
pub fn view_angles(view: usize) -> (f64, f64) {
    assert!(view < N_VIEWS, "view index {view} out of range");
    let k = view % HEADINGS;
    let e = view / HEADINGS;
    (wrap_angle(k as f64 * CELL), (e as f64 - 1.0) * CELL)
}

/// The view whose grid cell is closest to a direction.
pub fn view_for_direction(heading: f64, elevation: f64) -> usize {
    let k = ((wrap_angle(heading) / CELL).round() as i64).rem_euclid(HEADINGS as i64) as usize;
    let e = ((elevation / CELL).round() as i64 + 1).clamp(0, ELEVATIONS as i64 - 1) as usize;
    e * HEADINGS + k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn in_frame(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x >= 0.0 && self.y >= 0.0 && self.x + self.w <= IMAGE_W && self.y + self.h <= IMAGE_H
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Intersection over union; both boxes are taken in the same frame.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let iw = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let ih = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        inter / (self.area() + other.area() - inter)
    }
}

/// One box of an object: the native view it sits in, its pixel geometry and
/// its region feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectBox {
    pub object_id: usize,
    pub view: usize,
    pub rect: BoundingBox,
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldObject {
    pub id: usize,
    pub category: usize,
    pub color: usize,
    pub size: usize,
    pub anchor: usize,
    pub boxes: Vec<ObjectBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Viewpoint {
    pub id: usize,
    pub position: [f64; 3],
    /// Index into [`ROOM_TYPES`].
    pub room: usize,
    /// `36 × F_view`.
    pub panorama: Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// Direction of travel along an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heading {
    pub to: usize,
    pub length: f64,
    pub heading: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub id: usize,
    pub seed: u64,
    pub f_view: usize,
    pub f_box: usize,
    pub viewpoints: Vec<Viewpoint>,
    pub edges: Vec<Edge>,
    pub objects: Vec<WorldObject>,
    /// Sorted by destination id.
    adjacency: Vec<Vec<Heading>>,
    dist: Vec<Vec<f64>>,
}

fn direction(from: [f64; 3], to: [f64; 3]) -> (f64, f64) {
    let (dx, dy, dz) = (to[0] - from[0], to[1] - from[1], to[2] - from[2]);
    (wrap_angle(dy.atan2(dx)), dz.atan2((dx * dx + dy * dy).sqrt()))
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on distance, then id
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl World {
    /// Assemble a world and check its invariants.
    pub fn from_parts(
        id: usize,
        seed: u64,
        f_view: usize,
        f_box: usize,
        viewpoints: Vec<Viewpoint>,
        edges: Vec<Edge>,
        objects: Vec<WorldObject>,
    ) -> Result<World> {
        let n = viewpoints.len();
        if n == 0 {
            return Err(Error::Config("a world needs at least one viewpoint".into()));
        }
        for (i, vp) in viewpoints.iter().enumerate() {
            if vp.id != i {
                return Err(Error::contract(format!("viewpoint {i} carries id {}", vp.id)));
            }
            if vp.panorama.dims2() != (N_VIEWS, f_view) {
                return Err(Error::dim(format!("viewpoint {i} panorama {:?}", vp.panorama.shape())));
            }
            if vp.room >= ROOM_TYPES.len() {
                return Err(Error::contract(format!("viewpoint {i} room {} unknown", vp.room)));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for e in &edges {
            if e.a >= n || e.b >= n || e.a == e.b || !(e.length > 0.0) {
                return Err(Error::contract(format!("bad edge {e:?}")));
            }
            let (ha, ea) = direction(viewpoints[e.a].position, viewpoints[e.b].position);
            let (hb, eb) = direction(viewpoints[e.b].position, viewpoints[e.a].position);
            adjacency[e.a].push(Heading { to: e.b, length: e.length, heading: ha, elevation: ea });
            adjacency[e.b].push(Heading { to: e.a, length: e.length, heading: hb, elevation: eb });
        }
        for list in &mut adjacency {
            list.sort_by_key(|h| h.to);
            if list.windows(2).any(|w| w[0].to == w[1].to) {
                return Err(Error::contract("duplicate edge"));
            }
        }
        for (i, o) in objects.iter().enumerate() {
            if o.id != i || o.anchor >= n || o.boxes.is_empty() {
                return Err(Error::contract(format!("object {i} malformed")));
            }
            for b in &o.boxes {
                if b.object_id != o.id || b.view >= N_VIEWS || !b.rect.in_frame() || b.feature.len() != f_box {
                    return Err(Error::contract(format!("object {i} has an invalid box")));
                }
            }
        }
        let mut world = World { id, seed, f_view, f_box, viewpoints, edges, objects, adjacency, dist: Vec::new() };
        world.dist = (0..n).map(|s| world.dijkstra(s)).collect();
        if world.dist[0].iter().any(|d| d.is_infinite()) {
            return Err(Error::contract("world graph is not connected"));
        }
        Ok(world)
    }

    fn dijkstra(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::from([Frontier(0.0, source)]);
        while let Some(Frontier(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for h in &self.adjacency[u] {
                let nd = d + h.length;
                if nd < dist[h.to] {
                    dist[h.to] = nd;
                    heap.push(Frontier(nd, h.to));
                }
            }
        }
        dist
    }

    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }

    /// Outgoing moves from `v`, sorted by destination id.
    pub fn neighbors(&self, v: usize) -> &[Heading] {
        &self.adjacency[v]
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a].iter().find(|h| h.to == b).map(|h| h.length)
    }

    /// Shortest-path distance in meters.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.dist[a][b]
    }

    /// Minimal-length path from `a` to `b`; among equal-length paths the
    /// lexicographically smallest id sequence wins.
    pub fn shortest_path(&self, a: usize, b: usize) -> (Vec<usize>, f64) {
        let to_b = &self.dist[b];
        let mut path = vec![a];
        let mut cur = a;
        while cur != b {
            let next = self.adjacency[cur]
                .iter()
                .find(|h| {
                    let via = h.length + to_b[h.to];
                    (via - to_b[cur]).abs() <= 1e-9 * to_b[cur].max(1.0)
                })
                .expect("a shortest-path successor exists in a connected graph");
            cur = next.to;
            path.push(cur);
        }
        (path, to_b[a])
    }

    /// Hop counts from `source` by breadth-first search.
    pub fn hops_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut hops = vec![None; self.len()];
        hops[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = hops[u].unwrap_or(0);
            for h in &self.adjacency[u] {
                if hops[h.to].is_none() {
                    hops[h.to] = Some(d + 1);
                    queue.push_back(h.to);
                }
            }
        }
        hops
    }

    /// Direction from one viewpoint toward another's position.
    pub fn direction(&self, from: usize, to: usize) -> (f64, f64) {
        direction(self.viewpoints[from].position, self.viewpoints[to].position)
    }

    pub fn within_radius(&self, a: usize, b: usize) -> bool {
        self.distance(a, b) <= SUCCESS_RADIUS
    }

    pub fn objects_at(&self, v: usize) -> impl Iterator<Item = &WorldObject> {
        self.objects.iter().filter(move |o| o.anchor == v)
    }
}
