//! Line-delimited JSON records with a schema header.
//!
//! Every file starts with `{"schema": .., "version": ..}` followed by one
//! record per line. Floats are written with round-trip precision, so a
//! world read back compares equal to the one written.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::language::{CATEGORIES, COLORS, ROOM_TYPES, SIZES};
use super::{BoundingBox, Edge, Episode, ObjectBox, Viewpoint, World, WorldObject, N_VIEWS};
use crate::autodiff::Array;
use crate::error::{Error, Result};

pub const WORLD_SCHEMA: &str = "reverie.world";
pub const EPISODE_SCHEMA: &str = "reverie.episode";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

/// Serialise records under a schema header.
pub fn to_jsonl<T: Serialize>(schema: &str, records: &[T]) -> Result<String> {
    let mut out = serde_json::to_string(&Header { schema: schema.into(), version: SCHEMA_VERSION }).map_err(json_err)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(json_err)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse a schema-headed record stream. Blank lines are skipped; errors
/// carry 1-based line numbers.
pub fn from_jsonl<T: DeserializeOwned>(schema: &str, text: &str) -> Result<Vec<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((n, first)) = lines.next() else {
        return Err(Error::Parse { line: 1, msg: "missing schema header".into() });
    };
    let header: Header = serde_json::from_str(first).map_err(|e| Error::Parse { line: n + 1, msg: format!("bad header: {e}") })?;
    if header.schema != schema {
        return Err(Error::Parse { line: n + 1, msg: format!("expected schema {schema}, found {}", header.schema) });
    }
    if header.version != SCHEMA_VERSION {
        return Err(Error::Parse { line: n + 1, msg: format!("unsupported version {}", header.version) });
    }
    lines.map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })).collect()
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, schema: &str, records: &[T]) -> Result<()> {
    if let Some(dir) = path.as_ref().parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_jsonl(schema, records)?)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>, schema: &str) -> Result<Vec<T>> {
    from_jsonl(schema, &fs::read_to_string(path)?)
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Parse { line: 0, msg: e.to_string() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoxRecord {
    view: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    feature: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum WorldRecord {
    World { id: usize, seed: u64, f_view: usize, f_box: usize },
    Viewpoint { world: usize, id: usize, position: [f64; 3], room: String, panorama: Vec<Vec<f64>> },
    Edge { world: usize, a: usize, b: usize, length: f64 },
    Object { world: usize, id: usize, category: String, color: String, size: String, anchor: usize, boxes: Vec<BoxRecord> },
}

fn lookup(table: &[&str], name: &str) -> Result<usize> {
    table.iter().position(|t| *t == name).ok_or_else(|| Error::UnknownToken(name.to_string()))
}

fn records_of(world: &World) -> Vec<WorldRecord> {
    let mut out = vec![WorldRecord::World { id: world.id, seed: world.seed, f_view: world.f_view, f_box: world.f_box }];
    for vp in &world.viewpoints {
        out.push(WorldRecord::Viewpoint {
            world: world.id,
            id: vp.id,
            position: vp.position,
            room: ROOM_TYPES[vp.room].to_string(),
            panorama: (0..N_VIEWS).map(|r| vp.panorama.row_slice(r).to_vec()).collect(),
        });
    }
    for e in &world.edges {
        out.push(WorldRecord::Edge { world: world.id, a: e.a, b: e.b, length: e.length });
    }
    for o in &world.objects {
        out.push(WorldRecord::Object {
            world: world.id,
            id: o.id,
            category: CATEGORIES[o.category].into(),
            color: COLORS[o.color].into(),
            size: SIZES[o.size].into(),
            anchor: o.anchor,
            boxes: o
                .boxes
                .iter()
                .map(|b| BoxRecord { view: b.view, x: b.rect.x, y: b.rect.y, w: b.rect.w, h: b.rect.h, feature: b.feature.clone() })
                .collect(),
        });
    }
    out
}

pub fn worlds_to_string(worlds: &[World]) -> Result<String> {
    let records: Vec<WorldRecord> = worlds.iter().flat_map(records_of).collect();
    to_jsonl(WORLD_SCHEMA, &records)
}

pub fn worlds_from_str(text: &str) -> Result<Vec<World>> {
    struct Partial {
        id: usize,
        seed: u64,
        f_view: usize,
        f_box: usize,
        viewpoints: Vec<Viewpoint>,
        edges: Vec<Edge>,
        objects: Vec<WorldObject>,
    }
    let records: Vec<WorldRecord> = from_jsonl(WORLD_SCHEMA, text)?;
    let mut worlds: Vec<Partial> = Vec::new();
    let current = |worlds: &mut Vec<Partial>, id: usize| -> Result<usize> {
        match worlds.last() {
            Some(p) if p.id == id => Ok(worlds.len() - 1),
            _ => Err(Error::Parse { line: 0, msg: format!("record for world {id} outside its block") }),
        }
    };
    for r in records {
        match r {
            WorldRecord::World { id, seed, f_view, f_box } => {
                worlds.push(Partial { id, seed, f_view, f_box, viewpoints: Vec::new(), edges: Vec::new(), objects: Vec::new() })
            }
            WorldRecord::Viewpoint { world, id, position, room, panorama } => {
                let w = current(&mut worlds, world)?;
                let f = worlds[w].f_view;
                if panorama.len() != N_VIEWS || panorama.iter().any(|r| r.len() != f) {
                    return Err(Error::dim(format!("viewpoint {id} panorama is not {N_VIEWS}x{f}")));
                }
                let panorama = Array::matrix(N_VIEWS, f, panorama.concat())?;
                worlds[w].viewpoints.push(Viewpoint { id, position, room: lookup(&ROOM_TYPES, &room)?, panorama });
            }
            WorldRecord::Edge { world, a, b, length } => {
                let w = current(&mut worlds, world)?;
                worlds[w].edges.push(Edge { a, b, length });
            }
            WorldRecord::Object { world, id, category, color, size, anchor, boxes } => {
                let w = current(&mut worlds, world)?;
                let boxes = boxes
                    .into_iter()
                    .map(|b| ObjectBox { object_id: id, view: b.view, rect: BoundingBox::new(b.x, b.y, b.w, b.h), feature: b.feature })
                    .collect();
                worlds[w].objects.push(WorldObject {
                    id,
                    category: lookup(&CATEGORIES, &category)?,
                    color: lookup(&COLORS, &color)?,
                    size: lookup(&SIZES, &size)?,
                    anchor,
                    boxes,
                });
            }
        }
    }
    worlds.into_iter().map(|p| World::from_parts(p.id, p.seed, p.f_view, p.f_box, p.viewpoints, p.edges, p.objects)).collect()
}

pub fn write_worlds(path: impl AsRef<Path>, worlds: &[World]) -> Result<()> {
    if let Some(dir) = path.as_ref().parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, worlds_to_string(worlds)?)?;
    Ok(())
}

pub fn read_worlds(path: impl AsRef<Path>) -> Result<Vec<World>> {
    worlds_from_str(&fs::read_to_string(path)?)
}

pub fn write_episodes(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<()> {
    write_jsonl(path, EPISODE_SCHEMA, episodes)
}

pub fn read_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    read_jsonl(path, EPISODE_SCHEMA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldConfig};

    #[test]
    fn worlds_roundtrip_exactly() {
        let worlds: Vec<World> = (0..3).map(|i| generate_world(&WorldConfig { seed: i, ..Default::default() }, i as usize).unwrap()).collect();
        let text = worlds_to_string(&worlds).unwrap();
        let back = worlds_from_str(&text).unwrap();
        assert_eq!(back, worlds);
        assert_eq!(worlds_to_string(&back).unwrap(), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"schema\":\"reverie.world\",\"version\":1}\n{\"kind\":\"world\",\"id\":0,\"seed\":1,\"f_view\":2,\"f_box\":2}\nnot json\n";
        match worlds_from_str(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(worlds_from_str("{\"schema\":\"other\",\"version\":1}"), Err(Error::Parse { line: 1, .. })));
    }
}
