//! Train / seen-validation / unseen-validation splits over generated worlds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::{generate_world, world_seed, WorldConfig};
use super::io::{read_episodes, read_worlds, write_episodes, write_worlds};
use super::language::Vocab;
use super::sim::{make_episodes, Episode};
use super::World;
use crate::autodiff::RngStream;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub world: WorldConfig,
    /// Worlds used for training and seen-world validation.
    pub train_worlds: usize,
    /// Worlds held out entirely.
    pub unseen_worlds: usize,
    pub train_episodes_per_world: usize,
    pub val_episodes_per_world: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { world: WorldConfig::default(), train_worlds: 20, unseen_worlds: 5, train_episodes_per_world: 40, val_episodes_per_world: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Indexed by world id.
    pub worlds: Vec<World>,
    pub train: Vec<Episode>,
    pub val_seen: Vec<Episode>,
    pub val_unseen: Vec<Episode>,
}

impl Dataset {
    pub fn generate(cfg: &DatasetConfig, vocab: &Vocab) -> Result<Dataset> {
        let base = cfg.world.seed;
        let rng = RngStream::new(base).fork("episodes");
        let mut worlds = Vec::new();
        let (mut train, mut val_seen, mut val_unseen) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..cfg.train_worlds + cfg.unseen_worlds {
            let wc = WorldConfig { seed: world_seed(base, i), ..cfg.world.clone() };
            let world = generate_world(&wc, i)?;
            let mut er = rng.fork_index("world", i as u64);
            if i < cfg.train_worlds {
                let mut eps = make_episodes(&world, cfg.train_episodes_per_world + cfg.val_episodes_per_world, vocab, &mut er)?;
                val_seen.extend(eps.split_off(cfg.train_episodes_per_world));
                train.extend(eps);
            } else {
                val_unseen.extend(make_episodes(&world, cfg.val_episodes_per_world, vocab, &mut er)?);
            }
            worlds.push(world);
        }
        Ok(Dataset { worlds, train, val_seen, val_unseen })
    }

    pub fn world_of(&self, episode: &Episode) -> &World {
        &self.worlds[episode.world]
    }

    pub fn split(&self, name: &str) -> Result<&[Episode]> {
        match name {
            "train" => Ok(&self.train),
            "val_seen" => Ok(&self.val_seen),
            "val_unseen" => Ok(&self.val_unseen),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }

    /// Writes `worlds.jsonl` and one episode file per split into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_worlds(dir.join("worlds.jsonl"), &self.worlds)?;
        write_episodes(dir.join("train.jsonl"), &self.train)?;
        write_episodes(dir.join("val_seen.jsonl"), &self.val_seen)?;
        write_episodes(dir.join("val_unseen.jsonl"), &self.val_unseen)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let worlds = read_worlds(dir.join("worlds.jsonl"))?;
        let ds = Dataset {
            train: read_episodes(dir.join("train.jsonl"))?,
            val_seen: read_episodes(dir.join("val_seen.jsonl"))?,
            val_unseen: read_episodes(dir.join("val_unseen.jsonl"))?,
            worlds,
        };
        for (i, w) in ds.worlds.iter().enumerate() {
            if w.id != i {
                return Err(Error::contract(format!("world at position {i} has id {}", w.id)));
            }
        }
        if let Some(e) = ds.train.iter().chain(&ds.val_seen).chain(&ds.val_unseen).find(|e| e.world >= ds.worlds.len()) {
            return Err(Error::contract(format!("episode {} references missing world {}", e.id, e.world)));
        }
        Ok(ds)
    }
}
