//! Named parameter storage and the binary checkpoint container.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "RVAGCKPT"
//! version    u32       1
//! count      u32       number of entries
//! manifest   count × { name_len u32, name utf-8, rank u32, dims u64 × rank }
//! digest     32 bytes  SHA-256 over manifest bytes followed by payload bytes
//! payload    f64 LE values of every entry, in manifest order
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use super::array::Array;
use super::rng::RngStream;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RVAGCKPT";
const VERSION: u32 = 1;

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub struct ParamStore {
    uid: u64,
    names: Vec<String>,
    values: Vec<Array>,
    index: HashMap<String, usize>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            names: self.names.clone(),
            values: self.values.clone(),
            index: self.index.clone(),
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Xavier-uniform `fan_in × fan_out` matrix.
    pub fn xavier(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut RngStream) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.add(name, Array::matrix(fan_in, fan_out, data).expect("positive dims"))
    }

    /// Small uniform init in `[-scale, scale]`.
    pub fn uniform(&mut self, name: impl Into<String>, rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> ParamId {
        let data = (0..rows * cols).map(|_| rng.uniform_range(-scale, scale)).collect();
        self.add(name, Array::matrix(rows, cols, data).expect("positive dims"))
    }

    pub fn zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array::zeros(rows, cols))
    }

    pub fn ones(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array::ones(rows, cols))
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.names.iter().enumerate().filter(move |(_, n)| n.starts_with(prefix)).map(|(i, _)| ParamId(i))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix).map(|id| self.get(id).len()).sum()
    }

    /// Copy every entry of `src` named `src_prefix + rest` onto
    /// `dst_prefix + rest` in `self`. Returns the number of entries copied.
    pub fn copy_prefixed_from(&mut self, src: &ParamStore, src_prefix: &str, dst_prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for (name, value) in src.names.iter().zip(&src.values) {
            let Some(rest) = name.strip_prefix(src_prefix) else { continue };
            let target = format!("{dst_prefix}{rest}");
            let Some(&idx) = self.index.get(&target) else {
                return Err(Error::Checkpoint(format!("no parameter {target} to receive {name}")));
            };
            if self.values[idx].shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {target}: {:?} vs {:?}",
                    self.values[idx].shape(),
                    value.shape()
                )));
            }
            self.values[idx] = value.clone();
            copied += 1;
        }
        Ok(copied)
    }

    /// Replace every value with the same-named value in `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} entries, model has {}",
                other.len(),
                self.len()
            )));
        }
        let copied = self.copy_prefixed_from(other, "", "")?;
        debug_assert_eq!(copied, self.len());
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = Vec::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            manifest.extend_from_slice(&(name.len() as u32).to_le_bytes());
            manifest.extend_from_slice(name.as_bytes());
            manifest.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
            for &d in value.shape() {
                manifest.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        let mut payload = Vec::with_capacity(self.scalar_count() * 8);
        for value in &self.values {
            for x in value.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::new().chain_update(&manifest).chain_update(&payload).finalize();

        let mut out = Vec::with_capacity(16 + manifest.len() + 32 + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&digest);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = cur.u32()? as usize;
        let manifest_start = cur.pos;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| Error::Checkpoint("non-utf8 name".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64()? as usize);
            }
            entries.push((name, shape));
        }
        let manifest = &bytes[manifest_start..cur.pos];
        let digest = cur.take(32)?.to_vec();
        let payload = &bytes[cur.pos..];
        let actual = Sha256::new().chain_update(manifest).chain_update(payload).finalize();
        if actual.as_slice() != digest.as_slice() {
            return Err(Error::Checkpoint("digest mismatch: checkpoint is corrupted".into()));
        }
        let mut store = ParamStore::new();
        for (name, shape) in entries {
            let n: usize = shape.iter().product();
            let raw = cur.take(n * 8)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let value = Array::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            store.add(name, value);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ParamStore> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
