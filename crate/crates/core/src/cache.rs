//! Offline store of document encodings.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! header   "DCBC" | version u16 | d u32 | Ld u32 | model_hash u64 | count u64
//! index    count × ( id_len u32 | id bytes | model_hash u64 | offset u64 )
//! payload  count × ( Ld·d f32 row-major | true_length u32 )
//! ```
//!
//! Index entries are sorted by key and offsets are relative to the start of
//! the payload. A file holds encodings of exactly one model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{write_atomic, ByteReader, ByteWriter};
use crate::encoder::{EncodingMatrix, Role};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CACHE_MAGIC: &[u8; 4] = b"DCBC";
pub const CACHE_VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 4 + 4 + 8 + 8;

/// Ordered by model hash first, then document id.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub model_hash: u64,
    pub doc_id: String,
}

impl CacheKey {
    pub fn new(doc_id: impl Into<String>, model_hash: u64) -> Self {
        Self {
            model_hash,
            doc_id: doc_id.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    values: Vec<f32>,
    true_length: u32,
}

impl Entry {
    fn same_bits(&self, other: &Entry) -> bool {
        self.true_length == other.true_length
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// In-memory cache; [`persist`](Self::persist) and [`load`](Self::load) go
/// through the same codec as [`to_bytes`](Self::to_bytes).
///
/// Reads take `&self` and may run concurrently; writes need `&mut self`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingCache {
    width: usize,
    rows: usize,
    model_hash: u64,
    entries: BTreeMap<String, Entry>,
}

impl EncodingCache {
    pub fn new(width: usize, rows: usize, model_hash: u64) -> Self {
        Self {
            width,
            rows,
            model_hash,
            entries: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn model_hash(&self) -> u64 {
        self.model_hash
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = CacheKey> + '_ {
        self.entries.keys().map(|id| CacheKey::new(id.clone(), self.model_hash))
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        key.model_hash == self.model_hash && self.entries.contains_key(&key.doc_id)
    }

    pub fn put(&mut self, key: CacheKey, enc: &EncodingMatrix) -> Result<()> {
        if enc.model_hash != key.model_hash || key.model_hash != self.model_hash {
            return Err(Error::invalid(format!(
                "model hash mismatch: key {:016x}, encoding {:016x}, cache {:016x}",
                key.model_hash, enc.model_hash, self.model_hash
            )));
        }
        if enc.role != Role::Document {
            return Err(Error::invalid(format!("cannot cache a {:?} encoding", enc.role)));
        }
        if enc.values.shape() != [self.rows, self.width] || enc.true_length > self.rows {
            return Err(Error::Dimension {
                op: "cache put",
                left: enc.values.shape().to_vec(),
                right: vec![self.rows, self.width],
            });
        }
        let entry = Entry {
            values: enc.values.data().to_vec(),
            true_length: enc.true_length as u32,
        };
        match self.entries.get(&key.doc_id) {
            Some(existing) if existing.same_bits(&entry) => Ok(()),
            Some(_) => Err(Error::Consistency(format!(
                "conflicting encoding for {} under model {:016x}",
                key.doc_id, key.model_hash
            ))),
            None => {
                self.entries.insert(key.doc_id, entry);
                Ok(())
            }
        }
    }

    pub fn get(&self, key: &CacheKey) -> Result<EncodingMatrix> {
        let entry = (key.model_hash == self.model_hash)
            .then(|| self.entries.get(&key.doc_id))
            .flatten()
            .ok_or_else(|| Error::CacheMiss {
                keys: vec![key.clone()],
            })?;
        Ok(EncodingMatrix {
            values: Tensor::matrix(self.rows, self.width, entry.values.clone())?,
            role: Role::Document,
            model_hash: self.model_hash,
            true_length: entry.true_length as usize,
        })
    }

    fn entry_len(&self) -> u64 {
        (self.rows * self.width * 4 + 4) as u64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.raw(CACHE_MAGIC);
        w.u16(CACHE_VERSION);
        w.u32(self.width as u32);
        w.u32(self.rows as u32);
        w.u64(self.model_hash);
        w.u64(self.entries.len() as u64);
        for (i, id) in self.entries.keys().enumerate() {
            w.str(id);
            w.u64(self.model_hash);
            w.u64(i as u64 * self.entry_len());
        }
        for e in self.entries.values() {
            w.f32s(&e.values);
            w.u32(e.true_length);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != CACHE_MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}")));
        }
        let version = r.u16("version")?;
        if version != CACHE_VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let width = r.u32("d")? as usize;
        let rows = r.u32("Ld")? as usize;
        if width == 0 || rows == 0 {
            return Err(Error::format(6, "zero encoding dimension"));
        }
        let model_hash = r.u64("model hash")?;
        let count_at = r.offset();
        let count = r.u64("entry count")?;
        debug_assert_eq!(r.offset(), HEADER_LEN);
        let mut cache = Self::new(width, rows, model_hash);
        let entry_len = cache.entry_len();
        if count.saturating_mul(entry_len) > bytes.len() as u64 {
            return Err(Error::format(count_at, format!("entry count {count} exceeds file size")));
        }

        let mut ids: Vec<String> = Vec::with_capacity(count as usize);
        for i in 0..count {
            let at = r.offset();
            let id = r.str("document id")?;
            let hash = r.u64("entry model hash")?;
            let off_at = r.offset();
            let offset = r.u64("entry offset")?;
            if hash != model_hash {
                return Err(Error::format(at, format!("entry {id} carries model hash {hash:016x}")));
            }
            if ids.last().is_some_and(|prev| prev.as_str() >= id.as_str()) {
                return Err(Error::format(at, format!("index not strictly sorted at {id}")));
            }
            if offset != i * entry_len {
                return Err(Error::format(off_at, format!("offset {offset} for entry {i} is inconsistent")));
            }
            ids.push(id);
        }
        let payload_start = r.offset();
        let expected = count * entry_len;
        if r.remaining() as u64 != expected {
            return Err(Error::format(
                payload_start + (r.remaining() as u64).min(expected),
                format!("payload is {} bytes, expected {expected}", r.remaining()),
            ));
        }
        for id in ids {
            let values = r.f32s(rows * width, "encoding values")?;
            let tl_at = r.offset();
            let true_length = r.u32("true length")?;
            if true_length as usize > rows {
                return Err(Error::format(tl_at, format!("true length {true_length} exceeds {rows}")));
            }
            cache.entries.insert(id, Entry { values, true_length });
        }
        r.expect_end()?;
        Ok(cache)
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
