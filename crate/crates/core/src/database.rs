//! The continually expanding embedding store: a fixed-dim, append-only
//! sequence of labeled vectors plus a dynamic class registry.
//!
//! Only vectors, class ids, and registry strings ever touch disk — no source
//! images. The on-disk format is little-endian throughout and finishes with a
//! CRC32 over everything that precedes it:
//!
//! ```text
//! "KNDB" · version u32 · dim u32 · normalized u8 · class_count u32
//!        · [name_len u32, name bytes] × C
//!        · record_count u64
//!        · [class_id u32, source_id u64, vector f32 × dim] × N
//!        · crc32 u32
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{CorruptKind, Error, Result};
use crate::features::{Embedding, NORM_TOLERANCE};
use crate::io_util::{CrcWriter, Cursor};

pub const DATABASE_MAGIC: &[u8; 4] = b"KNDB";
pub const DATABASE_VERSION: u32 = 1;

/// Bytes of per-record metadata on disk beyond the vector payload
/// (class_id u32 + source_id u64).
pub const RECORD_METADATA_BYTES: u64 = 12;

/// Default embedding dimension for the reference extractor stack.
pub const DEFAULT_DIM: usize = 1536;

/// Append-only bijective mapping from class name to dense id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassRegistry {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl ClassRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the existing id for a known name, otherwise appends the name
    /// with the next dense id.
    pub fn register(&mut self, name: &str) -> Result<u32> {
        if name.is_empty() {
            return Err(Error::InvalidName("class name must be nonempty".into()));
        }
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        Ok(id)
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name_of(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Names in id order.
    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One stored embedding with its class id and an opaque provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub vector: Embedding,
    pub class_id: u32,
    pub source_id: u64,
}

impl EmbeddingRecord {
    pub fn new(vector: Embedding, class_id: u32, source_id: u64) -> Self {
        Self {
            vector,
            class_id,
            source_id,
        }
    }
}

/// Database statistics. `per_class_counts[id]` is exact and sums to
/// `total_records`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabaseStats {
    pub total_records: u64,
    pub class_count: usize,
    pub per_class_counts: Vec<u64>,
    pub approx_bytes: u64,
}

/// The vectorized embedding database.
#[derive(Debug, Clone)]
pub struct EmbeddingDatabase {
    dim: usize,
    normalized: bool,
    registry: ClassRegistry,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingDatabase {
    /// Empty database storing L2-normalized vectors (the default; cosine in
    /// the index reduces to a dot product).
    pub fn create(dim: usize) -> Result<Self> {
        Self::with_normalized(dim, true)
    }

    /// Raw-norm storage, kept for debugging the two-pass cosine path.
    pub fn with_normalized(dim: usize, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        Ok(Self {
            dim,
            normalized,
            registry: ClassRegistry::new(),
            records: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn record(&self, index: usize) -> Option<&EmbeddingRecord> {
        self.records.get(index)
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn register_class(&mut self, name: &str) -> Result<u32> {
        self.registry.register(name)
    }

    fn validate_record(&self, record: &EmbeddingRecord) -> Result<()> {
        if record.vector.dim() != self.dim {
            return Err(Error::shape(
                format!("dim {}", self.dim),
                format!("dim {}", record.vector.dim()),
            ));
        }
        if record.class_id as usize >= self.registry.len() {
            return Err(Error::UnknownClass(record.class_id));
        }
        if self.normalized && (record.vector.norm() - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidData(format!(
                "vector norm {} but database stores normalized vectors",
                record.vector.norm()
            )));
        }
        Ok(())
    }

    /// Append one record; returns its index (the previous count).
    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<usize> {
        self.validate_record(&record)?;
        self.records.push(record);
        Ok(self.records.len() - 1)
    }

    /// Append a batch atomically: on any element error nothing is added.
    pub fn insert_batch(&mut self, records: Vec<EmbeddingRecord>) -> Result<usize> {
        for (i, record) in records.iter().enumerate() {
            self.validate_record(record).map_err(|e| Error::at(i, e))?;
        }
        let n = records.len();
        self.records.extend(records);
        Ok(n)
    }

    pub fn stats(&self) -> DatabaseStats {
        let mut per_class = vec![0u64; self.registry.len()];
        for r in &self.records {
            per_class[r.class_id as usize] += 1;
        }
        let per_record = 4 * self.dim as u64 + RECORD_METADATA_BYTES;
        DatabaseStats {
            total_records: self.records.len() as u64,
            class_count: self.registry.len(),
            per_class_counts: per_class,
            approx_bytes: self.records.len() as u64 * per_record,
        }
    }

    /// Serialized vector payload per record, in bytes (4·dim).
    pub fn vector_payload_bytes(&self) -> u64 {
        4 * self.dim as u64
    }

    /// Immutable view for index construction. Later inserts never mutate a
    /// snapshot already taken.
    pub fn snapshot(&self) -> Snapshot {
        let mut vectors = Vec::with_capacity(self.records.len() * self.dim);
        let mut class_ids = Vec::with_capacity(self.records.len());
        for r in &self.records {
            vectors.extend_from_slice(r.vector.values());
            class_ids.push(r.class_id);
        }
        Snapshot {
            dim: self.dim,
            normalized: self.normalized,
            vectors: Arc::from(vectors),
            class_ids: Arc::from(class_ids),
        }
    }

    pub fn save<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = CrcWriter::new(sink);
        w.write_all(DATABASE_MAGIC)?;
        w.write_all(&DATABASE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&[self.normalized as u8])?;
        w.write_all(&(self.registry.len() as u32).to_le_bytes())?;
        for name in self.registry.names() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
        }
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            w.write_all(&r.class_id.to_le_bytes())?;
            w.write_all(&r.source_id.to_le_bytes())?;
            for &v in r.vector.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let crc = w.crc();
        let mut sink = w.into_inner();
        sink.write_all(&crc.to_le_bytes())?;
        sink.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes, Error::CorruptDatabase);

        let magic = cur.take(4)?;
        if magic != DATABASE_MAGIC {
            return Err(Error::CorruptDatabase(CorruptKind::BadMagic));
        }
        let version = cur.u32()?;
        if version != DATABASE_VERSION {
            return Err(Error::CorruptDatabase(CorruptKind::Version {
                found: version,
                supported: DATABASE_VERSION,
            }));
        }
        let dim = cur.u32()? as usize;
        if dim == 0 {
            return Err(Error::CorruptDatabase(CorruptKind::Encoding(
                "dim is zero".into(),
            )));
        }
        let normalized = match cur.u8()? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::CorruptDatabase(CorruptKind::Encoding(format!(
                    "normalized flag byte {other}"
                ))))
            }
        };
        let class_count = cur.u32()? as usize;
        let mut registry = ClassRegistry::new();
        for _ in 0..class_count {
            let len = cur.u32()? as usize;
            let raw = cur.take(len)?;
            let name = std::str::from_utf8(raw).map_err(|_| {
                Error::CorruptDatabase(CorruptKind::Encoding("class name is not UTF-8".into()))
            })?;
            if name.is_empty() {
                return Err(Error::CorruptDatabase(CorruptKind::Encoding(
                    "empty class name".into(),
                )));
            }
            let before = registry.len();
            registry.register(name).map_err(|_| {
                Error::CorruptDatabase(CorruptKind::Encoding("invalid class name".into()))
            })?;
            if registry.len() != before + 1 {
                return Err(Error::CorruptDatabase(CorruptKind::Encoding(format!(
                    "duplicate class name {name:?}"
                ))));
            }
        }
        let record_count = cur.u64()? as usize;
        let mut records = Vec::with_capacity(record_count.min(1 << 20));
        for _ in 0..record_count {
            let class_id = cur.u32()?;
            if class_id as usize >= class_count {
                return Err(Error::CorruptDatabase(CorruptKind::Encoding(format!(
                    "record class id {class_id} out of range"
                ))));
            }
            let source_id = cur.u64()?;
            let raw = cur.take(dim * 4)?;
            let mut values = Vec::with_capacity(dim);
            for chunk in raw.chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            let vector = Embedding::new(values).map_err(|_| {
                Error::CorruptDatabase(CorruptKind::Encoding("non-finite vector".into()))
            })?;
            records.push(EmbeddingRecord::new(vector, class_id, source_id));
        }

        let body_end = cur.pos();
        let stored_crc = cur.u32()?;
        if cur.pos() != bytes.len() {
            return Err(Error::CorruptDatabase(CorruptKind::Encoding(
                "trailing bytes after checksum".into(),
            )));
        }
        let actual_crc = crc32fast::hash(&bytes[..body_end]);
        if stored_crc != actual_crc {
            return Err(Error::CorruptDatabase(CorruptKind::Checksum));
        }

        Ok(Self {
            dim,
            normalized,
            registry,
            records,
        })
    }

    pub fn save_to_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = File::create(path)?;
        self.save(BufWriter::new(file))
    }

    pub fn load_from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = File::open(path)?;
        Self::load(BufReader::new(file))
    }
}

/// Immutable, flat-layout view of the database records for index modules.
#[derive(Debug, Clone)]
pub struct Snapshot {
    dim: usize,
    normalized: bool,
    vectors: Arc<[f32]>,
    class_ids: Arc<[u32]>,
}

impl Snapshot {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn class_id(&self, index: usize) -> u32 {
        self.class_ids[index]
    }

    /// Flat row-major vector buffer, `len() * dim()` values.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// Build a snapshot directly from vectors and class ids (used by the
    /// synthetic generator and benches to skip database round-trips).
    pub fn from_parts(dim: usize, normalized: bool, vectors: Vec<f32>, class_ids: Vec<u32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        if vectors.len() != class_ids.len() * dim {
            return Err(Error::shape(
                format!("{} values for {} records", class_ids.len() * dim, class_ids.len()),
                format!("{} values", vectors.len()),
            ));
        }
        Ok(Self {
            dim,
            normalized,
            vectors: Arc::from(vectors),
            class_ids: Arc::from(class_ids),
        })
    }
}
