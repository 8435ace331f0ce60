//! Measurement persistence and windowed queries.
//!
//! Two backends behind one trait: an in-memory store and a single-file
//! append log with an in-process index. Queries use intersection semantics
//! because execution intervals straddle window boundaries; the attribution
//! stage clips.

use std::collections::{BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{LogicalId, Measurement, MetricName, Ns, PhysicalId};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("inverted query range [{t_start}, {t_stop})")]
    InvertedRange { t_start: Ns, t_stop: Ns },
    #[error("measurement {index} in batch is invalid: {message}")]
    InvalidMeasurement { index: usize, message: String },
    #[error("storage I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store file: {0}")]
    Corrupt(String),
}

/// Optional predicates for windowed queries; `None` means no filtering on
/// that axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFilter {
    pub metrics: Option<BTreeSet<MetricName>>,
    pub physical_entities: Option<BTreeSet<PhysicalId>>,
    pub logical_entities: Option<BTreeSet<LogicalId>>,
}

impl QueryFilter {
    pub fn matches(&self, m: &Measurement) -> bool {
        if let Some(metrics) = &self.metrics {
            if !metrics.contains(&m.metric) {
                return false;
            }
        }
        if let Some(entities) = &self.physical_entities {
            if !entities.contains(&m.physical_entity_id) {
                return false;
            }
        }
        if let Some(logical) = &self.logical_entities {
            match &m.logical_entity_id {
                Some(id) if logical.contains(id) => {}
                _ => return false,
            }
        }
        true
    }
}

/// Half-open intersection; instantaneous measurements (t_start == t_stop)
/// are treated as points.
pub fn intersects(m: &Measurement, t_start: Ns, t_stop: Ns) -> bool {
    if m.t_start == m.t_stop {
        t_start <= m.t_start && m.t_start < t_stop
    } else {
        m.t_start < t_stop && m.t_stop > t_start
    }
}

pub trait MeasurementStore {
    /// Appends a batch. Byte-identical duplicate batches are deduplicated
    /// by content hash and count as zero appended.
    fn append(&mut self, batch: &[Measurement]) -> Result<usize, StoreError>;

    /// Exactly the measurements intersecting `[t_start, t_stop)` that match
    /// the filter, sorted by `t_start`.
    fn query_window(
        &self,
        t_start: Ns,
        t_stop: Ns,
        filter: &QueryFilter,
    ) -> Result<Vec<Measurement>, StoreError>;

    fn all(&self) -> Result<Vec<Measurement>, StoreError> {
        self.query_window(0, Ns::MAX, &QueryFilter::default())
    }

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn validate_batch(batch: &[Measurement]) -> Result<(), StoreError> {
    for (index, m) in batch.iter().enumerate() {
        if m.t_start > m.t_stop {
            return Err(StoreError::InvalidMeasurement {
                index,
                message: format!("t_start {} > t_stop {}", m.t_start, m.t_stop),
            });
        }
        if !m.value.is_finite() || m.value < 0.0 {
            return Err(StoreError::InvalidMeasurement {
                index,
                message: format!("value {} is not finite non-negative", m.value),
            });
        }
    }
    Ok(())
}

fn batch_hash(batch: &[Measurement]) -> Result<[u8; 32], StoreError> {
    let bytes = serde_json::to_vec(batch)
        .map_err(|e| StoreError::Corrupt(format!("serialization failed: {e}")))?;
    Ok(Sha256::digest(&bytes).into())
}

/// In-memory backend; also serves as the index of the file backend.
#[derive(Debug, Default)]
pub struct MemoryStore {
    // Sorted by t_start; max_span bounds how far back a query must scan.
    measurements: Vec<Measurement>,
    max_span: Ns,
    batch_hashes: HashSet<[u8; 32]>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert_batch(&mut self, batch: &[Measurement]) {
        for m in batch {
            self.max_span = self.max_span.max(m.t_stop - m.t_start);
            let pos = self
                .measurements
                .partition_point(|existing| existing.t_start <= m.t_start);
            self.measurements.insert(pos, m.clone());
        }
    }
}

impl MeasurementStore for MemoryStore {
    fn append(&mut self, batch: &[Measurement]) -> Result<usize, StoreError> {
        validate_batch(batch)?;
        let hash = batch_hash(batch)?;
        if !self.batch_hashes.insert(hash) {
            return Ok(0);
        }
        self.insert_batch(batch);
        Ok(batch.len())
    }

    fn query_window(
        &self,
        t_start: Ns,
        t_stop: Ns,
        filter: &QueryFilter,
    ) -> Result<Vec<Measurement>, StoreError> {
        if t_start >= t_stop {
            return Err(StoreError::InvertedRange { t_start, t_stop });
        }
        // Anything intersecting must start after t_start - max_span.
        let scan_from = t_start.saturating_sub(self.max_span);
        let begin = self
            .measurements
            .partition_point(|m| m.t_start < scan_from);
        let mut out = Vec::new();
        for m in &self.measurements[begin..] {
            if m.t_start >= t_stop {
                break;
            }
            if intersects(m, t_start, t_stop) && filter.matches(m) {
                out.push(m.clone());
            }
        }
        Ok(out)
    }

    fn len(&self) -> usize {
        self.measurements.len()
    }
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    hash: String,
    measurements: Vec<Measurement>,
}

/// Single-file append-log backend. Each append is one JSON line carrying
/// the batch and its content hash; the index is rebuilt on open.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: File,
    index: MemoryStore,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut index = MemoryStore::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogLine = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Corrupt(format!("line {}: {e}", i + 1)))?;
                let hash = batch_hash(&entry.measurements)?;
                if hex_encode(&hash) != entry.hash {
                    return Err(StoreError::Corrupt(format!(
                        "line {}: hash mismatch",
                        i + 1
                    )));
                }
                if index.batch_hashes.insert(hash) {
                    index.insert_batch(&entry.measurements);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(FileStore { path, file, index })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl MeasurementStore for FileStore {
    fn append(&mut self, batch: &[Measurement]) -> Result<usize, StoreError> {
        validate_batch(batch)?;
        let hash = batch_hash(batch)?;
        if self.index.batch_hashes.contains(&hash) {
            return Ok(0);
        }
        let line = LogLine {
            hash: hex_encode(&hash),
            measurements: batch.to_vec(),
        };
        let mut bytes = serde_json::to_vec(&line)
            .map_err(|e| StoreError::Corrupt(format!("serialization failed: {e}")))?;
        bytes.push(b'\n');
        self.file.write_all(&bytes)?;
        self.file.sync_data()?;
        self.index.batch_hashes.insert(hash);
        self.index.insert_batch(batch);
        Ok(batch.len())
    }

    fn query_window(
        &self,
        t_start: Ns,
        t_stop: Ns,
        filter: &QueryFilter,
    ) -> Result<Vec<Measurement>, StoreError> {
        self.index.query_window(t_start, t_stop, filter)
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}
