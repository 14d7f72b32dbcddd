//! Exact cosine k-nearest-neighbor index over labelled exemplar utterances,
//! with a JSON snapshot format.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingProvider, EmbeddingVector};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has dim {expected}, record/query has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {0:?} not found")]
    NotFound(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("k must be positive")]
    ZeroK,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// One labelled example utterance and its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExemplarRecord {
    pub record_id: String,
    pub api_id: String,
    /// The example command text.
    pub order: String,
    pub embedding: EmbeddingVector,
}

impl ExemplarRecord {
    pub fn new(
        record_id: impl Into<String>,
        api_id: impl Into<String>,
        order: impl Into<String>,
        embedding: EmbeddingVector,
    ) -> Self {
        Self {
            record_id: record_id.into(),
            api_id: api_id.into(),
            order: order.into(),
            embedding,
        }
    }
}

/// An unembedded exemplar as written by hand in `exemplars.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExemplarText {
    pub api_id: String,
    pub order: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor<'a> {
    pub record: &'a ExemplarRecord,
    pub similarity: f64,
}

/// On-disk envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub struct IndexSnapshot {
    pub dim: usize,
    pub created_at: DateTime<Utc>,
    pub records: Vec<ExemplarRecord>,
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: Option<usize>,
    records: Vec<ExemplarRecord>,
    positions: HashMap<String, usize>,
    created_at: DateTime<Utc>,
}

impl Default for VectorIndex {
    fn default() -> Self {
        Self::new()
    }
}

impl VectorIndex {
    pub fn new() -> Self {
        Self {
            dim: None,
            records: Vec::new(),
            positions: HashMap::new(),
            created_at: Utc::now(),
        }
    }

    /// An empty index with its dimension already fixed.
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::new()
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn insert(&mut self, record: ExemplarRecord) -> Result<String, IndexError> {
        if record.api_id.is_empty() {
            return Err(IndexError::InvalidRecord("api_id is empty".into()));
        }
        if record.order.is_empty() {
            return Err(IndexError::InvalidRecord("order is empty".into()));
        }
        let actual = record.embedding.dim();
        if let Some(expected) = self.dim {
            if expected != actual {
                return Err(IndexError::DimensionMismatch { expected, actual });
            }
        }
        if self.positions.contains_key(&record.record_id) {
            return Err(IndexError::DuplicateId(record.record_id));
        }
        self.dim = Some(actual);
        let id = record.record_id.clone();
        self.positions.insert(id.clone(), self.records.len());
        self.records.push(record);
        Ok(id)
    }

    pub fn get(&self, record_id: &str) -> Option<&ExemplarRecord> {
        self.positions.get(record_id).map(|&i| &self.records[i])
    }

    pub fn remove(&mut self, record_id: &str) -> Result<ExemplarRecord, IndexError> {
        let pos = self
            .positions
            .remove(record_id)
            .ok_or_else(|| IndexError::NotFound(record_id.to_owned()))?;
        let removed = self.records.remove(pos);
        for p in self.positions.values_mut() {
            if *p > pos {
                *p -= 1;
            }
        }
        Ok(removed)
    }

    /// All records in insertion order.
    pub fn list(&self) -> &[ExemplarRecord] {
        &self.records
    }

    /// Distinct api_ids present in the index.
    pub fn api_ids(&self) -> std::collections::BTreeSet<&str> {
        self.records.iter().map(|r| r.api_id.as_str()).collect()
    }

    /// Exact top-k by cosine similarity, descending; equal similarities are
    /// ordered by ascending record id.
    pub fn nearest(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Neighbor<'_>>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let dim = match self.dim {
            Some(d) if !self.records.is_empty() => d,
            _ => return Err(IndexError::EmptyIndex),
        };
        if query.dim() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                actual: query.dim(),
            });
        }
        let mut scored = self
            .records
            .iter()
            .map(|record| {
                cosine_similarity(query, &record.embedding).map(|similarity| Neighbor { record, similarity })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let by_rank = |a: &Neighbor<'_>, b: &Neighbor<'_>| {
            b.similarity
                .total_cmp(&a.similarity)
                .then_with(|| a.record.record_id.cmp(&b.record.record_id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);
        Ok(scored)
    }

    pub fn to_snapshot(&self) -> IndexSnapshot {
        IndexSnapshot {
            dim: self.dim.unwrap_or(0),
            created_at: self.created_at,
            records: self.records.clone(),
        }
    }

    pub fn from_snapshot(snapshot: IndexSnapshot) -> Result<Self, IndexError> {
        let mut index = match snapshot.dim {
            0 => Self::new(),
            d => Self::with_dim(d),
        };
        index.created_at = snapshot.created_at;
        for record in snapshot.records {
            index.insert(record)?;
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<IndexSnapshot, IndexError> {
        let path = path.as_ref();
        let snapshot = self.to_snapshot();
        fs::write(path, snapshot_to_json(&snapshot)).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(snapshot)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            IndexError::Schema { message, .. } => IndexError::Schema {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, IndexError> {
        let schema = |message: String| IndexError::Schema {
            path: "<input>".into(),
            message,
        };
        let snapshot: IndexSnapshot = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        if snapshot.dim == 0 && !snapshot.records.is_empty() {
            return Err(schema("dim must be positive".into()));
        }
        for (i, r) in snapshot.records.iter().enumerate() {
            if r.embedding.dim() != snapshot.dim {
                return Err(schema(format!(
                    "records[{i}] ({}) has dim {}, snapshot declares {}",
                    r.record_id,
                    r.embedding.dim(),
                    snapshot.dim
                )));
            }
        }
        Self::from_snapshot(snapshot).map_err(|e| match e {
            IndexError::DuplicateId(id) => schema(format!("duplicate recordId {id:?}")),
            IndexError::InvalidRecord(m) => schema(m),
            other => other,
        })
    }

    /// Embeds hand-written exemplars into a fresh index. Record ids are
    /// `<api_id>-<nnn>`, numbered per class in file order.
    pub async fn build(
        exemplars: &[ExemplarText],
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, IndexError> {
        let texts: Vec<String> = exemplars.iter().map(|e| e.order.clone()).collect();
        let vectors = provider.embed_batch(&texts).await?;
        let mut index = match provider.dim() {
            Some(d) => Self::with_dim(d),
            None => Self::new(),
        };
        let mut per_class: HashMap<&str, usize> = HashMap::new();
        for (ex, embedding) in exemplars.iter().zip(vectors) {
            let n = per_class.entry(ex.api_id.as_str()).or_default();
            let id = format!("{}-{:03}", ex.api_id, n);
            *n += 1;
            index.insert(ExemplarRecord::new(
                id,
                ex.api_id.clone(),
                ex.order.clone(),
                embedding,
            ))?;
        }
        Ok(index)
    }
}

/// Pretty JSON with round-trip-exact floats and an RFC 3339 timestamp.
pub fn snapshot_to_json(snapshot: &IndexSnapshot) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        dim: usize,
        created_at: String,
        records: &'a [ExemplarRecord],
    }
    let out = Out {
        dim: snapshot.dim,
        created_at: snapshot.created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        records: &snapshot.records,
    };
    let mut s = serde_json::to_string_pretty(&out).expect("snapshot serializes");
    s.push('\n');
    s
}

pub fn load_exemplar_texts(path: impl AsRef<Path>) -> Result<Vec<ExemplarText>, IndexError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let items: Vec<ExemplarText> = serde_json::from_str(&text).map_err(|e| IndexError::Schema {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    for (i, item) in items.iter().enumerate() {
        let bad = if item.api_id.trim().is_empty() {
            Some("apiId")
        } else if item.order.trim().is_empty() {
            Some("order")
        } else {
            None
        };
        if let Some(field) = bad {
            return Err(IndexError::Schema {
                path: path.display().to_string(),
                message: format!("[{i}].{field} is empty"),
            });
        }
    }
    Ok(items)
}
