//! Relevance gate and nearest-centroid API classifier.
//!
//! The gate accepts a query when its best exemplar similarity reaches the
//! threshold `tau` (inclusive). The classifier scores the query against one
//! unit centroid per api_id and picks the argmax, breaking ties by the
//! lexicographically smallest api_id.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbeddingError, EmbeddingVector};
use crate::index::{ExemplarRecord, IndexError, VectorIndex};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("class {0:?} has a zero mean embedding")]
    DegenerateClass(String),
    #[error("exemplar {0:?} has an empty api_id")]
    MissingLabel(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("model classes not present in the index: {0:?}")]
    UniverseMismatch(Vec<String>),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file {path}: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Index(IndexError),
}

impl From<IndexError> for ClassifierError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::EmptyIndex => ClassifierError::EmptyIndex,
            IndexError::DimensionMismatch { expected, actual } => {
                ClassifierError::DimensionMismatch { expected, actual }
            }
            other => ClassifierError::Index(other),
        }
    }
}

impl From<EmbeddingError> for ClassifierError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::DimensionMismatch { expected, actual } => {
                ClassifierError::DimensionMismatch { expected, actual }
            }
            other => ClassifierError::Index(IndexError::Embedding(other)),
        }
    }
}

/// Checks `tau` lies in `(0, 1]`.
pub fn check_threshold(tau: f64) -> Result<f64, ClassifierError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(tau)
    } else {
        Err(ClassifierError::InvalidThreshold(tau))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CentroidModel {
    pub dim: usize,
    pub classes: BTreeMap<String, EmbeddingVector>,
    pub trained_from: BTreeMap<String, usize>,
}

impl CentroidModel {
    /// One L2-normalized mean embedding per api_id.
    pub fn train<'a, I>(exemplars: I) -> Result<Self, ClassifierError>
    where
        I: IntoIterator<Item = &'a ExemplarRecord>,
    {
        let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut dim = None;
        for ex in exemplars {
            if ex.api_id.is_empty() {
                return Err(ClassifierError::MissingLabel(ex.record_id.clone()));
            }
            let d = ex.embedding.dim();
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(ClassifierError::DimensionMismatch { expected, actual: d })
                }
                _ => {}
            }
            let sum = sums.entry(ex.api_id.clone()).or_insert_with(|| vec![0.0; d]);
            for (s, x) in sum.iter_mut().zip(ex.embedding.values()) {
                *s += x;
            }
            *counts.entry(ex.api_id.clone()).or_default() += 1;
        }
        let dim = dim.ok_or(ClassifierError::EmptyTrainingSet)?;
        let classes = sums
            .into_iter()
            .map(|(api_id, sum)| match EmbeddingVector::normalized(sum) {
                Ok(c) => Ok((api_id, c)),
                Err(_) => Err(ClassifierError::DegenerateClass(api_id)),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            dim,
            classes,
            trained_from: counts,
        })
    }

    pub fn class_ids(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    /// Cosine score per class and the winning api_id.
    pub fn classify(&self, query: &EmbeddingVector) -> Result<Classification, ClassifierError> {
        if query.dim() != self.dim {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        let mut scores = BTreeMap::new();
        let mut best: Option<(&str, f64)> = None;
        // BTreeMap iteration is ascending, so a strict `>` keeps the smallest
        // api_id among equal scores.
        for (api_id, centroid) in &self.classes {
            let s = cosine_similarity(query, centroid)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((api_id, s));
            }
            scores.insert(api_id.clone(), s);
        }
        let (api_id, _) = best.expect("model has at least one class");
        Ok(Classification {
            api_id: api_id.to_owned(),
            class_scores: scores,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        let path = path.as_ref();
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        fs::write(path, s).map_err(|source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ClassifierError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let schema = |message: String| ClassifierError::Schema {
            path: path.display().to_string(),
            message,
        };
        let model: CentroidModel = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
        if model.classes.is_empty() {
            return Err(schema("no classes".into()));
        }
        if let Some((id, c)) = model.classes.iter().find(|(_, c)| c.dim() != model.dim) {
            return Err(schema(format!(
                "class {id:?} has dim {}, model declares {}",
                c.dim(),
                model.dim
            )));
        }
        if model.classes.keys().ne(model.trained_from.keys()) {
            return Err(schema("classes and trainedFrom disagree".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub api_id: String,
    pub class_scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedExemplar {
    pub record_id: String,
    pub api_id: String,
    pub order: String,
}

impl From<&ExemplarRecord> for MatchedExemplar {
    fn from(r: &ExemplarRecord) -> Self {
        Self {
            record_id: r.record_id.clone(),
            api_id: r.api_id.clone(),
            order: r.order.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome<'a> {
    pub passed: bool,
    pub gate_similarity: f64,
    pub best: &'a ExemplarRecord,
}

/// Relevance gate: passes iff the nearest exemplar's similarity is `>= tau`.
pub fn gate<'a>(
    index: &'a VectorIndex,
    query: &EmbeddingVector,
    tau: f64,
) -> Result<GateOutcome<'a>, ClassifierError> {
    check_threshold(tau)?;
    let top = index.nearest(query, 1)?;
    let hit = top.into_iter().next().ok_or(ClassifierError::EmptyIndex)?;
    Ok(GateOutcome {
        passed: hit.similarity >= tau,
        gate_similarity: hit.similarity,
        best: hit.record,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionStatus {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentDecision {
    pub status: DecisionStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_id: Option<String>,
    pub gate_similarity: f64,
    pub class_scores: BTreeMap<String, f64>,
    pub threshold: f64,
    pub matched_exemplar: MatchedExemplar,
}

impl IntentDecision {
    pub fn is_accepted(&self) -> bool {
        self.status == DecisionStatus::Accepted
    }
}

/// Fails with [`ClassifierError::UniverseMismatch`] when the model knows a
/// class the index has no exemplars for.
pub fn check_universe(index: &VectorIndex, model: &CentroidModel) -> Result<(), ClassifierError> {
    let known = index.api_ids();
    let missing: Vec<String> = model
        .class_ids()
        .filter(|c| !known.contains(c))
        .map(str::to_owned)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(ClassifierError::UniverseMismatch(missing))
    }
}

/// Gate then classify. Rejected decisions still carry the class scores.
pub fn decide(
    index: &VectorIndex,
    model: &CentroidModel,
    query: &EmbeddingVector,
    tau: f64,
) -> Result<IntentDecision, ClassifierError> {
    if index.is_empty() {
        return Err(ClassifierError::EmptyIndex);
    }
    check_universe(index, model)?;
    let g = gate(index, query, tau)?;
    let c = model.classify(query)?;
    Ok(IntentDecision {
        status: if g.passed {
            DecisionStatus::Accepted
        } else {
            DecisionStatus::Rejected
        },
        api_id: g.passed.then_some(c.api_id),
        gate_similarity: g.gate_similarity,
        class_scores: c.class_scores,
        threshold: tau,
        matched_exemplar: g.best.into(),
    })
}
