//! The cached item-embedding index and exact full-pool retrieval.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;

use crate::embed::{l2_normalize, norm, EmbedError, EmbeddingVector, VectorMatrix};
use crate::ranking::{top_k, ScoredList};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("zero vector for item {0:?}")]
    ZeroVector(String),
    #[error("dimension mismatch: index has {expected}, vector has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{0} ids but {1} vectors")]
    Length(usize, usize),
    #[error("row for {id:?} is not unit-norm (norm {norm})")]
    NotNormalized { id: String, norm: f64 },
    #[error("user vector is zero")]
    ZeroQuery,
    #[error(transparent)]
    Store(#[from] EmbedError),
}

/// Row-aligned unit-norm item vectors over the entire pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemIndex {
    item_ids: Vec<String>,
    dimension: usize,
    matrix: Vec<f32>,
}

const UNIT_TOLERANCE: f64 = 1e-5;

pub fn build_index(ids: Vec<String>, vectors: &[EmbeddingVector]) -> Result<ItemIndex, IndexError> {
    if ids.len() != vectors.len() {
        return Err(IndexError::Length(ids.len(), vectors.len()));
    }
    let dimension = vectors.first().map_or(0, EmbeddingVector::dimension);
    let mut index = ItemIndex {
        item_ids: Vec::new(),
        dimension,
        matrix: Vec::new(),
    };
    index.append(ids, vectors)?;
    Ok(index)
}

/// Cosine similarity in `f64`. Zero vectors are an error.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64, IndexError> {
    if u.len() != v.len() {
        return Err(IndexError::Dimension {
            expected: u.len(),
            got: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(IndexError::ZeroQuery);
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

impl ItemIndex {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Add items, normalizing each new row.
    pub fn append(&mut self, ids: Vec<String>, vectors: &[EmbeddingVector]) -> Result<(), IndexError> {
        if ids.len() != vectors.len() {
            return Err(IndexError::Length(ids.len(), vectors.len()));
        }
        let mut seen: HashSet<&str> = self.item_ids.iter().map(String::as_str).collect();
        for id in &ids {
            if !seen.insert(id) {
                return Err(IndexError::DuplicateId(id.clone()));
            }
        }
        if self.is_empty() && self.dimension == 0 {
            self.dimension = vectors.first().map_or(0, EmbeddingVector::dimension);
        }
        let mut rows = Vec::with_capacity(vectors.len() * self.dimension);
        for (id, v) in ids.iter().zip(vectors) {
            if v.dimension() != self.dimension {
                return Err(IndexError::Dimension {
                    expected: self.dimension,
                    got: v.dimension(),
                });
            }
            let unit = l2_normalize(&v.0).map_err(|_| IndexError::ZeroVector(id.clone()))?;
            rows.extend(unit);
        }
        self.item_ids.extend(ids);
        self.matrix.extend(rows);
        Ok(())
    }

    pub fn position(&self) -> HashMap<&str, usize> {
        self.item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Cosine score of every item against `user_vec`, aligned with
    /// [`item_ids`](Self::item_ids). Rows are unit-norm so each score is the
    /// `f64` dot product divided by the user vector's norm.
    pub fn score_all(&self, user_vec: &[f32]) -> Result<Vec<f64>, IndexError> {
        if user_vec.len() != self.dimension {
            return Err(IndexError::Dimension {
                expected: self.dimension,
                got: user_vec.len(),
            });
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        let n = norm(user_vec);
        if n == 0.0 {
            return Err(IndexError::ZeroQuery);
        }
        let score = |i: usize| {
            let dot: f64 = self
                .row(i)
                .iter()
                .zip(user_vec)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            dot / n
        };
        if self.len() >= 4096 {
            Ok((0..self.len()).into_par_iter().map(score).collect())
        } else {
            Ok((0..self.len()).map(score).collect())
        }
    }

    /// The `k` best non-excluded items, score descending, ties by ascending id.
    pub fn retrieve_topk(
        &self,
        user_vec: &[f32],
        k: usize,
        exclude: &HashSet<&str>,
    ) -> Result<ScoredList, IndexError> {
        let scores = self.score_all(user_vec)?;
        Ok(top_k(&self.item_ids, &scores, k, exclude))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IndexError> {
        let m = VectorMatrix {
            ids: self.item_ids.clone(),
            dimension: self.dimension,
            data: self.matrix.clone(),
            columns: None,
        };
        Ok(m.save(dir)?)
    }

    /// Load a persisted index, checking id uniqueness and row norms.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let m = VectorMatrix::load(dir)?;
        let mut seen = HashSet::new();
        for (i, id) in m.ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(IndexError::DuplicateId(id.clone()));
            }
            let n = norm(m.row(i));
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(IndexError::NotNormalized { id: id.clone(), norm: n });
            }
        }
        Ok(Self {
            item_ids: m.ids,
            dimension: m.dimension,
            matrix: m.data,
        })
    }
}
