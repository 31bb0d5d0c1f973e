//! Ranked `(item, score)` lists and the shared top-k selection rule.
//!
//! Every ranking in the crate (retrieval, CF, fusion) goes through
//! [`top_k`], so all of them share one ordering: score descending, ties
//! broken by ascending item id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub item_id: String,
    pub score: f64,
}

/// A ranked list with non-increasing scores and unique item ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoredList {
    pub entries: Vec<ScoredEntry>,
}

impl ScoredList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.item_id.as_str())
    }

    /// 1-based rank of `item_id`, if present.
    pub fn rank_of(&self, item_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.item_id == item_id)
            .map(|p| p + 1)
    }

    /// Whether `item_id` appears within the first `k` entries.
    pub fn hits(&self, item_id: &str, k: usize) -> bool {
        self.entries.iter().take(k).any(|e| e.item_id == item_id)
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    /// Checks the ordering and uniqueness invariants.
    pub fn is_well_formed(&self) -> bool {
        let sorted = self
            .entries
            .windows(2)
            .all(|w| w[0].score >= w[1].score);
        let mut seen = HashSet::new();
        sorted && self.entries.iter().all(|e| seen.insert(e.item_id.as_str()))
    }
}

/// Ordering used by every ranking: higher score first, then smaller id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_id.cmp(b_id))
}

/// Select the `k` best items from an item-aligned score vector, skipping any
/// id in `exclude`. Returns fewer than `k` entries when the pool runs out.
pub fn top_k<S: AsRef<str>>(
    item_ids: &[S],
    scores: &[f64],
    k: usize,
    exclude: &HashSet<&str>,
) -> ScoredList {
    debug_assert_eq!(item_ids.len(), scores.len());
    let mut candidates: Vec<usize> = (0..item_ids.len())
        .filter(|&i| !exclude.contains(item_ids[i].as_ref()))
        .collect();
    let cmp = |&a: &usize, &b: &usize| {
        rank_order(scores[a], item_ids[a].as_ref(), scores[b], item_ids[b].as_ref())
    };
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k, cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(cmp);
    ScoredList {
        entries: candidates
            .into_iter()
            .map(|i| ScoredEntry {
                item_id: item_ids[i].as_ref().to_owned(),
                score: scores[i],
            })
            .collect(),
    }
}

/// One line of a rankings file: `{"user_id": .., "items": [{"item_id", "score"}, ..]}`.
/// The same layout is used for imported top-N CF lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub user_id: String,
    pub items: Vec<ScoredEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum RankingFileError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("user {0:?} appears twice in rankings file")]
    DuplicateUser(String),
}

/// Write per-user lists, one line per user in ascending user order.
pub fn write_rankings(path: impl AsRef<Path>, ranked: &BTreeMap<String, ScoredList>) -> Result<(), JsonlError> {
    let records: Vec<RankingRecord> = ranked
        .iter()
        .map(|(u, l)| RankingRecord {
            user_id: u.clone(),
            items: l.entries.clone(),
        })
        .collect();
    jsonl::write(path, &records)
}

/// Read a rankings file as written by [`write_rankings`]. Lists are kept in
/// file order.
pub fn read_rankings(path: impl AsRef<Path>) -> Result<BTreeMap<String, ScoredList>, RankingFileError> {
    let mut out = BTreeMap::new();
    for rec in jsonl::read::<RankingRecord>(path)? {
        if out.contains_key(&rec.user_id) {
            return Err(RankingFileError::DuplicateUser(rec.user_id));
        }
        out.insert(rec.user_id, ScoredList { entries: rec.items });
    }
    Ok(out)
}
