//! Interaction logs, item metadata and the leave-one-out split.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}:{line}: {reason}")]
    Invalid {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate item_id {0:?} in catalog")]
    DuplicateItem(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One user-item event. The aliases accept the field names of the public
/// Amazon review dumps as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    #[serde(alias = "reviewerID")]
    pub user_id: String,
    #[serde(alias = "asin")]
    pub item_id: String,
    #[serde(alias = "overall")]
    pub rating: f64,
    #[serde(rename = "review", alias = "reviewText", default)]
    pub review_text: String,
    #[serde(alias = "unixReviewTime")]
    pub timestamp: u64,
}

impl Interaction {
    fn validate(&self) -> Result<(), String> {
        if self.user_id.is_empty() {
            return Err("empty user_id".into());
        }
        if self.item_id.is_empty() {
            return Err("empty item_id".into());
        }
        if !(1.0..=5.0).contains(&self.rating) {
            return Err(format!("rating {} outside [1, 5]", self.rating));
        }
        Ok(())
    }
}

fn unknown_brand() -> String {
    "Unknown".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: String,
    pub title: String,
    #[serde(default = "unknown_brand")]
    pub brand: String,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub description: String,
}

/// Item metadata keyed by id. Iteration order is ascending item id, which is
/// also the row order of every item index built from it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub items: BTreeMap<String, ItemMeta>,
}

impl Catalog {
    pub fn from_items(items: impl IntoIterator<Item = ItemMeta>) -> Result<Self, DatasetError> {
        let mut map = BTreeMap::new();
        for meta in items {
            if map.contains_key(&meta.item_id) {
                return Err(DatasetError::DuplicateItem(meta.item_id));
            }
            map.insert(meta.item_id.clone(), meta);
        }
        Ok(Self { items: map })
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemMeta> {
        self.items.get(item_id)
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.items.contains_key(item_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_ids(&self) -> Vec<String> {
        self.items.keys().cloned().collect()
    }
}

/// Load line-delimited interaction records, in file order.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>, DatasetError> {
    let path = path.as_ref();
    let records: Vec<Interaction> = jsonl::read(path)?;
    for (idx, r) in records.iter().enumerate() {
        // Record positions equal line numbers only without blank lines; find
        // the real line for the message.
        r.validate().map_err(|reason| DatasetError::Invalid {
            path: path.to_owned(),
            line: nth_record_line(path, idx),
            reason,
        })?;
    }
    Ok(records)
}

fn nth_record_line(path: &Path, idx: usize) -> usize {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|text| {
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .nth(idx)
                .map(|(i, _)| i + 1)
        })
        .unwrap_or(idx + 1)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog, DatasetError> {
    let path = path.as_ref();
    let records: Vec<ItemMeta> = jsonl::read(path)?;
    for (idx, m) in records.iter().enumerate() {
        if m.item_id.is_empty() || m.title.trim().is_empty() {
            return Err(DatasetError::Invalid {
                path: path.to_owned(),
                line: nth_record_line(path, idx),
                reason: "item_id and title must be non-empty".into(),
            });
        }
    }
    Catalog::from_items(records)
}

/// One user's chronological history cut into train / validation / test.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserSplit {
    pub train: Vec<Interaction>,
    pub valid: Option<Interaction>,
    pub test: Option<Interaction>,
}

impl UserSplit {
    pub fn has_targets(&self) -> bool {
        self.valid.is_some() && self.test.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitDataset {
    pub users: BTreeMap<String, UserSplit>,
}

/// Which held-out target a ranking is evaluated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Valid,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Valid => "valid",
            Phase::Test => "test",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "valid" | "validation" => Ok(Phase::Valid),
            "test" => Ok(Phase::Test),
            other => Err(format!("unknown phase {other:?} (expected valid or test)")),
        }
    }
}

impl SplitDataset {
    /// Users that have both targets, ascending by id.
    pub fn evaluated_users(&self) -> impl Iterator<Item = (&str, &UserSplit)> {
        self.users
            .iter()
            .filter(|(_, s)| s.has_targets())
            .map(|(u, s)| (u.as_str(), s))
    }

    pub fn valid_targets(&self) -> BTreeMap<String, String> {
        self.targets(Phase::Valid)
    }

    pub fn test_targets(&self) -> BTreeMap<String, String> {
        self.targets(Phase::Test)
    }

    pub fn targets(&self, phase: Phase) -> BTreeMap<String, String> {
        self.evaluated_users()
            .filter_map(|(u, s)| {
                let t = match phase {
                    Phase::Valid => s.valid.as_ref(),
                    Phase::Test => s.test.as_ref(),
                }?;
                Some((u.to_owned(), t.item_id.clone()))
            })
            .collect()
    }

    /// The history visible when predicting `phase`'s target: the train slice,
    /// plus the validation target when predicting the test target.
    pub fn history(&self, user_id: &str, phase: Phase) -> Vec<&Interaction> {
        let Some(s) = self.users.get(user_id) else {
            return Vec::new();
        };
        let mut h: Vec<&Interaction> = s.train.iter().collect();
        if phase == Phase::Test {
            h.extend(s.valid.as_ref());
        }
        h
    }

    /// Item frequencies over all train sequences, counting repeats.
    pub fn train_frequencies(&self) -> BTreeMap<String, u64> {
        let mut freq = BTreeMap::new();
        for s in self.users.values() {
            for it in &s.train {
                *freq.entry(it.item_id.clone()).or_insert(0) += 1;
            }
        }
        freq
    }

    /// Reviews written for each item in the train split, oldest first.
    /// Users are visited in ascending id order and the per-item lists are
    /// stable-sorted by timestamp.
    pub fn train_reviews_by_item(&self) -> BTreeMap<String, Vec<String>> {
        let mut by_item: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
        for s in self.users.values() {
            for it in &s.train {
                if it.review_text.trim().is_empty() {
                    continue;
                }
                by_item
                    .entry(it.item_id.clone())
                    .or_default()
                    .push((it.timestamp, it.review_text.clone()));
            }
        }
        by_item
            .into_iter()
            .map(|(item, mut v)| {
                v.sort_by_key(|(ts, _)| *ts);
                (item, v.into_iter().map(|(_, r)| r).collect())
            })
            .collect()
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let users = self.users.values();
        jsonl::write(dir.join("train.jsonl"), users.clone().flat_map(|s| s.train.iter()))?;
        jsonl::write(dir.join("valid.jsonl"), users.clone().filter_map(|s| s.valid.as_ref()))?;
        jsonl::write(dir.join("test.jsonl"), users.filter_map(|s| s.test.as_ref()))?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let mut users: BTreeMap<String, UserSplit> = BTreeMap::new();
        for it in load_interactions(dir.join("train.jsonl"))? {
            users.entry(it.user_id.clone()).or_default().train.push(it);
        }
        for it in load_interactions(dir.join("valid.jsonl"))? {
            let user = it.user_id.clone();
            users.entry(user).or_default().valid = Some(it);
        }
        for it in load_interactions(dir.join("test.jsonl"))? {
            let user = it.user_id.clone();
            users.entry(user).or_default().test = Some(it);
        }
        Ok(Self { users })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Users with fewer interactions keep everything in train and get no
    /// targets. Values below 3 are raised to 3 so evaluated users always have
    /// a non-empty train history.
    pub min_len: usize,
    /// Drop repeated (user, item) events, keeping the earliest.
    pub dedup: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            min_len: 3,
            dedup: false,
        }
    }
}

/// Chronological leave-one-out split. Timestamp ties keep file order.
pub fn leave_one_out_split(interactions: &[Interaction], opts: SplitOptions) -> SplitDataset {
    let mut per_user: BTreeMap<&str, Vec<&Interaction>> = BTreeMap::new();
    for it in interactions {
        per_user.entry(it.user_id.as_str()).or_default().push(it);
    }
    let min_len = opts.min_len.max(3);
    let users = per_user
        .into_iter()
        .map(|(user, mut seq)| {
            seq.sort_by_key(|it| it.timestamp);
            if opts.dedup {
                let mut seen = HashSet::new();
                seq.retain(|it| seen.insert(it.item_id.as_str()));
            }
            let mut seq: Vec<Interaction> = seq.into_iter().cloned().collect();
            let split = if seq.len() < min_len {
                UserSplit {
                    train: seq,
                    ..Default::default()
                }
            } else {
                let test = seq.pop();
                let valid = seq.pop();
                UserSplit {
                    train: seq,
                    valid,
                    test,
                }
            };
            (user.to_owned(), split)
        })
        .collect();
    SplitDataset { users }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_reviews: usize,
    pub density_pct: f64,
}

pub fn dataset_stats(interactions: &[Interaction]) -> DatasetStats {
    let users: HashSet<&str> = interactions.iter().map(|i| i.user_id.as_str()).collect();
    let items: HashSet<&str> = interactions.iter().map(|i| i.item_id.as_str()).collect();
    let n_reviews = interactions.len();
    let cells = users.len() as f64 * items.len() as f64;
    let density_pct = if cells > 0.0 {
        100.0 * n_reviews as f64 / cells
    } else {
        0.0
    };
    DatasetStats {
        n_users: users.len(),
        n_items: items.len(),
        n_reviews,
        density_pct,
    }
}
