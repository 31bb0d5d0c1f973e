//! Collaborative-filtering score sources.
//!
//! Trained sequential models live outside this crate; their scores come in
//! through [`import_cf_scores`] either as per-user top-N lists (JSONL) or as a
//! full user × item matrix in the [`VectorMatrix`] layout. Two baselines,
//! item popularity and item co-occurrence, let the pipeline run without any
//! external trainer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::dataset::{Catalog, Phase, SplitDataset};
use crate::embed::{EmbedError, VectorMatrix};
use crate::jsonl::{self, JsonlError};
use crate::ranking::{rank_order, RankingRecord, ScoredList};

#[derive(Debug, thiserror::Error)]
pub enum CfError {
    #[error("unknown item_id {0:?} in CF scores")]
    UnknownItem(String),
    #[error("duplicate (user, item) pair ({0:?}, {1:?}) in CF scores")]
    DuplicatePair(String, String),
    #[error("duplicate user {0:?} in CF scores")]
    DuplicateUser(String),
    #[error("non-finite CF score for ({0:?}, {1:?})")]
    NonFinite(String, String),
    #[error("score matrix has no columns.txt naming its items")]
    MissingColumns,
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Matrix(#[from] EmbedError),
}

/// Item-item co-occurrence counts: number of users whose train sequence
/// contains both items. Symmetric, zero diagonal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Cooccurrence {
    rows: Vec<HashMap<usize, u32>>,
}

impl Cooccurrence {
    pub fn count(&self, a: usize, b: usize) -> u32 {
        self.rows
            .get(a)
            .and_then(|r| r.get(&b))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CfKind {
    /// One score vector shared by every user.
    Shared(Vec<f64>),
    /// A full score vector per user.
    PerUser(BTreeMap<String, Vec<f64>>),
    /// Per-user top-N lists; unlisted items take the list minimum when a
    /// full-pool vector is requested.
    TopN(BTreeMap<String, ScoredList>),
    /// Co-occurrence sums over each user's history, computed on demand.
    Cooccurrence {
        matrix: Cooccurrence,
        histories: BTreeMap<String, Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfScores {
    /// Column order of every full score vector.
    pub item_ids: Vec<String>,
    pub kind: CfKind,
}

impl CfScores {
    /// Full-pool score vector for `user`, aligned with `self.item_ids`.
    pub fn user_scores(&self, user: &str) -> Option<Vec<f64>> {
        match &self.kind {
            CfKind::Shared(v) => Some(v.clone()),
            CfKind::PerUser(m) => m.get(user).cloned(),
            CfKind::TopN(m) => {
                let list = m.get(user)?;
                let pos: HashMap<&str, usize> = self
                    .item_ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (id.as_str(), i))
                    .collect();
                let floor = list
                    .entries
                    .iter()
                    .map(|e| e.score)
                    .fold(f64::INFINITY, f64::min);
                let floor = if floor.is_finite() { floor } else { 0.0 };
                let mut v = vec![floor; self.item_ids.len()];
                for e in &list.entries {
                    if let Some(&i) = pos.get(e.item_id.as_str()) {
                        v[i] = e.score;
                    }
                }
                Some(v)
            }
            CfKind::Cooccurrence { matrix, histories } => {
                let hist = histories.get(user)?;
                let mut v = vec![0.0; self.item_ids.len()];
                for &j in hist {
                    if let Some(row) = matrix.rows.get(j) {
                        for (&i, &c) in row {
                            v[i] += c as f64;
                        }
                    }
                }
                Some(v)
            }
        }
    }

    /// Score vector re-aligned to `pool`. Pool items unknown to this source
    /// get the vector's minimum.
    pub fn aligned_scores(&self, user: &str, pool: &[String]) -> Option<Vec<f64>> {
        let v = self.user_scores(user)?;
        if pool == self.item_ids.as_slice() {
            return Some(v);
        }
        let pos: HashMap<&str, usize> = self
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let floor = v.iter().copied().fold(f64::INFINITY, f64::min);
        let floor = if floor.is_finite() { floor } else { 0.0 };
        Some(
            pool.iter()
                .map(|id| pos.get(id.as_str()).map_or(floor, |&i| v[i]))
                .collect(),
        )
    }

    pub fn users(&self) -> Option<Vec<String>> {
        match &self.kind {
            CfKind::Shared(_) => None,
            CfKind::PerUser(m) => Some(m.keys().cloned().collect()),
            CfKind::TopN(m) => Some(m.keys().cloned().collect()),
            CfKind::Cooccurrence { histories, .. } => Some(histories.keys().cloned().collect()),
        }
    }

    /// Persist. Top-N sources become JSONL; everything else a full matrix
    /// for `users` (all known users when `None`).
    pub fn save(&self, path: impl AsRef<Path>, users: Option<&[String]>) -> Result<(), CfError> {
        let path = path.as_ref();
        if let CfKind::TopN(m) = &self.kind {
            let records: Vec<RankingRecord> = m
                .iter()
                .filter(|(u, _)| users.is_none_or(|us| us.contains(u)))
                .map(|(u, l)| RankingRecord {
                    user_id: u.clone(),
                    items: l.entries.clone(),
                })
                .collect();
            jsonl::write(path, &records)?;
            return Ok(());
        }
        let users: Vec<String> = match users {
            Some(u) => u.to_vec(),
            None => self.users().unwrap_or_default(),
        };
        let mut data = Vec::with_capacity(users.len() * self.item_ids.len());
        let mut ids = Vec::with_capacity(users.len());
        for u in users {
            if let Some(v) = self.user_scores(&u) {
                data.extend(v.iter().map(|&x| x as f32));
                ids.push(u);
            }
        }
        VectorMatrix {
            ids,
            dimension: self.item_ids.len(),
            data,
            columns: Some(self.item_ids.clone()),
        }
        .save(path)?;
        Ok(())
    }
}

/// Load CF scores from a JSONL top-N file or a score-matrix directory.
pub fn import_cf_scores(path: impl AsRef<Path>, catalog: &Catalog) -> Result<CfScores, CfError> {
    let path = path.as_ref();
    if path.is_dir() {
        let m = VectorMatrix::load(path)?;
        let cols = m.columns.clone().ok_or(CfError::MissingColumns)?;
        if let Some(bad) = cols.iter().find(|c| !catalog.contains(c)) {
            return Err(CfError::UnknownItem(bad.clone()));
        }
        let mut seen = HashSet::new();
        for c in &cols {
            if !seen.insert(c.as_str()) {
                return Err(CfError::DuplicatePair("*".into(), c.clone()));
            }
        }
        let mut per_user = BTreeMap::new();
        for (r, user) in m.ids.iter().enumerate() {
            let row: Vec<f64> = m.row(r).iter().map(|&x| x as f64).collect();
            if let Some(i) = row.iter().position(|x| !x.is_finite()) {
                return Err(CfError::NonFinite(user.clone(), cols[i].clone()));
            }
            if per_user.insert(user.clone(), row).is_some() {
                return Err(CfError::DuplicateUser(user.clone()));
            }
        }
        return Ok(CfScores {
            item_ids: cols,
            kind: CfKind::PerUser(per_user),
        });
    }

    let records: Vec<RankingRecord> = jsonl::read(path)?;
    let mut lists = BTreeMap::new();
    for rec in records {
        let mut seen = HashSet::new();
        for e in &rec.items {
            if !catalog.contains(&e.item_id) {
                return Err(CfError::UnknownItem(e.item_id.clone()));
            }
            if !seen.insert(e.item_id.clone()) {
                return Err(CfError::DuplicatePair(rec.user_id.clone(), e.item_id.clone()));
            }
            if !e.score.is_finite() {
                return Err(CfError::NonFinite(rec.user_id.clone(), e.item_id.clone()));
            }
        }
        let mut entries = rec.items;
        entries.sort_by(|a, b| rank_order(a.score, &a.item_id, b.score, &b.item_id));
        if lists
            .insert(rec.user_id.clone(), ScoredList { entries })
            .is_some()
        {
            return Err(CfError::DuplicateUser(rec.user_id));
        }
    }
    Ok(CfScores {
        item_ids: catalog.item_ids(),
        kind: CfKind::TopN(lists),
    })
}

/// Score every item by its train-split frequency; identical for all users.
pub fn popularity_baseline(split: &SplitDataset, item_ids: &[String]) -> CfScores {
    let freq = split.train_frequencies();
    let v = item_ids
        .iter()
        .map(|id| freq.get(id).copied().unwrap_or(0) as f64)
        .collect();
    CfScores {
        item_ids: item_ids.to_vec(),
        kind: CfKind::Shared(v),
    }
}

/// Co-occurrence counts over the distinct items of each user's train sequence.
pub fn cooccurrence_matrix(split: &SplitDataset, item_ids: &[String]) -> Cooccurrence {
    let pos: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rows: Vec<HashMap<usize, u32>> = vec![HashMap::new(); item_ids.len()];
    for s in split.users.values() {
        let set: BTreeSet<usize> = s
            .train
            .iter()
            .filter_map(|it| pos.get(it.item_id.as_str()).copied())
            .collect();
        for &a in &set {
            for &b in &set {
                if a != b {
                    *rows[a].entry(b).or_insert(0) += 1;
                }
            }
        }
    }
    Cooccurrence { rows }
}

/// `score(u, i) = Σ_{j ∈ history(u)} co(j, i)` over the distinct items of the
/// history visible for `phase`. Self-pairs contribute nothing.
pub fn cooccurrence_baseline(split: &SplitDataset, item_ids: &[String], phase: Phase) -> CfScores {
    let matrix = cooccurrence_matrix(split, item_ids);
    let pos: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let histories = split
        .users
        .keys()
        .map(|u| {
            let set: BTreeSet<usize> = split
                .history(u, phase)
                .iter()
                .filter_map(|it| pos.get(it.item_id.as_str()).copied())
                .collect();
            (u.clone(), set.into_iter().collect())
        })
        .collect();
    CfScores {
        item_ids: item_ids.to_vec(),
        kind: CfKind::Cooccurrence { matrix, histories },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Interaction, ItemMeta, UserSplit};

    fn it(u: &str, i: &str) -> Interaction {
        Interaction {
            user_id: u.into(),
            item_id: i.into(),
            rating: 4.0,
            review_text: String::new(),
            timestamp: 0,
        }
    }

    fn split_from(train: &[(&str, &[&str])]) -> SplitDataset {
        SplitDataset {
            users: train
                .iter()
                .map(|(u, items)| {
                    (
                        u.to_string(),
                        UserSplit {
                            train: items.iter().map(|i| it(u, i)).collect(),
                            valid: None,
                            test: None,
                        },
                    )
                })
                .collect(),
        }
    }

    fn catalog(ids: &[&str]) -> Catalog {
        Catalog::from_items(ids.iter().map(|i| ItemMeta {
            item_id: i.to_string(),
            title: i.to_string(),
            brand: "b".into(),
            categories: vec![],
            description: String::new(),
        }))
        .unwrap()
    }

    fn pool(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn popularity_counts_train_frequency() {
        let split = split_from(&[("u1", &["A", "A", "B"]), ("u2", &["A"])]);
        let cf = popularity_baseline(&split, &pool(&["A", "B", "C"]));
        assert_eq!(cf.user_scores("u1").unwrap(), vec![3.0, 1.0, 0.0]);
        assert_eq!(cf.user_scores("anyone").unwrap(), vec![3.0, 1.0, 0.0]);
        assert_eq!(cf.user_scores("u1"), cf.user_scores("u2"));
    }

    #[test]
    fn cooccurrence_hand_enumerated() {
        // u1:{A,B}, u2:{A,C}; querying with history {A}.
        let split = split_from(&[("u1", &["A", "B"]), ("u2", &["A", "C"]), ("q", &["A"])]);
        let cf = cooccurrence_baseline(&split, &pool(&["A", "B", "C"]), Phase::Valid);
        assert_eq!(cf.user_scores("q").unwrap(), vec![0.0, 1.0, 1.0]);
        let empty = split_from(&[("u1", &["A", "B"]), ("e", &[])]);
        let cf = cooccurrence_baseline(&empty, &pool(&["A", "B"]), Phase::Valid);
        assert_eq!(cf.user_scores("e").unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn cooccurrence_ignores_repeats_within_a_user() {
        let split = split_from(&[("u1", &["A", "B", "B", "A"]), ("q", &["A"])]);
        let cf = cooccurrence_baseline(&split, &pool(&["A", "B"]), Phase::Valid);
        assert_eq!(cf.user_scores("q").unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn topn_import_and_fill_rule() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cf.jsonl");
        std::fs::write(
            &p,
            "{\"user_id\":\"u1\",\"items\":[{\"item_id\":\"B\",\"score\":0.5},{\"item_id\":\"A\",\"score\":2.0}]}\n\
             {\"user_id\":\"u2\",\"items\":[{\"item_id\":\"C\",\"score\":1.0}]}\n",
        )
        .unwrap();
        let cat = catalog(&["A", "B", "C"]);
        let cf = import_cf_scores(&p, &cat).unwrap();
        assert_eq!(cf.users().unwrap(), ["u1", "u2"]);
        assert_eq!(cf.user_scores("u1").unwrap(), vec![2.0, 0.5, 0.5]);
        match &cf.kind {
            CfKind::TopN(m) => assert_eq!(m["u1"].item_ids().collect::<Vec<_>>(), ["A", "B"]),
            _ => unreachable!(),
        }
        let out = dir.path().join("again.jsonl");
        cf.save(&out, None).unwrap();
        assert_eq!(import_cf_scores(&out, &cat).unwrap(), cf);
    }

    #[test]
    fn topn_import_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cf.jsonl");
        let cat = catalog(&["A", "B"]);
        std::fs::write(&p, "{\"user_id\":\"u\",\"items\":[{\"item_id\":\"Z\",\"score\":1}]}\n").unwrap();
        assert!(matches!(import_cf_scores(&p, &cat), Err(CfError::UnknownItem(z)) if z == "Z"));
        std::fs::write(
            &p,
            "{\"user_id\":\"u\",\"items\":[{\"item_id\":\"A\",\"score\":1},{\"item_id\":\"A\",\"score\":2}]}\n",
        )
        .unwrap();
        assert!(matches!(import_cf_scores(&p, &cat), Err(CfError::DuplicatePair(..))));
    }

    #[test]
    fn matrix_import_realigns_to_pool() {
        let dir = tempfile::tempdir().unwrap();
        let split = split_from(&[("u1", &["A", "B"]), ("u2", &["B"])]);
        let cf = popularity_baseline(&split, &pool(&["B", "A"]));
        cf.save(dir.path().join("m"), Some(&pool(&["u1", "u2"]))).unwrap();
        let back = import_cf_scores(dir.path().join("m"), &catalog(&["A", "B", "C"])).unwrap();
        assert_eq!(back.user_scores("u2").unwrap(), vec![2.0, 1.0]);
        assert_eq!(
            back.aligned_scores("u2", &pool(&["A", "B", "C"])).unwrap(),
            vec![1.0, 2.0, 1.0]
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_split() -> impl Strategy<Value = SplitDataset> {
            prop::collection::vec(prop::collection::vec(0u8..6, 0..6), 1..8).prop_map(|users| {
                let owned: Vec<(String, Vec<String>)> = users
                    .into_iter()
                    .enumerate()
                    .map(|(u, items)| (format!("u{u}"), items.into_iter().map(|i| format!("i{i}")).collect()))
                    .collect();
                SplitDataset {
                    users: owned
                        .iter()
                        .map(|(u, items)| {
                            (
                                u.clone(),
                                UserSplit {
                                    train: items.iter().map(|i| it(u, i)).collect(),
                                    valid: None,
                                    test: None,
                                },
                            )
                        })
                        .collect(),
                }
            })
        }

        fn all_items() -> Vec<String> {
            (0..6).map(|i| format!("i{i}")).collect()
        }

        proptest! {
            #[test]
            fn cooccurrence_is_symmetric(split in arb_split()) {
                let m = cooccurrence_matrix(&split, &all_items());
                for a in 0..6 {
                    prop_assert_eq!(m.count(a, a), 0);
                    for b in 0..6 {
                        prop_assert_eq!(m.count(a, b), m.count(b, a));
                    }
                }
            }

            #[test]
            fn matrix_roundtrip_lossless_at_f32(
                rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..6)
            ) {
                let items = pool(&["A", "B", "C", "D"]);
                let per_user: BTreeMap<String, Vec<f64>> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (format!("u{i}"), r.iter().map(|&x| x as f32 as f64).collect()))
                    .collect();
                let cf = CfScores { item_ids: items.clone(), kind: CfKind::PerUser(per_user) };
                let dir = tempfile::tempdir().unwrap();
                cf.save(dir.path().join("m"), None).unwrap();
                let back = import_cf_scores(dir.path().join("m"), &catalog(&["A", "B", "C", "D"])).unwrap();
                prop_assert_eq!(back, cf);
            }
        }
    }
}
