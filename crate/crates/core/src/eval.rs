//! Ranking metrics and recommendation-distribution statistics.
//!
//! Evaluated users are those with both a ranked list and a target. Novelty
//! uses the natural log; items unseen in training count as one occurrence.
//! Skewness is the Fisher–Pearson g₁ of per-item recommendation counts over
//! the whole catalog, never-recommended items counting as zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ranking::ScoredList;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no evaluated users (no user has both a ranked list and a target)")]
    NoUsers,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("ranked list for user {0:?} is empty")]
    EmptyList(String),
    #[error("training frequencies sum to zero")]
    NoTrainingMass,
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Ranked = BTreeMap<String, ScoredList>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hr_5: f64,
    pub hr_10: f64,
    pub ndcg_5: f64,
    pub ndcg_10: f64,
    pub mean_novelty_10: f64,
    pub skewness: f64,
    pub n_users: usize,
    /// HR/NDCG at any extra cutoffs, keyed `hr@k` / `ndcg@k`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cutoffs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub a: String,
    pub b: String,
    pub intersection: usize,
    pub union: usize,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlapReport {
    pub pairs: Vec<PairOverlap>,
}

/// Training interaction counts and their total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainFreqs {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl TrainFreqs {
    pub fn new(counts: BTreeMap<String, u64>) -> Self {
        let total = counts.values().sum();
        Self { counts, total }
    }
}

fn ranks<'a>(
    ranked: &'a Ranked,
    targets: &'a BTreeMap<String, String>,
) -> Result<Vec<Option<usize>>, EvalError> {
    let out: Vec<Option<usize>> = ranked
        .par_iter()
        .filter_map(|(u, list)| targets.get(u).map(|t| list.rank_of(t)))
        .collect();
    if out.is_empty() {
        return Err(EvalError::NoUsers);
    }
    Ok(out)
}

pub fn hit_rate_at_k(
    ranked: &Ranked,
    targets: &BTreeMap<String, String>,
    k: usize,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let r = ranks(ranked, targets)?;
    let hits = r.iter().filter(|x| matches!(x, Some(p) if *p <= k)).count();
    Ok(hits as f64 / r.len() as f64)
}

pub fn ndcg_at_k(
    ranked: &Ranked,
    targets: &BTreeMap<String, String>,
    k: usize,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let r = ranks(ranked, targets)?;
    let sum: f64 = r
        .iter()
        .map(|x| match x {
            Some(p) if *p <= k => 1.0 / ((*p + 1) as f64).log2(),
            _ => 0.0,
        })
        .sum();
    Ok(sum / r.len() as f64)
}

/// `−ln(freq / total)`, with a frequency of 0 treated as 1.
pub fn novelty_of_item(item_id: &str, freqs: &TrainFreqs) -> Result<f64, EvalError> {
    if freqs.total == 0 {
        return Err(EvalError::NoTrainingMass);
    }
    let f = freqs.counts.get(item_id).copied().unwrap_or(0).max(1);
    Ok(-(f as f64 / freqs.total as f64).ln())
}

pub fn mean_novelty_at_k(ranked: &Ranked, freqs: &TrainFreqs, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if ranked.is_empty() {
        return Err(EvalError::NoUsers);
    }
    let per_user = ranked
        .iter()
        .map(|(u, list)| {
            let top = &list.entries[..list.len().min(k)];
            if top.is_empty() {
                return Err(EvalError::EmptyList(u.clone()));
            }
            let mut s = 0.0;
            for e in top {
                s += novelty_of_item(&e.item_id, freqs)?;
            }
            Ok(s / top.len() as f64)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(per_user.iter().sum::<f64>() / per_user.len() as f64)
}

/// Appearances of each item within the first `k` entries of every list.
pub fn item_distribution(ranked: &Ranked, k: usize) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for list in ranked.values() {
        for id in list.item_ids().take(k) {
            *counts.entry(id.to_owned()).or_insert(0) += 1;
        }
    }
    counts
}

/// Fisher–Pearson g₁ = m₃ / m₂^{3/2}; 0 when all counts are equal.
pub fn skewness_of_counts(counts: &[f64]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let m2 = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    let m3 = counts.iter().map(|c| (c - mean).powi(3)).sum::<f64>() / n;
    if m2 <= 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Skewness of the top-`k` recommendation counts over `catalog_items`.
/// Recommended items absent from `catalog_items` are still counted.
pub fn recommendation_skewness(ranked: &Ranked, catalog_items: &[String], k: usize) -> f64 {
    let mut dist = item_distribution(ranked, k);
    let mut counts: Vec<f64> = catalog_items
        .iter()
        .map(|id| dist.remove(id).unwrap_or(0) as f64)
        .collect();
    counts.extend(dist.values().map(|&c| c as f64));
    skewness_of_counts(&counts)
}

/// Pairwise Jaccard overlap of per-method hit sets, pairs in name order.
pub fn overlap_report(hit_sets: &BTreeMap<String, BTreeSet<String>>) -> OverlapReport {
    let names: Vec<&String> = hit_sets.keys().collect();
    let mut pairs = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let (sa, sb) = (&hit_sets[*a], &hit_sets[*b]);
            let inter = sa.intersection(sb).count();
            let union = sa.len() + sb.len() - inter;
            pairs.push(PairOverlap {
                a: (*a).clone(),
                b: (*b).clone(),
                intersection: inter,
                union,
                jaccard: if union == 0 { 0.0 } else { inter as f64 / union as f64 },
            });
        }
    }
    OverlapReport { pairs }
}

/// Full report at k ∈ {5, 10} plus any `extra_ks`.
pub fn evaluate(
    ranked: &Ranked,
    targets: &BTreeMap<String, String>,
    freqs: &TrainFreqs,
    catalog_items: &[String],
    extra_ks: &[usize],
) -> Result<MetricsReport, EvalError> {
    let n_users = ranks(ranked, targets)?.len();
    let mut cutoffs = BTreeMap::new();
    for &k in extra_ks.iter().filter(|k| **k != 5 && **k != 10) {
        cutoffs.insert(format!("hr@{k}"), hit_rate_at_k(ranked, targets, k)?);
        cutoffs.insert(format!("ndcg@{k}"), ndcg_at_k(ranked, targets, k)?);
    }
    Ok(MetricsReport {
        hr_5: hit_rate_at_k(ranked, targets, 5)?,
        hr_10: hit_rate_at_k(ranked, targets, 10)?,
        ndcg_5: ndcg_at_k(ranked, targets, 5)?,
        ndcg_10: ndcg_at_k(ranked, targets, 10)?,
        mean_novelty_10: mean_novelty_at_k(ranked, freqs, 10)?,
        skewness: recommendation_skewness(ranked, catalog_items, 10),
        n_users,
        cutoffs,
    })
}

/// Aligned plain-text table, one row per named report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "# novelty = -ln(train_freq / train_total), unseen items counted once");
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>10}  {:>9}  {:>7}",
        "run", "HR@5", "HR@10", "NDCG@5", "NDCG@10", "Novelty@10", "Skewness", "Users"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>10.4}  {:>9.4}  {:>7}",
            name, r.hr_5, r.hr_10, r.ndcg_5, r.ndcg_10, r.mean_novelty_10, r.skewness, r.n_users
        );
    }
    out
}

/// `item_id,count` CSV, most-recommended first, ties by id.
pub fn write_histogram_csv(
    path: impl AsRef<Path>,
    dist: &BTreeMap<String, usize>,
) -> Result<(), EvalError> {
    let path = path.as_ref();
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut rows: Vec<(&String, &usize)> = dist.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "item_id,count").map_err(io)?;
    for (id, c) in rows {
        writeln!(f, "{id},{c}").map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::ScoredEntry;

    fn list(ids: &[&str]) -> ScoredList {
        ScoredList {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| ScoredEntry {
                    item_id: id.to_string(),
                    score: 100.0 - i as f64,
                })
                .collect(),
        }
    }

    fn ranked(rows: &[(&str, &[&str])]) -> Ranked {
        rows.iter().map(|(u, ids)| (u.to_string(), list(ids))).collect()
    }

    fn targets(rows: &[(&str, &str)]) -> BTreeMap<String, String> {
        rows.iter().map(|(u, t)| (u.to_string(), t.to_string())).collect()
    }

    fn ten_with(target_rank: usize) -> Vec<String> {
        (1..=12)
            .map(|r| if r == target_rank { "T".into() } else { format!("x{r}") })
            .collect()
    }

    #[test]
    fn hit_rate_examples() {
        let r = ranked(&[("u1", &["A", "B"]), ("u2", &["C", "D"])]);
        assert_eq!(hit_rate_at_k(&r, &targets(&[("u1", "A"), ("u2", "Z")]), 10).unwrap(), 0.5);
        assert_eq!(hit_rate_at_k(&r, &targets(&[("u1", "A"), ("u2", "C")]), 10).unwrap(), 1.0);
        assert_eq!(hit_rate_at_k(&r, &targets(&[("u1", "B")]), 1).unwrap(), 0.0);
        assert!(matches!(hit_rate_at_k(&r, &targets(&[]), 5), Err(EvalError::NoUsers)));
        assert!(matches!(hit_rate_at_k(&r, &targets(&[("u1", "A")]), 0), Err(EvalError::ZeroK)));
    }

    #[test]
    fn ndcg_examples() {
        let t = targets(&[("u", "T")]);
        let at = |rank: usize| {
            let ids = ten_with(rank);
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            ndcg_at_k(&ranked(&[("u", &refs)]), &t, 10).unwrap()
        };
        assert_eq!(at(1), 1.0);
        assert_eq!(at(3), 0.5);
        assert_eq!(at(11), 0.0);
    }

    #[test]
    fn novelty_examples() {
        let f = TrainFreqs::new([("A".to_string(), 10), ("B".to_string(), 90)].into());
        assert!((novelty_of_item("A", &f).unwrap() - 10f64.ln()).abs() < 1e-12);
        let whole = TrainFreqs::new([("A".to_string(), 5)].into());
        assert_eq!(novelty_of_item("A", &whole).unwrap(), 0.0);
        assert!(novelty_of_item("A", &f).unwrap() > novelty_of_item("B", &f).unwrap());
        // unseen item behaves like a frequency of one
        assert_eq!(novelty_of_item("Z", &f).unwrap(), -(1.0f64 / 100.0).ln());
        assert!(novelty_of_item("A", &TrainFreqs::default()).is_err());
    }

    #[test]
    fn mean_novelty_examples() {
        let uniform = TrainFreqs::new((0..4).map(|i| (format!("i{i}"), 3)).collect());
        let r = ranked(&[("u1", &["i0", "i1"]), ("u2", &["i3"])]);
        assert!((mean_novelty_at_k(&r, &uniform, 10).unwrap() - 4.0f64.ln()).abs() < 1e-12);

        let f = TrainFreqs::new([("A".to_string(), 6), ("B".to_string(), 3), ("C".to_string(), 1)].into());
        let r = ranked(&[("u1", &["A", "B"]), ("u2", &["C"])]);
        let hand = ((-(0.6f64).ln() - (0.3f64).ln()) / 2.0 + -(0.1f64).ln()) / 2.0;
        assert!((mean_novelty_at_k(&r, &f, 10).unwrap() - hand).abs() < 1e-12);

        let popular = ranked(&[("u1", &["A"]), ("u2", &["A"])]);
        assert!(mean_novelty_at_k(&popular, &f, 10).unwrap() <= mean_novelty_at_k(&r, &f, 10).unwrap());
        assert!(matches!(
            mean_novelty_at_k(&ranked(&[("u", &[])]), &f, 10),
            Err(EvalError::EmptyList(_))
        ));
    }

    #[test]
    fn skewness_examples() {
        assert_eq!(skewness_of_counts(&[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(skewness_of_counts(&[4.0, 4.0, 4.0]), 0.0);
        assert!((skewness_of_counts(&[1.0, 1.0, 10.0]) - 54.0 / 18f64.powf(1.5)).abs() < 1e-12);
        assert!((skewness_of_counts(&[1.0, 1.0, 10.0]) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn skewness_counts_unrecommended_catalog_items() {
        let r = ranked(&[("u1", &["A"]), ("u2", &["A"])]);
        let cat: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        // counts (2, 0, 0)
        assert!((recommendation_skewness(&r, &cat, 10) - skewness_of_counts(&[2.0, 0.0, 0.0])).abs() < 1e-15);
    }

    #[test]
    fn overlap_examples() {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        let m: BTreeMap<String, BTreeSet<String>> = [
            ("a".to_string(), s(&["u1", "u2"])),
            ("b".to_string(), s(&["u2", "u3"])),
            ("c".to_string(), s(&["u1", "u2"])),
            ("d".to_string(), s(&["u9"])),
        ]
        .into();
        let r = overlap_report(&m);
        let get = |a: &str, b: &str| r.pairs.iter().find(|p| p.a == a && p.b == b).unwrap().jaccard;
        assert!((get("a", "b") - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(get("a", "c"), 1.0);
        assert_eq!(get("a", "d"), 0.0);
        assert_eq!(r.pairs.len(), 6);
    }

    #[test]
    fn distribution_examples() {
        let r = ranked(&[("u1", &["A", "B"]), ("u2", &["C", "A"])]);
        assert_eq!(item_distribution(&r, 10)["A"], 2);
        assert_eq!(item_distribution(&r, 1).values().sum::<usize>(), 2);
        assert!(item_distribution(&Ranked::new(), 10).is_empty());
    }

    #[test]
    fn histogram_and_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let dist: BTreeMap<String, usize> = [("B".to_string(), 1), ("A".to_string(), 3), ("C".to_string(), 1)].into();
        write_histogram_csv(&p, &dist).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "item_id,count\nA,3\nB,1\nC,1\n");
        let rep = MetricsReport {
            hr_5: 0.1,
            hr_10: 0.2,
            ndcg_5: 0.05,
            ndcg_10: 0.08,
            mean_novelty_10: 4.0,
            skewness: 1.5,
            n_users: 50,
            cutoffs: BTreeMap::new(),
        };
        let t = format_table(&[("fused".into(), rep)]);
        assert!(t.contains("-ln"));
        assert!(t.lines().nth(2).unwrap().starts_with("fused"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_case() -> impl Strategy<Value = (Ranked, BTreeMap<String, String>)> {
            prop::collection::vec((prop::collection::vec(0u8..30, 0..20), 0u8..30), 1..12).prop_map(|rows| {
                let mut r = Ranked::new();
                let mut t = BTreeMap::new();
                for (u, (items, target)) in rows.into_iter().enumerate() {
                    let mut seen = BTreeSet::new();
                    let ids: Vec<String> = items
                        .into_iter()
                        .filter(|i| seen.insert(*i))
                        .map(|i| format!("i{i}"))
                        .collect();
                    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
                    r.insert(format!("u{u}"), list(&refs));
                    t.insert(format!("u{u}"), format!("i{target}"));
                }
                (r, t)
            })
        }

        proptest! {
            #[test]
            fn metrics_monotone_and_bounded((r, t) in arb_case(), k in 1usize..15) {
                let hr = hit_rate_at_k(&r, &t, k).unwrap();
                let hr2 = hit_rate_at_k(&r, &t, k + 1).unwrap();
                let nd = ndcg_at_k(&r, &t, k).unwrap();
                let nd2 = ndcg_at_k(&r, &t, k + 1).unwrap();
                prop_assert!(hr <= hr2 && nd <= nd2);
                prop_assert!(nd <= hr + 1e-15);
                prop_assert!((0.0..=1.0).contains(&hr));
            }

            #[test]
            fn permuting_below_target_changes_nothing((mut r, t) in arb_case(), k in 1usize..15) {
                let hr = hit_rate_at_k(&r, &t, k).unwrap();
                let nd = ndcg_at_k(&r, &t, k).unwrap();
                for (u, list) in r.iter_mut() {
                    let cut = list.rank_of(&t[u]).unwrap_or(0);
                    list.entries[cut..].reverse();
                }
                prop_assert_eq!(hit_rate_at_k(&r, &t, k).unwrap(), hr);
                prop_assert_eq!(ndcg_at_k(&r, &t, k).unwrap(), nd);
            }

            #[test]
            fn skewness_relabel_invariant((r, _t) in arb_case(), shift in 1u8..50) {
                let catalog: Vec<String> = (0..30).map(|i| format!("i{i}")).collect();
                let relabel = |id: &str| format!("r{}", (id[1..].parse::<u32>().unwrap() + shift as u32) % 30);
                let r2: Ranked = r.iter().map(|(u, l)| (u.clone(), ScoredList {
                    entries: l.entries.iter().map(|e| ScoredEntry { item_id: relabel(&e.item_id), score: e.score }).collect(),
                })).collect();
                let cat2: Vec<String> = catalog.iter().map(|c| relabel(c)).collect();
                let a = recommendation_skewness(&r, &catalog, 10);
                let b = recommendation_skewness(&r2, &cat2, 10);
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn distribution_mass((r, _t) in arb_case(), k in 1usize..10) {
                let total: usize = item_distribution(&r, k).values().sum();
                let expect: usize = r.values().map(|l| l.len().min(k)).sum();
                prop_assert_eq!(total, expect);
            }
        }
    }
}
