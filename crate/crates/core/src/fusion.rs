//! Score fusion of the LLM-retrieval and CF rankings.
//!
//! Per user, both full-pool score vectors are min-max normalized and combined
//! as `λ·s_llm + (1−λ)·s_cf`. In adaptive mode λ is computed once from the
//! validation split: `λ_init = H_llm / (H_llm + H_cf)` from the two Hit@10
//! rates, then pulled toward 0.5 by the Jaccard overlap ω of the two hit sets,
//! `λ = ω·λ_init + (1−ω)·0.5`. Disjoint hit sets therefore give equal
//! weights. Fixed-λ and reciprocal-rank fusion are provided as baselines.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ranking::{rank_order, top_k, ScoredEntry, ScoredList};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("score vectors differ in length: {0} vs {1}")]
    Length(usize, usize),
    #[error("adaptive fusion needs validation rankings for both models; use fixed:<λ> or rrf instead")]
    MissingValidation,
    #[error("λ = {0} is outside [0, 1]")]
    LambdaRange(f64),
    #[error("rrf_k must be positive")]
    RrfK,
    #[error("normalized score {0} escaped [0, 1]")]
    OutOfRange(f64),
    #[error("cannot parse fusion mode {0:?} (expected adaptive, fixed:<λ>, rrf or rrf:<k>)")]
    Parse(String),
}

pub const DEFAULT_RRF_K: u32 = 60;

fn default_rrf_k() -> u32 {
    DEFAULT_RRF_K
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum FusionMode {
    AdaptiveCc,
    FixedCc {
        #[serde(rename = "fixed_lambda")]
        lambda: f64,
    },
    Rrf {
        #[serde(rename = "rrf_k", default = "default_rrf_k")]
        k: u32,
    },
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::AdaptiveCc => write!(f, "adaptive"),
            FusionMode::FixedCc { lambda } => write!(f, "fixed:{lambda}"),
            FusionMode::Rrf { k } => write!(f, "rrf:{k}"),
        }
    }
}

impl FromStr for FusionMode {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FusionError::Parse(s.to_owned());
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("adaptive" | "adaptive_cc", None) => Ok(FusionMode::AdaptiveCc),
            ("fixed" | "fixed_cc", Some(a)) => {
                let lambda: f64 = a.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(FusionError::LambdaRange(lambda));
                }
                Ok(FusionMode::FixedCc { lambda })
            }
            ("rrf", None) => Ok(FusionMode::Rrf { k: DEFAULT_RRF_K }),
            ("rrf", Some(a)) => {
                let k: u32 = a.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(FusionError::RrfK);
                }
                Ok(FusionMode::Rrf { k })
            }
            _ => Err(bad()),
        }
    }
}

fn default_k_eval() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    #[serde(flatten)]
    pub mode: FusionMode,
    /// Length of the fused output list and the cutoff used for hit sets.
    #[serde(default = "default_k_eval")]
    pub k_eval: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::AdaptiveCc,
            k_eval: 10,
        }
    }
}

/// Audit trail of one fusion run. Fields that do not apply to the mode are
/// `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FusionDiagnostics {
    pub mode: String,
    pub lambda_init: Option<f64>,
    pub omega: Option<f64>,
    pub lambda: Option<f64>,
    pub hit10_llm: Option<f64>,
    pub hit10_cf: Option<f64>,
}

/// Map to `[0, 1]` by `(x − min)/(max − min)`. A constant vector maps to 0.5
/// everywhere.
pub fn minmax_normalize(scores: &[f64]) -> Vec<f64> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.5; scores.len()];
    }
    scores.iter().map(|&x| (x - lo) / span).collect()
}

/// Users whose target appears within the first `k` entries of their list.
/// Ranked users without a target are skipped.
pub fn hit_sets(
    ranked: &BTreeMap<String, ScoredList>,
    targets: &BTreeMap<String, String>,
    k: usize,
) -> BTreeSet<String> {
    ranked
        .iter()
        .filter_map(|(user, list)| match targets.get(user) {
            Some(t) => list.hits(t, k).then(|| user.clone()),
            None => {
                log::warn!("user {user:?} has a ranking but no target; skipped");
                None
            }
        })
        .collect()
}

pub fn lambda_init(hit10_llm: f64, hit10_cf: f64) -> f64 {
    let total = hit10_llm + hit10_cf;
    if total == 0.0 {
        0.5
    } else {
        hit10_llm / total
    }
}

/// Jaccard overlap `|A ∩ B| / |A ∪ B|`; 0 when both are empty.
pub fn intersection_ratio(h_llm: &BTreeSet<String>, h_cf: &BTreeSet<String>) -> f64 {
    let inter = h_llm.intersection(h_cf).count();
    let union = h_llm.len() + h_cf.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn adaptive_lambda(lambda_init: f64, omega: f64) -> f64 {
    omega * lambda_init + (1.0 - omega) * 0.5
}

pub fn convex_combine(s_llm: &[f64], s_cf: &[f64], lambda: f64) -> Result<Vec<f64>, FusionError> {
    if s_llm.len() != s_cf.len() {
        return Err(FusionError::Length(s_llm.len(), s_cf.len()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FusionError::LambdaRange(lambda));
    }
    Ok(s_llm
        .iter()
        .zip(s_cf)
        .map(|(&a, &b)| lambda * a + (1.0 - lambda) * b)
        .collect())
}

/// Reciprocal rank fusion: each list contributes `1/(k + rank)` with ranks
/// starting at 1. Output sorted by fused score, ties by ascending id.
pub fn rrf_fuse(list_a: &ScoredList, list_b: &ScoredList, rrf_k: u32) -> ScoredList {
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    for list in [list_a, list_b] {
        for (r, e) in list.entries.iter().enumerate() {
            *acc.entry(e.item_id.as_str()).or_insert(0.0) += 1.0 / (rrf_k as f64 + (r + 1) as f64);
        }
    }
    let mut entries: Vec<ScoredEntry> = acc
        .into_iter()
        .map(|(id, score)| ScoredEntry {
            item_id: id.to_owned(),
            score,
        })
        .collect();
    entries.sort_by(|a, b| rank_order(a.score, &a.item_id, b.score, &b.item_id));
    ScoredList { entries }
}

/// Hit@k-derived global weight from the validation rankings of both models.
///
/// Hit rates are taken over users that have a target and a list from the
/// respective model.
pub fn calibrate(
    llm_valid: &BTreeMap<String, ScoredList>,
    cf_valid: &BTreeMap<String, ScoredList>,
    valid_targets: &BTreeMap<String, String>,
    k: usize,
) -> Result<FusionDiagnostics, FusionError> {
    let rate = |ranked: &BTreeMap<String, ScoredList>, hits: usize| {
        let n = ranked.keys().filter(|u| valid_targets.contains_key(*u)).count();
        (n > 0).then(|| hits as f64 / n as f64)
    };
    let h_llm = hit_sets(llm_valid, valid_targets, k);
    let h_cf = hit_sets(cf_valid, valid_targets, k);
    let (Some(r_llm), Some(r_cf)) = (rate(llm_valid, h_llm.len()), rate(cf_valid, h_cf.len())) else {
        return Err(FusionError::MissingValidation);
    };
    let init = lambda_init(r_llm, r_cf);
    let omega = intersection_ratio(&h_llm, &h_cf);
    Ok(FusionDiagnostics {
        mode: FusionMode::AdaptiveCc.to_string(),
        lambda_init: Some(init),
        omega: Some(omega),
        lambda: Some(adaptive_lambda(init, omega)),
        hit10_llm: Some(r_llm),
        hit10_cf: Some(r_cf),
    })
}

fn check_unit(v: &[f64]) -> Result<(), FusionError> {
    match v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        Some(&x) => Err(FusionError::OutOfRange(x)),
        None => Ok(()),
    }
}

/// Fuse one user's full-pool score vectors and return the top `k_eval`
/// non-excluded items together with the diagnostics that applied.
///
/// Adaptive mode takes λ from `calibration` (see [`calibrate`]) and fails
/// without it.
pub fn fuse_and_rank<S: AsRef<str>>(
    item_ids: &[S],
    llm_scores: &[f64],
    cf_scores: &[f64],
    config: &FusionConfig,
    calibration: Option<&FusionDiagnostics>,
    exclude: &HashSet<&str>,
) -> Result<(ScoredList, FusionDiagnostics), FusionError> {
    if llm_scores.len() != item_ids.len() || cf_scores.len() != item_ids.len() {
        return Err(FusionError::Length(llm_scores.len(), cf_scores.len()));
    }
    let (lambda, diagnostics) = match config.mode {
        FusionMode::AdaptiveCc => {
            let cal = calibration.ok_or(FusionError::MissingValidation)?;
            let lambda = cal.lambda.ok_or(FusionError::MissingValidation)?;
            (Some(lambda), cal.clone())
        }
        FusionMode::FixedCc { lambda } => (
            Some(lambda),
            FusionDiagnostics {
                mode: config.mode.to_string(),
                lambda: Some(lambda),
                ..Default::default()
            },
        ),
        FusionMode::Rrf { .. } => (
            None,
            FusionDiagnostics {
                mode: config.mode.to_string(),
                ..Default::default()
            },
        ),
    };
    let list = match (config.mode, lambda) {
        (FusionMode::Rrf { k }, _) => {
            let full = item_ids.len();
            let a = top_k(item_ids, llm_scores, full, exclude);
            let b = top_k(item_ids, cf_scores, full, exclude);
            rrf_fuse(&a, &b, k).truncated(config.k_eval)
        }
        (_, Some(lambda)) => {
            let n_llm = minmax_normalize(llm_scores);
            let n_cf = minmax_normalize(cf_scores);
            check_unit(&n_llm)?;
            check_unit(&n_cf)?;
            let fused = convex_combine(&n_llm, &n_cf, lambda)?;
            top_k(item_ids, &fused, config.k_eval, exclude)
        }
        (_, None) => unreachable!("convex modes always carry λ"),
    };
    Ok((list, diagnostics))
}
