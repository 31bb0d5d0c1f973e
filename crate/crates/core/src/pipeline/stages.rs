//! Pure building blocks shared by the pipeline runner and the CLI subcommands.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use crate::cf::CfScores;
use crate::dataset::{Catalog, Interaction, ItemMeta, Phase, SplitDataset};
use crate::embed::VectorMatrix;
use crate::fusion::{fuse_and_rank, FusionConfig, FusionDiagnostics, FusionError};
use crate::querygen::{
    build_item_prompt, build_user_prompt, compose_item_document, compose_user_document,
    metadata_block, metadata_document, queries_only_document, EnrichedDocument, PromptText,
    QueryGenError, QuerySet, UserPromptOptions,
};
use crate::ranking::{top_k, ScoredList};
use crate::vectorstore::{IndexError, ItemIndex};

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("item {item:?} referenced by user {user:?} is not in the catalog")]
    UnknownItem { user: String, item: String },
    #[error("no query set for {0:?}")]
    MissingQueries(String),
    #[error("user {0:?} has no history")]
    EmptyHistory(String),
    #[error("no scores for user {0:?}")]
    MissingScores(String),
    #[error("score table columns do not match the catalog")]
    ColumnMismatch,
    #[error(transparent)]
    QueryGen(#[from] QueryGenError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// How user documents are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserDocKind {
    /// Last-item metadata followed by the user queries.
    Full,
    /// User queries only.
    QueriesOnly,
    /// Last-item metadata only.
    MetadataOnly,
}

/// Check that every interaction refers to a catalog item.
pub fn check_items_known(interactions: &[Interaction], catalog: &Catalog) -> Result<(), StageError> {
    match interactions.iter().find(|it| !catalog.contains(&it.item_id)) {
        Some(it) => Err(StageError::UnknownItem {
            user: it.user_id.clone(),
            item: it.item_id.clone(),
        }),
        None => Ok(()),
    }
}

/// One prompt per catalog item, in catalog order, listing up to `review_cap`
/// of the item's most recent train reviews.
pub fn item_prompts(catalog: &Catalog, split: &SplitDataset, review_cap: usize) -> Vec<(String, PromptText)> {
    let reviews = split.train_reviews_by_item();
    let none = Vec::new();
    catalog
        .items
        .values()
        .map(|m| {
            let r = reviews.get(&m.item_id).unwrap_or(&none);
            (m.item_id.clone(), build_item_prompt(m, r, review_cap))
        })
        .collect()
}

/// Item documents in catalog order; metadata only when `sets` is `None`.
pub fn item_documents(catalog: &Catalog, sets: Option<&[QuerySet]>) -> Result<Vec<EnrichedDocument>, StageError> {
    let Some(sets) = sets else {
        return Ok(catalog.items.values().map(metadata_document).collect());
    };
    let by_id: BTreeMap<&str, &QuerySet> = sets.iter().map(|q| (q.subject_id.as_str(), q)).collect();
    catalog
        .items
        .values()
        .map(|m| {
            let qs = by_id
                .get(m.item_id.as_str())
                .ok_or_else(|| StageError::MissingQueries(m.item_id.clone()))?;
            Ok(compose_item_document(m, qs)?)
        })
        .collect()
}

fn history_meta<'a>(
    catalog: &'a Catalog,
    user: &str,
    history: &[&'a Interaction],
) -> Result<Vec<(&'a ItemMeta, &'a str)>, StageError> {
    history
        .iter()
        .map(|it| {
            catalog
                .get(&it.item_id)
                .map(|m| (m, it.review_text.as_str()))
                .ok_or_else(|| StageError::UnknownItem {
                    user: user.to_owned(),
                    item: it.item_id.clone(),
                })
        })
        .collect()
}

/// One prompt per evaluated user for `phase`. The last history item's
/// document supplies the related queries when `item_docs` has it.
pub fn user_prompts(
    catalog: &Catalog,
    split: &SplitDataset,
    phase: Phase,
    item_docs: Option<&BTreeMap<String, EnrichedDocument>>,
    opts: &UserPromptOptions,
) -> Result<Vec<(String, PromptText)>, StageError> {
    split
        .evaluated_users()
        .map(|(user, _)| {
            let history = split.history(user, phase);
            let entries = history_meta(catalog, user, &history)?;
            let last_doc = history
                .last()
                .and_then(|it| item_docs.and_then(|d| d.get(&it.item_id)));
            let prompt = build_user_prompt(&entries, last_doc, opts)
                .map_err(|_| StageError::EmptyHistory(user.to_owned()))?;
            Ok((user.to_owned(), prompt))
        })
        .collect()
}

/// One document per evaluated user for `phase`.
pub fn user_documents(
    catalog: &Catalog,
    split: &SplitDataset,
    phase: Phase,
    sets: Option<&[QuerySet]>,
    kind: UserDocKind,
) -> Result<Vec<EnrichedDocument>, StageError> {
    let by_id: BTreeMap<&str, &QuerySet> = sets
        .unwrap_or_default()
        .iter()
        .map(|q| (q.subject_id.as_str(), q))
        .collect();
    split
        .evaluated_users()
        .map(|(user, _)| {
            let history = split.history(user, phase);
            let last = history.last().ok_or_else(|| StageError::EmptyHistory(user.to_owned()))?;
            let last_meta = catalog.get(&last.item_id).ok_or_else(|| StageError::UnknownItem {
                user: user.to_owned(),
                item: last.item_id.clone(),
            })?;
            let queries = || {
                by_id
                    .get(user)
                    .copied()
                    .ok_or_else(|| StageError::MissingQueries(user.to_owned()))
            };
            Ok(match kind {
                UserDocKind::Full => compose_user_document(last_meta, queries()?),
                UserDocKind::QueriesOnly => queries_only_document(queries()?),
                UserDocKind::MetadataOnly => EnrichedDocument {
                    subject_id: user.to_owned(),
                    text: metadata_block(last_meta),
                },
            })
        })
        .collect()
}

/// Full-pool cosine scores for every user row, stored as an `f32` table with
/// the index's item ids as columns.
pub fn score_users(index: &ItemIndex, users: &VectorMatrix) -> Result<VectorMatrix, StageError> {
    let rows: Vec<Vec<f64>> = (0..users.len())
        .into_par_iter()
        .map(|r| index.score_all(users.row(r)))
        .collect::<Result<_, _>>()?;
    Ok(VectorMatrix {
        ids: users.ids.clone(),
        dimension: index.len(),
        data: rows.iter().flatten().map(|&x| x as f32).collect(),
        columns: Some(index.item_ids().to_vec()),
    })
}

/// CF scores for every evaluated user as an `f32` table over `item_ids`.
/// Users the source does not know get a constant row, which is neutral under
/// min-max normalization.
pub fn cf_table(cf: &CfScores, users: &[String], item_ids: &[String]) -> VectorMatrix {
    let rows: Vec<Vec<f64>> = users
        .par_iter()
        .map(|u| {
            cf.aligned_scores(u, item_ids).unwrap_or_else(|| {
                log::warn!("no CF scores for user {u:?}; using a constant row");
                vec![0.0; item_ids.len()]
            })
        })
        .collect();
    VectorMatrix {
        ids: users.to_vec(),
        dimension: item_ids.len(),
        data: rows.iter().flatten().map(|&x| x as f32).collect(),
        columns: Some(item_ids.to_vec()),
    }
}

/// Row of a score table widened to `f64`.
pub fn table_row(table: &VectorMatrix, row: usize) -> Vec<f64> {
    table.row(row).iter().map(|&x| x as f64).collect()
}

fn row_lookup(table: &VectorMatrix) -> BTreeMap<&str, usize> {
    table.ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect()
}

/// Items withheld from `user`'s ranking for `phase`: the visible history.
pub fn exclusions<'a>(split: &'a SplitDataset, user: &str, phase: Phase, enabled: bool) -> HashSet<&'a str> {
    if !enabled {
        return HashSet::new();
    }
    split
        .history(user, phase)
        .into_iter()
        .map(|it| it.item_id.as_str())
        .collect()
}

/// Top-`len` list for every evaluated user from a score table.
pub fn rank_table(
    table: &VectorMatrix,
    split: &SplitDataset,
    phase: Phase,
    len: usize,
    exclude_history: bool,
) -> Result<BTreeMap<String, ScoredList>, StageError> {
    let cols = table.columns.as_deref().ok_or(StageError::ColumnMismatch)?;
    let rows = row_lookup(table);
    let users: Vec<&str> = split.evaluated_users().map(|(u, _)| u).collect();
    users
        .par_iter()
        .map(|&u| {
            let r = *rows.get(u).ok_or_else(|| StageError::MissingScores(u.to_owned()))?;
            let ex = exclusions(split, u, phase, exclude_history);
            Ok((u.to_owned(), top_k(cols, &table_row(table, r), len, &ex)))
        })
        .collect()
}

/// Fused top-`fusion.k_eval` list for every evaluated user.
pub fn fuse_tables(
    llm: &VectorMatrix,
    cf: &VectorMatrix,
    split: &SplitDataset,
    phase: Phase,
    fusion: &FusionConfig,
    calibration: Option<&FusionDiagnostics>,
    exclude_history: bool,
) -> Result<BTreeMap<String, ScoredList>, StageError> {
    let cols = llm.columns.as_deref().ok_or(StageError::ColumnMismatch)?;
    if cf.columns.as_deref() != Some(cols) {
        return Err(StageError::ColumnMismatch);
    }
    let (lr, cr) = (row_lookup(llm), row_lookup(cf));
    let users: Vec<&str> = split.evaluated_users().map(|(u, _)| u).collect();
    users
        .par_iter()
        .map(|&u| {
            let a = *lr.get(u).ok_or_else(|| StageError::MissingScores(u.to_owned()))?;
            let b = *cr.get(u).ok_or_else(|| StageError::MissingScores(u.to_owned()))?;
            let ex = exclusions(split, u, phase, exclude_history);
            let (list, _) = fuse_and_rank(
                cols,
                &table_row(llm, a),
                &table_row(cf, b),
                fusion,
                calibration,
                &ex,
            )?;
            Ok((u.to_owned(), list))
        })
        .collect()
}
