//! LLM query generation and enriched-document composition.
//!
//! Items get a document `metadata ⊕ item queries`; users get
//! `last-item metadata ⊕ user queries`. The concatenation is newline-joined
//! with the metadata block first.

pub mod client;
pub mod mock;
pub mod prompt;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ItemMeta;
use crate::jsonl::{self, JsonlError};

pub use client::{
    generate_query_set, generate_query_sets, ChatBackend, HttpChat, LlmClientConfig, LlmError,
};
pub use mock::MockChat;
pub use prompt::{build_item_prompt, build_user_prompt, PromptText, UserPromptOptions};

/// Queries kept per subject.
pub const MAX_QUERIES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum QueryGenError {
    #[error("user history is empty; nothing to build a user prompt from")]
    EmptyHistory,
    #[error("query set belongs to {queries:?} but metadata is for {item:?}")]
    SubjectMismatch { item: String, queries: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Cache(#[from] JsonlError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub subject_id: String,
    pub queries: Vec<String>,
    #[serde(rename = "raw", default)]
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedDocument {
    pub subject_id: String,
    pub text: String,
}

const META_PREFIXES: [&str; 4] = ["Title: ", "Brand: ", "Categories: ", "Description: "];

impl EnrichedDocument {
    /// The query lines that follow the metadata block.
    pub fn query_lines(&self) -> impl Iterator<Item = &str> {
        let lines: Vec<&str> = self.text.lines().collect();
        let has_meta = lines.len() >= META_PREFIXES.len()
            && lines
                .iter()
                .zip(META_PREFIXES)
                .all(|(l, p)| l.starts_with(p));
        let skip = if has_meta { META_PREFIXES.len() } else { 0 };
        lines.into_iter().skip(skip).filter(|l| !l.trim().is_empty())
    }
}

/// The four-line metadata block used in every document.
pub fn metadata_block(meta: &ItemMeta) -> String {
    use prompt::one_line;
    format!(
        "Title: {}\nBrand: {}\nCategories: {}\nDescription: {}",
        one_line(&meta.title),
        one_line(&meta.brand),
        meta.categories
            .iter()
            .map(|c| one_line(c))
            .collect::<Vec<_>>()
            .join(", "),
        one_line(&meta.description),
    )
}

fn join_document(meta: Option<&ItemMeta>, queries: &[String]) -> String {
    let mut parts: Vec<String> = Vec::with_capacity(queries.len() + 1);
    if let Some(m) = meta {
        parts.push(metadata_block(m));
    }
    parts.extend(queries.iter().map(|q| prompt::one_line(q)));
    parts.join("\n")
}

/// `d_i = m_i ⊕ q_i`.
pub fn compose_item_document(
    meta: &ItemMeta,
    qs: &QuerySet,
) -> Result<EnrichedDocument, QueryGenError> {
    if qs.subject_id != meta.item_id {
        return Err(QueryGenError::SubjectMismatch {
            item: meta.item_id.clone(),
            queries: qs.subject_id.clone(),
        });
    }
    Ok(EnrichedDocument {
        subject_id: meta.item_id.clone(),
        text: join_document(Some(meta), &qs.queries),
    })
}

/// Metadata-only item document, used when item query expansion is disabled.
pub fn metadata_document(meta: &ItemMeta) -> EnrichedDocument {
    EnrichedDocument {
        subject_id: meta.item_id.clone(),
        text: join_document(Some(meta), &[]),
    }
}

/// `d_u = m_l ⊕ q_u`, one unified text for the user.
pub fn compose_user_document(last_meta: &ItemMeta, qs: &QuerySet) -> EnrichedDocument {
    EnrichedDocument {
        subject_id: qs.subject_id.clone(),
        text: join_document(Some(last_meta), &qs.queries),
    }
}

/// User document without the last-item metadata prefix.
pub fn queries_only_document(qs: &QuerySet) -> EnrichedDocument {
    EnrichedDocument {
        subject_id: qs.subject_id.clone(),
        text: join_document(None, &qs.queries),
    }
}

/// Strip list numbering, bullets, bold markers and wrapping quotes.
fn clean_line(line: &str) -> Option<String> {
    let mut t = line.trim();
    if t.is_empty() || t.starts_with('#') {
        return None;
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            t = r.trim_start();
        }
    } else if let Some(r) = t.strip_prefix(['-', '*', '•']) {
        if r.starts_with(char::is_whitespace) {
            t = r.trim_start();
        }
    }
    let t = t.trim_matches('*').trim().trim_matches('"').trim();
    (!t.is_empty()).then(|| t.to_owned())
}

/// Parse a raw completion into at most [`MAX_QUERIES`] clean query lines.
pub fn parse_queries(raw: &str) -> Vec<String> {
    raw.lines().filter_map(clean_line).take(MAX_QUERIES).collect()
}

pub fn write_cache(path: impl AsRef<Path>, sets: &[QuerySet]) -> Result<(), QueryGenError> {
    Ok(jsonl::write(path, sets)?)
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Vec<QuerySet>, QueryGenError> {
    Ok(jsonl::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, title: &str) -> ItemMeta {
        ItemMeta {
            item_id: id.into(),
            title: title.into(),
            brand: "B".into(),
            categories: vec!["C1".into(), "C2".into()],
            description: "D".into(),
        }
    }

    fn qs(id: &str, qs: &[&str]) -> QuerySet {
        QuerySet {
            subject_id: id.into(),
            queries: qs.iter().map(|s| s.to_string()).collect(),
            raw_response: "raw".into(),
        }
    }

    #[test]
    fn parse_strips_markup() {
        let raw = "Here you go\n\n1. **\"Radica 20Q game\"**\n2) second one\n- bullet\n* star\n**bold**\n### heading\n   \n10. ten";
        assert_eq!(
            parse_queries(raw),
            ["Here you go", "Radica 20Q game", "second one", "bullet", "star", "bold", "ten"]
        );
        assert!(parse_queries("### sorry").is_empty());
        assert_eq!(parse_queries("20Q toy"), ["20Q toy"]);
    }

    #[test]
    fn item_document_orders_metadata_first() {
        let d = compose_item_document(&meta("i", "T"), &qs("i", &["q"])).unwrap();
        assert!(d.text.find("T").unwrap() < d.text.find("\nq").unwrap());
        assert_eq!(d.text, "Title: T\nBrand: B\nCategories: C1, C2\nDescription: D\nq");
    }

    #[test]
    fn item_document_contains_each_query_once() {
        let queries: Vec<String> = (1..=10).map(|i| format!("query number {i}")).collect();
        let set = QuerySet {
            subject_id: "i".into(),
            queries: queries.clone(),
            raw_response: String::new(),
        };
        let d = compose_item_document(&meta("i", "T"), &set).unwrap();
        for q in &queries {
            assert_eq!(d.text.lines().filter(|l| l == q).count(), 1);
        }
        assert_eq!(d.query_lines().count(), 10);
    }

    #[test]
    fn item_document_id_mismatch() {
        assert!(matches!(
            compose_item_document(&meta("i", "T"), &qs("j", &["q"])),
            Err(QueryGenError::SubjectMismatch { .. })
        ));
    }

    #[test]
    fn user_document_starts_with_last_item() {
        let queries: Vec<String> = (1..=10).map(|i| format!("uq{i}")).collect();
        let set = QuerySet {
            subject_id: "u1".into(),
            queries,
            raw_response: String::new(),
        };
        let d = compose_user_document(&meta("k", "Kettlebell Set"), &set);
        assert!(d.text.starts_with("Title: Kettlebell Set\n"));
        assert_eq!(d.subject_id, "u1");
        assert_eq!(d.query_lines().count(), 10);
        let other = compose_user_document(&meta("y", "Yoga Mat"), &set);
        assert_ne!(d.text, other.text);
    }

    #[test]
    fn metadata_only_and_queries_only_documents() {
        let m = metadata_document(&meta("i", "T"));
        assert_eq!(m.query_lines().count(), 0);
        let q = queries_only_document(&qs("u", &["a", "b"]));
        assert_eq!(q.text, "a\nb");
        assert_eq!(q.query_lines().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn cache_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.jsonl");
        let sets = vec![qs("a", &["1"]), qs("b", &["2", "3"]), qs("c", &["x"])];
        write_cache(&p, &sets).unwrap();
        assert_eq!(read_cache(&p).unwrap(), sets);

        write_cache(&p, &[]).unwrap();
        assert!(read_cache(&p).unwrap().is_empty());

        let mut text = serde_json::to_string(&sets[0]).unwrap();
        text.push('\n');
        text.push_str(&serde_json::to_string(&sets[1]).unwrap()[..10]);
        std::fs::write(&p, text).unwrap();
        match read_cache(&p).unwrap_err() {
            QueryGenError::Cache(e) => assert_eq!(e.line(), Some(2)),
            other => panic!("{other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn composition_is_injective_in_queries(
                queries in prop::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,3}", 1..10),
                idx in any::<prop::sample::Index>(),
                extra in "[a-z]{1,4}",
            ) {
                let m = meta("i", "Title");
                let base = QuerySet { subject_id: "i".into(), queries: queries.clone(), raw_response: String::new() };
                let mut changed = base.clone();
                let k = idx.index(changed.queries.len());
                changed.queries[k].push_str(&extra);
                let a = compose_item_document(&m, &base).unwrap();
                let b = compose_item_document(&m, &changed).unwrap();
                prop_assert_ne!(&a.text, &b.text);
                prop_assert_ne!(compose_user_document(&m, &base).text, compose_user_document(&m, &changed).text);
                prop_assert_eq!(a.query_lines().count(), queries.len());
            }

            #[test]
            fn mock_generation_is_deterministic(user in ".{0,200}") {
                let p = PromptText { system: "s".into(), user };
                let a = generate_query_set("x", &p, &MockChat, 1).unwrap();
                let b = generate_query_set("x", &p, &MockChat, 1).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
