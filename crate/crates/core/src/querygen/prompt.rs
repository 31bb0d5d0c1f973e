//! Item and user prompt construction.

use serde::{Deserialize, Serialize};

use super::{EnrichedDocument, QueryGenError};
use crate::dataset::ItemMeta;

const ITEM_SYSTEM: &str = include_str!("../../assets/prompts/item_system.txt");
const ITEM_USER: &str = include_str!("../../assets/prompts/item_user.txt");
const USER_SYSTEM: &str = include_str!("../../assets/prompts/user_system.txt");
const USER_USER: &str = include_str!("../../assets/prompts/user_user.txt");

/// Phrase that introduces the emphasized last interaction in a user prompt.
pub const MOST_RECENT_MARKER: &str = "This is the most recently purchased product:";

/// A system + user message pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptText {
    pub system: String,
    pub user: String,
}

/// Collapse any run of whitespace (including newlines) to a single space.
pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Fill `{name}` placeholders in one pass; unknown names are left verbatim and
/// substituted values are never re-scanned.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let close = tail.find('}');
        let hit = close.and_then(|c| {
            let name = &tail[1..c];
            vars.iter().find(|(k, _)| *k == name).map(|(_, v)| (c, *v))
        });
        match hit {
            Some((c, value)) => {
                out.push_str(value);
                rest = &tail[c + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn template_body(t: &str) -> &str {
    t.trim_end_matches('\n')
}

/// Item query-generation prompt. `reviews` are oldest first; the `cap` most
/// recent are listed, numbered from 1 in chronological order.
pub fn build_item_prompt(meta: &ItemMeta, reviews: &[String], cap: usize) -> PromptText {
    let start = reviews.len().saturating_sub(cap);
    let block = reviews[start..]
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. {}", i + 1, one_line(r)))
        .collect::<Vec<_>>()
        .join("\n");
    let user = render(
        template_body(ITEM_USER),
        &[
            ("title", &one_line(&meta.title)),
            ("brand", &one_line(&meta.brand)),
            ("description", &one_line(&meta.description)),
            ("reviews", &block),
        ],
    );
    PromptText {
        system: template_body(ITEM_SYSTEM).to_owned(),
        user,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPromptOptions {
    /// Most recent history entries shown in the prompt.
    pub max_history: usize,
    /// Mark the last interaction and attach its generated queries.
    pub emphasize_last: bool,
    /// Per-review character budget; longer reviews are cut and end in "...".
    pub review_char_budget: Option<usize>,
}

impl Default for UserPromptOptions {
    fn default() -> Self {
        Self {
            max_history: 8,
            emphasize_last: true,
            review_char_budget: None,
        }
    }
}

fn clip_review(review: &str, budget: Option<usize>) -> String {
    let review = one_line(review);
    match budget {
        Some(n) if review.chars().count() > n => {
            let mut s: String = review.chars().take(n).collect();
            s.push_str(" ...");
            s
        }
        _ => review,
    }
}

fn history_entry(meta: &ItemMeta, review: &str, budget: Option<usize>) -> String {
    format!(
        "**Title:** `{}`\n**Brand:** {}\n**Categories:** {}\n**User Review:**\n{}\n",
        one_line(&meta.title),
        one_line(&meta.brand),
        meta.categories
            .iter()
            .map(|c| one_line(c))
            .collect::<Vec<_>>()
            .join(", "),
        clip_review(review, budget),
    )
}

/// User query-generation prompt.
///
/// `history` is chronological. Only the last `max_history` entries appear.
/// With `emphasize_last`, the final entry is introduced by
/// [`MOST_RECENT_MARKER`] and the queries of `last_item_doc` are listed as
/// related queries; earlier entries carry metadata and review only.
pub fn build_user_prompt(
    history: &[(&ItemMeta, &str)],
    last_item_doc: Option<&EnrichedDocument>,
    opts: &UserPromptOptions,
) -> Result<PromptText, QueryGenError> {
    if history.is_empty() {
        return Err(QueryGenError::EmptyHistory);
    }
    let window = &history[history.len().saturating_sub(opts.max_history.max(1))..];
    let (plain, last) = if opts.emphasize_last {
        (&window[..window.len() - 1], window.last())
    } else {
        (window, None)
    };

    let mut entries: Vec<String> = plain
        .iter()
        .map(|(m, r)| history_entry(m, r, opts.review_char_budget))
        .collect();
    if let Some((m, r)) = last {
        entries.push(format!(
            "{MOST_RECENT_MARKER}\n{}",
            history_entry(m, r, opts.review_char_budget)
        ));
    }
    let user_history = entries.join("\n");

    let related: Vec<String> = match (last, last_item_doc) {
        (Some(_), Some(doc)) => doc.query_lines().map(str::to_owned).collect(),
        _ => Vec::new(),
    };
    let generated_queries = if related.is_empty() {
        String::new()
    } else {
        let lines = related
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{}. {q}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        format!("**Related Queries:**\n{lines}")
    };

    let user = render(
        template_body(USER_USER),
        &[
            ("user_history", &user_history),
            ("generated_queries", &generated_queries),
        ],
    );
    Ok(PromptText {
        system: template_body(USER_SYSTEM).to_owned(),
        user,
    })
}
