//! Deterministic offline stand-in for the chat-completion service.
//!
//! The reply is a pure function of the prompt: a SplitMix64 stream seeded by
//! FNV-1a over `system || 0x00 || user` fills ten query templates with tokens
//! taken from the titles that appear in the prompt. The exact procedure is
//! mirrored by the golden-run oracle script, so changes here must be made
//! there as well.

use super::client::{ChatBackend, LlmError};
use super::prompt::PromptText;
use crate::hash::{fnv1a64, fnv1a64_extend, SplitMix64};

pub const MOCK_TEMPLATES: [&str; 8] = [
    "{a} {b} for everyday use",
    "best {a} with {b} and {c}",
    "{a} {c} gift idea",
    "durable {b} {a} review",
    "affordable {a} {b} {c}",
    "{c} {a} recommended by buyers",
    "compact {b} {c} set",
    "top rated {a} {b}",
];

const TITLE_PREFIXES: [&str; 2] = ["- **Item Title**: ", "**Title:** `"];

#[derive(Debug, Clone, Copy, Default)]
pub struct MockChat;

/// Lowercased alphanumeric title words of length ≥ 3, first occurrence order.
pub fn title_tokens(user_message: &str) -> Vec<String> {
    let mut tokens: Vec<String> = Vec::new();
    for line in user_message.lines() {
        let Some(title) = TITLE_PREFIXES.iter().find_map(|p| line.strip_prefix(p)) else {
            continue;
        };
        let title = title.trim_end_matches('`');
        for word in title.split(|c: char| !c.is_ascii_alphanumeric()) {
            let word = word.to_ascii_lowercase();
            if word.len() >= 3 && !tokens.contains(&word) {
                tokens.push(word);
            }
        }
    }
    if tokens.is_empty() {
        tokens.push("item".to_owned());
    }
    tokens
}

pub fn prompt_seed(prompt: &PromptText) -> u64 {
    let h = fnv1a64(prompt.system.as_bytes());
    let h = fnv1a64_extend(h, &[0]);
    fnv1a64_extend(h, prompt.user.as_bytes())
}

pub fn mock_reply(prompt: &PromptText) -> String {
    let tokens = title_tokens(&prompt.user);
    let mut rng = SplitMix64::new(prompt_seed(prompt));
    (1..=10)
        .map(|n| {
            let template = MOCK_TEMPLATES[rng.pick(MOCK_TEMPLATES.len())];
            let a = &tokens[rng.pick(tokens.len())];
            let b = &tokens[rng.pick(tokens.len())];
            let c = &tokens[rng.pick(tokens.len())];
            let text = template.replace("{a}", a).replace("{b}", b).replace("{c}", c);
            format!("{n}. **{text}**")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl ChatBackend for MockChat {
    fn complete(&self, prompt: &PromptText) -> Result<String, LlmError> {
        Ok(mock_reply(prompt))
    }
}
