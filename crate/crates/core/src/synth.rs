//! Seeded synthetic corpus for tests, demos and the golden run.
//!
//! Items belong to one of a handful of categories with their own vocabulary,
//! and each user mostly buys from a dominant category, so both text retrieval
//! and co-occurrence have signal to find.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Catalog, DatasetError, Interaction, ItemMeta};
use crate::jsonl;

struct Category {
    name: &'static str,
    sub: &'static [&'static str],
    nouns: &'static [&'static str],
    uses: &'static [&'static str],
}

const CATEGORIES: &[Category] = &[
    Category {
        name: "Skin Care",
        sub: &["Face", "Body"],
        nouns: &["serum", "moisturizer", "cleanser", "toner", "sunscreen", "retinol", "mask"],
        uses: &["dry skin", "oily skin", "fine lines", "daily protection", "sensitive skin"],
    },
    Category {
        name: "Hair Care",
        sub: &["Shampoo & Conditioner", "Styling"],
        nouns: &["shampoo", "conditioner", "pomade", "hairspray", "detangler", "oil"],
        uses: &["curly hair", "frizz control", "thin hair", "color protection", "volume"],
    },
    Category {
        name: "Makeup",
        sub: &["Eyes", "Lips", "Face"],
        nouns: &["mascara", "eyeliner", "lipstick", "foundation", "concealer", "palette", "blush"],
        uses: &["long wear", "everyday looks", "evening looks", "natural finish", "bold color"],
    },
    Category {
        name: "Fragrance",
        sub: &["Women", "Men"],
        nouns: &["perfume", "cologne", "mist", "parfum", "rollerball"],
        uses: &["summer days", "evenings out", "gifting", "the office", "travel"],
    },
    Category {
        name: "Nail Care",
        sub: &["Polish", "Tools"],
        nouns: &["polish", "topcoat", "clipper", "buffer", "cuticle", "remover"],
        uses: &["salon results", "quick drying", "chip resistance", "strong nails", "home manicures"],
    },
];

const ADJECTIVES: &[&str] = &[
    "hydrating", "gentle", "matte", "radiant", "organic", "intense", "lightweight", "waterproof",
    "nourishing", "classic", "velvet", "fresh",
];

const BRANDS: &[&str] = &["Lumina", "Verdant", "Aurelle", "NordGlow", "Petalis", "Kasumi", "Orbee"];

const REVIEW_TEMPLATES: &[&str] = &[
    "Really like this {noun}, works well for {use}.",
    "The {adj} {noun} is okay but a bit pricey.",
    "Bought it for {use}; exactly what I needed.",
    "Not impressed, the {noun} did nothing for {use}.",
    "Great {noun}. Will buy again.",
    "",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub seed: u64,
    pub min_seq: usize,
    pub max_seq: usize,
    /// Probability that a purchase comes from the user's dominant category.
    pub focus: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 50,
            n_items: 100,
            seed: 42,
            min_seq: 5,
            max_seq: 9,
            focus: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub interactions: Vec<Interaction>,
    pub catalog: Catalog,
}

fn fill(t: &str, noun: &str, adj: &str, usage: &str) -> String {
    t.replace("{noun}", noun).replace("{adj}", adj).replace("{use}", usage)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_cat = CATEGORIES.len();

    let mut items = Vec::with_capacity(cfg.n_items);
    let mut by_cat: Vec<Vec<usize>> = vec![Vec::new(); n_cat];
    let mut item_words: Vec<(&str, &str, &str)> = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let c = i % n_cat;
        let cat = &CATEGORIES[c];
        let noun = *cat.nouns.choose(&mut rng).unwrap();
        let second = *cat.nouns.choose(&mut rng).unwrap();
        let adj = *ADJECTIVES.choose(&mut rng).unwrap();
        let usage = *cat.uses.choose(&mut rng).unwrap();
        let brand = *BRANDS.choose(&mut rng).unwrap();
        let sub = *cat.sub.choose(&mut rng).unwrap();
        let title = if second == noun {
            format!("{brand} {} {}", capitalize(adj), capitalize(noun))
        } else {
            format!("{brand} {} {} & {} Set", capitalize(adj), capitalize(noun), capitalize(second))
        };
        let description = format!("A {adj} {noun} made for {usage}. Size {} ml.", 10 * rng.random_range(1..=20u32));
        items.push(ItemMeta {
            item_id: format!("I{i:04}"),
            title,
            brand: brand.to_owned(),
            categories: vec!["Beauty".into(), cat.name.into(), sub.into()],
            description,
        });
        by_cat[c].push(i);
        item_words.push((noun, adj, usage));
    }

    let mut interactions = Vec::new();
    let mut clock: u64 = 1_400_000_000;
    for u in 0..cfg.n_users {
        let dominant = rng.random_range(0..n_cat);
        let len = rng.random_range(cfg.min_seq..=cfg.max_seq);
        let mut prev = usize::MAX;
        for _ in 0..len {
            let pick = loop {
                let i = if rng.random::<f64>() < cfg.focus && !by_cat[dominant].is_empty() {
                    *by_cat[dominant].choose(&mut rng).unwrap()
                } else {
                    rng.random_range(0..cfg.n_items)
                };
                if i != prev || cfg.n_items == 1 {
                    break i;
                }
            };
            prev = pick;
            let (noun, adj, usage) = item_words[pick];
            let template = *REVIEW_TEMPLATES.choose(&mut rng).unwrap();
            clock += rng.random_range(3_600..=86_400 * 30);
            interactions.push(Interaction {
                user_id: format!("U{u:04}"),
                item_id: items[pick].item_id.clone(),
                rating: rng.random_range(1..=5u8) as f64,
                review_text: fill(template, noun, adj, usage),
                timestamp: clock,
            });
        }
    }

    SynthCorpus {
        interactions,
        catalog: Catalog::from_items(items).expect("synthetic ids are unique"),
    }
}

impl SynthCorpus {
    /// Write `interactions.jsonl` and `items.jsonl` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        jsonl::write(dir.join("interactions.jsonl"), &self.interactions)?;
        jsonl::write(dir.join("items.jsonl"), self.catalog.items.values())?;
        Ok(())
    }
}
