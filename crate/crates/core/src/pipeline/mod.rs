//! Configuration-driven end-to-end runs and ablations.
//!
//! Stages run in order (ingest, item queries, item index, user queries,
//! user embeddings, LLM scores, CF scores, ranking/fusion, evaluation) and
//! persist everything under `output_dir`. Each stage is stamped with a hash
//! of its configuration subsection and upstream stamps, so a rerun only
//! executes stages whose inputs changed or whose outputs were deleted.
//!
//! Output layout:
//!
//! ```text
//! split/{train,valid,test}.jsonl   stats.json
//! item_queries.jsonl  item_docs.jsonl  index/
//! user_queries_<phase>.jsonl  user_docs_<phase>.jsonl  user_vecs_<phase>/
//! llm_scores_<phase>/  cf_scores_<phase>/
//! rankings/{llm,cf,fused}_<phase>.jsonl  diagnostics.json
//! report.json  report.txt  histograms/<run>.csv
//! ```

pub mod cache;
pub mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cf::{cooccurrence_baseline, import_cf_scores, popularity_baseline};
use crate::dataset::{
    dataset_stats, leave_one_out_split, load_catalog, load_interactions, Phase,
    SplitDataset, SplitOptions,
};
use crate::embed::{embed_texts, EmbeddingProviderConfig, ProviderKind, VectorMatrix};
use crate::eval::{self, MetricsReport, OverlapReport, TrainFreqs};
use crate::fusion::{calibrate, hit_sets, FusionConfig, FusionDiagnostics, FusionMode};
use crate::querygen::{
    generate_query_sets, read_cache, write_cache, EnrichedDocument, LlmClientConfig, QuerySet,
    UserPromptOptions,
};
use crate::ranking::{read_rankings, write_rankings, ScoredList};
use crate::vectorstore::{build_index, ItemIndex};

pub use cache::{hash_path, OutputLock, LOCK_FILE};
use cache::{key_of, StageCache};
use stages::UserDocKind;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("output directory is locked by another run ({0}); delete the file if that run is gone")]
    Locked(PathBuf),
    #[error("post-run check failed: {0}")]
    Sanity(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(stage: &str) -> impl FnOnce(E) -> PipelineError + '_ {
    move |e| PipelineError::Stage {
        stage: stage.to_owned(),
        source: Box::new(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub interactions: PathBuf,
    pub items: PathBuf,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default)]
    pub dedup: bool,
}

fn default_min_len() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryGenConfig {
    /// Most recent train reviews listed in an item prompt.
    #[serde(default = "default_review_cap")]
    pub review_cap: usize,
    #[serde(default = "default_max_history")]
    pub max_history: usize,
    #[serde(default)]
    pub review_char_budget: Option<usize>,
}

fn default_review_cap() -> usize {
    10
}
fn default_max_history() -> usize {
    8
}

impl Default for QueryGenConfig {
    fn default() -> Self {
        Self {
            review_cap: default_review_cap(),
            max_history: default_max_history(),
            review_char_budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfSource {
    None,
    Popularity,
    Cooccurrence,
    Import,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfConfig {
    pub source: CfSource,
    /// Imported scores conditioned on the train split (used for calibration).
    #[serde(default)]
    pub valid_scores: Option<PathBuf>,
    /// Imported scores conditioned on train + validation.
    #[serde(default)]
    pub test_scores: Option<PathBuf>,
}

impl Default for CfConfig {
    fn default() -> Self {
        Self {
            source: CfSource::Cooccurrence,
            valid_scores: None,
            test_scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Remove already-seen items from every ranking.
    #[serde(default = "yes")]
    pub exclude_history: bool,
}

fn yes() -> bool {
    true
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { exclude_history: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

fn default_ks() -> Vec<usize> {
    vec![5, 10]
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: default_ks() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    #[serde(default)]
    pub no_cf: bool,
    #[serde(default)]
    pub no_recent_item: bool,
    #[serde(default)]
    pub no_item_desc: bool,
    #[serde(default)]
    pub no_user_queries: bool,
}

impl AblationFlags {
    pub fn name(&self) -> String {
        let mut on = Vec::new();
        for (flag, name) in [
            (self.no_cf, "no_cf"),
            (self.no_recent_item, "no_recent_item"),
            (self.no_item_desc, "no_item_desc"),
            (self.no_user_queries, "no_user_queries"),
        ] {
            if flag {
                on.push(name);
            }
        }
        if on.is_empty() {
            "base".into()
        } else {
            on.join("+")
        }
    }

    /// The four single-component variants.
    pub fn variants() -> [AblationFlags; 4] {
        let off = AblationFlags::default();
        [
            AblationFlags { no_cf: true, ..off },
            AblationFlags { no_recent_item: true, ..off },
            AblationFlags { no_item_desc: true, ..off },
            AblationFlags { no_user_queries: true, ..off },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// Default seed for the mock encoder when `[embedding]` sets none.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub llm: LlmClientConfig,
    #[serde(default)]
    pub querygen: QueryGenConfig,
    pub embedding: EmbeddingProviderConfig,
    #[serde(default)]
    pub cf: CfConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablation: AblationFlags,
}

fn default_seed() -> u64 {
    42
}

/// Replace `${NAME}` with the value of environment variable `NAME`.
pub fn interpolate_env(text: &str) -> Result<String, PipelineError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let tail = &rest[start + 2..];
        let end = tail
            .find('}')
            .ok_or_else(|| PipelineError::Config("unterminated ${ in config".into()))?;
        let name = &tail[..end];
        let value = std::env::var(name)
            .map_err(|_| PipelineError::Config(format!("environment variable {name} is not set")))?;
        out.push_str(&value);
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl PipelineConfig {
    /// Parse TOML, interpolating environment variables and resolving relative
    /// paths against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let text = interpolate_env(text)?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.interactions);
        fix(&mut self.data.items);
        for p in [&mut self.cf.valid_scores, &mut self.cf.test_scores, &mut self.embedding.path]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    /// Effective embedding settings (seed defaulted from the top level).
    pub fn embedding_config(&self) -> EmbeddingProviderConfig {
        let mut e = self.embedding.clone();
        if e.seed.is_none() {
            e.seed = Some(self.seed);
        }
        e
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for p in [&self.data.interactions, &self.data.items] {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if self.llm.max_concurrency == 0 {
            return bad("llm.max_concurrency must be at least 1".into());
        }
        if self.embedding.dimension == 0 {
            return bad("embedding.dimension must be at least 1".into());
        }
        if self.eval.ks.contains(&0) {
            return bad("eval.ks must be positive".into());
        }
        if self.fusion.k_eval == 0 {
            return bad("fusion.k_eval must be positive".into());
        }
        match self.fusion.mode {
            FusionMode::FixedCc { lambda } if !(0.0..=1.0).contains(&lambda) => {
                return bad(format!("fusion.fixed_lambda {lambda} outside [0, 1]"));
            }
            FusionMode::Rrf { k: 0 } => return bad("fusion.rrf_k must be positive".into()),
            _ => {}
        }
        if self.cf_enabled() && self.cf.source == CfSource::Import {
            let needs_valid = self.fusion.mode == FusionMode::AdaptiveCc;
            for (name, p, required) in [
                ("cf.valid_scores", &self.cf.valid_scores, needs_valid),
                ("cf.test_scores", &self.cf.test_scores, true),
            ] {
                match p {
                    Some(p) if !p.exists() => return bad(format!("{name}: {} does not exist", p.display())),
                    None if required => return bad(format!("{name} is required for imported CF scores")),
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn cf_enabled(&self) -> bool {
        !self.ablation.no_cf && self.cf.source != CfSource::None
    }

    /// Length of every persisted ranking.
    pub fn list_len(&self) -> usize {
        self.eval
            .ks
            .iter()
            .copied()
            .chain([10, self.fusion.k_eval])
            .max()
            .unwrap_or(10)
    }

    fn phases(&self) -> Vec<Phase> {
        if self.cf_enabled() && self.fusion.mode == FusionMode::AdaptiveCc {
            vec![Phase::Valid, Phase::Test]
        } else {
            vec![Phase::Test]
        }
    }
}

/// Everything a run reports. `metrics` is the headline row: the fused
/// ranking when fusion ran, otherwise LLM retrieval alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    pub metrics: MetricsReport,
    pub llm: MetricsReport,
    pub cf: Option<MetricsReport>,
    pub fused: Option<MetricsReport>,
    pub diagnostics: FusionDiagnostics,
    pub overlap: OverlapReport,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: RunReport,
    /// Stages that actually executed (cached and copied stages excluded).
    pub executed: Vec<String>,
}

fn llm_fingerprint(llm: &LlmClientConfig) -> serde_json::Value {
    serde_json::json!({
        "endpoint_url": llm.endpoint_url,
        "model_name": llm.model_name,
        "mock_mode": llm.mock_mode,
        "temperature": llm.temperature,
        "max_tokens": llm.max_tokens,
    })
}

fn embed_fingerprint(e: &EmbeddingProviderConfig) -> Result<serde_json::Value, PipelineError> {
    let file_hash = match (&e.kind, &e.path) {
        (ProviderKind::File, Some(p)) => Some(hash_path(p).map_err(|source| PipelineError::Io {
            path: p.clone(),
            source,
        })?),
        _ => None,
    };
    Ok(serde_json::json!({
        "kind": e.kind,
        "dimension": e.dimension,
        "endpoint_url": e.endpoint_url,
        "model": e.model,
        "seed": e.seed,
        "file": file_hash,
    }))
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

fn file_key(path: &Path) -> Result<String, PipelineError> {
    hash_path(path).map_err(io_at(path))
}

/// Post-run invariants that must hold on every execution.
pub fn sanity_check(report: &RunReport) -> Result<(), PipelineError> {
    let fail = |m: String| Err(PipelineError::Sanity(m));
    let rows = [Some(&report.llm), report.cf.as_ref(), report.fused.as_ref()];
    for m in rows.into_iter().flatten() {
        if m.hr_5 > m.hr_10 {
            return fail(format!("hr_5 {} > hr_10 {}", m.hr_5, m.hr_10));
        }
        if m.ndcg_5 > m.hr_5 || m.ndcg_10 > m.hr_10 {
            return fail("ndcg exceeds hit rate".into());
        }
        for v in [m.hr_5, m.hr_10, m.ndcg_5, m.ndcg_10] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("metric {v} outside [0, 1]"));
            }
        }
        if m.mean_novelty_10.is_nan() || m.mean_novelty_10 < 0.0 {
            return fail(format!("novelty {} negative", m.mean_novelty_10));
        }
    }
    let d = &report.diagnostics;
    for (name, v) in [("lambda", d.lambda), ("omega", d.omega), ("lambda_init", d.lambda_init)] {
        if let Some(v) = v {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} = {v} outside [0, 1]"));
            }
        }
    }
    if let (Some(l), Some(o), Some(i)) = (d.lambda, d.omega, d.lambda_init) {
        if (l - (o * i + (1.0 - o) * 0.5)).abs() > 1e-12 {
            return fail("lambda inconsistent with omega and lambda_init".into());
        }
    }
    Ok(())
}

fn phase_file(prefix: &str, phase: Phase, suffix: &str) -> String {
    format!("{prefix}_{}{suffix}", phase.as_str())
}

/// Execute the full pipeline for `config`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome, PipelineError> {
    run_with_seeds(config, Vec::new())
}

fn run_with_seeds(config: &PipelineConfig, seeds: Vec<PathBuf>) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let out = config.output_dir.clone();
    let _lock = OutputLock::acquire(&out)?;
    let mut cache = StageCache::new(&out, seeds);
    let flags = config.ablation;
    let embedding = config.embedding_config();
    let embed_fp = embed_fingerprint(&embedding)?;
    let llm_fp = llm_fingerprint(&config.llm);

    // ingest
    let ingest_key = key_of(&[
        &"ingest",
        &file_key(&config.data.interactions)?,
        &file_key(&config.data.items)?,
        &config.data,
    ]);
    let catalog = load_catalog(&config.data.items).map_err(stage_err("ingest"))?;
    cache.run(
        "ingest",
        &ingest_key,
        &["split/train.jsonl", "split/valid.jsonl", "split/test.jsonl", "stats.json"],
        |dir| {
            let run = || -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
                let interactions = load_interactions(&config.data.interactions)?;
                stages::check_items_known(&interactions, &catalog)?;
                let opts = SplitOptions {
                    min_len: config.data.min_len,
                    dedup: config.data.dedup,
                };
                leave_one_out_split(&interactions, opts).write_dir(dir.join("split"))?;
                let stats = dataset_stats(&interactions);
                fs::write(dir.join("stats.json"), serde_json::to_vec_pretty(&stats)?)?;
                Ok(())
            };
            run().map_err(BoxedError)
        },
    )?;
    let split = SplitDataset::read_dir(out.join("split")).map_err(stage_err("ingest"))?;
    if split.evaluated_users().next().is_none() {
        return Err(PipelineError::Config(
            "no user has enough interactions to evaluate; lower data.min_len or add data".into(),
        ));
    }

    // item queries
    let item_key = (!flags.no_item_desc)
        .then(|| key_of(&[&"item_queries", &ingest_key, &llm_fp, &config.querygen.review_cap]));
    let item_sets: Option<Vec<QuerySet>> = match &item_key {
        None => None,
        Some(key) => {
            cache.run("item_queries", key, &["item_queries.jsonl"], |dir| {
                let prompts = stages::item_prompts(&catalog, &split, config.querygen.review_cap);
                let sets = generate_all(&prompts, &config.llm)?;
                write_cache(dir.join("item_queries.jsonl"), &sets).map_err(BoxedError::new)
            })?;
            Some(read_cache(out.join("item_queries.jsonl")).map_err(stage_err("item_queries"))?)
        }
    };

    // item documents + index
    let index_key = key_of(&[&"index", &ingest_key, &item_key, &embed_fp, &flags.no_item_desc]);
    cache.run("index", &index_key, &["item_docs.jsonl", "index"], |dir| {
        let docs = stages::item_documents(&catalog, item_sets.as_deref()).map_err(BoxedError::new)?;
        crate::jsonl::write(dir.join("item_docs.jsonl"), &docs).map_err(BoxedError::new)?;
        let provider = embedding.build().map_err(BoxedError::new)?;
        let vecs = embed_texts(&docs, provider.as_ref()).map_err(BoxedError::new)?;
        let ids = docs.iter().map(|d| d.subject_id.clone()).collect();
        build_index(ids, &vecs)
            .and_then(|idx| idx.save(dir.join("index")))
            .map_err(BoxedError::new)
    })?;
    let item_docs: Vec<EnrichedDocument> =
        crate::jsonl::read(out.join("item_docs.jsonl")).map_err(stage_err("index"))?;
    let item_doc_map: BTreeMap<String, EnrichedDocument> =
        item_docs.into_iter().map(|d| (d.subject_id.clone(), d)).collect();
    let index = ItemIndex::load(out.join("index")).map_err(stage_err("index"))?;
    let item_ids = index.item_ids().to_vec();

    let doc_kind = if flags.no_user_queries {
        UserDocKind::MetadataOnly
    } else if flags.no_recent_item {
        UserDocKind::QueriesOnly
    } else {
        UserDocKind::Full
    };
    let prompt_opts = UserPromptOptions {
        max_history: config.querygen.max_history,
        emphasize_last: !flags.no_recent_item,
        review_char_budget: config.querygen.review_char_budget,
    };
    let related = (!flags.no_recent_item && !flags.no_item_desc).then_some(&item_doc_map);

    let mut llm_tables = BTreeMap::new();
    let mut cf_tables = BTreeMap::new();
    let mut score_keys = Vec::new();
    for phase in config.phases() {
        // user queries
        let uq_file = phase_file("user_queries", phase, ".jsonl");
        let user_sets: Option<Vec<QuerySet>> = if flags.no_user_queries {
            None
        } else {
            let key = key_of(&[
                &"user_queries",
                &phase.as_str(),
                &ingest_key,
                &index_key,
                &llm_fp,
                &prompt_opts,
                &flags.no_recent_item,
                &flags.no_item_desc,
            ]);
            cache.run(&format!("user_queries_{}", phase.as_str()), &key, &[&uq_file], |dir| {
                let prompts = stages::user_prompts(&catalog, &split, phase, related, &prompt_opts)
                    .map_err(BoxedError::new)?;
                let sets = generate_all(&prompts, &config.llm)?;
                write_cache(dir.join(&uq_file), &sets).map_err(BoxedError::new)
            })?;
            Some(read_cache(out.join(&uq_file)).map_err(stage_err("user_queries"))?)
        };
        let uq_key = user_sets.as_ref().map(|_| file_key(&out.join(&uq_file))).transpose()?;

        // user documents + vectors
        let docs_file = phase_file("user_docs", phase, ".jsonl");
        let vecs_dir = phase_file("user_vecs", phase, "");
        let ue_key = key_of(&[&"user_embed", &phase.as_str(), &ingest_key, &uq_key, &embed_fp, &format!("{doc_kind:?}")]);
        cache.run(&format!("user_embed_{}", phase.as_str()), &ue_key, &[&docs_file, &vecs_dir], |dir| {
            let docs = stages::user_documents(&catalog, &split, phase, user_sets.as_deref(), doc_kind)
                .map_err(BoxedError::new)?;
            crate::jsonl::write(dir.join(&docs_file), &docs).map_err(BoxedError::new)?;
            let provider = embedding.build().map_err(BoxedError::new)?;
            let vecs = embed_texts(&docs, provider.as_ref()).map_err(BoxedError::new)?;
            let ids = docs.iter().map(|d| d.subject_id.clone()).collect();
            VectorMatrix::from_rows(ids, &vecs, provider.dimension())
                .and_then(|m| m.save(dir.join(&vecs_dir)))
                .map_err(BoxedError::new)
        })?;

        // LLM retrieval scores
        let ls_dir = phase_file("llm_scores", phase, "");
        let ls_key = key_of(&[&"llm_scores", &index_key, &ue_key]);
        cache.run(&format!("llm_scores_{}", phase.as_str()), &ls_key, &[&ls_dir], |dir| {
            let users = VectorMatrix::load(dir.join(&vecs_dir)).map_err(BoxedError::new)?;
            stages::score_users(&index, &users)
                .map_err(BoxedError::new)?
                .save(dir.join(&ls_dir))
                .map_err(BoxedError::new)
        })?;
        llm_tables.insert(phase, VectorMatrix::load(out.join(&ls_dir)).map_err(stage_err("llm_scores"))?);
        score_keys.push(ls_key);

        // CF scores
        if config.cf_enabled() {
            let cs_dir = phase_file("cf_scores", phase, "");
            let import = match phase {
                Phase::Valid => config.cf.valid_scores.as_ref(),
                Phase::Test => config.cf.test_scores.as_ref(),
            };
            let import_hash = match (config.cf.source, import) {
                (CfSource::Import, Some(p)) => Some(file_key(p)?),
                _ => None,
            };
            let cs_key = key_of(&[&"cf_scores", &phase.as_str(), &ingest_key, &config.cf.source, &import_hash, &item_ids]);
            cache.run(&format!("cf_scores_{}", phase.as_str()), &cs_key, &[&cs_dir], |dir| {
                let cf = match (config.cf.source, import) {
                    (CfSource::Popularity, _) => popularity_baseline(&split, &item_ids),
                    (CfSource::Cooccurrence, _) => cooccurrence_baseline(&split, &item_ids, phase),
                    (CfSource::Import, Some(p)) => import_cf_scores(p, &catalog).map_err(BoxedError::new)?,
                    _ => unreachable!("validated: CF enabled with a source"),
                };
                let users: Vec<String> = split.evaluated_users().map(|(u, _)| u.to_owned()).collect();
                stages::cf_table(&cf, &users, &item_ids)
                    .save(dir.join(&cs_dir))
                    .map_err(BoxedError::new)
            })?;
            cf_tables.insert(phase, VectorMatrix::load(out.join(&cs_dir)).map_err(stage_err("cf_scores"))?);
            score_keys.push(cs_key);
        }
    }

    // ranking + fusion
    let list_len = config.list_len();
    let fusing = config.cf_enabled();
    let rank_key = key_of(&[
        &"rank",
        &score_keys,
        &config.fusion,
        &list_len,
        &config.retrieval,
        &fusing,
    ]);
    let mut rank_outputs = vec!["rankings/llm_test.jsonl".to_owned(), "diagnostics.json".to_owned()];
    if fusing {
        rank_outputs.push("rankings/cf_test.jsonl".into());
        rank_outputs.push("rankings/fused_test.jsonl".into());
    }
    let rank_refs: Vec<&str> = rank_outputs.iter().map(String::as_str).collect();
    cache.run("rank", &rank_key, &rank_refs, |dir| -> Result<(), BoxedError> {
        let rdir = dir.join("rankings");
        fs::create_dir_all(&rdir).map_err(BoxedError::new)?;
        let exclude = config.retrieval.exclude_history;
        let mut lists: BTreeMap<(String, Phase), BTreeMap<String, ScoredList>> = BTreeMap::new();
        for (&phase, table) in &llm_tables {
            lists.insert(("llm".into(), phase), stages::rank_table(table, &split, phase, list_len, exclude).map_err(BoxedError::new)?);
        }
        for (&phase, table) in &cf_tables {
            lists.insert(("cf".into(), phase), stages::rank_table(table, &split, phase, list_len, exclude).map_err(BoxedError::new)?);
        }
        let diagnostics = if fusing {
            let calibration = match config.fusion.mode {
                FusionMode::AdaptiveCc => Some(
                    calibrate(
                        &lists[&("llm".to_owned(), Phase::Valid)],
                        &lists[&("cf".to_owned(), Phase::Valid)],
                        &split.valid_targets(),
                        config.fusion.k_eval,
                    )
                    .map_err(BoxedError::new)?,
                ),
                _ => None,
            };
            let fcfg = FusionConfig {
                k_eval: list_len,
                ..config.fusion
            };
            let fused = stages::fuse_tables(
                &llm_tables[&Phase::Test],
                &cf_tables[&Phase::Test],
                &split,
                Phase::Test,
                &fcfg,
                calibration.as_ref(),
                exclude,
            )
            .map_err(BoxedError::new)?;
            lists.insert(("fused".into(), Phase::Test), fused);
            calibration.unwrap_or_else(|| FusionDiagnostics {
                mode: config.fusion.mode.to_string(),
                lambda: match config.fusion.mode {
                    FusionMode::FixedCc { lambda } => Some(lambda),
                    _ => None,
                },
                ..Default::default()
            })
        } else {
            FusionDiagnostics {
                mode: "none".into(),
                ..Default::default()
            }
        };
        for ((name, phase), ranked) in &lists {
            write_rankings(rdir.join(format!("{name}_{}.jsonl", phase.as_str())), ranked).map_err(BoxedError::new)?;
        }
        fs::write(dir.join("diagnostics.json"), serde_json::to_vec_pretty(&diagnostics).map_err(BoxedError::new)?)
            .map_err(BoxedError::new)
    })?;

    // evaluation
    let report = evaluate_run(config, &out, &split, &item_ids, fusing)?;
    sanity_check(&report)?;
    Ok(RunOutcome {
        report,
        executed: cache.executed().to_vec(),
    })
}

fn evaluate_run(
    config: &PipelineConfig,
    out: &Path,
    split: &SplitDataset,
    item_ids: &[String],
    fusing: bool,
) -> Result<RunReport, PipelineError> {
    let targets = split.test_targets();
    let freqs = TrainFreqs::new(split.train_frequencies());
    let load = |name: &str| read_rankings(out.join("rankings").join(format!("{name}_test.jsonl")));
    let hist_dir = out.join("histograms");
    fs::create_dir_all(&hist_dir).map_err(io_at(&hist_dir))?;

    let mut rows: Vec<(String, MetricsReport)> = Vec::new();
    let mut hits = BTreeMap::new();
    let names: &[&str] = if fusing { &["llm", "cf", "fused"] } else { &["llm"] };
    for name in names {
        let ranked = load(name).map_err(eval_err)?;
        let m = eval::evaluate(&ranked, &targets, &freqs, item_ids, &config.eval.ks)
            .map_err(eval_err)?;
        eval::write_histogram_csv(hist_dir.join(format!("{name}.csv")), &eval::item_distribution(&ranked, 10))
            .map_err(eval_err)?;
        hits.insert(name.to_string(), hit_sets(&ranked, &targets, 10));
        rows.push((name.to_string(), m));
    }
    let diagnostics: FusionDiagnostics = serde_json::from_slice(
        &fs::read(out.join("diagnostics.json")).map_err(io_at(&out.join("diagnostics.json")))?,
    )
    .map_err(eval_err)?;

    let get = |n: &str| rows.iter().find(|(k, _)| k == n).map(|(_, m)| m.clone());
    let llm = get("llm").expect("llm row always present");
    let fused = get("fused");
    let mut notes = vec!["novelty uses the natural log of relative train popularity; unseen items count once".to_owned()];
    let flags = config.ablation;
    if flags.no_cf {
        notes.push("no_cf: LLM retrieval only, no fusion".into());
    }
    if flags.no_recent_item {
        notes.push("no_recent_item: prompt has no emphasized last item or related queries; user document is queries only".into());
    }
    if flags.no_item_desc {
        notes.push("no_item_desc: item documents are metadata only".into());
    }
    if flags.no_user_queries {
        notes.push("no_user_queries: user document is the last item's metadata only".into());
    }
    let report = RunReport {
        variant: flags.name(),
        metrics: fused.clone().unwrap_or_else(|| llm.clone()),
        llm,
        cf: get("cf"),
        fused,
        diagnostics,
        overlap: eval::overlap_report(&hits),
        notes,
    };
    let rp = out.join("report.json");
    fs::write(&rp, serde_json::to_vec_pretty(&report).expect("report serializes")).map_err(io_at(&rp))?;
    let tp = out.join("report.txt");
    fs::write(&tp, eval::format_table(&rows)).map_err(io_at(&tp))?;
    Ok(report)
}

fn eval_err<E: std::error::Error + Send + Sync + 'static>(e: E) -> PipelineError {
    stage_err("eval")(e)
}

fn generate_all(
    prompts: &[(String, crate::querygen::PromptText)],
    llm: &LlmClientConfig,
) -> Result<Vec<QuerySet>, BoxedError> {
    let backend = llm.backend().map_err(BoxedError::new)?;
    generate_query_sets(prompts, backend.as_ref(), llm.max_concurrency, llm.max_attempts)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(BoxedError::new)
}

/// Type-erased stage error that still implements `Error`.
#[derive(Debug)]
pub struct BoxedError(Box<dyn std::error::Error + Send + Sync>);

impl BoxedError {
    fn new<E: std::error::Error + Send + Sync + 'static>(e: E) -> Self {
        Self(Box::new(e))
    }
}

impl std::fmt::Display for BoxedError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for BoxedError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        self.0.source()
    }
}

/// Base run plus one run per single-component ablation. The base run lives in
/// `output_dir`; each variant gets `output_dir/ablation/<name>` and reuses
/// base artifacts whose stage keys match.
pub fn run_ablation(config: &PipelineConfig) -> Result<Vec<RunReport>, PipelineError> {
    let mut base_cfg = config.clone();
    base_cfg.ablation = AblationFlags::default();
    let base = run_pipeline(&base_cfg)?.report;
    let mut reports = vec![base];
    let root = config.output_dir.join("ablation");
    for flags in AblationFlags::variants() {
        let mut cfg = base_cfg.clone();
        cfg.ablation = flags;
        cfg.output_dir = root.join(flags.name());
        reports.push(run_with_seeds(&cfg, vec![config.output_dir.clone()])?.report);
    }
    let rows: Vec<(String, MetricsReport)> = reports.iter().map(|r| (r.variant.clone(), r.metrics.clone())).collect();
    let tp = root.join("summary.txt");
    fs::write(&tp, eval::format_table(&rows)).map_err(io_at(&tp))?;
    let jp = root.join("summary.json");
    fs::write(&jp, serde_json::to_vec_pretty(&reports).expect("reports serialize")).map_err(io_at(&jp))?;
    Ok(reports)
}

/// Load a finished run's report.
pub fn load_report(output_dir: &Path) -> Result<RunReport, PipelineError> {
    let p = output_dir.join("report.json");
    let bytes = fs::read(&p).map_err(io_at(&p))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))
}
