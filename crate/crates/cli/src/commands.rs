use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use q2rec_core::cf::{cooccurrence_baseline, import_cf_scores, popularity_baseline};
use q2rec_core::dataset::{dataset_stats, leave_one_out_split, load_catalog, load_interactions, Phase, SplitOptions};
use q2rec_core::embed::{embed_texts, EmbeddingProviderConfig, EmbeddingVector, ProviderKind, VectorMatrix};
use q2rec_core::eval::{self, MetricsReport, TrainFreqs};
use q2rec_core::fusion::{calibrate, FusionConfig, FusionDiagnostics, FusionMode};
use q2rec_core::jsonl;
use q2rec_core::pipeline::stages::{self, UserDocKind};
use q2rec_core::pipeline::{load_report, run_ablation, run_pipeline, PipelineConfig, PipelineError};
use q2rec_core::querygen::{
    generate_query_sets, write_cache, EnrichedDocument, LlmClientConfig, PromptText, QuerySet,
    UserPromptOptions,
};
use q2rec_core::ranking::{read_rankings, write_rankings};
use q2rec_core::vectorstore::{build_index, ItemIndex};
use q2rec_core::SplitDataset;

use crate::{
    BuildIndexArgs, CfArgs, CfSourceArg, Command, ConfigArgs, EmbedArgs, EmbeddingArgs, EvalArgs, FuseArgs,
    GenItemArgs, GenUserArgs, IngestArgs, LlmArgs, Provider, ReportArgs, RetrieveArgs,
};

/// Bad invocation discovered after argument parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(String);

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    let is_usage = e.downcast_ref::<Usage>().is_some()
        || matches!(e.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)));
    if is_usage {
        1
    } else {
        2
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::GenItemQueries(a) => gen_item_queries(a),
        Command::GenUserQueries(a) => gen_user_queries(a),
        Command::Embed(a) => embed(a),
        Command::BuildIndex(a) => build_index_cmd(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Cf(a) => cf(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => evaluate(a),
        Command::Ablate(a) => ablate(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    }
}

fn read_split(dir: &Path) -> Result<SplitDataset> {
    SplitDataset::read_dir(dir).with_context(|| format!("reading split from {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let interactions = load_interactions(&a.interactions)?;
    let catalog = load_catalog(&a.items)?;
    stages::check_items_known(&interactions, &catalog)?;
    let split = leave_one_out_split(
        &interactions,
        SplitOptions {
            min_len: a.min_len,
            dedup: a.dedup,
        },
    );
    split.write_dir(a.out.join("split"))?;
    let stats = dataset_stats(&interactions);
    write_json(&a.out.join("stats.json"), &stats)?;
    println!(
        "{} users, {} items, {} reviews, density {:.4}%; {} users evaluated",
        stats.n_users,
        stats.n_items,
        stats.n_reviews,
        stats.density_pct,
        split.evaluated_users().count()
    );
    Ok(())
}

fn llm_config(a: &LlmArgs) -> LlmClientConfig {
    LlmClientConfig {
        endpoint_url: a.endpoint.clone().unwrap_or_default(),
        model_name: a.model.clone(),
        api_key_env_var: a.api_key_env.clone(),
        max_concurrency: a.concurrency,
        mock_mode: a.mock_llm,
        max_attempts: a.max_attempts,
        temperature: a.temperature,
        ..LlmClientConfig::default()
    }
}

fn generate(prompts: &[(String, PromptText)], a: &LlmArgs) -> Result<Vec<QuerySet>> {
    let cfg = llm_config(a);
    let backend = cfg.backend()?;
    let results = generate_query_sets(prompts, backend.as_ref(), cfg.max_concurrency, cfg.max_attempts);
    Ok(results.into_iter().collect::<Result<_, _>>()?)
}

fn gen_item_queries(a: GenItemArgs) -> Result<()> {
    let split = read_split(&a.split)?;
    let catalog = load_catalog(&a.items)?;
    let sets = if a.no_item_desc {
        Vec::new()
    } else {
        generate(&stages::item_prompts(&catalog, &split, a.review_cap), &a.llm)?
    };
    write_cache(&a.out, &sets)?;
    let docs = stages::item_documents(&catalog, (!a.no_item_desc).then_some(sets.as_slice()))?;
    jsonl::write(&a.docs, &docs)?;
    println!("{} item query sets, {} item documents", sets.len(), docs.len());
    Ok(())
}

fn gen_user_queries(a: GenUserArgs) -> Result<()> {
    let split = read_split(&a.split)?;
    let catalog = load_catalog(&a.items)?;
    let item_docs: Option<BTreeMap<String, EnrichedDocument>> = match (&a.item_docs, a.no_recent_item) {
        (Some(p), false) => Some(
            jsonl::read::<EnrichedDocument>(p)?
                .into_iter()
                .map(|d| (d.subject_id.clone(), d))
                .collect(),
        ),
        _ => None,
    };
    let (sets, kind) = if a.no_user_queries {
        (Vec::new(), UserDocKind::MetadataOnly)
    } else {
        let opts = UserPromptOptions {
            max_history: a.max_history,
            emphasize_last: !a.no_recent_item,
            review_char_budget: a.review_char_budget,
        };
        let prompts = stages::user_prompts(&catalog, &split, a.phase, item_docs.as_ref(), &opts)?;
        let kind = if a.no_recent_item {
            UserDocKind::QueriesOnly
        } else {
            UserDocKind::Full
        };
        (generate(&prompts, &a.llm)?, kind)
    };
    write_cache(&a.out, &sets)?;
    let docs = stages::user_documents(&catalog, &split, a.phase, (!a.no_user_queries).then_some(sets.as_slice()), kind)?;
    jsonl::write(&a.docs, &docs)?;
    println!("{} user query sets, {} user documents ({})", sets.len(), docs.len(), a.phase.as_str());
    Ok(())
}

fn embedding_config(a: &EmbeddingArgs) -> EmbeddingProviderConfig {
    EmbeddingProviderConfig {
        kind: match a.provider {
            Provider::Mock => ProviderKind::Mock,
            Provider::Http => ProviderKind::Http,
            Provider::File => ProviderKind::File,
        },
        endpoint_url: a.embed_endpoint.clone(),
        path: a.embed_path.clone(),
        model: a.embed_model.clone(),
        api_key_env_var: a.embed_api_key_env.clone(),
        batch_size: a.batch_size,
        ..EmbeddingProviderConfig::mock(a.dimension, a.seed)
    }
}

fn embed(a: EmbedArgs) -> Result<()> {
    let docs: Vec<EnrichedDocument> = jsonl::read(&a.docs)?;
    let provider = embedding_config(&a.embedding).build()?;
    let vecs = embed_texts(&docs, provider.as_ref())?;
    let ids = docs.iter().map(|d| d.subject_id.clone()).collect();
    VectorMatrix::from_rows(ids, &vecs, provider.dimension())?.save(&a.out)?;
    println!("{} vectors of dimension {}", vecs.len(), provider.dimension());
    Ok(())
}

fn build_index_cmd(a: BuildIndexArgs) -> Result<()> {
    let m = VectorMatrix::load(&a.vectors)?;
    let vecs: Vec<EmbeddingVector> = (0..m.len()).map(|i| EmbeddingVector(m.row(i).to_vec())).collect();
    let index = build_index(m.ids.clone(), &vecs)?;
    index.save(&a.out)?;
    println!("index of {} items, dimension {}", index.len(), index.dimension());
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let index = ItemIndex::load(&a.index)?;
    let users = VectorMatrix::load(&a.users)?;
    let split = read_split(&a.split)?;
    let table = stages::score_users(&index, &users)?;
    let ranked = stages::rank_table(&table, &split, a.phase, a.k, !a.include_history)?;
    write_rankings(&a.out, &ranked)?;
    if let Some(p) = &a.scores_out {
        table.save(p)?;
    }
    println!("{} users ranked over {} items", ranked.len(), index.len());
    Ok(())
}

fn cf(a: CfArgs) -> Result<()> {
    let split = read_split(&a.split)?;
    let catalog = load_catalog(&a.items)?;
    let item_ids = catalog.item_ids();
    let scores = match (a.source, &a.import) {
        (CfSourceArg::Popularity, _) => popularity_baseline(&split, &item_ids),
        (CfSourceArg::Cooccurrence, _) => cooccurrence_baseline(&split, &item_ids, a.phase),
        (CfSourceArg::Import, Some(p)) => import_cf_scores(p, &catalog)?,
        (CfSourceArg::Import, None) => return usage("--source import needs --import <path>"),
    };
    let users: Vec<String> = split.evaluated_users().map(|(u, _)| u.to_owned()).collect();
    let table = stages::cf_table(&scores, &users, &item_ids);
    table.save(&a.out)?;
    if let Some(p) = &a.rankings_out {
        write_rankings(p, &stages::rank_table(&table, &split, a.phase, a.k, !a.include_history)?)?;
    }
    println!("CF scores for {} users over {} items", users.len(), item_ids.len());
    Ok(())
}

fn fuse(a: FuseArgs) -> Result<()> {
    let split = read_split(&a.split)?;
    let llm = VectorMatrix::load(&a.llm)?;
    let cf = VectorMatrix::load(&a.cf)?;
    let exclude = !a.include_history;
    let calibration = match (a.mode, &a.llm_valid, &a.cf_valid) {
        (FusionMode::AdaptiveCc, Some(lv), Some(cv)) => {
            let rank = |p: &Path| -> Result<_> {
                let t = VectorMatrix::load(p)?;
                Ok(stages::rank_table(&t, &split, Phase::Valid, 10, exclude)?)
            };
            Some(calibrate(&rank(lv)?, &rank(cv)?, &split.valid_targets(), 10)?)
        }
        (FusionMode::AdaptiveCc, _, _) => {
            return usage("adaptive fusion needs --llm-valid and --cf-valid score tables")
        }
        _ => None,
    };
    let config = FusionConfig {
        mode: a.mode,
        k_eval: a.k,
    };
    let ranked = stages::fuse_tables(&llm, &cf, &split, a.phase, &config, calibration.as_ref(), exclude)?;
    write_rankings(&a.out, &ranked)?;
    let diagnostics = calibration.unwrap_or_else(|| FusionDiagnostics {
        mode: a.mode.to_string(),
        lambda: match a.mode {
            FusionMode::FixedCc { lambda } => Some(lambda),
            _ => None,
        },
        ..Default::default()
    });
    if let Some(p) = &a.diagnostics_out {
        write_json(p, &diagnostics)?;
    }
    println!("{}", serde_json::to_string(&diagnostics)?);
    Ok(())
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let split = read_split(&a.split)?;
    let catalog = load_catalog(&a.items)?;
    let item_ids = catalog.item_ids();
    let targets = split.targets(a.phase);
    let freqs = TrainFreqs::new(split.train_frequencies());
    let mut rows: Vec<(String, MetricsReport)> = Vec::new();
    for path in &a.rankings {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let ranked = read_rankings(path)?;
        let m = eval::evaluate(&ranked, &targets, &freqs, &item_ids, &a.ks)
            .with_context(|| format!("evaluating {}", path.display()))?;
        if let Some(dir) = &a.histograms {
            fs::create_dir_all(dir)?;
            eval::write_histogram_csv(dir.join(format!("{name}.csv")), &eval::item_distribution(&ranked, 10))?;
        }
        rows.push((name, m));
    }
    if a.json {
        let map: BTreeMap<&str, &MetricsReport> = rows.iter().map(|(n, m)| (n.as_str(), m)).collect();
        println!("{}", serde_json::to_string_pretty(&map)?);
    } else {
        print!("{}", eval::format_table(&rows));
    }
    Ok(())
}

fn load_config(a: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn print_diagnostics(d: &FusionDiagnostics) {
    let f = |x: Option<f64>| x.map_or("n/a".to_owned(), |v| format!("{v:.4}"));
    println!(
        "fusion {}: lambda_init {}, omega {}, lambda {}",
        d.mode,
        f(d.lambda_init),
        f(d.omega),
        f(d.lambda)
    );
}

fn run(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    let outcome = run_pipeline(&cfg)?;
    if outcome.executed.is_empty() {
        println!("all stages up to date");
    } else {
        println!("executed: {}", outcome.executed.join(", "));
    }
    print!("{}", fs::read_to_string(cfg.output_dir.join("report.txt"))?);
    print_diagnostics(&outcome.report.diagnostics);
    Ok(())
}

fn ablate(a: ConfigArgs) -> Result<()> {
    let cfg = load_config(&a)?;
    run_ablation(&cfg)?;
    print!("{}", fs::read_to_string(cfg.output_dir.join("ablation/summary.txt"))?);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let rep = match load_report(&a.dir) {
        Ok(r) => r,
        Err(PipelineError::Io { path, source }) if source.kind() == std::io::ErrorKind::NotFound => {
            bail!(Usage(format!("no report at {}; run the pipeline first", path.display())))
        }
        Err(e) => return Err(e.into()),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rep)?);
        return Ok(());
    }
    println!("variant: {}", rep.variant);
    print!("{}", fs::read_to_string(a.dir.join("report.txt"))?);
    print_diagnostics(&rep.diagnostics);
    for p in &rep.overlap.pairs {
        println!("hit overlap {}/{}: {} of {} (jaccard {:.4})", p.a, p.b, p.intersection, p.union, p.jaccard);
    }
    for n in &rep.notes {
        println!("note: {n}");
    }
    let summary = a.dir.join("ablation/summary.txt");
    if summary.exists() {
        println!();
        print!("{}", fs::read_to_string(summary)?);
    }
    Ok(())
}
