mod common;

use std::fs;
use std::path::Path;

use q2rec_core::pipeline::cache::hash_path;
use q2rec_core::pipeline::{load_report, run_ablation, run_pipeline, PipelineError};

const ADAPTIVE: &str = r#"mode = "adaptive_cc""#;

fn snapshot(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for name in ["report.json", "diagnostics.json", "rankings", "index", "llm_scores_test"] {
        let p = dir.join(name);
        out.push((name.to_owned(), hash_path(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))));
    }
    out
}

#[test]
fn rerun_is_byte_identical_and_skips_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let a = common::synth_config(&tmp.path().join("a"), ADAPTIVE, "");
    let b = common::synth_config(&tmp.path().join("b"), ADAPTIVE, "");
    let first = run_pipeline(&a).unwrap();
    let second = run_pipeline(&b).unwrap();
    assert_eq!(snapshot(&a.output_dir), snapshot(&b.output_dir));
    assert_eq!(first.report, second.report);

    let again = run_pipeline(&a).unwrap();
    assert!(again.executed.is_empty(), "{:?}", again.executed);
    assert_eq!(again.report, first.report);
    assert_eq!(load_report(&a.output_dir).unwrap(), first.report);
}

#[test]
fn resume_reruns_only_missing_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synth_config(&tmp.path().join("run"), ADAPTIVE, "");
    let first = run_pipeline(&cfg).unwrap();
    let before = snapshot(&cfg.output_dir);
    fs::remove_dir_all(cfg.output_dir.join("rankings")).unwrap();
    let resumed = run_pipeline(&cfg).unwrap();
    assert_eq!(resumed.executed, ["rank"]);
    assert_eq!(snapshot(&cfg.output_dir), before);
    assert_eq!(resumed.report, first.report);
}

#[test]
fn config_change_invalidates_downstream_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_pipeline(&common::synth_config(&out, ADAPTIVE, "")).unwrap();
    let rrf = run_pipeline(&common::synth_config(&out, r#"mode = "rrf""#, "")).unwrap();
    assert_eq!(rrf.executed, ["rank"]);
    assert_eq!(rrf.report.diagnostics.mode, "rrf:60");
}

#[test]
fn locked_output_dir_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synth_config(&tmp.path().join("run"), ADAPTIVE, "");
    fs::create_dir_all(&cfg.output_dir).unwrap();
    fs::write(cfg.output_dir.join(".q2rec.lock"), "1").unwrap();
    assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Locked(_))));
}

#[test]
fn degenerate_weights_reproduce_single_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let one = run_pipeline(&common::synth_config(&tmp.path().join("one"), "mode = \"fixed_cc\"\nfixed_lambda = 1.0", "")).unwrap();
    let zero = run_pipeline(&common::synth_config(&tmp.path().join("zero"), "mode = \"fixed_cc\"\nfixed_lambda = 0.0", "")).unwrap();
    let (fused1, fused0) = (one.report.fused.unwrap(), zero.report.fused.unwrap());
    let (llm, cf) = (one.report.llm, zero.report.cf.unwrap());
    for (f, s) in [(&fused1, &llm), (&fused0, &cf)] {
        for (x, y) in [(f.hr_5, s.hr_5), (f.hr_10, s.hr_10), (f.ndcg_5, s.ndcg_5), (f.ndcg_10, s.ndcg_10)] {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }
    assert_eq!(one.report.diagnostics.lambda, Some(1.0));
}

#[test]
fn ablation_produces_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::synth_config(&tmp.path().join("run"), ADAPTIVE, "");
    let reports = run_ablation(&cfg).unwrap();
    let names: Vec<&str> = reports.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["base", "no_cf", "no_recent_item", "no_item_desc", "no_user_queries"]);
    let no_cf = &reports[1];
    assert!(no_cf.cf.is_none() && no_cf.fused.is_none());
    assert_eq!(no_cf.metrics, no_cf.llm);
    assert_eq!(no_cf.diagnostics.lambda, None);
    assert_ne!(reports[4].llm, reports[0].llm);
    let summary = fs::read_to_string(cfg.output_dir.join("ablation/summary.txt")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("no_") || l.starts_with("base")).count(), 5);
}
