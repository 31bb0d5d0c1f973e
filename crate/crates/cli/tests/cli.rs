use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn synth() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/synth")
}

fn q2rec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_q2rec"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = q2rec(args);
    assert!(
        out.status.success(),
        "q2rec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, fusion: &str) -> PathBuf {
    let cfg = dir.join("experiment.toml");
    let text = format!(
        r#"output_dir = "out"
seed = 42

[data]
interactions = "{data}/interactions.jsonl"
items = "{data}/items.jsonl"

[llm]
mock_mode = true
api_key_env_var = "QUEREC_LLM_API_KEY"

[embedding]
kind = "mock"
dimension = 64

[fusion]
{fusion}
"#,
        data = synth().display()
    );
    fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn staged_commands_reproduce_the_golden_report() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let items = synth().join("items.jsonl");
    let items = p(&items);
    let split = t.join("split");
    let llm = ["--mock-llm"];
    let emb = ["--provider", "mock", "--dimension", "64", "--seed", "42"];

    ok(&["ingest", "--interactions", p(&synth().join("interactions.jsonl")), "--items", items, "--out", p(t)]);
    ok(&[&["gen-item-queries", "--split", p(&split), "--items", items, "--out", p(&t.join("iq.jsonl")), "--docs", p(&t.join("idocs.jsonl"))][..], &llm].concat());
    ok(&[&["embed", "--docs", p(&t.join("idocs.jsonl")), "--out", p(&t.join("ivecs"))][..], &emb].concat());
    ok(&["build-index", "--vectors", p(&t.join("ivecs")), "--out", p(&t.join("index"))]);
    for phase in ["valid", "test"] {
        let f = |name: &str| t.join(format!("{name}_{phase}"));
        let j = |name: &str| t.join(format!("{name}_{phase}.jsonl"));
        ok(&[&["gen-user-queries", "--split", p(&split), "--items", items, "--phase", phase, "--item-docs", p(&t.join("idocs.jsonl")), "--out", p(&f("uq")), "--docs", p(&f("udocs"))][..], &llm].concat());
        ok(&[&["embed", "--docs", p(&f("udocs")), "--out", p(&f("uvecs"))][..], &emb].concat());
        ok(&["retrieve", "--index", p(&t.join("index")), "--users", p(&f("uvecs")), "--split", p(&split), "--phase", phase, "--out", p(&j("llm")), "--scores-out", p(&f("llm_scores"))]);
        ok(&["cf", "--split", p(&split), "--items", items, "--phase", phase, "--out", p(&f("cf_scores")), "--rankings-out", p(&j("cf"))]);
    }
    let diag = ok(&[
        "fuse", "--llm", p(&t.join("llm_scores_test")), "--cf", p(&t.join("cf_scores_test")), "--split", p(&split),
        "--llm-valid", p(&t.join("llm_scores_valid")), "--cf-valid", p(&t.join("cf_scores_valid")),
        "--out", p(&t.join("fused.jsonl")), "--diagnostics-out", p(&t.join("diag.json")),
    ]);
    let metrics = ok(&[
        "eval", "--rankings", p(&t.join("llm_test.jsonl")), p(&t.join("cf_test.jsonl")), p(&t.join("fused.jsonl")),
        "--split", p(&split), "--items", items, "--json", "--histograms", p(&t.join("hist")),
    ]);

    let golden: serde_json::Value =
        serde_json::from_slice(&fs::read(synth().join("golden_report.json")).unwrap()).unwrap();
    let diag: serde_json::Value = serde_json::from_str(&diag).unwrap();
    let metrics: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    for (section, name) in [("llm", "llm_test"), ("cf", "cf_test"), ("fused", "fused")] {
        for (k, v) in golden[section].as_object().unwrap() {
            let got = metrics[name][k].as_f64().unwrap();
            assert!((got - v.as_f64().unwrap()).abs() <= 1e-9, "{section}.{k}: {got} vs {v}");
        }
    }
    for (k, v) in golden["diagnostics"].as_object().unwrap() {
        assert!((diag[k].as_f64().unwrap() - v.as_f64().unwrap()).abs() <= 1e-9, "diagnostics.{k}");
    }
    assert!(t.join("hist/fused.csv").exists());
}

#[test]
fn run_then_report_then_cached_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"mode = "adaptive_cc""#);
    let first = ok(&["run", "--config", p(&cfg)]);
    assert!(first.contains("executed: ingest"), "{first}");
    assert!(first.contains("fused"), "{first}");
    let again = ok(&["run", "--config", p(&cfg)]);
    assert!(again.contains("all stages up to date"), "{again}");

    let out = tmp.path().join("out");
    let report = ok(&["report", p(&out)]);
    assert!(report.contains("variant: base") && report.contains("lambda 0.4755"), "{report}");
    let json: serde_json::Value = serde_json::from_str(&ok(&["report", p(&out), "--json"])).unwrap();
    assert_eq!(json["fused"]["n_users"], 50);
}

#[test]
fn ablate_prints_five_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"mode = "adaptive_cc""#);
    let table = ok(&["ablate", "--config", p(&cfg), "--output-dir", p(&tmp.path().join("abl"))]);
    for v in ["base", "no_cf", "no_recent_item", "no_item_desc", "no_user_queries"] {
        assert!(table.lines().any(|l| l.starts_with(v)), "missing {v}: {table}");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(q2rec(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(q2rec(&["fuse", "--mode", "blend"]).status.code(), Some(1));
    assert_eq!(q2rec(&["gen-item-queries", "--split", "s", "--items", "i", "--out", "o", "--docs", "d"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mode = \"fixed_cc\"\nfixed_lambda = 1.5");
    let out = q2rec(&["run", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    let split = tmp.path().join("split");
    fs::create_dir_all(&split).unwrap();
    for f in ["train", "valid", "test"] {
        fs::write(split.join(format!("{f}.jsonl")), "").unwrap();
    }
    let out = q2rec(&["fuse", "--llm", "a", "--cf", "b", "--split", p(&split), "--out", "o"]);
    assert_eq!(out.status.code(), Some(2), "missing tables are a stage failure");
    assert_eq!(q2rec(&["report", p(tmp.path())]).status.code(), Some(1));
}

#[test]
fn stage_failures_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"mode = "rrf""#);
    let out_dir = tmp.path().join("out");
    fs::create_dir_all(&out_dir).unwrap();
    fs::write(out_dir.join(".q2rec.lock"), "123").unwrap();
    let out = q2rec(&["run", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(q2rec(&["--help"]).status.code(), Some(0));
    assert_eq!(q2rec(&["--version"]).status.code(), Some(0));
}
