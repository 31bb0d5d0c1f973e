#![allow(dead_code)]

use std::path::{Path, PathBuf};

use q2rec_core::pipeline::PipelineConfig;

pub fn synth_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/synth")
}

/// Mock-provider config over the checked-in synthetic corpus; `extra` is
/// appended TOML (later tables override nothing, so pass whole sections).
pub fn synth_config(out: &Path, fusion: &str, extra: &str) -> PipelineConfig {
    let text = format!(
        r#"
output_dir = "{out}"
seed = 42

[data]
interactions = "interactions.jsonl"
items = "items.jsonl"

[llm]
mock_mode = true

[embedding]
kind = "mock"
dimension = 64

[fusion]
{fusion}

{extra}
"#,
        out = out.display()
    );
    PipelineConfig::from_toml_str(&text, &synth_dir()).unwrap()
}
