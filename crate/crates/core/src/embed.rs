//! Embedding providers and the on-disk vector matrix format.
//!
//! A matrix directory holds `manifest.json` (`{"dimension": D, "count": N}`),
//! `vectors.f32` (N×D little-endian `f32`, row-major) and `ids.txt` (one row
//! id per line). Score matrices add `columns.txt` naming the D columns.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hash::{fnv1a64, fnv1a64_extend};
use crate::querygen::EnrichedDocument;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("text for {0:?} produced an empty embedding")]
    EmptyText(String),
    #[error("no precomputed embedding for {0:?}")]
    MissingEntry(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value in embedding for {0:?}")]
    NonFinite(String),
    #[error("embedding service failure after {attempts} attempt(s): {message}")]
    Http { attempts: u32, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("provider configuration: {0}")]
    Config(String),
}

/// A fixed-dimension real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Scale to unit length. The norm is taken in `f64` and each coordinate is
/// divided in `f64` before rounding back to `f32`.
pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>, EmbedError> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(EmbedError::ZeroVector);
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

/// Something that maps documents to vectors, order-aligned.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, docs: &[EnrichedDocument]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Hashed character-trigram encoder.
///
/// Text is lowercased, every non-alphanumeric character becomes a space,
/// whitespace runs collapse, and the result is padded with one space on each
/// side. Each character trigram is hashed with FNV-1a (state primed with the
/// little-endian seed bytes); the hash picks coordinate `h % D` and its top
/// bit picks the sign. Counts are then L2-normalized. Texts that share
/// vocabulary land close together, which is enough for retrieval tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockEncoder {
    pub dimension: usize,
    pub seed: u64,
}

impl MockEncoder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        Self { dimension, seed }
    }

    fn canonical(text: &str) -> Vec<char> {
        let lowered: String = text
            .chars()
            .flat_map(char::to_lowercase)
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
        format!(" {collapsed} ").chars().collect()
    }

    pub fn embed_text(&self, subject: &str, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let chars = Self::canonical(text);
        let base = fnv1a64(&self.seed.to_le_bytes());
        let mut acc = vec![0f64; self.dimension];
        let mut buf = String::new();
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            let h = fnv1a64_extend(base, buf.as_bytes());
            let idx = (h % self.dimension as u64) as usize;
            acc[idx] += if h >> 63 == 1 { -1.0 } else { 1.0 };
        }
        let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(EmbedError::EmptyText(subject.to_owned()));
        }
        Ok(EmbeddingVector(acc.iter().map(|x| (x / n) as f32).collect()))
    }
}

impl Embedder for MockEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, docs: &[EnrichedDocument]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        docs.par_iter()
            .map(|d| self.embed_text(&d.subject_id, &d.text))
            .collect()
    }
}

/// Precomputed vectors looked up by subject id.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    matrix: VectorMatrix,
    rows: HashMap<String, usize>,
}

impl FileEmbedder {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Ok(Self::from_matrix(VectorMatrix::load(dir)?))
    }

    pub fn from_matrix(matrix: VectorMatrix) -> Self {
        let rows = matrix
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Self { matrix, rows }
    }
}

impl Embedder for FileEmbedder {
    fn dimension(&self) -> usize {
        self.matrix.dimension
    }

    fn embed(&self, docs: &[EnrichedDocument]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        docs.iter()
            .map(|d| {
                let row = *self
                    .rows
                    .get(&d.subject_id)
                    .ok_or_else(|| EmbedError::MissingEntry(d.subject_id.clone()))?;
                Ok(EmbeddingVector(self.matrix.row(row).to_vec()))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    #[serde(skip_serializing_if = "str::is_empty")]
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
    #[serde(default)]
    index: Option<usize>,
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
    batch_size: usize,
    max_attempts: u32,
}

impl HttpEmbedder {
    pub fn new(cfg: &EmbeddingProviderConfig) -> Result<Self, EmbedError> {
        let endpoint = cfg
            .endpoint_url
            .clone()
            .filter(|u| !u.is_empty())
            .ok_or_else(|| EmbedError::Config("http provider needs endpoint_url".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model: cfg.model.clone().unwrap_or_default(),
            api_key: cfg
                .api_key_env_var
                .as_deref()
                .and_then(|v| std::env::var(v).ok())
                .filter(|k| !k.is_empty()),
            dimension: cfg.dimension,
            batch_size: cfg.batch_size.max(1),
            max_attempts: cfg.max_attempts.max(1),
        })
    }

    fn post_batch(&self, texts: Vec<&str>) -> Result<Vec<Vec<f32>>, (bool, String)> {
        let n = texts.len();
        let body = EmbeddingRequest {
            model: &self.model,
            input: texts,
        };
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, e.to_string()))?;
        if !(200..300).contains(&status) {
            let retry = status == 429 || status >= 500;
            return Err((retry, format!("HTTP {status}: {text}")));
        }
        let parsed: EmbeddingResponse =
            serde_json::from_str(&text).map_err(|e| (false, e.to_string()))?;
        if parsed.data.len() != n {
            return Err((false, format!("expected {n} embeddings, got {}", parsed.data.len())));
        }
        let mut out: Vec<Option<Vec<f32>>> = vec![None; n];
        for (pos, d) in parsed.data.into_iter().enumerate() {
            let at = d.index.unwrap_or(pos);
            if at >= n {
                return Err((false, format!("embedding index {at} out of range")));
            }
            out[at] = Some(d.embedding);
        }
        out.into_iter()
            .map(|v| v.ok_or((false, "duplicate embedding index".to_owned())))
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, docs: &[EnrichedDocument]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(docs.len());
        for chunk in docs.chunks(self.batch_size) {
            let mut attempt = 1;
            let vectors = loop {
                match self.post_batch(chunk.iter().map(|d| d.text.as_str()).collect()) {
                    Ok(v) => break v,
                    Err((true, msg)) if attempt < self.max_attempts => {
                        log::warn!("embedding attempt {attempt} failed: {msg}; retrying");
                        std::thread::sleep(Duration::from_millis(200 * (1 << (attempt - 1).min(5))));
                        attempt += 1;
                    }
                    Err((_, message)) => {
                        return Err(EmbedError::Http {
                            attempts: attempt,
                            message,
                        })
                    }
                }
            };
            out.extend(vectors.into_iter().map(EmbeddingVector));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    File,
    Mock,
}

fn default_batch() -> usize {
    32
}
fn default_timeout() -> u64 {
    60
}
fn default_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env_var: Option<String>,
    /// Mock encoder hash seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_timeout")]
    pub timeout: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

impl EmbeddingProviderConfig {
    pub fn mock(dimension: usize, seed: u64) -> Self {
        Self {
            kind: ProviderKind::Mock,
            dimension,
            endpoint_url: None,
            path: None,
            model: None,
            api_key_env_var: None,
            seed: Some(seed),
            batch_size: default_batch(),
            timeout: default_timeout(),
            max_attempts: default_attempts(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbedError> {
        if self.dimension == 0 {
            return Err(EmbedError::Config("dimension must be at least 1".into()));
        }
        match self.kind {
            ProviderKind::Mock => Ok(Box::new(MockEncoder::new(self.dimension, self.seed.unwrap_or(0)))),
            ProviderKind::File => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| EmbedError::Config("file provider needs path".into()))?;
                let fe = FileEmbedder::open(path)?;
                if fe.dimension() != self.dimension {
                    return Err(EmbedError::Dimension {
                        expected: self.dimension,
                        got: fe.dimension(),
                    });
                }
                Ok(Box::new(fe))
            }
            ProviderKind::Http => Ok(Box::new(HttpEmbedder::new(self)?)),
        }
    }
}

/// Embed documents and check dimension and finiteness of every result.
pub fn embed_texts(
    docs: &[EnrichedDocument],
    provider: &dyn Embedder,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let out = provider.embed(docs)?;
    if out.len() != docs.len() {
        return Err(EmbedError::Config(format!(
            "provider returned {} vectors for {} documents",
            out.len(),
            docs.len()
        )));
    }
    for (d, v) in docs.iter().zip(&out) {
        if v.dimension() != provider.dimension() {
            return Err(EmbedError::Dimension {
                expected: provider.dimension(),
                got: v.dimension(),
            });
        }
        if v.0.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite(d.subject_id.clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    dimension: usize,
    count: usize,
}

/// Row-labelled dense `f32` matrix, the persisted form of embeddings, item
/// indexes and full-pool score matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMatrix {
    pub ids: Vec<String>,
    pub dimension: usize,
    pub data: Vec<f32>,
    /// Column labels, present for score matrices.
    pub columns: Option<Vec<String>>,
}

impl VectorMatrix {
    pub fn from_rows(
        ids: Vec<String>,
        rows: &[EmbeddingVector],
        dimension: usize,
    ) -> Result<Self, EmbedError> {
        if ids.len() != rows.len() {
            return Err(EmbedError::Config(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * dimension);
        for r in rows {
            if r.dimension() != dimension {
                return Err(EmbedError::Dimension {
                    expected: dimension,
                    got: r.dimension(),
                });
            }
            data.extend_from_slice(&r.0);
        }
        Ok(Self {
            ids,
            dimension,
            data,
            columns: None,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), EmbedError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| EmbedError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for id in self.ids.iter().chain(self.columns.iter().flatten()) {
            if id.contains('\n') || id.contains('\r') {
                return Err(EmbedError::Format {
                    path: dir.to_owned(),
                    message: format!("id {id:?} contains a line break"),
                });
            }
        }
        let manifest = Manifest {
            dimension: self.dimension,
            count: self.ids.len(),
        };
        let mp = dir.join("manifest.json");
        fs::write(&mp, serde_json::to_vec(&manifest).expect("manifest serializes")).map_err(io(&mp))?;
        let vp = dir.join("vectors.f32");
        let bytes: Vec<u8> = self.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        fs::write(&vp, bytes).map_err(io(&vp))?;
        let ip = dir.join("ids.txt");
        fs::write(&ip, lines(&self.ids)).map_err(io(&ip))?;
        let cp = dir.join("columns.txt");
        match &self.columns {
            Some(cols) => fs::write(&cp, lines(cols)).map_err(io(&cp))?,
            None if cp.exists() => fs::remove_file(&cp).map_err(io(&cp))?,
            None => {}
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|source| EmbedError::Io { path: p, source })
        };
        let fmt = |message: String| EmbedError::Format {
            path: dir.to_owned(),
            message,
        };
        let manifest: Manifest = serde_json::from_slice(&read("manifest.json")?)
            .map_err(|e| fmt(format!("manifest.json: {e}")))?;
        let bytes = read("vectors.f32")?;
        let expected = manifest.count * manifest.dimension * 4;
        if bytes.len() != expected {
            return Err(fmt(format!(
                "vectors.f32 has {} bytes, manifest implies {expected}",
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let ids = parse_lines(&read("ids.txt")?);
        if ids.len() != manifest.count {
            return Err(fmt(format!(
                "ids.txt has {} ids, manifest count is {}",
                ids.len(),
                manifest.count
            )));
        }
        let columns = if dir.join("columns.txt").exists() {
            let cols = parse_lines(&read("columns.txt")?);
            if cols.len() != manifest.dimension {
                return Err(fmt(format!(
                    "columns.txt has {} labels, dimension is {}",
                    cols.len(),
                    manifest.dimension
                )));
            }
            Some(cols)
        } else {
            None
        };
        Ok(Self {
            ids,
            dimension: manifest.dimension,
            data,
            columns,
        })
    }
}

fn lines(ids: &[String]) -> String {
    let mut s = String::new();
    for id in ids {
        s.push_str(id);
        s.push('\n');
    }
    s
}

fn parse_lines(bytes: &[u8]) -> Vec<String> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> EnrichedDocument {
        EnrichedDocument {
            subject_id: id.into(),
            text: text.into(),
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(EmbedError::ZeroVector)));
    }

    #[test]
    fn mock_is_deterministic_and_discriminating() {
        let enc = MockEncoder::new(8, 7);
        let a = enc.embed(&[doc("a", "red kettle"), doc("b", "red kettle")]).unwrap();
        assert_eq!(a[0], a[1]);
        let b = enc.embed(&[doc("c", "yoga mat")]).unwrap();
        // Oracle: the two texts hash to different coordinate multisets, so
        // evaluating both must give vectors that differ somewhere.
        assert!(a[0].0.iter().zip(&b[0].0).any(|(x, y)| x != y));
        assert!((a[0].norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mock_canonicalizes_case_and_punctuation() {
        let enc = MockEncoder::new(16, 0);
        let a = enc.embed_text("a", "Red-Kettle!").unwrap();
        let b = enc.embed_text("b", "  red kettle ").unwrap();
        assert_eq!(a, b);
        assert!(matches!(enc.embed_text("e", " !! "), Ok(_) | Err(EmbedError::EmptyText(_))));
    }

    #[test]
    fn mock_shared_vocabulary_scores_higher() {
        let enc = MockEncoder::new(64, 1);
        let q = enc.embed_text("q", "camping tent waterproof").unwrap();
        let near = enc.embed_text("n", "waterproof camping tent for two").unwrap();
        let far = enc.embed_text("f", "lipstick matte shade").unwrap();
        let dot = |a: &EmbeddingVector, b: &EmbeddingVector| {
            a.0.iter().zip(&b.0).map(|(x, y)| *x as f64 * *y as f64).sum::<f64>()
        };
        assert!(dot(&q, &near) > dot(&q, &far));
    }

    #[test]
    fn file_provider_returns_rows_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            EmbeddingVector(vec![1.0, 2.0]),
            EmbeddingVector(vec![3.0, 4.0]),
            EmbeddingVector(vec![5.0, 6.5]),
        ];
        let m = VectorMatrix::from_rows(vec!["x".into(), "y".into(), "z".into()], &rows, 2).unwrap();
        m.save(dir.path()).unwrap();
        let fe = FileEmbedder::open(dir.path()).unwrap();
        let got = embed_texts(&[doc("z", ""), doc("x", ""), doc("y", "")], &fe).unwrap();
        assert_eq!(got, vec![rows[2].clone(), rows[0].clone(), rows[1].clone()]);
        assert!(matches!(
            fe.embed(&[doc("nope", "")]),
            Err(EmbedError::MissingEntry(id)) if id == "nope"
        ));
    }

    #[test]
    fn file_provider_dimension_checked() {
        let dir = tempfile::tempdir().unwrap();
        let m = VectorMatrix::from_rows(vec!["x".into()], &[EmbeddingVector(vec![1.0, 2.0])], 2).unwrap();
        m.save(dir.path()).unwrap();
        let cfg = EmbeddingProviderConfig {
            kind: ProviderKind::File,
            path: Some(dir.path().to_owned()),
            ..EmbeddingProviderConfig::mock(3, 0)
        };
        assert!(matches!(cfg.build(), Err(EmbedError::Dimension { expected: 3, got: 2 })));
    }

    #[test]
    fn matrix_load_detects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let m = VectorMatrix::from_rows(vec!["x".into()], &[EmbeddingVector(vec![1.0, 2.0])], 2).unwrap();
        m.save(dir.path()).unwrap();
        let p = dir.path().join("vectors.f32");
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..6]).unwrap();
        assert!(matches!(VectorMatrix::load(dir.path()), Err(EmbedError::Format { .. })));
    }

    #[test]
    fn matrix_columns_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = VectorMatrix::from_rows(vec!["u".into()], &[EmbeddingVector(vec![0.5, -1.0])], 2).unwrap();
        m.columns = Some(vec!["a".into(), "b".into()]);
        m.save(dir.path()).unwrap();
        assert_eq!(VectorMatrix::load(dir.path()).unwrap(), m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_vec(d: usize) -> impl Strategy<Value = Vec<f32>> {
            prop::collection::vec(-10.0f32..10.0, d).prop_filter("non-zero", |v| norm(v) > 1e-3)
        }

        proptest! {
            #[test]
            fn cosine_equals_dot_of_normalized((a, b) in (1usize..24).prop_flat_map(|d| (arb_vec(d), arb_vec(d)))) {
                let raw = crate::vectorstore::cosine_similarity(&a, &b).unwrap();
                let na = l2_normalize(&a).unwrap();
                let nb = l2_normalize(&b).unwrap();
                let dot: f64 = na.iter().zip(&nb).map(|(x, y)| *x as f64 * *y as f64).sum();
                prop_assert!((raw - dot).abs() <= 1e-6);
                prop_assert!((norm(&na) - 1.0).abs() <= 1e-6);
            }

            #[test]
            fn mock_is_a_pure_function(text in ".{1,80}") {
                let enc = MockEncoder::new(32, 3);
                let a = enc.embed_text("s", &text);
                let b = enc.embed_text("t", &text);
                match (a, b) {
                    (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                    (Err(_), Err(_)) => {}
                    _ => prop_assert!(false, "inconsistent outcome"),
                }
            }
        }
    }
}
