//! Stage stamps, content hashing and the output-directory lock.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::PipelineError;

/// Hash of any serializable value list. Parts are length-prefixed so
/// concatenation is unambiguous.
pub fn key_of(parts: &[&dyn erased::Part]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        let bytes = p.bytes();
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    hex::encode(h.finalize())
}

pub mod erased {
    use super::Serialize;

    pub trait Part {
        fn bytes(&self) -> Vec<u8>;
    }

    impl<T: Serialize> Part for T {
        fn bytes(&self) -> Vec<u8> {
            serde_json::to_vec(self).expect("stage key parts serialize")
        }
    }
}

/// SHA-256 of a file, or of every file below a directory in sorted order.
pub fn hash_path(path: &Path) -> io::Result<String> {
    let mut h = Sha256::new();
    hash_into(&mut h, path, path)?;
    Ok(hex::encode(h.finalize()))
}

fn hash_into(h: &mut Sha256, root: &Path, path: &Path) -> io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            hash_into(h, root, &e)?;
        }
        return Ok(());
    }
    let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned();
    h.update(rel.as_bytes());
    h.update([0]);
    let mut f = fs::File::open(path)?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    h.update([0]);
    Ok(())
}

fn copy_recursive(from: &Path, to: &Path) -> io::Result<()> {
    if from.is_dir() {
        fs::create_dir_all(to)?;
        for e in fs::read_dir(from)? {
            let e = e?;
            copy_recursive(&e.path(), &to.join(e.file_name()))?;
        }
        Ok(())
    } else {
        if let Some(parent) = to.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::copy(from, to).map(|_| ())
    }
}

/// Skips stages whose stamp matches the current key and whose outputs exist.
/// Matching artifacts in a seed directory are copied instead of recomputed.
pub struct StageCache {
    dir: PathBuf,
    seeds: Vec<PathBuf>,
    executed: Vec<String>,
}

impl StageCache {
    pub fn new(dir: &Path, seeds: Vec<PathBuf>) -> Self {
        Self {
            dir: dir.to_owned(),
            seeds,
            executed: Vec::new(),
        }
    }

    pub fn executed(&self) -> &[String] {
        &self.executed
    }

    fn stamp_path(dir: &Path, stage: &str) -> PathBuf {
        dir.join("stamps").join(format!("{stage}.key"))
    }

    fn fresh(dir: &Path, stage: &str, key: &str, outputs: &[&str]) -> bool {
        fs::read_to_string(Self::stamp_path(dir, stage)).is_ok_and(|s| s.trim() == key)
            && outputs.iter().all(|o| dir.join(o).exists())
    }

    /// Run `produce` unless the stage is already up to date.
    pub fn run<E>(
        &mut self,
        stage: &str,
        key: &str,
        outputs: &[&str],
        produce: impl FnOnce(&Path) -> Result<(), E>,
    ) -> Result<(), PipelineError>
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        let io_err = |path: &Path| {
            let path = path.to_owned();
            move |source| PipelineError::Io { path, source }
        };
        if Self::fresh(&self.dir, stage, key, outputs) {
            log::info!("stage {stage}: up to date");
            return Ok(());
        }
        let stamp = Self::stamp_path(&self.dir, stage);
        if stamp.exists() {
            fs::remove_file(&stamp).map_err(io_err(&stamp))?;
        }
        if let Some(seed) = self.seeds.iter().find(|s| Self::fresh(s, stage, key, outputs)) {
            log::info!("stage {stage}: reusing artifacts from {}", seed.display());
            for o in outputs {
                let dst = self.dir.join(o);
                copy_recursive(&seed.join(o), &dst).map_err(io_err(&dst))?;
            }
        } else {
            log::info!("stage {stage}: running");
            produce(&self.dir).map_err(|e| PipelineError::Stage {
                stage: stage.to_owned(),
                source: Box::new(e),
            })?;
            self.executed.push(stage.to_owned());
        }
        let parent = stamp.parent().expect("stamp has a parent");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        fs::write(&stamp, key).map_err(io_err(&stamp))?;
        Ok(())
    }
}

pub const LOCK_FILE: &str = ".q2rec.lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_owned(),
            source,
        })?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(source) => Err(PipelineError::Io { path, source }),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
