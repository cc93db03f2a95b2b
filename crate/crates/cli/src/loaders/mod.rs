//! Dataset loading from disk, dataset preparation, and manifests.
//!
//! Directory layout under the data root:
//!   mnist/         train-images-idx3-ubyte[.gz], train-labels-idx1-ubyte[.gz],
//!                  t10k-images-idx3-ubyte[.gz], t10k-labels-idx1-ubyte[.gz]
//!   cifar10/       data_batch_1.bin .. data_batch_5.bin, test_batch.bin
//!   gtsrb/         train/<class_id>/*.{ppm,png,jpg}, test/<class_id>/*
//!   synth-digits/  same file names as mnist (generated corpus)

mod cifar;
mod gtsrb;
mod mnist;
pub mod synth;

use std::path::{Path, PathBuf};

use dynback_core::dataset::{DatasetSpec, LabeledImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("missing or unreadable file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt data in {path}: {msg}")]
    Corrupt { path: String, msg: String },
    #[error("dataset spec violation: {0}")]
    Spec(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("image decode failed at {path}: {msg}")]
    Decode { path: String, msg: String },
}

pub(crate) fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |source| LoadError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Specs for the datasets this crate can load. The synthetic corpus shares
/// the 28x28x1/10-class contract so the same classifier applies.
pub fn spec_by_name(name: &str) -> Result<DatasetSpec, LoadError> {
    match name {
        "mnist" | "cifar10" | "gtsrb" => {
            DatasetSpec::by_name(name).map_err(|e| LoadError::Spec(e.to_string()))
        }
        "synth-digits" => {
            let mut s = DatasetSpec::mnist();
            s.name = "synth-digits".into();
            Ok(s)
        }
        other => Err(LoadError::UnknownDataset(other.to_string())),
    }
}

/// Resolve the dataset root: explicit flag, then the environment variable,
/// then ./data.
pub fn resolve_data_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(crate::DATA_ROOT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("data")
}

/// Load one split of a dataset, normalized to [0,1], deterministic order.
pub fn load_split(
    spec: &DatasetSpec,
    split: Split,
    root: &Path,
) -> Result<Vec<LabeledImage>, LoadError> {
    spec.validate().map_err(|e| LoadError::Spec(e.to_string()))?;
    let dir = root.join(&spec.name);
    let data = match spec.name.as_str() {
        "mnist" | "synth-digits" => mnist::load(spec, split, &dir)?,
        "cifar10" => cifar::load(spec, split, &dir)?,
        "gtsrb" => gtsrb::load(spec, split, &dir)?,
        other => return Err(LoadError::UnknownDataset(other.to_string())),
    };
    let want = match split {
        Split::Train => spec.train_count,
        Split::Test => spec.test_count,
    };
    if data.len() != want {
        return Err(LoadError::Spec(format!(
            "{} {} split holds {} items, expected {want}",
            spec.name,
            split.as_str(),
            data.len()
        )));
    }
    Ok(data)
}

/// Per-dataset manifest written by prepare-data.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub name: String,
    pub class_count: usize,
    pub input_shape: (usize, usize, usize),
    pub train_count: usize,
    pub test_count: usize,
    /// sha256 over the raw bytes of every data file, in sorted path order.
    pub content_sha256: String,
}

/// Hash every regular file under the dataset directory, sorted by path.
pub fn hash_dataset_dir(dir: &Path) -> Result<String, LoadError> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for f in &files {
        if f.file_name().is_some_and(|n| n == "manifest.json") {
            continue;
        }
        let bytes = std::fs::read(f).map_err(io_at(f))?;
        hasher.update(f.strip_prefix(dir).unwrap_or(f).to_string_lossy().as_bytes());
        hasher.update(bytes);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), LoadError> {
    for entry in std::fs::read_dir(dir).map_err(io_at(dir))? {
        let entry = entry.map_err(io_at(dir))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Validate a prepared dataset directory and write its manifest.
pub fn write_manifest(spec: &DatasetSpec, root: &Path) -> Result<DatasetManifest, LoadError> {
    let train = load_split(spec, Split::Train, root)?;
    let test = load_split(spec, Split::Test, root)?;
    let dir = root.join(&spec.name);
    let manifest = DatasetManifest {
        schema_version: crate::SCHEMA_VERSION,
        name: spec.name.clone(),
        class_count: spec.class_count,
        input_shape: spec.input_shape,
        train_count: train.len(),
        test_count: test.len(),
        content_sha256: hash_dataset_dir(&dir)?,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(io_at(&path))?;
    Ok(manifest)
}
