//! Checkpoint container: a self-describing binary file holding named f32
//! tensors plus a JSON metadata block. Round-trips are bit-exact.
//!
//! Layout: magic `DBCKPT01`, u32 LE metadata length, metadata JSON, u32 LE
//! tensor count, then per tensor: u16 name length, name, u8 rank, u32 dims,
//! f32 LE data.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use dynback_core::dataset::DatasetSpec;
use dynback_core::models::{
    build_classifier, build_generator, ArchId, ClassifierModel, GeneratorModel,
};
use dynback_core::nn::Module;
use dynback_core::rng::SeededRng;
use dynback_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"DBCKPT01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a checkpoint (bad magic)")]
    BadMagic { path: String },
    #[error("metadata error in {path}: {msg}")]
    Metadata { path: String, msg: String },
    #[error("architecture mismatch: checkpoint holds {found}, expected {expected}")]
    ArchMismatch { found: String, expected: String },
    #[error("tensor `{name}` mismatch: {msg}")]
    TensorMismatch { name: String, msg: String },
    #[error("model build failed: {0}")]
    Build(#[from] dynback_core::Error),
}

/// Metadata carried by every checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    /// "classifier" or "generator".
    pub kind: String,
    pub arch: String,
    pub dataset: String,
    pub class_count: usize,
    /// (height, width, channels)
    pub input_shape: (usize, usize, usize),
    /// Generator output channels (0 for classifiers).
    pub out_channels: usize,
    pub frozen: bool,
    pub seed: u64,
    pub epoch: usize,
    pub config_hash: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn collect_state(model: &dyn Module) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    model.visit_state("", &mut |name, t| out.push((name.to_string(), t.clone())));
    out
}

fn write_archive(
    path: &Path,
    meta: &CheckpointMeta,
    tensors: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let meta_json = serde_json::to_vec(meta).expect("meta serializes");
    w.write_all(MAGIC).map_err(io_err(path))?;
    w.write_all(&(meta_json.len() as u32).to_le_bytes())
        .map_err(io_err(path))?;
    w.write_all(&meta_json).map_err(io_err(path))?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())
        .map_err(io_err(path))?;
    for (name, t) in tensors {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())
            .map_err(io_err(path))?;
        w.write_all(name_bytes).map_err(io_err(path))?;
        w.write_all(&[t.shape().len() as u8]).map_err(io_err(path))?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io_err(path))?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn read_archive(
    path: &Path,
) -> Result<(CheckpointMeta, BTreeMap<String, Tensor>), CheckpointError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4).map_err(io_err(path))?;
    let meta_len = u32::from_le_bytes(len4) as usize;
    let mut meta_buf = vec![0u8; meta_len];
    r.read_exact(&mut meta_buf).map_err(io_err(path))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&meta_buf).map_err(|e| CheckpointError::Metadata {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    r.read_exact(&mut len4).map_err(io_err(path))?;
    let count = u32::from_le_bytes(len4) as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let mut len2 = [0u8; 2];
        r.read_exact(&mut len2).map_err(io_err(path))?;
        let name_len = u16::from_le_bytes(len2) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf).map_err(io_err(path))?;
        let name = String::from_utf8(name_buf).map_err(|e| CheckpointError::Metadata {
            path: path.display().to_string(),
            msg: format!("tensor name not utf-8: {e}"),
        })?;
        let mut rank1 = [0u8; 1];
        r.read_exact(&mut rank1).map_err(io_err(path))?;
        let mut shape = Vec::with_capacity(rank1[0] as usize);
        for _ in 0..rank1[0] {
            r.read_exact(&mut len4).map_err(io_err(path))?;
            shape.push(u32::from_le_bytes(len4) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f32; n];
        for v in &mut data {
            r.read_exact(&mut len4).map_err(io_err(path))?;
            *v = f32::from_le_bytes(len4);
        }
        let t = Tensor::from_vec(data, &shape).expect("shape matches data");
        tensors.insert(name, t);
    }
    Ok((meta, tensors))
}

fn fill_state(
    model: &mut dyn Module,
    tensors: &BTreeMap<String, Tensor>,
) -> Result<(), CheckpointError> {
    let mut missing: Option<CheckpointError> = None;
    let mut used = 0usize;
    model.visit_state_mut("", &mut |name, t| {
        if missing.is_some() {
            return;
        }
        match tensors.get(name) {
            None => {
                missing = Some(CheckpointError::TensorMismatch {
                    name: name.to_string(),
                    msg: "absent from checkpoint".into(),
                });
            }
            Some(stored) => {
                if stored.shape() != t.shape() {
                    missing = Some(CheckpointError::TensorMismatch {
                        name: name.to_string(),
                        msg: format!("shape {:?} vs model {:?}", stored.shape(), t.shape()),
                    });
                } else {
                    t.data_mut().copy_from_slice(stored.data());
                    used += 1;
                }
            }
        }
    });
    if let Some(err) = missing {
        return Err(err);
    }
    if used != tensors.len() {
        return Err(CheckpointError::TensorMismatch {
            name: "<count>".into(),
            msg: format!("checkpoint holds {} tensors, model uses {used}", tensors.len()),
        });
    }
    Ok(())
}

/// Reconstruct the dataset spec a checkpoint was built against. Known names
/// come back with their documented contract; anything else synthesizes a
/// bare spec from the stored shape.
pub fn spec_from_meta(meta: &CheckpointMeta) -> DatasetSpec {
    match DatasetSpec::by_name(&meta.dataset) {
        Ok(s) => s,
        Err(_) => DatasetSpec {
            name: meta.dataset.clone(),
            class_count: meta.class_count,
            input_shape: meta.input_shape,
            train_count: 0,
            test_count: 0,
            augmentation_policy: vec![],
        },
    }
}

pub fn save_classifier(
    path: &Path,
    model: &ClassifierModel,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let mut meta = meta.clone();
    meta.kind = "classifier".into();
    meta.arch = model.arch.as_str().into();
    meta.class_count = model.class_count;
    meta.input_shape = model.input_shape;
    meta.out_channels = 0;
    write_archive(path, &meta, &collect_state(model))
}

pub fn load_classifier(path: &Path) -> Result<(ClassifierModel, CheckpointMeta), CheckpointError> {
    let (meta, tensors) = read_archive(path)?;
    if meta.kind != "classifier" {
        return Err(CheckpointError::ArchMismatch {
            found: format!("{} ({})", meta.arch, meta.kind),
            expected: "classifier".into(),
        });
    }
    let arch = ArchId::parse(&meta.arch).map_err(|_| CheckpointError::ArchMismatch {
        found: meta.arch.clone(),
        expected: "a known classifier architecture".into(),
    })?;
    let spec = spec_from_meta(&meta);
    let mut model = build_classifier(&spec, &mut SeededRng::new(0, 0))?;
    if model.arch != arch {
        return Err(CheckpointError::ArchMismatch {
            found: meta.arch.clone(),
            expected: model.arch.as_str().into(),
        });
    }
    fill_state(&mut model, &tensors)?;
    Ok((model, meta))
}

pub fn save_generator(
    path: &Path,
    model: &GeneratorModel,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let mut meta = meta.clone();
    meta.kind = "generator".into();
    meta.arch = model.arch.as_str().into();
    meta.input_shape = model.input_shape;
    meta.out_channels = model.out_channels;
    meta.frozen = model.frozen;
    write_archive(path, &meta, &collect_state(model))
}

pub fn load_generator(path: &Path) -> Result<(GeneratorModel, CheckpointMeta), CheckpointError> {
    let (meta, tensors) = read_archive(path)?;
    if meta.kind != "generator" {
        return Err(CheckpointError::ArchMismatch {
            found: format!("{} ({})", meta.arch, meta.kind),
            expected: "generator".into(),
        });
    }
    let spec = spec_from_meta(&meta);
    let mut model = build_generator(&spec, meta.out_channels, &mut SeededRng::new(0, 0))?;
    fill_state(&mut model, &tensors)?;
    if meta.frozen {
        model.freeze();
    }
    Ok((model, meta))
}

impl CheckpointMeta {
    pub fn new(dataset: &DatasetSpec, seed: u64, epoch: usize, config_hash: &str) -> Self {
        CheckpointMeta {
            schema_version: crate::SCHEMA_VERSION,
            kind: String::new(),
            arch: String::new(),
            dataset: dataset.name.clone(),
            class_count: dataset.class_count,
            input_shape: dataset.input_shape,
            out_channels: 0,
            frozen: false,
            seed,
            epoch,
            config_hash: config_hash.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dynback_core::rng::streams;

    fn probe_outputs(model: &mut ClassifierModel) -> Vec<u32> {
        let mut rng = SeededRng::new(42, 0);
        let mut x = Tensor::zeros(&[2, 1, 28, 28]);
        x.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
        model
            .forward_eval(x)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn classifier_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        let spec = DatasetSpec::mnist();
        let mut model =
            build_classifier(&spec, &mut SeededRng::new(9, streams::MODEL_F)).unwrap();
        let before = probe_outputs(&mut model);
        let meta = CheckpointMeta::new(&spec, 9, 3, "deadbeef");
        save_classifier(&path, &model, &meta).unwrap();
        let (mut loaded, got_meta) = load_classifier(&path).unwrap();
        let after = probe_outputs(&mut loaded);
        assert_eq!(before, after, "probe outputs must match bit for bit");
        assert_eq!(got_meta.seed, 9);
        assert_eq!(got_meta.epoch, 3);
        assert_eq!(got_meta.config_hash, "deadbeef");
        assert_eq!(got_meta.arch, "mnist_cnn");
    }

    #[test]
    fn generator_round_trip_preserves_frozen_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gm.ckpt");
        let spec = DatasetSpec::mnist();
        let mut g = build_generator(&spec, 1, &mut SeededRng::new(4, streams::MODEL_GM)).unwrap();
        g.freeze();
        let mut rng = SeededRng::new(1, 0);
        let mut x = Tensor::zeros(&[1, 1, 28, 28]);
        x.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
        let before: Vec<u32> = g
            .forward_eval(x.clone())
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        let meta = CheckpointMeta::new(&spec, 4, 25, "cafe");
        save_generator(&path, &g, &meta).unwrap();
        let (mut loaded, meta2) = load_generator(&path).unwrap();
        assert!(loaded.frozen);
        assert!(meta2.frozen);
        let after: Vec<u32> = loaded
            .forward_eval(x)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn wrong_kind_is_arch_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gm.ckpt");
        let spec = DatasetSpec::mnist();
        let g = build_generator(&spec, 1, &mut SeededRng::new(4, streams::MODEL_GM)).unwrap();
        save_generator(&path, &g, &CheckpointMeta::new(&spec, 4, 0, "x")).unwrap();
        assert!(matches!(
            load_classifier(&path),
            Err(CheckpointError::ArchMismatch { .. })
        ));
    }

    #[test]
    fn truncated_file_is_io_error_naming_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.ckpt");
        std::fs::write(&path, b"DBCKPT01\xff\xff").unwrap();
        match load_classifier(&path) {
            Err(CheckpointError::Io { path: p, .. }) => assert!(p.contains("broken.ckpt")),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn not_a_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            load_classifier(&path),
            Err(CheckpointError::BadMagic { .. })
        ));
    }
}
