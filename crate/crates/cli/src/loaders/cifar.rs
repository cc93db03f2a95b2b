//! CIFAR-10 binary batch loader: records of 1 label byte + 3072 pixel bytes
//! (3 channel planes of 32x32), 10000 records per file.

use std::path::Path;

use dynback_core::dataset::{DatasetSpec, LabeledImage};
use dynback_core::tensor::Tensor;

use super::{io_at, LoadError, Split};

const RECORD: usize = 1 + 3072;
const PER_FILE: usize = 10_000;

pub fn load(spec: &DatasetSpec, split: Split, dir: &Path) -> Result<Vec<LabeledImage>, LoadError> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let mut out = Vec::with_capacity(files.len() * PER_FILE);
    for name in files {
        let path = dir.join(&name);
        let bytes = std::fs::read(&path).map_err(io_at(&path))?;
        if bytes.len() != RECORD * PER_FILE {
            return Err(LoadError::Corrupt {
                path: path.display().to_string(),
                msg: format!("{} bytes, expected {}", bytes.len(), RECORD * PER_FILE),
            });
        }
        for rec in bytes.chunks_exact(RECORD) {
            let label = rec[0];
            if (label as usize) >= spec.class_count {
                return Err(LoadError::Spec(format!(
                    "label {label} out of range in {}",
                    path.display()
                )));
            }
            let data: Vec<f32> = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
            let pixels = Tensor::from_vec(data, &[3, 32, 32]).expect("cifar record shape");
            out.push(LabeledImage {
                pixels,
                label: label as u32,
            });
        }
    }
    Ok(out)
}

/// Write CIFAR-style binary batches (test fixtures).
#[cfg(test)]
pub fn write_batches(
    dir: &Path,
    images: &[LabeledImage],
    split: Split,
) -> Result<(), LoadError> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    assert!(images.len() % PER_FILE == 0);
    let names: Vec<String> = match split {
        Split::Train => (1..=images.len() / PER_FILE)
            .map(|i| format!("data_batch_{i}.bin"))
            .collect(),
        Split::Test => vec!["test_batch.bin".into()],
    };
    for (chunk, name) in images.chunks(PER_FILE).zip(names) {
        let mut bytes = Vec::with_capacity(RECORD * chunk.len());
        for item in chunk {
            bytes.push(item.label as u8);
            for &v in item.pixels.data() {
                bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        let path = dir.join(&name);
        std::fs::write(&path, bytes).map_err(io_at(&path))?;
    }
    Ok(())
}
