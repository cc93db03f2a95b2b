//! IDX-format loader (the classic ubyte image/label archives, raw or gzip).

use std::io::Read;
use std::path::Path;

use dynback_core::dataset::{DatasetSpec, LabeledImage};
use dynback_core::tensor::Tensor;
use flate2::read::GzDecoder;

use super::{io_at, LoadError, Split};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Open `<base>` or `<base>.gz`, whichever exists, fully decompressed.
fn read_maybe_gz(dir: &Path, base: &str) -> Result<(Vec<u8>, String), LoadError> {
    let raw = dir.join(base);
    let gz = dir.join(format!("{base}.gz"));
    if raw.exists() {
        let bytes = std::fs::read(&raw).map_err(io_at(&raw))?;
        return Ok((bytes, raw.display().to_string()));
    }
    let file = std::fs::File::open(&gz).map_err(io_at(&gz))?;
    let mut out = Vec::new();
    GzDecoder::new(file)
        .read_to_end(&mut out)
        .map_err(|e| LoadError::Corrupt {
            path: gz.display().to_string(),
            msg: format!("gzip: {e}"),
        })?;
    Ok((out, gz.display().to_string()))
}

fn be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32, LoadError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| LoadError::Corrupt {
            path: path.to_string(),
            msg: "truncated header".into(),
        })
}

pub fn load(spec: &DatasetSpec, split: Split, dir: &Path) -> Result<Vec<LabeledImage>, LoadError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let (img_bytes, img_path) = read_maybe_gz(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let (lbl_bytes, lbl_path) = read_maybe_gz(dir, &format!("{prefix}-labels-idx1-ubyte"))?;

    if be_u32(&img_bytes, 0, &img_path)? != IMAGE_MAGIC {
        return Err(LoadError::Corrupt {
            path: img_path,
            msg: "bad image magic".into(),
        });
    }
    let n = be_u32(&img_bytes, 4, &img_path)? as usize;
    let rows = be_u32(&img_bytes, 8, &img_path)? as usize;
    let cols = be_u32(&img_bytes, 12, &img_path)? as usize;
    let (h, w, c) = spec.input_shape;
    if rows != h || cols != w || c != 1 {
        return Err(LoadError::Corrupt {
            path: img_path,
            msg: format!("image dims {rows}x{cols} do not match spec {h}x{w}x{c}"),
        });
    }
    if img_bytes.len() < 16 + n * rows * cols {
        return Err(LoadError::Corrupt {
            path: img_path,
            msg: "image payload truncated".into(),
        });
    }

    if be_u32(&lbl_bytes, 0, &lbl_path)? != LABEL_MAGIC {
        return Err(LoadError::Corrupt {
            path: lbl_path,
            msg: "bad label magic".into(),
        });
    }
    let n_labels = be_u32(&lbl_bytes, 4, &lbl_path)? as usize;
    if n_labels != n {
        return Err(LoadError::Corrupt {
            path: lbl_path,
            msg: format!("{n_labels} labels for {n} images"),
        });
    }
    if lbl_bytes.len() < 8 + n {
        return Err(LoadError::Corrupt {
            path: lbl_path,
            msg: "label payload truncated".into(),
        });
    }

    let px = rows * cols;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = lbl_bytes[8 + i];
        if (label as usize) >= spec.class_count {
            return Err(LoadError::Spec(format!(
                "label {label} out of range for {} classes in {lbl_path}",
                spec.class_count
            )));
        }
        let src = &img_bytes[16 + i * px..16 + (i + 1) * px];
        let data: Vec<f32> = src.iter().map(|&b| b as f32 / 255.0).collect();
        let pixels = Tensor::from_vec(data, &[1, rows, cols]).expect("pixel shape");
        out.push(LabeledImage {
            pixels,
            label: label as u32,
        });
    }
    Ok(out)
}

/// Write images/labels in IDX format (used by the synthetic corpus and by
/// test fixtures).
pub fn write_idx(
    dir: &Path,
    prefix: &str,
    images: &[LabeledImage],
    rows: usize,
    cols: usize,
) -> Result<(), LoadError> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let img_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lbl_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lbl = Vec::with_capacity(8 + images.len());
    lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(images.len() as u32).to_be_bytes());
    for item in images {
        for &v in item.pixels.data() {
            img.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        lbl.push(item.label as u8);
    }
    std::fs::write(&img_path, img).map_err(io_at(&img_path))?;
    std::fs::write(&lbl_path, lbl).map_err(io_at(&lbl_path))?;
    Ok(())
}
