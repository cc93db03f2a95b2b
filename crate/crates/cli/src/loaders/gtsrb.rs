//! Folder-per-class image loader with bilinear resize to the spec shape.
//!
//! Layout: `<dir>/{train|test}/<class_id>/<image files>`. Class directories
//! are numeric; images are visited in sorted order for determinism.

use std::path::Path;

use dynback_core::dataset::{DatasetSpec, LabeledImage};
use dynback_core::tensor::Tensor;

use super::{io_at, LoadError, Split};

pub fn load(spec: &DatasetSpec, split: Split, dir: &Path) -> Result<Vec<LabeledImage>, LoadError> {
    let split_dir = dir.join(split.as_str());
    let mut class_dirs: Vec<(u32, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&split_dir).map_err(io_at(&split_dir))? {
        let entry = entry.map_err(io_at(&split_dir))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let class: u32 = name.parse().map_err(|_| LoadError::Corrupt {
            path: path.display().to_string(),
            msg: "class directory name is not an integer".into(),
        })?;
        if class as usize >= spec.class_count {
            return Err(LoadError::Spec(format!(
                "class directory {class} exceeds class count {}",
                spec.class_count
            )));
        }
        class_dirs.push((class, path));
    }
    class_dirs.sort_by_key(|(c, _)| *c);

    let (h, w, c) = spec.input_shape;
    let mut out = Vec::new();
    for (class, class_dir) in class_dirs {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(&class_dir)
            .map_err(io_at(&class_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .map(|e| {
                        let e = e.to_string_lossy().to_lowercase();
                        matches!(e.as_str(), "ppm" | "png" | "jpg" | "jpeg")
                    })
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        for file in files {
            let img = image::open(&file).map_err(|e| LoadError::Decode {
                path: file.display().to_string(),
                msg: e.to_string(),
            })?;
            let rgb = img.to_rgb8();
            let resized = image::imageops::resize(
                &rgb,
                w as u32,
                h as u32,
                image::imageops::FilterType::Triangle,
            );
            let mut data = vec![0.0f32; c * h * w];
            for (x, y, px) in resized.enumerate_pixels() {
                for ch in 0..c {
                    data[(ch * h + y as usize) * w + x as usize] = px.0[ch] as f32 / 255.0;
                }
            }
            let pixels = Tensor::from_vec(data, &[c, h, w]).expect("resized shape");
            out.push(LabeledImage {
                pixels,
                label: class,
            });
        }
    }
    Ok(out)
}
