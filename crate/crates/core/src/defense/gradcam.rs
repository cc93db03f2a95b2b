//! Gradient-weighted class activation heatmaps.
//!
//! The heatmap is ReLU(sum_k alpha_k A_k) over the last conv stage's feature
//! maps, alpha_k being the spatial mean of the class score's gradient at
//! channel k, bilinearly upsampled to the input resolution and normalized
//! to [0, 1].

use crate::error::{Error, Result};
use crate::math::floor;
use crate::models::ClassifierModel;
use crate::nn::Ctx;
use crate::tensor::Tensor;

/// Heatmap for `class` on a single image [C, H, W]. Output is [H, W] in
/// [0, 1]; an all-zero gradient yields an all-zero map.
pub fn gradcam(f: &mut ClassifierModel, x: &Tensor, class: u32) -> Result<Tensor> {
    if x.shape().len() != 3 {
        return Err(Error::shape("gradcam expects an image [C,H,W]"));
    }
    if class as usize >= f.class_count {
        return Err(Error::config("class out of range"));
    }
    let (h_in, w_in) = (x.shape()[1], x.shape()[2]);
    let mut batch_shape = alloc::vec![1];
    batch_shape.extend_from_slice(x.shape());
    let batch = Tensor::from_vec(x.data().to_vec(), &batch_shape).expect("batch shape");

    let (logits, feats) = f.forward_capture_features(batch, &mut Ctx::eval());
    // gradient of the raw class score
    let mut dlogits = Tensor::zeros(logits.shape());
    dlogits.data_mut()[class as usize] = 1.0;
    let (_, dfeats) = f.backward_capture_features(dlogits);

    let (_, c, fh, fw) = feats.dims4();
    let spatial = fh * fw;
    // channel weights: spatial mean of the gradient
    let mut cam = alloc::vec![0.0f32; spatial];
    for ch in 0..c {
        let g = &dfeats.data()[ch * spatial..(ch + 1) * spatial];
        let alpha = (g.iter().map(|&v| v as f64).sum::<f64>() / spatial as f64) as f32;
        let a = &feats.data()[ch * spatial..(ch + 1) * spatial];
        for e in 0..spatial {
            cam[e] += alpha * a[e];
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));

    // bilinear upsample to the input resolution
    let mut up = Tensor::zeros(&[h_in, w_in]);
    for y in 0..h_in {
        for xx in 0..w_in {
            let sy = if h_in > 1 {
                y as f32 * (fh - 1) as f32 / (h_in - 1) as f32
            } else {
                0.0
            };
            let sx = if w_in > 1 {
                xx as f32 * (fw - 1) as f32 / (w_in - 1) as f32
            } else {
                0.0
            };
            let y0 = floor(sy) as usize;
            let x0 = floor(sx) as usize;
            let y1 = (y0 + 1).min(fh - 1);
            let x1 = (x0 + 1).min(fw - 1);
            let (fy, fx) = (sy - y0 as f32, sx - x0 as f32);
            let v = cam[y0 * fw + x0] * (1.0 - fy) * (1.0 - fx)
                + cam[y0 * fw + x1] * (1.0 - fy) * fx
                + cam[y1 * fw + x0] * fy * (1.0 - fx)
                + cam[y1 * fw + x1] * fy * fx;
            up.data_mut()[y * w_in + xx] = v;
        }
    }

    // normalize to [0, 1]; all-zero maps stay all-zero
    let max = up.data().iter().fold(0.0f32, |a, &b| a.max(b));
    if max > 0.0 {
        up.scale(1.0 / max);
    }
    Ok(up)
}

/// Mean heat inside a rectangular region divided by mean heat outside it.
/// `region` is (top, left, height, width) in image coordinates.
pub fn heat_ratio_in_region(heatmap: &Tensor, region: (usize, usize, usize, usize)) -> f32 {
    let (h, w) = (heatmap.shape()[0], heatmap.shape()[1]);
    let (top, left, rh, rw) = region;
    let mut inside = 0.0f64;
    let mut outside = 0.0f64;
    let mut n_in = 0usize;
    let mut n_out = 0usize;
    for y in 0..h {
        for x in 0..w {
            let v = heatmap.data()[y * w + x] as f64;
            if y >= top && y < top + rh && x >= left && x < left + rw {
                inside += v;
                n_in += 1;
            } else {
                outside += v;
                n_out += 1;
            }
        }
    }
    let mean_in = inside / n_in.max(1) as f64;
    let mean_out = (outside / n_out.max(1) as f64).max(1e-9);
    (mean_in / mean_out) as f32
}
