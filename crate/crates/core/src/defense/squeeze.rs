//! Input squeezing: median smoothing and color-depth shrinking.

use crate::error::{Error, Result};
use crate::math::round;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SqueezeMethod {
    /// Replace each pixel by the median of its k x k neighborhood
    /// (edge-replicated). k must be odd and >= 3.
    MedianSmooth { k: usize },
    /// Quantize values to `bits` bits: v -> round(v * (2^b - 1)) / (2^b - 1).
    DepthShrink { bits: u32 },
}

impl SqueezeMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SqueezeMethod::MedianSmooth { k } => {
                if k < 3 || k % 2 == 0 {
                    return Err(Error::config(format_args!(
                        "median kernel must be odd and >= 3, got {k}"
                    )));
                }
            }
            SqueezeMethod::DepthShrink { bits } => {
                if !(1..=7).contains(&bits) {
                    return Err(Error::config(format_args!(
                        "bit depth must be in 1..=7, got {bits}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Squeeze a single image [C, H, W].
pub fn squeeze(x: &Tensor, method: SqueezeMethod) -> Result<Tensor> {
    method.validate()?;
    if x.shape().len() != 3 {
        return Err(Error::shape("squeeze expects an image [C,H,W]"));
    }
    Ok(match method {
        SqueezeMethod::MedianSmooth { k } => median_smooth(x, k),
        SqueezeMethod::DepthShrink { bits } => depth_shrink(x, bits),
    })
}

/// Squeeze every image of a batch [B, C, H, W].
pub fn squeeze_batch(x: &Tensor, method: SqueezeMethod) -> Result<Tensor> {
    method.validate()?;
    let (b, c, h, w) = x.dims4();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..b {
        let img = Tensor::from_vec(x.item(i).to_vec(), &[c, h, w]).expect("item shape");
        let s = match method {
            SqueezeMethod::MedianSmooth { k } => median_smooth(&img, k),
            SqueezeMethod::DepthShrink { bits } => depth_shrink(&img, bits),
        };
        out.item_mut(i).copy_from_slice(s.data());
    }
    Ok(out)
}

fn depth_shrink(x: &Tensor, bits: u32) -> Tensor {
    let levels = ((1u32 << bits) - 1) as f32;
    let mut out = x.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = round(*v * levels) / levels);
    out
}

fn median_smooth(x: &Tensor, k: usize) -> Tensor {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(s);
    let mut window = alloc::vec::Vec::with_capacity(k * k);
    for ch in 0..c {
        let plane = &x.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                window.clear();
                for dy in -r..=r {
                    // edge replication clamps out-of-range coordinates
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -r..=r {
                        let sx = (xx as isize + dx).clamp(0, w as isize - 1) as usize;
                        window.push(plane[sy * w + sx]);
                    }
                }
                window.sort_by(|a, b| a.partial_cmp(b).expect("finite pixels"));
                out.data_mut()[(ch * h + y) * w + xx] = window[window.len() / 2];
            }
        }
    }
    out
}
