//! Spatial resampling layers: 2x2 max pooling, nearest x2 upsampling, and
//! global average pooling.

use alloc::vec::Vec;

use crate::nn::{Ctx, Module, ParamMut, Parameterized};
use crate::tensor::Tensor;

/// 2x2 max pooling with stride 2. Spatial dims must be even.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    argmax: Vec<u32>,
    in_shape: Vec<usize>,
}

impl MaxPool2 {
    pub fn new() -> MaxPool2 {
        MaxPool2::default()
    }
}

impl Parameterized for MaxPool2 {
    fn visit_params(&mut self, _f: &mut dyn FnMut(ParamMut<'_>)) {}
}

impl Module for MaxPool2 {
    fn forward(&mut self, x: Tensor, _ctx: &mut Ctx) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even dims, got {h}x{w}");
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Tensor::zeros(&[n, c, ho, wo]);
        self.argmax.clear();
        self.argmax.resize(n * c * ho * wo, 0);
        let xd = x.data();
        let yd = y.data_mut();
        for nc in 0..n * c {
            let in_base = nc * h * w;
            let out_base = nc * ho * wo;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i00 = in_base + (2 * oy) * w + 2 * ox;
                    let i01 = i00 + 1;
                    let i10 = i00 + w;
                    let i11 = i10 + 1;
                    let mut best = i00;
                    if xd[i01] > xd[best] {
                        best = i01;
                    }
                    if xd[i10] > xd[best] {
                        best = i10;
                    }
                    if xd[i11] > xd[best] {
                        best = i11;
                    }
                    yd[out_base + oy * wo + ox] = xd[best];
                    self.argmax[out_base + oy * wo + ox] = best as u32;
                }
            }
        }
        self.in_shape = x.shape().to_vec();
        y
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        assert!(!self.in_shape.is_empty(), "maxpool backward before forward");
        let mut dx = Tensor::zeros(&self.in_shape);
        let dxd = dx.data_mut();
        for (i, &g) in grad_out.data().iter().enumerate() {
            dxd[self.argmax[i] as usize] += g;
        }
        dx
    }

    fn visit_state(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_state_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

/// Nearest-neighbor x2 upsampling.
#[derive(Clone, Debug, Default)]
pub struct Upsample2 {
    in_shape: Vec<usize>,
}

impl Upsample2 {
    pub fn new() -> Upsample2 {
        Upsample2::default()
    }
}

impl Parameterized for Upsample2 {
    fn visit_params(&mut self, _f: &mut dyn FnMut(ParamMut<'_>)) {}
}

impl Module for Upsample2 {
    fn forward(&mut self, x: Tensor, _ctx: &mut Ctx) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let mut y = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
        let xd = x.data();
        let yd = y.data_mut();
        for nc in 0..n * c {
            let in_base = nc * h * w;
            let out_base = nc * 4 * h * w;
            for iy in 0..h {
                for ix in 0..w {
                    let v = xd[in_base + iy * w + ix];
                    let o = out_base + (2 * iy) * (2 * w) + 2 * ix;
                    yd[o] = v;
                    yd[o + 1] = v;
                    yd[o + 2 * w] = v;
                    yd[o + 2 * w + 1] = v;
                }
            }
        }
        self.in_shape = x.shape().to_vec();
        y
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        assert!(!self.in_shape.is_empty(), "upsample backward before forward");
        let (n, c, h, w) = (
            self.in_shape[0],
            self.in_shape[1],
            self.in_shape[2],
            self.in_shape[3],
        );
        let mut dx = Tensor::zeros(&self.in_shape);
        let gd = grad_out.data();
        let dxd = dx.data_mut();
        for nc in 0..n * c {
            let in_base = nc * h * w;
            let out_base = nc * 4 * h * w;
            for iy in 0..h {
                for ix in 0..w {
                    let o = out_base + (2 * iy) * (2 * w) + 2 * ix;
                    dxd[in_base + iy * w + ix] =
                        gd[o] + gd[o + 1] + gd[o + 2 * w] + gd[o + 2 * w + 1];
                }
            }
        }
        dx
    }

    fn visit_state(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_state_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

/// Mean over the spatial dims: [N, C, H, W] -> [N, C].
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    in_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> GlobalAvgPool {
        GlobalAvgPool::default()
    }
}

impl Parameterized for GlobalAvgPool {
    fn visit_params(&mut self, _f: &mut dyn FnMut(ParamMut<'_>)) {}
}

impl Module for GlobalAvgPool {
    fn forward(&mut self, x: Tensor, _ctx: &mut Ctx) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let spatial = h * w;
        let mut y = Tensor::zeros(&[n, c]);
        for nc in 0..n * c {
            let s: f64 = x.data()[nc * spatial..(nc + 1) * spatial]
                .iter()
                .map(|&v| v as f64)
                .sum();
            y.data_mut()[nc] = (s / spatial as f64) as f32;
        }
        self.in_shape = x.shape().to_vec();
        y
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        let (h, w) = (self.in_shape[2], self.in_shape[3]);
        let spatial = h * w;
        let mut dx = Tensor::zeros(&self.in_shape);
        for (nc, &g) in grad_out.data().iter().enumerate() {
            let gv = g / spatial as f32;
            dx.data_mut()[nc * spatial..(nc + 1) * spatial].fill(gv);
        }
        dx
    }

    fn visit_state(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Tensor)) {}
    fn visit_state_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor)) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_max_and_routes_gradient() {
        let x = Tensor::from_vec(
            alloc::vec![
                1.0, 2.0, 5.0, 6.0, //
                3.0, 4.0, 7.0, 8.0, //
                0.1, 0.2, 0.5, 0.6, //
                0.3, 0.9, 0.7, 0.4,
            ],
            &[1, 1, 4, 4],
        )
        .unwrap();
        let mut pool = MaxPool2::new();
        let y = pool.forward(x, &mut Ctx::eval());
        assert_eq!(y.data(), &[4.0, 8.0, 0.9, 0.7]);
        let dx = pool.backward(Tensor::filled(&[1, 1, 2, 2], 1.0));
        let want = [
            0.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 1.0, //
            0.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 1.0, 0.0,
        ];
        assert_eq!(dx.data(), &want);
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let x = Tensor::from_vec(alloc::vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let mut up = Upsample2::new();
        let y = up.forward(x, &mut Ctx::eval());
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.at4(0, 0, 0, 0), 1.0);
        assert_eq!(y.at4(0, 0, 0, 1), 1.0);
        assert_eq!(y.at4(0, 0, 3, 3), 4.0);
        let dx = up.backward(Tensor::filled(&[1, 1, 4, 4], 0.5));
        assert_eq!(dx.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn global_avg_pool_mean_and_backward() {
        let x = Tensor::from_vec(alloc::vec![1.0, 3.0, 5.0, 7.0], &[1, 1, 2, 2]).unwrap();
        let mut gap = GlobalAvgPool::new();
        let y = gap.forward(x, &mut Ctx::eval());
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data()[0], 4.0);
        let dx = gap.backward(Tensor::filled(&[1, 1], 8.0));
        assert_eq!(dx.data(), &[2.0, 2.0, 2.0, 2.0]);
    }
}
