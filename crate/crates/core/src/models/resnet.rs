//! Pre-activation ResNet-18 for 32x32 inputs.
//!
//! Stem conv3x3(64), four stages of two pre-activation blocks at widths
//! 64/128/256/512 (stride 2 entering stages 2-4), global average pooling,
//! and a linear head. Shortcuts are 1x1 convs on the pre-activated input
//! where the shape changes, identity on the raw input otherwise.

use alloc::vec::Vec;

use crate::nn::{
    BatchNorm2d, Conv2d, Conv2dCfg, Ctx, GlobalAvgPool, Linear, Module, ParamMut, Parameterized,
    Relu,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct PreActBlock {
    bn1: BatchNorm2d,
    relu1: Relu,
    conv1: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

fn conv3(in_ch: usize, out_ch: usize, stride: usize, rng: &mut SeededRng) -> Conv2d {
    Conv2d::new(
        Conv2dCfg {
            in_ch,
            out_ch,
            kernel: 3,
            stride,
            padding: 1,
            bias: false,
        },
        rng,
    )
}

impl PreActBlock {
    fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut SeededRng) -> PreActBlock {
        let shortcut = if stride != 1 || in_ch != out_ch {
            Some(Conv2d::new(
                Conv2dCfg {
                    in_ch,
                    out_ch,
                    kernel: 1,
                    stride,
                    padding: 0,
                    bias: false,
                },
                rng,
            ))
        } else {
            None
        };
        PreActBlock {
            bn1: BatchNorm2d::new(in_ch),
            relu1: Relu::new(),
            conv1: conv3(in_ch, out_ch, stride, rng),
            bn2: BatchNorm2d::new(out_ch),
            relu2: Relu::new(),
            conv2: conv3(out_ch, out_ch, 1, rng),
            shortcut,
        }
    }
}

impl Parameterized for PreActBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.bn1.visit_params(f);
        self.conv1.visit_params(f);
        self.bn2.visit_params(f);
        self.conv2.visit_params(f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params(f);
        }
    }
}

impl Module for PreActBlock {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let pre = self.relu1.forward(self.bn1.forward(x.clone(), ctx), ctx);
        let shortcut_out = match &mut self.shortcut {
            Some(sc) => sc.forward(pre.clone(), ctx),
            None => x,
        };
        let mut out = self.conv2.forward(
            self.relu2
                .forward(self.bn2.forward(self.conv1.forward(pre, ctx), ctx), ctx),
            ctx,
        );
        out.add_assign(&shortcut_out);
        out
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        // main path
        let d_main = self
            .conv1
            .backward(self.bn2.backward(self.relu2.backward(self.conv2.backward(grad_out.clone()))));
        // shortcut path joins at the pre-activation (or the raw input)
        match &mut self.shortcut {
            Some(sc) => {
                let mut d_pre = sc.backward(grad_out);
                d_pre.add_assign(&d_main);
                self.bn1.backward(self.relu1.backward(d_pre))
            }
            None => {
                let mut dx = self.bn1.backward(self.relu1.backward(d_main));
                dx.add_assign(&grad_out);
                dx
            }
        }
    }

    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.bn1.visit_state(&alloc::format!("{prefix}bn1."), f);
        self.conv1.visit_state(&alloc::format!("{prefix}conv1."), f);
        self.bn2.visit_state(&alloc::format!("{prefix}bn2."), f);
        self.conv2.visit_state(&alloc::format!("{prefix}conv2."), f);
        if let Some(sc) = &self.shortcut {
            sc.visit_state(&alloc::format!("{prefix}shortcut."), f);
        }
    }

    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.bn1.visit_state_mut(&alloc::format!("{prefix}bn1."), f);
        self.conv1
            .visit_state_mut(&alloc::format!("{prefix}conv1."), f);
        self.bn2.visit_state_mut(&alloc::format!("{prefix}bn2."), f);
        self.conv2
            .visit_state_mut(&alloc::format!("{prefix}conv2."), f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_state_mut(&alloc::format!("{prefix}shortcut."), f);
        }
    }
}

#[derive(Clone, Debug)]
pub struct PreActResNet18 {
    stem: Conv2d,
    blocks: Vec<PreActBlock>,
    pool: GlobalAvgPool,
    fc: Linear,
}

impl PreActResNet18 {
    pub fn new(class_count: usize, rng: &mut SeededRng) -> PreActResNet18 {
        let widths = [64usize, 128, 256, 512];
        let mut blocks = Vec::with_capacity(8);
        let mut in_ch = 64;
        for (stage, &w) in widths.iter().enumerate() {
            let stride = if stage == 0 { 1 } else { 2 };
            blocks.push(PreActBlock::new(in_ch, w, stride, rng));
            blocks.push(PreActBlock::new(w, w, 1, rng));
            in_ch = w;
        }
        PreActResNet18 {
            stem: conv3(3, 64, 1, rng),
            blocks,
            pool: GlobalAvgPool::new(),
            fc: Linear::new(512, class_count, rng),
        }
    }

    pub fn forward_capture_features(&mut self, x: Tensor, ctx: &mut Ctx) -> (Tensor, Tensor) {
        let mut cur = self.stem.forward(x, ctx);
        for b in &mut self.blocks {
            cur = b.forward(cur, ctx);
        }
        let feats = cur.clone();
        let pooled = self.pool.forward(cur, ctx);
        (self.fc.forward(pooled, ctx), feats)
    }

    pub fn backward_capture_features(&mut self, dy: Tensor) -> (Tensor, Tensor) {
        let d_pool = self.pool.backward(self.fc.backward(dy));
        let dfeats = d_pool.clone();
        let mut cur = d_pool;
        for b in self.blocks.iter_mut().rev() {
            cur = b.backward(cur);
        }
        (self.stem.backward(cur), dfeats)
    }

    pub fn last_conv_mut(&mut self) -> &mut Conv2d {
        &mut self.blocks.last_mut().expect("resnet has blocks").conv2
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        let mut kinds = alloc::vec!["conv2d"];
        for _ in &self.blocks {
            kinds.push("preact_block");
        }
        kinds.push("global_avg_pool");
        kinds.push("linear");
        kinds
    }
}

impl Parameterized for PreActResNet18 {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.stem.visit_params(f);
        for b in &mut self.blocks {
            b.visit_params(f);
        }
        self.fc.visit_params(f);
    }
}

impl Module for PreActResNet18 {
    fn forward(&mut self, x: Tensor, ctx: &mut Ctx) -> Tensor {
        let mut cur = self.stem.forward(x, ctx);
        for b in &mut self.blocks {
            cur = b.forward(cur, ctx);
        }
        let pooled = self.pool.forward(cur, ctx);
        self.fc.forward(pooled, ctx)
    }

    fn backward(&mut self, grad_out: Tensor) -> Tensor {
        let mut cur = self.pool.backward(self.fc.backward(grad_out));
        for b in self.blocks.iter_mut().rev() {
            cur = b.backward(cur);
        }
        self.stem.backward(cur)
    }

    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.stem.visit_state(&alloc::format!("{prefix}stem."), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_state(&alloc::format!("{prefix}block{i}."), f);
        }
        self.fc.visit_state(&alloc::format!("{prefix}fc."), f);
    }

    fn visit_state_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.stem
            .visit_state_mut(&alloc::format!("{prefix}stem."), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_state_mut(&alloc::format!("{prefix}block{i}."), f);
        }
        self.fc.visit_state_mut(&alloc::format!("{prefix}fc."), f);
    }
}
