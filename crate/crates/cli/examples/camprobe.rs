use dynback_cli::checkpoint::{load_classifier, load_generator};
use dynback_cli::commands::TriggerAsset;
use dynback_cli::loaders::{load_split, spec_by_name, Split};
use dynback_core::nn::{Ctx, Module};
use dynback_core::tensor::Tensor;
use dynback_core::trigger::inject;

// cam variants at feature resolution; returns (standard, positive-grad)
fn cams(f: &mut dynback_core::models::ClassifierModel, img: &Tensor, class: u32) -> (Vec<f32>, Vec<f32>, usize, usize) {
    let mut shape = vec![1usize]; shape.extend_from_slice(img.shape());
    let x = Tensor::from_vec(img.data().to_vec(), &shape).unwrap();
    let (logits, feats) = f.forward_capture_features(x, &mut Ctx::eval());
    let mut dl = Tensor::zeros(logits.shape());
    dl.data_mut()[class as usize] = 1.0;
    let (_, dfeats) = f.backward_capture_features(dl);
    let (_, c, fh, fw) = feats.dims4();
    let spatial = fh * fw;
    let mut std_cam = vec![0.0f32; spatial];
    let mut pos_cam = vec![0.0f32; spatial];
    for ch in 0..c {
        let g = &dfeats.data()[ch * spatial..(ch + 1) * spatial];
        let a = &feats.data()[ch * spatial..(ch + 1) * spatial];
        let alpha: f32 = g.iter().sum::<f32>() / spatial as f32;
        let alpha_pos: f32 = g.iter().map(|&v| v.max(0.0)).sum::<f32>() / spatial as f32;
        for e in 0..spatial {
            std_cam[e] += alpha * a[e];
            pos_cam[e] += alpha_pos * a[e];
        }
    }
    std_cam.iter_mut().for_each(|v| *v = v.max(0.0));
    pos_cam.iter_mut().for_each(|v| *v = v.max(0.0));
    (std_cam, pos_cam, fh, fw)
}

fn ratio_feat(cam: &[f32], fh: usize, fw: usize) -> f32 {
    // patch 3x3 bottom-right of 28x28 maps to feature cells near (fh-1, fw-1)
    let mut inside = 0.0; let mut n_in = 0; let mut outside = 0.0; let mut n_out = 0;
    for y in 0..fh { for x in 0..fw {
        if y >= fh - 1 && x >= fw - 1 { inside += cam[y*fw+x]; n_in += 1; }
        else { outside += cam[y*fw+x]; n_out += 1; }
    }}
    (inside / n_in as f32) / (outside / n_out as f32).max(1e-9)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (mut f, _) = load_classifier(std::path::Path::new(&args[1])).unwrap();
    let spec = spec_by_name("synth-digits").unwrap();
    let test = load_split(&spec, Split::Test, std::path::Path::new("/root/data")).unwrap();

    let dyn_mode = args.len() > 3;
    let asset = TriggerAsset::load(std::path::Path::new("assets/trigger_checkerboard3_28.json")).unwrap();
    let trig = asset.to_spec(&spec).unwrap();
    let mut gens = if dyn_mode {
        let (gm, _) = load_generator(std::path::Path::new(&args[2])).unwrap();
        let (gp, _) = load_generator(std::path::Path::new(&args[3])).unwrap();
        Some((gm, gp))
    } else { None };

    let n = 48;
    let mut r_std = vec![]; let mut r_pos = vec![]; let mut agg_std = vec![0.0f32; 64];
    for item in test.iter().take(n) {
        if item.label == 0 { continue; } // exclude trivially-target inputs
        let poisoned = match &mut gens {
            None => inject(&item.pixels, trig.trigger()).unwrap(),
            Some((gm, gp)) => {
                let mut shape = vec![1usize]; shape.extend_from_slice(item.pixels.shape());
                let x = Tensor::from_vec(item.pixels.data().to_vec(), &shape).unwrap();
                let tb = dynback_core::trigger::generate_trigger(gm, gp, &x);
                let inj = dynback_core::trigger::inject_batch_indexed(&x, &tb.masks, &tb.patterns, &[0]);
                Tensor::from_vec(inj.item(0).to_vec(), item.pixels.shape()).unwrap()
            }
        };
        let mut shape = vec![1usize]; shape.extend_from_slice(poisoned.shape());
        let xb = Tensor::from_vec(poisoned.data().to_vec(), &shape).unwrap();
        let logits = f.forward(xb, &mut Ctx::eval());
        let mut best = 0; for j in 1..10 { if logits.data()[j] > logits.data()[best] { best = j; } }
        let (s, p, fh, fw) = cams(&mut f, &poisoned, best as u32);
        r_std.push(ratio_feat(&s, fh, fw));
        r_pos.push(ratio_feat(&p, fh, fw));
        // normalized aggregate
        let mx = s.iter().fold(0.0f32, |a, &b| a.max(b)).max(1e-9);
        for e in 0..64 { agg_std[e] += s[e] / mx; }
    }
    let mean = |v: &Vec<f32>| v.iter().sum::<f32>() / v.len() as f32;
    println!("feature-res corner-cell ratios over {} imgs:", r_std.len());
    println!("  standard alpha: mean {:.2}", mean(&r_std));
    println!("  positive alpha: mean {:.2}", mean(&r_pos));
    println!("aggregate normalized map ratio: {:.2}", ratio_feat(&agg_std, 8, 8));
}
