use std::time::Instant;
use dynback_core::dataset::{assemble, Batcher};
use dynback_core::models::build_generator;
use dynback_core::nn::{zero_grads, Adam, Ctx, Module};
use dynback_core::rng::{streams, SeededRng};
use dynback_core::tensor::Tensor;
use dynback_core::training::diversity_batch;
use dynback_cli::loaders::{load_split, spec_by_name, Split};

fn main() {
    let spec = spec_by_name("synth-digits").unwrap();
    let data = load_split(&spec, Split::Test, std::path::Path::new("/root/data")).unwrap();
    let mut g = build_generator(&spec, 1, &mut SeededRng::new(0, streams::MODEL_GM)).unwrap();
    let mut opt = Adam::new(0.01);
    let mut rng = SeededRng::new(0, streams::BATCHES);
    let batcher = Batcher::new(data.len(), 128, &mut rng).unwrap();
    let mut dummy = SeededRng::new(0, streams::DROPOUT);

    let (mut t_fwd, mut t_div, mut t_bwd, mut t_opt, mut t_asm) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    let steps = 20;
    for (i, idxs) in batcher.iter().enumerate() {
        if i >= steps { break; }
        let t0 = Instant::now();
        let (x, _) = assemble(&data, idxs);
        t_asm += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        zero_grads(&mut g);
        let masks = g.forward(x.clone(), &mut Ctx::train(&mut dummy));
        t_fwd += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let mut dmasks = Tensor::zeros(masks.shape());
        let _l = diversity_batch(&x, &masks, Some((&mut dmasks, 1.0)), 1e-5, 0.05);
        t_div += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        g.backward(dmasks);
        t_bwd += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        opt.step(&mut g);
        t_opt += t0.elapsed().as_secs_f64();
    }
    let s = steps as f64;
    println!("per step: assemble {:.1}ms fwd {:.1}ms div {:.1}ms bwd {:.1}ms opt {:.1}ms",
        1000.0*t_asm/s, 1000.0*t_fwd/s, 1000.0*t_div/s, 1000.0*t_bwd/s, 1000.0*t_opt/s);
}
