use dynback_cli::checkpoint::load_generator;
use dynback_cli::loaders::{load_split, spec_by_name, Split};
use dynback_core::tensor::Tensor;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let (mut g_m, _) = load_generator(std::path::Path::new(&args[1])).unwrap();
    let spec = spec_by_name("synth-digits").unwrap();
    let test = load_split(&spec, Split::Test, std::path::Path::new("/root/data")).unwrap();
    let idxs: Vec<u32> = (0..8).collect();
    let (x, _) = dynback_core::dataset::assemble(&test, &idxs);
    let masks = g_m.forward_eval(x);
    for i in 0..3 {
        let m = masks.item(i);
        let mean = m.iter().sum::<f32>() / m.len() as f32;
        let max = m.iter().fold(0.0f32, |a, &b| a.max(b));
        let above_half = m.iter().filter(|&&v| v > 0.5).count();
        let hist: Vec<usize> = (0..5).map(|b| m.iter().filter(|&&v| v >= b as f32 * 0.2 && v < (b + 1) as f32 * 0.2).count()).collect();
        println!("mask {i}: mean {mean:.3} max {max:.3} frac>0.5 {:.3} hist(0.2 bins) {hist:?}",
            above_half as f32 / m.len() as f32);
    }
    let d01 = dynback_core::math::mean_abs_diff(masks.item(0), masks.item(1));
    println!("pairwise mask distance: {d01:.4}");
    let _ = Tensor::zeros(&[1]);
}
