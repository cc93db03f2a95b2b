use std::time::Instant;
use dynback_core::nn::*;
use dynback_core::rng::SeededRng;
use dynback_core::tensor::Tensor;

fn t(label: &str, mut f: impl FnMut()) {
    // warmup
    f();
    let t0 = Instant::now();
    let reps = 5;
    for _ in 0..reps { f(); }
    println!("{label}: {:.1}ms", 1000.0 * t0.elapsed().as_secs_f64() / reps as f64);
}

fn main() {
    let mut rng = SeededRng::new(0, 0);
    let mut x16 = Tensor::zeros(&[128, 16, 28, 28]);
    x16.data_mut().iter_mut().for_each(|v| *v = rng.uniform());
    let mut conv = Conv2d::new(Conv2dCfg { in_ch: 16, out_ch: 16, kernel: 3, stride: 1, padding: 1, bias: false }, &mut rng);
    let mut bn = BatchNorm2d::new(16);
    let mut relu = Relu::new();

    t("conv16->16@28 fwd", || { let _ = conv.forward(x16.clone(), &mut Ctx::eval()); });
    let y = conv.forward(x16.clone(), &mut Ctx::eval());
    t("conv16->16@28 bwd", || {
        let _ = conv.forward(x16.clone(), &mut Ctx::eval());
        let _ = conv.backward(y.clone());
    });
    let mut drng = SeededRng::new(1, 1);
    t("bn16@28 fwd train", || { let _ = bn.forward(x16.clone(), &mut Ctx::train(&mut drng)); });
    let _ = bn.forward(x16.clone(), &mut Ctx::train(&mut drng));
    t("bn16@28 bwd", || {
        let _ = bn.forward(x16.clone(), &mut Ctx::train(&mut drng));
        let _ = bn.backward(y.clone());
    });
    t("relu fwd+bwd", || {
        let _ = relu.forward(x16.clone(), &mut Ctx::eval());
        let _ = relu.backward(y.clone());
    });
    t("clone 6.4MB", || { let _ = x16.clone(); });
    t("zeros 6.4MB", || { let _ = Tensor::zeros(&[128, 16, 28, 28]); });
}
