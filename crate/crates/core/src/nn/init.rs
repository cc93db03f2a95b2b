//! Parameter initialization: uniform in +-1/sqrt(fan_in).

use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub fn fan_in_uniform(rng: &mut SeededRng, t: &mut Tensor, fan_in: usize) {
    let bound = 1.0 / crate::math::sqrt(fan_in.max(1) as f32);
    for v in t.data_mut() {
        *v = rng.uniform_in(-bound, bound);
    }
}
