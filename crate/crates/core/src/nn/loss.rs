//! Softmax, cross-entropy, and prediction entropy.
//!
//! The classifier exposes raw scores; softmax happens here so defense code
//! can work on logits directly.

use crate::math::{exp, ln};
use crate::tensor::Tensor;

/// Numerically stable in-place softmax over the last dim of a [batch, m]
/// tensor.
pub fn softmax_rows(t: &mut Tensor) {
    assert_eq!(t.shape().len(), 2, "softmax_rows expects [batch, m]");
    let m = t.shape()[1];
    for row in t.data_mut().chunks_mut(m) {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0f64;
        for v in row.iter_mut() {
            *v = exp(*v - max);
            sum += *v as f64;
        }
        let inv = (1.0 / sum) as f32;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Mean cross-entropy over the batch plus the gradient w.r.t. the logits
/// (already scaled by 1/batch).
pub fn cross_entropy_mean(logits: &Tensor, labels: &[u32]) -> (f32, Tensor) {
    assert_eq!(logits.shape().len(), 2);
    let batch = logits.shape()[0];
    let m = logits.shape()[1];
    assert_eq!(labels.len(), batch, "labels/logits batch mismatch");
    let mut dlogits = logits.clone();
    softmax_rows(&mut dlogits);
    let mut loss = 0.0f64;
    let inv_b = 1.0 / batch as f32;
    for (row, &label) in labels.iter().enumerate() {
        let y = label as usize;
        assert!(y < m, "label {y} out of range for {m} classes");
        let probs = &mut dlogits.data_mut()[row * m..(row + 1) * m];
        loss -= ln(probs[y].max(f32::MIN_POSITIVE)) as f64;
        probs[y] -= 1.0;
        for p in probs.iter_mut() {
            *p *= inv_b;
        }
    }
    ((loss / batch as f64) as f32, dlogits)
}

/// Shannon entropy (natural log) of a probability vector; 0 ln 0 = 0.
pub fn entropy(probs: &[f32]) -> f32 {
    let mut h = 0.0f64;
    for &p in probs {
        if p > 0.0 {
            h -= (p as f64) * (ln(p) as f64);
        }
    }
    h as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tensor::from_vec(alloc::vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0], &[2, 3]).unwrap();
        softmax_rows(&mut t);
        for row in 0..2 {
            let s: f32 = t.item(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(t.item(row).iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn cross_entropy_matches_log_softmax_oracle() {
        let mut rng = SeededRng::new(17, 0);
        let batch = 5;
        let m = 7;
        let mut logits = Tensor::zeros(&[batch, m]);
        logits
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform_in(-3.0, 3.0));
        let labels: alloc::vec::Vec<u32> = (0..batch).map(|_| rng.below(m) as u32).collect();

        let (loss, dl) = cross_entropy_mean(&logits, &labels);

        // oracle: -log softmax at the label, averaged
        let mut want = 0.0f64;
        for row in 0..batch {
            let xs = logits.item(row);
            let max = xs.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let lse: f64 = max as f64
                + (xs.iter().map(|&v| ((v - max) as f64).exp()).sum::<f64>()).ln();
            want += lse - xs[labels[row] as usize] as f64;
        }
        want /= batch as f64;
        assert!((loss as f64 - want).abs() < 1e-5, "{loss} vs {want}");

        // gradient rows sum to 0 (softmax minus one-hot)
        for row in 0..batch {
            let s: f32 = dl.item(row).iter().sum();
            assert!(s.abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_gradient_finite_difference() {
        let mut rng = SeededRng::new(23, 0);
        let mut logits = Tensor::zeros(&[3, 4]);
        logits
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.uniform_in(-2.0, 2.0));
        let labels = [1u32, 3, 0];
        let (_, grad) = cross_entropy_mean(&logits, &labels);
        let h = 1e-3f32;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp.data_mut()[i] += h;
            let mut lm = logits.clone();
            lm.data_mut()[i] -= h;
            let (fp, _) = cross_entropy_mean(&lp, &labels);
            let (fm, _) = cross_entropy_mean(&lm, &labels);
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - grad.data()[i]).abs() < 2e-3,
                "i={i} fd {fd} vs {}",
                grad.data()[i]
            );
        }
    }

    #[test]
    fn entropy_bounds() {
        let m = 10usize;
        let uniform = alloc::vec![1.0 / m as f32; m];
        let h = entropy(&uniform);
        assert!((h - crate::math::ln(m as f32)).abs() < 1e-5);
        let mut onehot = alloc::vec![0.0f32; m];
        onehot[3] = 1.0;
        assert_eq!(entropy(&onehot), 0.0);
    }
}
