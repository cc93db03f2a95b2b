//! Scalar float helpers that work with and without std.
//!
//! Reductions over large buffers accumulate in f64 so that batch statistics
//! and reported losses do not drift with buffer size.

#[cfg(feature = "std")]
#[inline(always)]
pub fn exp(x: f32) -> f32 {
    x.exp()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn exp(x: f32) -> f32 {
    libm::expf(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn ln(x: f32) -> f32 {
    x.ln()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn ln(x: f32) -> f32 {
    libm::logf(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn sqrt(x: f32) -> f32 {
    x.sqrt()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn sqrt(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn powf(x: f32, y: f32) -> f32 {
    x.powf(y)
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn powf(x: f32, y: f32) -> f32 {
    libm::powf(x, y)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn round(x: f32) -> f32 {
    x.round()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn round(x: f32) -> f32 {
    libm::roundf(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn floor(x: f32) -> f32 {
    x.floor()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn floor(x: f32) -> f32 {
    libm::floorf(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn sin_cos(x: f32) -> (f32, f32) {
    x.sin_cos()
}
#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn sin_cos(x: f32) -> (f32, f32) {
    (libm::sinf(x), libm::cosf(x))
}

/// Sigmoid with the large-negative branch kept stable.
#[inline(always)]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Sum in f64.
#[inline]
pub fn sum_f64(xs: &[f32]) -> f64 {
    xs.iter().map(|&v| v as f64) .sum()
}

/// Mean in f64, 0.0 for empty input.
#[inline]
pub fn mean_f64(xs: &[f32]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        sum_f64(xs) / xs.len() as f64
    }
}

/// Mean absolute elementwise difference, accumulated in f64.
#[inline]
pub fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    let s: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    s / a.len() as f64
}

/// Median of a slice (average of the two middle values for even lengths).
/// Copies the input; fine for the small per-label statistics it serves.
pub fn median(xs: &[f32]) -> f32 {
    assert!(!xs.is_empty(), "median of empty slice");
    let mut v = alloc::vec::Vec::from(xs);
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
