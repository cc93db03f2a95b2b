//! Deterministic synthetic digit corpus.
//!
//! Renders seven-segment digit glyphs with per-sample affine jitter, stroke
//! width, intensity, and noise, then writes standard IDX files shaped
//! exactly like the 28x28 handwritten-digit corpus. Intended for offline
//! testing and CI environments without the real archives; a fixed seed
//! yields byte-identical files.

use std::path::Path;

use dynback_core::dataset::LabeledImage;
use dynback_core::rng::{derive_seed, streams, SeededRng};
use dynback_core::tensor::Tensor;

use super::{mnist, LoadError};

pub const DEFAULT_SEED: u64 = 0x5eed_d161;

const SIDE: usize = 28;

// segment endpoints on the unit glyph box (x right, y down)
const SEGMENTS: [((f32, f32), (f32, f32)); 7] = [
    ((0.12, 0.06), (0.88, 0.06)), // A top
    ((0.88, 0.06), (0.88, 0.50)), // B top right
    ((0.88, 0.50), (0.88, 0.94)), // C bottom right
    ((0.12, 0.94), (0.88, 0.94)), // D bottom
    ((0.12, 0.50), (0.12, 0.94)), // E bottom left
    ((0.12, 0.06), (0.12, 0.50)), // F top left
    ((0.12, 0.50), (0.88, 0.50)), // G middle
];

// active segments per digit, bit k = segment k
const DIGIT_SEGMENTS: [u8; 10] = [
    0b011_1111, // 0: ABCDEF
    0b000_0110, // 1: BC
    0b101_1011, // 2: ABDEG
    0b100_1111, // 3: ABCDG
    0b110_0110, // 4: BCFG
    0b110_1101, // 5: ACDFG
    0b111_1101, // 6: ACDEFG
    0b000_0111, // 7: ABC
    0b111_1111, // 8: all
    0b110_1111, // 9: ABCDFG
];

fn point_segment_distance(px: f32, py: f32, a: (f32, f32), b: (f32, f32)) -> f32 {
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    let (ex, ey) = (px - cx, py - cy);
    dynback_core::math::sqrt(ex * ex + ey * ey)
}

/// Render one digit image with jitter drawn from the rng.
pub fn render_digit(digit: u32, rng: &mut SeededRng) -> Tensor {
    let glyph_px = 19.0f32;
    let scale = glyph_px * rng.uniform_in(0.75, 1.05);
    let theta = rng.uniform_in(-0.21, 0.21); // ~12 degrees
    let (sin_t, cos_t) = dynback_core::math::sin_cos(theta);
    let tx = rng.uniform_in(-3.0, 3.0);
    let ty = rng.uniform_in(-3.0, 3.0);
    let thickness = rng.uniform_in(1.0, 1.7);
    let amplitude = rng.uniform_in(0.75, 1.0);
    let noise = 0.03f32;
    let center = (SIDE as f32 - 1.0) / 2.0;

    let segs = DIGIT_SEGMENTS[digit as usize];
    let mut out = Tensor::zeros(&[1, SIDE, SIDE]);
    for y in 0..SIDE {
        for x in 0..SIDE {
            // map pixel to glyph coordinates (inverse of rotate+scale+shift)
            let rx = x as f32 - center - tx;
            let ry = y as f32 - center - ty;
            let gx = (cos_t * rx + sin_t * ry) / scale + 0.5;
            let gy = (-sin_t * rx + cos_t * ry) / scale + 0.5;
            let mut best = f32::INFINITY;
            for (k, seg) in SEGMENTS.iter().enumerate() {
                if segs & (1 << k) != 0 {
                    let d = point_segment_distance(gx, gy, seg.0, seg.1) * scale;
                    if d < best {
                        best = d;
                    }
                }
            }
            let ink = if best <= thickness {
                1.0
            } else {
                (1.0 - (best - thickness) / 0.9).max(0.0)
            };
            let v = amplitude * ink + noise * rng.normal();
            out.data_mut()[y * SIDE + x] = v.clamp(0.0, 1.0);
        }
    }
    out
}

fn render_split(seed: u64, count: usize) -> Vec<LabeledImage> {
    let mut rng = SeededRng::new(seed, streams::SYNTH_DATA);
    (0..count)
        .map(|_| {
            let digit = rng.below(10) as u32;
            LabeledImage {
                pixels: render_digit(digit, &mut rng),
                label: digit,
            }
        })
        .collect()
}

/// Generate the corpus under `<root>/synth-digits/` with the documented
/// counts and write its manifest. Returns the manifest.
pub fn generate(root: &Path, seed: u64) -> Result<super::DatasetManifest, LoadError> {
    let spec = super::spec_by_name("synth-digits")?;
    let dir = root.join(&spec.name);
    let train = render_split(derive_seed(seed, 1), spec.train_count);
    let test = render_split(derive_seed(seed, 2), spec.test_count);
    mnist::write_idx(&dir, "train", &train, SIDE, SIDE)?;
    mnist::write_idx(&dir, "t10k", &test, SIDE, SIDE)?;
    super::write_manifest(&spec, root)
}
