//! Procedural grayscale test images: smooth blobs, flat rectangles and
//! oriented gratings on a gradient background, scaled to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cnsprox::tensor::{Frame, SignalSet};

use crate::error::Result;

/// One `size x size` image, row-major.
pub fn synthetic_image(size: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = size as f64;
    let mut img = vec![0.0; size * size];
    let (gx, gy): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    for r in 0..size {
        for c in 0..size {
            img[r * size + c] = 0.3 * (gx * c as f64 + gy * r as f64) / n;
        }
    }
    for _ in 0..rng.random_range(3..7) {
        let (cy, cx) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        let width = rng.random_range(0.04..0.2) * n;
        let amp: f64 = rng.random_range(-1.0..1.0);
        for r in 0..size {
            for c in 0..size {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                img[r * size + c] += amp * (-d2 / (2.0 * width * width)).exp();
            }
        }
    }
    for _ in 0..rng.random_range(2..5) {
        let (r0, c0) = (rng.random_range(0..size), rng.random_range(0..size));
        let (h, w) = (rng.random_range(size / 8..size / 2 + 1), rng.random_range(size / 8..size / 2 + 1));
        let amp: f64 = rng.random_range(-0.6..0.6);
        for r in r0..(r0 + h).min(size) {
            for c in c0..(c0 + w).min(size) {
                img[r * size + c] += amp;
            }
        }
    }
    for _ in 0..rng.random_range(1..3) {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let freq = rng.random_range(0.1..0.5);
        let (cy, cx) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        let radius = rng.random_range(0.15..0.35) * n;
        let amp = rng.random_range(0.1..0.3);
        for r in 0..size {
            for c in 0..size {
                let (y, x) = (r as f64 - cy, c as f64 - cx);
                let envelope = (-(x * x + y * y) / (2.0 * radius * radius)).exp();
                let phase = freq * (x * theta.cos() + y * theta.sin());
                img[r * size + c] += amp * envelope * phase.sin();
            }
        }
    }
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    img.iter_mut().for_each(|v| *v = (*v - lo) / span);
    img
}

/// `count` images; image `i` uses seed `seed * 1000 + offset + i`.
pub fn synthetic_images(count: usize, size: usize, seed: u64, offset: u64) -> Result<SignalSet> {
    let frame = Frame::d2(size, size)?;
    let signals = (0..count as u64)
        .map(|i| synthetic_image(size, seed.wrapping_mul(1000).wrapping_add(offset + i)))
        .collect();
    Ok(SignalSet::from_signals(frame, signals)?)
}
