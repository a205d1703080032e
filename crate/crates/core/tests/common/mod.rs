#![allow(dead_code)]

use cnsprox::tensor::Frame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Circular convolution of a filter (given on `support`, anchored at the
/// origin) with a signal on `frame`, computed by direct summation.
pub fn circular_conv(filter: &[f64], support: &Frame, x: &[f64], frame: &Frame) -> Vec<f64> {
    let (fr, fc) = (frame.rows(), frame.cols());
    let (sr, sc) = (support.rows(), support.cols());
    let mut out = vec![0.0; frame.len()];
    for i in 0..fr {
        for j in 0..fc {
            let mut acc = 0.0;
            for a in 0..sr {
                for b in 0..sc {
                    let xi = (i + fr - a) % fr;
                    let xj = (j + fc - b) % fc;
                    acc += filter[a * sc + b] * x[xi * fc + xj];
                }
            }
            out[i * fc + j] = acc;
        }
    }
    out
}

/// `sum_m d_m * x_m` by direct summation.
pub fn synth(filters: &[f64], support: &Frame, maps: &[f64], frame: &Frame) -> Vec<f64> {
    let mut out = vec![0.0; frame.len()];
    for (d, x) in filters.chunks(support.len()).zip(maps.chunks(frame.len())) {
        for (o, v) in out.iter_mut().zip(circular_conv(d, support, x, frame)) {
            *o += v;
        }
    }
    out
}

/// Minimizer of a unimodal `f` on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (a.abs() + b.abs()).max(1e-300) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
