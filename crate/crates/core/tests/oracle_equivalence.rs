mod common;

use std::sync::Arc;

use cnsprox::cdl::DictProblem;
use cnsprox::consensus::{ConsensusObjective, Execution, SmoothTerm};
use cnsprox::csc::{sherman_morrison_solve, ConvLeastSquares};
use cnsprox::step::{bb_step, cauchy_step, consensus_cauchy, BbMode, CauchyMode, DenseMatrix, LinearOperator};
use cnsprox::tensor::{conv_sum, CoefficientMaps, Dictionary, Fourier, FreqBlock, Frame, SignalSet, C64};
use common::{golden_section, max_abs_diff, rng, synth, uniform};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn complex_block(r: &mut rand_chacha::ChaCha8Rng, bins: usize, width: usize) -> FreqBlock {
    let data = (0..bins * width)
        .map(|_| C64::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)))
        .collect();
    FreqBlock::from_data(bins, width, data).unwrap()
}

#[test]
fn sherman_morrison_matches_dense_solves() {
    let mut r = rng(11);
    for width in 1..=8 {
        for _ in 0..10 {
            let bins = r.random_range(1..6);
            let rho = r.random_range(0.01..10.0);
            let op = complex_block(&mut r, bins, width);
            let rhs = complex_block(&mut r, bins, width);
            let got = sherman_morrison_solve(&op, rho, &rhs).unwrap();
            for n in 0..bins {
                let a = op.bin(n);
                let m = DMatrix::from_fn(width, width, |i, j| {
                    let diag = if i == j { C64::new(rho, 0.0) } else { C64::new(0.0, 0.0) };
                    diag + a[i].conj() * a[j]
                });
                let x = m.lu().solve(&DVector::from_column_slice(rhs.bin(n))).unwrap();
                for (g, e) in got.bin(n).iter().zip(x.iter()) {
                    assert!((g - e).norm() <= 1e-10 * (1.0 + e.norm()), "width {width}: {g} vs {e}");
                }
            }
        }
    }
}

#[test]
fn conv_sum_matches_direct_circular_convolution() {
    let mut r = rng(12);
    for (frame, support) in [
        (Frame::d2(7, 6).unwrap(), Frame::d2(3, 2).unwrap()),
        (Frame::d2(5, 5).unwrap(), Frame::d2(5, 5).unwrap()),
        (Frame::d1(17).unwrap(), Frame::d1(4).unwrap()),
    ] {
        let m = 3;
        let d = Dictionary::new(support.clone(), frame.clone(), uniform(&mut r, m * support.len())).unwrap();
        let x = CoefficientMaps::new(2, m, frame.clone(), uniform(&mut r, 2 * m * frame.len())).unwrap();
        for k in 0..2 {
            let got = conv_sum(&d, &x, k).unwrap();
            let expect = synth(d.filters(), &support, x.image(k), &frame);
            assert!(max_abs_diff(&got, &expect) <= 1e-10);
        }
    }
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + h;
            let up = f(&p);
            p[i] = v - h;
            let down = f(&p);
            p[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / scale
}

#[test]
fn coding_gradient_matches_finite_differences() {
    let mut r = rng(13);
    let frame = Frame::d2(6, 5).unwrap();
    let support = Frame::d2(3, 2).unwrap();
    let m = 3;
    let d = Dictionary::new(support.clone(), frame.clone(), uniform(&mut r, m * support.len())).unwrap();
    let s = uniform(&mut r, frame.len());
    let fourier = Arc::new(Fourier::new(&frame));
    let term = ConvLeastSquares::new(Arc::new(fourier.forward_stack(&d.padded())), fourier.forward(&s), fourier.clone()).unwrap();
    let x = uniform(&mut r, m * frame.len());
    let mut g = vec![0.0; x.len()];
    term.gradient(&x, &mut g);
    let spatial = |x: &[f64]| {
        let rec = synth(d.filters(), &support, x, &frame);
        0.5 * rec.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    assert!(rel_err(&g, &central_difference(spatial, &x)) <= 1e-6);
    assert!((term.value(&x) - spatial(&x)).abs() <= 1e-10 * spatial(&x));
}

#[test]
fn dictionary_gradient_matches_finite_differences() {
    let mut r = rng(14);
    let frame = Frame::d2(5, 6).unwrap();
    let (m, k) = (2, 3);
    let maps = CoefficientMaps::new(k, m, frame.clone(), uniform(&mut r, k * m * frame.len())).unwrap();
    let signals = SignalSet::new(frame.clone(), uniform(&mut r, k * frame.len())).unwrap();
    let fourier = Arc::new(Fourier::new(&frame));
    let problem = DictProblem::new(&maps, &signals, fourier, Execution::Sequential).unwrap();
    let d = uniform(&mut r, m * frame.len());
    let mut g = vec![0.0; d.len()];
    problem.mean_gradient(&d, &mut g).unwrap();
    // full-frame filters: the padded dictionary is the variable itself
    let mean_obj = |d: &[f64]| {
        (0..k)
            .map(|i| {
                let rec = synth(d, &frame, maps.image(i), &frame);
                0.5 * rec.iter().zip(signals.signal(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / k as f64
    };
    assert!(rel_err(&g, &central_difference(mean_obj, &d)) <= 1e-6);
    assert!((problem.value(&d) - k as f64 * mean_obj(&d)).abs() <= 1e-10 * problem.value(&d));
}

/// Exact minimizer of `phi` on `t >= 0` by bracketing then golden section.
fn line_search(phi: impl Fn(f64) -> f64) -> f64 {
    let mut hi = 1e-3;
    while phi(2.0 * hi) < phi(hi) {
        hi *= 2.0;
    }
    golden_section(phi, 0.0, 4.0 * hi, 1e-12)
}

fn quad(a: &DenseMatrix, b: &[f64], x: &[f64]) -> f64 {
    0.5 * a.apply(x).iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()
}

fn along(x: &[f64], d: &[f64], t: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(p, q)| p - t * q).collect()
}

#[test]
fn cauchy_steps_match_golden_section_search() {
    let mut r = rng(15);
    for _ in 0..30 {
        let (rows, cols) = (r.random_range(2..12), r.random_range(2..10));
        let a = DenseMatrix::new(rows, cols, uniform(&mut r, rows * cols)).unwrap();
        let b = uniform(&mut r, rows);
        let x = uniform(&mut r, cols);
        let res: Vec<f64> = a.apply(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        let g = a.apply_adjoint(&res);

        let step = cauchy_step(&g, &a, CauchyMode::Standard, None).unwrap();
        let best = line_search(|t| quad(&a, &b, &along(&x, &g, t)));
        assert!((step - best).abs() <= 1e-6 * best, "{step} vs {best}");

        let support: Vec<bool> = (0..cols).map(|i| i % 2 == 0).collect();
        let gs: Vec<f64> = g.iter().zip(&support).map(|(v, s)| if *s { *v } else { 0.0 }).collect();
        let step = cauchy_step(&g, &a, CauchyMode::Support, Some(&support)).unwrap();
        let best = line_search(|t| quad(&a, &b, &along(&x, &gs, t)));
        assert!((step - best).abs() <= 1e-6 * best);
    }
}

#[test]
fn consensus_cauchy_matches_golden_section_search() {
    let mut r = rng(16);
    for _ in 0..30 {
        let replicas = r.random_range(1..6);
        let cols = r.random_range(2..8);
        let mut mats = Vec::new();
        let mut rhs = Vec::new();
        for _ in 0..replicas {
            let rows = r.random_range(2..10);
            mats.push(DenseMatrix::new(rows, cols, uniform(&mut r, rows * cols)).unwrap());
            rhs.push(uniform(&mut r, rows));
        }
        let x = uniform(&mut r, cols);
        let mut gbar = vec![0.0; cols];
        for (a, b) in mats.iter().zip(&rhs) {
            let res: Vec<f64> = a.apply(&x).iter().zip(b).map(|(p, q)| p - q).collect();
            for (g, v) in gbar.iter_mut().zip(a.apply_adjoint(&res)) {
                *g += v / replicas as f64;
            }
        }
        let ops: Vec<&dyn LinearOperator> = mats.iter().map(|m| m as &dyn LinearOperator).collect();
        let step = consensus_cauchy(&gbar, &ops).unwrap();
        let best = line_search(|t| {
            let y = along(&x, &gbar, t);
            mats.iter().zip(&rhs).map(|(a, b)| quad(a, b, &y)).sum::<f64>() / replicas as f64
        });
        assert!((step - best).abs() <= 1e-6 * best, "{step} vs {best}");
    }
}

#[test]
fn bb3_is_the_geometric_mean_of_bb1_and_bb2() {
    let mut r = rng(17);
    let mut checked = 0;
    for _ in 0..200 {
        let n = r.random_range(1..20);
        let z = uniform(&mut r, n);
        let rr = uniform(&mut r, n);
        if let (Some(a), Some(b)) = (bb_step(&z, &rr, BbMode::V1), bb_step(&z, &rr, BbMode::V2)) {
            let c = bb_step(&z, &rr, BbMode::V3).unwrap();
            assert!((c - (a * b).sqrt()).abs() <= 1e-12 * c);
            checked += 1;
        }
    }
    assert!(checked > 50);
}
