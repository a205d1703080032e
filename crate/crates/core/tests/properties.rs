mod common;

use std::sync::Arc;

use cnsprox::consensus::{pg_consensus_step, L1Norm, LeastSquares, SmoothTerm};
use cnsprox::container::{decode_dictionary, decode_maps, encode_dictionary, encode_maps};
use cnsprox::csc::sherman_morrison_solve;
use cnsprox::prox::{block_l2_shrink, project_consensus, project_cpn, soft_threshold, ConsensusSet, ConstraintSetPN};
use cnsprox::step::{consensus_alpha, DenseMatrix};
use cnsprox::tensor::{CoefficientMaps, Dictionary, Fourier, FreqBlock, Frame, C64};
use proptest::prelude::*;

fn finite(range: f64) -> impl Strategy<Value = f64> {
    -range..range
}

fn frame_and_support() -> impl Strategy<Value = (Frame, Frame)> {
    prop_oneof![
        (2usize..20, 1usize..20).prop_map(|(n, s)| (Frame::d1(n).unwrap(), Frame::d1(s.min(n)).unwrap())),
        (1usize..8, 1usize..8, 1usize..8, 1usize..8).prop_map(|(r, c, sr, sc)| {
            (Frame::d2(r, c).unwrap(), Frame::d2(sr.min(r), sc.min(c)).unwrap())
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn soft_threshold_minimizes_the_scalar_objective(x in finite(5.0), gamma in 0.0f64..3.0) {
        let u = soft_threshold(&[x], gamma).unwrap()[0];
        let obj = |v: f64| 0.5 * (v - x).powi(2) + gamma * v.abs();
        // dense grid around the data point
        let best = (0..=200_000)
            .map(|i| x - 5.0 + 10.0 * i as f64 / 200_000.0)
            .chain([0.0])
            .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
            .unwrap();
        prop_assert!((u - best).abs() <= 1e-4 + 1e-12);
        prop_assert!(obj(u) <= obj(best) + 1e-12);
    }

    #[test]
    fn block_shrink_beats_random_probes(r in prop::collection::vec(finite(3.0), 1..12), tau in 0.0f64..4.0,
                                        probes in prop::collection::vec(prop::collection::vec(finite(1.0), 12), 20)) {
        let u = block_l2_shrink(&r, tau).unwrap();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let obj = |v: &[f64]| 0.5 * v.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>() + tau * norm(v);
        let base = obj(&u);
        for p in &probes {
            for scale in [1e-3, 1e-1, 1.0] {
                let v: Vec<f64> = u.iter().zip(p).map(|(a, d)| a + scale * d).collect();
                prop_assert!(obj(&v) >= base - 1e-12);
            }
        }
    }

    #[test]
    fn cpn_projection_is_idempotent_and_feasible((frame, support) in frame_and_support(), seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let z = common::uniform(&mut r, frame.len());
        let set = ConstraintSetPN::new(support.clone(), frame.clone()).unwrap();
        if let Ok(p) = project_cpn(&z, &set) {
            prop_assert!(set.contains(&p, 1e-12));
            let norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() <= 1e-12);
            let outside = z.len() - support.len();
            prop_assert_eq!(p.iter().filter(|v| **v == 0.0).count() >= outside, true);
            let q = project_cpn(&p, &set).unwrap();
            prop_assert!(common::max_abs_diff(&p, &q) <= 1e-12);
            // no unit-norm feasible point is closer: compare with random feasible points
            let dist = |a: &[f64]| a.iter().zip(&z).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            for _ in 0..10 {
                let w = common::uniform(&mut r, frame.len());
                if let Ok(f) = project_cpn(&w, &set) {
                    prop_assert!(dist(&p) <= dist(&f) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn consensus_projection_is_the_nearest_consensus_point(blocks in prop::collection::vec(prop::collection::vec(finite(4.0), 5), 1..6),
                                                           probe in prop::collection::vec(finite(4.0), 5)) {
        let p = project_consensus(&blocks).unwrap();
        let set = ConsensusSet::new(blocks.len()).unwrap();
        prop_assert!(set.contains(&p, 0.0));
        let q = project_consensus(&p).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!(common::max_abs_diff(a, b) <= 1e-12);
        }
        // least-squares oracle: minimizing sum_i ||c - b_i||^2 over c gives the mean;
        // any other consensus point is no closer
        let dist = |c: &[f64]| blocks.iter().map(|b| b.iter().zip(c).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sum::<f64>();
        prop_assert!(dist(&p[0]) <= dist(&probe) + 1e-12);
        let mean: Vec<f64> = (0..5).map(|j| blocks.iter().map(|b| b[j]).sum::<f64>() / blocks.len() as f64).collect();
        prop_assert!(common::max_abs_diff(&p[0], &mean) <= 1e-12);
    }

    #[test]
    fn soft_threshold_and_shrink_are_nonexpansive(a in prop::collection::vec(finite(5.0), 6), b in prop::collection::vec(finite(5.0), 6), t in 0.0f64..2.0) {
        let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let (sa, sb) = (soft_threshold(&a, t).unwrap(), soft_threshold(&b, t).unwrap());
        prop_assert!(d(&sa, &sb) <= d(&a, &b) + 1e-12);
        let (ba, bb) = (block_l2_shrink(&a, t).unwrap(), block_l2_shrink(&b, t).unwrap());
        prop_assert!(d(&ba, &bb) <= d(&a, &b) + 1e-12);
    }

    #[test]
    fn dft_round_trip_and_parseval((frame, _) in frame_and_support(), seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let a = common::uniform(&mut r, frame.len());
        let f = Fourier::new(&frame);
        let spec = f.forward(&a);
        let back = f.inverse_real(&spec);
        let na: f64 = a.iter().map(|v| v * v).sum();
        prop_assert!(common::max_abs_diff(&a, &back) <= 1e-12 * na.sqrt().max(1.0));
        let ns: f64 = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / frame.len() as f64;
        prop_assert!((na - ns).abs() <= 1e-10 * na.max(1e-300));
    }

    #[test]
    fn consensus_alpha_is_monotone(alpha in 1e-3f64..10.0, rho in 0.0f64..10.0, da in 1e-3f64..1.0, dr in 1e-3f64..1.0) {
        prop_assert!(consensus_alpha(alpha, rho + dr) < consensus_alpha(alpha, rho));
        prop_assert!(consensus_alpha(alpha + da, rho) > consensus_alpha(alpha, rho));
        prop_assert!(consensus_alpha(alpha, rho) <= alpha);
    }

    #[test]
    fn sherman_morrison_solves_its_system(width in 1usize..9, bins in 1usize..5, rho in 1e-2f64..10.0, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let mut block = |bins: usize| {
            let v = common::uniform(&mut r, 2 * bins * width);
            FreqBlock::from_data(bins, width, v.chunks(2).map(|c| C64::new(c[0], c[1])).collect()).unwrap()
        };
        let op = block(bins);
        let rhs = block(bins);
        let x = sherman_morrison_solve(&op, rho, &rhs).unwrap();
        for n in 0..bins {
            let a = op.bin(n);
            let s: C64 = a.iter().zip(x.bin(n)).map(|(p, q)| p * q).sum();
            for (j, b) in rhs.bin(n).iter().enumerate() {
                let lhs = a[j].conj() * s + x.bin(n)[j] * rho;
                prop_assert!((lhs - b).norm() <= 1e-10 * (1.0 + b.norm()));
            }
        }
    }

    #[test]
    fn container_round_trips((frame, support) in frame_and_support(), m in 1usize..4, k in 1usize..3, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let d = Dictionary::new(support.clone(), frame.clone(), common::uniform(&mut r, m * support.len())).unwrap();
        prop_assert_eq!(decode_dictionary(&encode_dictionary(&d)).unwrap(), d);
        let x = CoefficientMaps::new(k, m, frame.clone(), common::uniform(&mut r, k * m * frame.len())).unwrap();
        prop_assert_eq!(decode_maps(&encode_maps(&x)).unwrap(), x);
    }

    #[test]
    fn proximal_gradient_objective_is_monotone(seed in any::<u64>(), lambda in 0.0f64..0.5) {
        let mut r = common::rng(seed);
        let (replicas, dim) = (3, 6);
        let terms: Vec<LeastSquares> = (0..replicas)
            .map(|_| LeastSquares::new(DenseMatrix::new(8, dim, common::uniform(&mut r, 8 * dim)).unwrap(), common::uniform(&mut r, 8)).unwrap())
            .collect();
        // largest eigenvalue of the mean Hessian by dense power iteration
        let mut v = vec![1.0; dim];
        let mut lbar = 0.0;
        for _ in 0..500 {
            let mut w = vec![0.0; dim];
            for t in &terms {
                for (a, b) in w.iter_mut().zip(t.hessian_apply(&v).unwrap()) {
                    *a += b / replicas as f64;
                }
            }
            lbar = w.iter().map(|a| a * a).sum::<f64>().sqrt();
            v = w.into_iter().map(|a| a / lbar).collect();
        }
        let alpha_c = 0.99 / lbar;
        let prox = L1Norm::new(lambda).unwrap();
        let obj = |x: &[f64]| terms.iter().map(|t| t.value(x)).sum::<f64>() / replicas as f64 + lambda * x.iter().map(|a| a.abs()).sum::<f64>();
        let mut x = common::uniform(&mut r, dim);
        let mut prev = obj(&x);
        for _ in 0..50 {
            x = pg_consensus_step(&vec![x; replicas], &terms, &prox, alpha_c).unwrap();
            let cur = obj(&x);
            prop_assert!(cur <= prev + 1e-12 * prev.abs().max(1.0));
            prev = cur;
        }
    }
}

#[test]
fn dictionary_update_keeps_filters_feasible() {
    use cnsprox::cdl::{DictOptions, DictProblem, DictSolver, DictUpdate, random_dictionary};
    use cnsprox::consensus::Execution;
    use cnsprox::tensor::SignalSet;
    let frame = Frame::d2(10, 9).unwrap();
    let support = Frame::d2(3, 3).unwrap();
    let mut r = common::rng(5);
    let maps = CoefficientMaps::new(3, 4, frame.clone(), common::uniform(&mut r, 3 * 4 * frame.len())).unwrap();
    let signals = SignalSet::new(frame.clone(), common::uniform(&mut r, 3 * frame.len())).unwrap();
    let fourier = Arc::new(Fourier::new(&frame));
    let problem = DictProblem::new(&maps, &signals, fourier, Execution::Sequential).unwrap();
    let init = random_dictionary(4, support.clone(), frame.clone(), 1).unwrap();
    let set = ConstraintSetPN::new(support, frame.clone()).unwrap();
    for kind in [DictSolver::AdmmCns, DictSolver::Apg, DictSolver::ApgCns] {
        let mut st = DictUpdate::new(kind, &init, 3, 0.1, &DictOptions::default()).unwrap();
        for _ in 0..20 {
            st.run(&problem, 1).unwrap();
            for f in st.padded().chunks(frame.len()) {
                assert!(set.contains(f, 1e-12), "{kind:?}");
            }
        }
    }
}
