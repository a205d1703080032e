mod common;

use std::sync::Arc;

use cnsprox::cdl::random_dictionary;
use cnsprox::consensus::{ApgConsensus, Execution, L1Norm, SmoothTerm, Terms};
use cnsprox::csc::{cbpdn_solve, csc_admm_solve, csc_fista_solve, ConvLeastSquares, CscOptions, CscProblem, FistaVariant};
use cnsprox::step::{InertialConfig, StepConfig, StepRule};
use cnsprox::tensor::{Fourier, Frame, SignalSet};

fn problem(k: usize, seed: u64) -> CscProblem {
    let frame = Frame::d2(16, 16).unwrap();
    let d = random_dictionary(4, Frame::d2(4, 4).unwrap(), frame.clone(), seed).unwrap();
    let mut r = common::rng(seed + 100);
    let s = SignalSet::new(frame, common::uniform(&mut r, k * 256)).unwrap();
    CscProblem::new(d, s, 0.1).unwrap()
}

fn opts(iters: usize) -> CscOptions {
    CscOptions {
        iters,
        execution: Execution::Sequential,
        deterministic: true,
        ..Default::default()
    }
}

#[test]
fn all_coding_solvers_reach_the_same_objective() {
    let p = problem(2, 1);
    let admm = csc_admm_solve(&p, &opts(2000)).unwrap().trace.final_objective().unwrap();
    let fista = csc_fista_solve(&p, &opts(2000), FistaVariant::Fista).unwrap().trace.final_objective().unwrap();
    let f3k = csc_fista_solve(&p, &opts(2000), FistaVariant::Fista3k).unwrap().trace.final_objective().unwrap();
    for v in [fista, f3k] {
        assert!((v - admm).abs() <= 1e-5 * admm, "{v} vs {admm}");
    }
}

#[test]
fn joint_coding_equals_separate_coding_bit_for_bit() {
    let p = problem(3, 2);
    for run in [
        |p: &CscProblem| csc_admm_solve(p, &opts(30)).unwrap().maps,
        |p: &CscProblem| csc_fista_solve(p, &opts(30), FistaVariant::Fista3k).unwrap().maps,
    ] {
        let joint = run(&p);
        for k in 0..3 {
            let single = CscProblem::new(p.dict().clone(), p.signals().select(&[k]).unwrap(), p.lambda()).unwrap();
            assert_eq!(run(&single).image(0), joint.image(k));
        }
    }
}

#[test]
fn admm_fixed_point_is_optimal() {
    let p = problem(1, 3);
    let out = csc_admm_solve(&p, &opts(3000)).unwrap();
    let x = out.maps.image(0);
    let frame = p.dict().frame().clone();
    let f = Arc::new(Fourier::new(&frame));
    let term = ConvLeastSquares::new(Arc::new(f.forward_stack(&p.dict().padded())), f.forward(p.signals().signal(0)), f.clone()).unwrap();
    let mut g = vec![0.0; x.len()];
    term.gradient(x, &mut g);
    let lambda = p.lambda();
    for (xi, gi) in x.iter().zip(&g) {
        if *xi != 0.0 {
            assert!((gi + lambda * xi.signum()).abs() <= 1e-8, "active: {gi} at {xi}");
        } else {
            assert!(gi.abs() <= lambda + 1e-8, "inactive: {gi}");
        }
    }
}

#[test]
fn fista3k_steps_never_decrease() {
    let p = problem(1, 4);
    let f = Arc::new(Fourier::new(p.dict().frame()));
    let term = ConvLeastSquares::new(Arc::new(f.forward_stack(&p.dict().padded())), f.forward(p.signals().signal(0)), f.clone()).unwrap();
    let terms = [term];
    let obj = Terms::new(&terms, Execution::Sequential).unwrap();
    let prox = L1Norm::new(p.lambda()).unwrap();
    let mut s = ApgConsensus::new(vec![0.0; terms[0].dim()], StepConfig::with_rule(StepRule::Fista3k), InertialConfig::Nesterov).unwrap();
    let mut prev = 0.0;
    for _ in 0..200 {
        let a = s.iterate(&obj, &prox).unwrap();
        assert!(a >= prev);
        prev = a;
    }
}

#[test]
fn cbpdn_objective_matches_its_parts() {
    let p = problem(1, 5);
    let r = cbpdn_solve(p.dict(), p.signals().signal(0), 0.1, &opts(100)).unwrap();
    assert!((r.objective - r.fidelity - r.l1).abs() <= 1e-12 * r.objective);
    let direct = 0.5
        * r.reconstruction
            .iter()
            .zip(p.signals().signal(0))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    assert!((direct - r.fidelity).abs() <= 1e-9 * direct);
}
