mod common;

use std::sync::Arc;

use cnsprox::cdl::*;
use cnsprox::consensus::{ConsensusObjective, Execution};
use cnsprox::step::StepRule;
use cnsprox::tensor::{CoefficientMaps, Fourier, Frame, OpCounter, SignalSet};
use cnsprox::Error;

fn data(k: usize, frame: &Frame, seed: u64) -> (CoefficientMaps, SignalSet) {
    let mut r = common::rng(seed);
    let n = frame.len();
    let maps: Vec<f64> = common::uniform(&mut r, k * 3 * n).into_iter().map(|v| if v.abs() > 0.8 { v } else { 0.0 }).collect();
    (
        CoefficientMaps::new(k, 3, frame.clone(), maps).unwrap(),
        SignalSet::new(frame.clone(), common::uniform(&mut r, k * n)).unwrap(),
    )
}

#[test]
fn consensus_apg_on_identical_replicas_matches_plain_apg() {
    let frame = Frame::d2(12, 10).unwrap();
    let support = Frame::d2(3, 3).unwrap();
    let (maps1, s1) = data(1, &frame, 7);
    let k = 4;
    let maps_k = CoefficientMaps::new(k, 3, frame.clone(), maps1.data().repeat(k)).unwrap();
    let s_k = SignalSet::new(frame.clone(), s1.data().repeat(k)).unwrap();
    let f = Arc::new(Fourier::new(&frame));
    let single = DictProblem::new(&maps1, &s1, f.clone(), Execution::Sequential).unwrap();
    let replicated = DictProblem::new(&maps_k, &s_k, f, Execution::Sequential).unwrap();
    let init = random_dictionary(3, support, frame, 3).unwrap();
    let opts = DictOptions {
        step: Some(StepRule::Cauchy),
        ..Default::default()
    };
    let mut plain = DictUpdate::new(DictSolver::Apg, &init, 1, 0.1, &opts).unwrap();
    let mut cns = DictUpdate::new(DictSolver::ApgCns, &init, k, 0.1, &opts).unwrap();
    for _ in 0..25 {
        dict_apg_update(&mut plain, &single, 1).unwrap();
        dict_apg_consensus_update(&mut cns, &replicated, 1).unwrap();
        assert!(common::max_abs_diff(plain.padded(), cns.padded()) <= 1e-12);
    }
}

#[test]
fn dictionary_methods_reach_the_same_subproblem_value() {
    let frame = Frame::d2(12, 12).unwrap();
    let (maps, s) = data(3, &frame, 8);
    let f = Arc::new(Fourier::new(&frame));
    let p = DictProblem::new(&maps, &s, f, Execution::Sequential).unwrap();
    let init = random_dictionary(3, Frame::d2(4, 4).unwrap(), frame, 9).unwrap();
    let mut finals = Vec::new();
    // these dense maps are far larger than sparse codes; the ADMM penalty
    // has to match the operator scale or the nonconvex projection cycles
    let opts = DictOptions {
        sigma0: Some(50.0),
        ..Default::default()
    };
    for kind in [DictSolver::AdmmCns, DictSolver::Apg, DictSolver::ApgCns] {
        let mut st = DictUpdate::new(kind, &init, 3, 0.1, &opts).unwrap();
        let start = p.value(st.padded());
        st.run(&p, 400).unwrap();
        let end = p.value(st.padded());
        assert!(end < start, "{kind:?}: {end} !< {start}");
        finals.push(end);
    }
    for v in &finals {
        assert!((v - finals[1]).abs() <= 1e-6 * finals[1], "{finals:?}");
    }
}

#[test]
fn consensus_apg_does_no_per_bin_solves() {
    let frame = Frame::d2(16, 16).unwrap();
    let k = 5;
    let (maps, s) = data(k, &frame, 10);
    let init = random_dictionary(3, Frame::d2(4, 4).unwrap(), frame.clone(), 11).unwrap();
    let mut counts = Vec::new();
    for kind in [DictSolver::AdmmCns, DictSolver::ApgCns] {
        let counter = Arc::new(OpCounter::default());
        let f = Arc::new(Fourier::with_counter(&frame, counter.clone()));
        let p = DictProblem::new(&maps, &s, f, Execution::Sequential).unwrap();
        let mut st = DictUpdate::new(kind, &init, k, 0.1, &DictOptions::default()).unwrap();
        let before = counter.snapshot();
        st.run(&p, 1).unwrap();
        counts.push(counter.snapshot().since(&before));
    }
    let bins = frame.len() as u64;
    assert_eq!(counts[0].bin_solves, bins * k as u64);
    assert_eq!(counts[1].bin_solves, 0);
    let total = |c: &cnsprox::tensor::OpCounts| c.ffts * bins + c.bin_solves * 3 + c.bin_products;
    assert!(total(&counts[1]) < total(&counts[0]), "{counts:?}");
}

fn signals(k: usize, seed: u64) -> SignalSet {
    let mut r = common::rng(seed);
    SignalSet::new(Frame::d2(16, 16).unwrap(), common::uniform(&mut r, k * 256)).unwrap()
}

#[test]
fn training_trace_is_finite_and_matches_direct_evaluation() {
    let s = signals(3, 12);
    for pipeline in [Pipeline::AdmmAdmmCns, Pipeline::FistaApgCns] {
        let cfg = CdlConfig {
            m_count: 4,
            support: vec![4, 4],
            iters: 30,
            execution: Execution::Sequential,
            deterministic: true,
            checkpoint_every: 10,
            ..Default::default()
        }
        .with_pipeline(pipeline);
        let mut seen = Vec::new();
        let out = cdl_train_with(&cfg, &s, None, |it, d| {
            seen.push(it);
            assert_eq!(d.m_count(), 4);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, [10, 20, 30]);
        assert!(out.trace.rows().iter().all(|r| r.objective.is_finite()));
        let last = out.trace.final_objective().unwrap();
        let direct = cdl_objective(&out.dict, &out.maps, &s, cfg.lambda).unwrap().total;
        assert!((last - direct).abs() <= 1e-9 * direct);
        assert!(last < out.trace.rows()[0].objective);
        let set = cnsprox::prox::ConstraintSetPN::new(Frame::d2(4, 4).unwrap(), Frame::d2(16, 16).unwrap()).unwrap();
        for f in out.dict.padded().chunks(256) {
            assert!(set.contains(f, 1e-12));
        }
    }
}

#[test]
fn long_fista3k_training_stays_bounded() {
    // the step bound must follow the dictionary as it changes
    let s = signals(3, 21);
    let cfg = CdlConfig {
        m_count: 8,
        support: vec![4, 4],
        iters: 120,
        execution: Execution::Sequential,
        ..Default::default()
    }
    .with_pipeline(Pipeline::FistaApgCns);
    let out = cdl_train(&cfg, &s).unwrap();
    let rows = out.trace.rows();
    let start = rows[0].objective;
    let best = rows.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
    let last = out.trace.final_objective().unwrap();
    assert!(last < 0.5 * start, "{last} vs {start}");
    assert!(last <= 1.05 * best, "final {last} drifted from best {best}");
}

#[test]
fn deterministic_training_is_reproducible() {
    let s = signals(2, 13);
    let cfg = CdlConfig {
        m_count: 3,
        support: vec![3, 3],
        iters: 10,
        deterministic: true,
        ..Default::default()
    };
    let a = cdl_train(&cfg, &s).unwrap();
    let b = cdl_train(&cfg, &s).unwrap();
    assert_eq!(a.trace.to_csv_string(), b.trace.to_csv_string());
    assert_eq!(a.dict, b.dict);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let s = signals(2, 15);
    let cfg = CdlConfig {
        support: vec![20, 20],
        iters: 1,
        ..Default::default()
    };
    assert!(matches!(cdl_train(&cfg, &s), Err(Error::Shape(_))));
    let cfg = CdlConfig {
        m_count: 0,
        ..Default::default()
    };
    assert!(matches!(cdl_train(&cfg, &s), Err(Error::InvalidParameter(_))));
}
