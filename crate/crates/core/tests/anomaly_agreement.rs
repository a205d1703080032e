use cnsprox::anomaly::*;
use cnsprox::consensus::Execution;

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

#[test]
fn solvers_agree_on_injected_windows() {
    for seed in 0..3 {
        let inst = synthetic_anomalies(&SyntheticSpec { seed, ..Default::default() }).unwrap();
        let cfg = AnomalyConfig {
            iters: 600,
            execution: Execution::Sequential,
            ..Default::default()
        };
        let apg = caddict_apg_consensus(&inst.problem, &cfg).unwrap();
        let admm = caddict_admm_consensus(&inst.problem, &cfg).unwrap();
        let fa = apg.trace.final_objective().unwrap();
        let fb = admm.trace.final_objective().unwrap();
        let wa = flagged_windows(&flag_scores(&apg.solution.score, cfg.threshold_sigmas));
        let wb = flagged_windows(&flag_scores(&admm.solution.score, cfg.threshold_sigmas));
        eprintln!("seed {seed}: apg {fa} admm {fb} injected {:?} apg {wa:?} admm {wb:?}", inst.injected);
        assert!((fa - fb).abs() <= 0.01 * fa.min(fb));
        assert_eq!(wa, wb);
        for w in &inst.injected {
            assert!(wa.iter().any(|f| overlaps(*f, *w)));
        }
    }
}
