use cnsprox::step::{Inertia, InertialConfig};

fn check(config: InertialConfig) {
    let mut seq = Inertia::new(config).unwrap();
    let mut t = seq.t();
    for k in 1..=10_000 {
        let gamma = seq.advance();
        let next = seq.t();
        assert!(next * next - next <= t * t, "{config:?} fails at k = {k}: t_k = {t}, t_k+1 = {next}");
        assert!(next >= 1.0);
        assert!((gamma - (t - 1.0) / next).abs() == 0.0);
        t = next;
    }
}

#[test]
fn nesterov_sequence_satisfies_the_condition() {
    check(InertialConfig::Nesterov);
}

#[test]
fn linear_sequences_satisfy_the_condition() {
    for b in [2.0, 3.0, 4.5, 10.0] {
        check(InertialConfig::Linear { b });
    }
}

#[test]
fn generalized_sequences_satisfy_the_condition() {
    check(InertialConfig::generalized_default());
    for (a, b) in [(50.0, 2.0), (80.0, 2.0), (65.0, 3.0), (2.0, 2.0)] {
        check(InertialConfig::Generalized { a, b });
    }
}
