mod common;

use cnsprox::consensus::{pg_consensus_step, ApgConsensus, L1Norm, LeastSquares, Terms, Execution};
use cnsprox::prox::project_consensus;
use cnsprox::step::{consensus_alpha, DenseMatrix, InertialConfig, StepConfig, StepRule};
use common::{max_abs_diff, rng, uniform};
use rand::Rng;

struct Instance {
    mats: Vec<(usize, Vec<f64>)>,
    rhs: Vec<Vec<f64>>,
    dim: usize,
    lambda: f64,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let replicas = r.random_range(1..=8);
    let dim = r.random_range(1..=32);
    let mut mats = Vec::new();
    let mut rhs = Vec::new();
    for _ in 0..replicas {
        let rows = r.random_range(1..=dim + 4);
        mats.push((rows, uniform(&mut r, rows * dim)));
        rhs.push(uniform(&mut r, rows));
    }
    Instance {
        mats,
        rhs,
        dim,
        lambda: r.random_range(0.0..0.5),
    }
}

impl Instance {
    fn terms(&self) -> Vec<LeastSquares> {
        self.mats
            .iter()
            .zip(&self.rhs)
            .map(|((rows, a), b)| LeastSquares::new(DenseMatrix::new(*rows, self.dim, a.clone()).unwrap(), b.clone()).unwrap())
            .collect()
    }

    /// `A_i^T (A_i x - b_i)` by explicit loops.
    fn grad(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let (rows, a) = &self.mats[i];
        let mut g = vec![0.0; self.dim];
        for r in 0..*rows {
            let row = &a[r * self.dim..(r + 1) * self.dim];
            let res: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - self.rhs[i][r];
            for (gi, ai) in g.iter_mut().zip(row) {
                *gi += ai * res;
            }
        }
        g
    }

    fn replicas(&self) -> usize {
        self.mats.len()
    }
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// `prox_{a g}(mean_i (x_i - a grad f_i(x_i)))` with `g = lambda ||.||_1`.
fn oracle_step(inst: &Instance, locals: &[Vec<f64>], a: f64) -> Vec<f64> {
    let r = inst.replicas() as f64;
    let mut m = vec![0.0; inst.dim];
    for (i, x) in locals.iter().enumerate() {
        for (mj, (xj, gj)) in m.iter_mut().zip(x.iter().zip(inst.grad(i, x))) {
            *mj += (xj - a * gj) / r;
        }
    }
    m.iter().map(|v| soft(*v, a * inst.lambda)).collect()
}

#[test]
fn consensus_step_is_proximal_gradient_on_the_mean_objective() {
    for seed in 0..100 {
        let inst = instance(seed);
        let mut r = rng(1000 + seed);
        let x = uniform(&mut r, inst.dim);
        let alpha_c = r.random_range(0.01..0.5);
        let locals = vec![x.clone(); inst.replicas()];
        let got = pg_consensus_step(&locals, &inst.terms(), &L1Norm::new(inst.lambda).unwrap(), alpha_c).unwrap();
        // standard step on (1/R) sum f_i + g at the common point
        let r_f = inst.replicas() as f64;
        let mut gbar = vec![0.0; inst.dim];
        for i in 0..inst.replicas() {
            for (a, b) in gbar.iter_mut().zip(inst.grad(i, &x)) {
                *a += b / r_f;
            }
        }
        let expect: Vec<f64> = x
            .iter()
            .zip(&gbar)
            .map(|(xi, gi)| soft(xi - alpha_c * gi, alpha_c * inst.lambda))
            .collect();
        assert!(max_abs_diff(&got, &expect) <= 1e-12, "seed {seed}");

        let distinct: Vec<Vec<f64>> = (0..inst.replicas()).map(|_| uniform(&mut r, inst.dim)).collect();
        let got = pg_consensus_step(&distinct, &inst.terms(), &L1Norm::new(inst.lambda).unwrap(), alpha_c).unwrap();
        assert!(max_abs_diff(&got, &oracle_step(&inst, &distinct, alpha_c)) <= 1e-12, "seed {seed}");
    }
}

#[test]
fn two_subproblem_alternation_matches_the_single_step() {
    for seed in 0..100 {
        let inst = instance(seed);
        let mut r = rng(2000 + seed);
        let alpha = r.random_range(0.01..1.0);
        let rho = r.random_range(0.0..5.0);
        let locals: Vec<Vec<f64>> = (0..inst.replicas()).map(|_| uniform(&mut r, inst.dim)).collect();
        let rf = inst.replicas() as f64;
        // y-subproblem with penalty R g(y): minimize
        // (1/2a) sum ||y - v_i||^2 + (rho/2) sum ||y - x_i||^2 + R lambda ||y||_1
        let mut c = vec![0.0; inst.dim];
        for (i, x) in locals.iter().enumerate() {
            let g = inst.grad(i, x);
            for j in 0..inst.dim {
                let v = x[j] - alpha * g[j];
                c[j] += (v / alpha + rho * x[j]) / rf;
            }
        }
        let w = 1.0 / alpha + rho;
        let y: Vec<f64> = c.iter().map(|cj| soft(cj / w, inst.lambda / w)).collect();
        // x-subproblem: projection of (y, ..., y) onto the consensus set
        let split = project_consensus(&vec![y; inst.replicas()]).unwrap();
        let single = pg_consensus_step(
            &locals,
            &inst.terms(),
            &L1Norm::new(inst.lambda).unwrap(),
            consensus_alpha(alpha, rho),
        )
        .unwrap();
        for block in &split {
            assert!(max_abs_diff(block, &single) <= 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn apg_engine_without_inertia_follows_the_oracle() {
    for seed in 0..20 {
        let inst = instance(seed);
        let mut r = rng(3000 + seed);
        let alpha = r.random_range(0.01..0.1);
        let rho = r.random_range(0.0..2.0);
        let terms = inst.terms();
        let obj = Terms::new(&terms, Execution::Sequential).unwrap();
        let prox = L1Norm::new(inst.lambda).unwrap();
        let x0 = uniform(&mut r, inst.dim);
        let step = StepConfig {
            rule: StepRule::Fixed,
            fixed: alpha,
            rho,
            ..Default::default()
        };
        let mut solver = ApgConsensus::new(x0.clone(), step, InertialConfig::Off).unwrap();
        let mut x = x0;
        for _ in 0..5 {
            solver.iterate(&obj, &prox).unwrap();
            x = oracle_step(&inst, &vec![x; inst.replicas()], consensus_alpha(alpha, rho));
            assert!(max_abs_diff(solver.solution(), &x) <= 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn admm_residuals_vanish_on_well_conditioned_instances() {
    use cnsprox::consensus::{Admm, AdmmConfig, AdmmConsensus};
    for seed in 0..10 {
        let mut r = rng(4000 + seed);
        let dim = 6;
        let mut a = uniform(&mut r, 12 * dim);
        // tall and well conditioned
        for i in 0..dim {
            a[i * dim + i] += 4.0;
        }
        let ls = LeastSquares::new(DenseMatrix::new(12, dim, a).unwrap(), uniform(&mut r, 12)).unwrap();
        let prox = L1Norm::new(0.1).unwrap();
        let mut admm = Admm::new(vec![0.0; dim], AdmmConfig::with_rho(1.0)).unwrap();
        let mut done = false;
        for _ in 0..10_000 {
            let res = admm.iterate(&ls, &prox).unwrap();
            if res.primal < 1e-8 && res.dual < 1e-8 {
                done = true;
                break;
            }
        }
        assert!(done, "seed {seed}: plain ADMM residuals did not vanish");

        let inst = instance(seed);
        let terms = inst.terms();
        let mut cns = AdmmConsensus::new(terms.len(), vec![0.0; inst.dim], AdmmConfig::with_rho(1.0)).unwrap();
        // a well-conditioned consensus objective needs sum_i A_i^T A_i > 0
        let mut done = false;
        for _ in 0..10_000 {
            let res = cns.iterate(&terms, &prox, Execution::Sequential).unwrap();
            if res.primal < 1e-8 && res.dual < 1e-8 {
                done = true;
                break;
            }
        }
        let total_rows: usize = inst.mats.iter().map(|(rows, _)| rows).sum();
        if total_rows >= 2 * inst.dim {
            assert!(done, "seed {seed}: consensus ADMM residuals did not vanish");
        }
    }
}
