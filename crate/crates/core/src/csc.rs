//! Convolutional sparse coding: frequency-domain ADMM with per-bin
//! Sherman-Morrison solves, FISTA / FISTA-3K, and single-signal CBPDN.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::consensus::{
    Admm, AdmmConfig, ApgConsensus, Execution, L1Norm, ProximalSubproblem, ProxOperator, SmoothTerm, Terms,
};
use crate::error::{Error, Result};
use crate::step::{InertialConfig, StepConfig, StepRule};
use crate::tensor::{freq_gradient_csc, CoefficientMaps, Dictionary, Fourier, FreqBlock, OpCounter, SignalSet, C64};
use crate::trace::{ConvergenceTrace, DivergenceGuard, DEFAULT_GUARD_FACTOR};
use crate::vecops;

/// Per-bin solve of `(a a^H + rho I) x = b` with `a = conj(op_n)`, i.e. the
/// system `(op^H op + rho I) x = b` arising from `op x = target` fidelity.
pub fn sherman_morrison_solve(op: &FreqBlock, rho: f64, rhs: &FreqBlock) -> Result<FreqBlock> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("penalty must be > 0, got {rho}")));
    }
    if op.bins() != rhs.bins() || op.width() != rhs.width() {
        return Err(Error::Shape(format!(
            "operator {}x{} against right-hand side {}x{}",
            op.bins(),
            op.width(),
            rhs.bins(),
            rhs.width()
        )));
    }
    let mut out = rhs.clone();
    sm_in_place(op, rho, &mut out);
    Ok(out)
}

fn sm_in_place(op: &FreqBlock, rho: f64, b: &mut FreqBlock) {
    let inv_rho = 1.0 / rho;
    for n in 0..op.bins() {
        let a = op.bin(n);
        let x = b.bin_mut(n);
        // a^H b with a = conj(op) is op^T b
        let proj = a.iter().zip(x.iter()).fold(C64::new(0.0, 0.0), |acc, (p, q)| acc + p * q);
        let energy: f64 = a.iter().map(|p| p.norm_sqr()).sum();
        let coef = proj / (rho + energy);
        for (xi, p) in x.iter_mut().zip(a) {
            *xi = (*xi - p.conj() * coef) * inv_rho;
        }
    }
}

/// `1/2 || sum_m op_m * v_m - t ||^2` over the stacked variable `v`
/// (`width` frames), with the operator and target kept in the frequency
/// domain. Serves as sparse-coding term (operator = filters, variable =
/// maps) and as dictionary term (operator = maps, variable = filters).
#[derive(Clone, Debug)]
pub struct ConvLeastSquares {
    op: Arc<FreqBlock>,
    target: Vec<C64>,
    fourier: Arc<Fourier>,
}

impl ConvLeastSquares {
    pub fn new(op: Arc<FreqBlock>, target: Vec<C64>, fourier: Arc<Fourier>) -> Result<Self> {
        if op.bins() != fourier.bins() || target.len() != fourier.bins() {
            return Err(Error::Shape(format!(
                "operator with {} bins and target with {} bins on a frame of {} samples",
                op.bins(),
                target.len(),
                fourier.bins()
            )));
        }
        Ok(ConvLeastSquares { op, target, fourier })
    }

    pub fn op(&self) -> &FreqBlock {
        &self.op
    }

    pub fn target(&self) -> &[C64] {
        &self.target
    }

    fn counter(&self) -> &OpCounter {
        self.fourier.counter()
    }

    /// `1/2 ||op v_hat - t||^2` for a spectrum already computed.
    pub fn value_hat(&self, vhat: &FreqBlock) -> f64 {
        let n = self.op.bins();
        let mut acc = 0.0;
        for b in 0..n {
            let r = dotu(self.op.bin(b), vhat.bin(b)) - self.target[b];
            acc += r.norm_sqr();
        }
        self.counter().add_bin_products(n as u64);
        0.5 * acc / n as f64
    }
}

pub(crate) fn dotu(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).fold(C64::new(0.0, 0.0), |acc, (p, q)| acc + p * q)
}

impl SmoothTerm for ConvLeastSquares {
    fn dim(&self) -> usize {
        self.op.bins() * self.op.width()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.value_hat(&self.fourier.forward_stack(x))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let xhat = self.fourier.forward_stack(x);
        let g = freq_gradient_csc(&self.op, &xhat, &self.target).expect("conformable by construction");
        self.counter().add_bin_products(self.op.bins() as u64);
        out.copy_from_slice(&self.fourier.inverse_stack(&g));
    }

    fn curvature(&self, v: &[f64]) -> Option<f64> {
        let vhat = self.fourier.forward_stack(v);
        let n = self.op.bins();
        let acc: f64 = (0..n).map(|b| dotu(self.op.bin(b), vhat.bin(b)).norm_sqr()).sum();
        self.counter().add_bin_products(n as u64);
        Some(acc / n as f64)
    }

    fn hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        let mut vhat = self.fourier.forward_stack(v);
        for b in 0..self.op.bins() {
            let a = self.op.bin(b);
            let s = dotu(a, vhat.bin(b));
            for (h, p) in vhat.bin_mut(b).iter_mut().zip(a) {
                *h = p.conj() * s;
            }
        }
        self.counter().add_bin_products(self.op.bins() as u64);
        Some(self.fourier.inverse_stack(&vhat))
    }
}

impl ProximalSubproblem for ConvLeastSquares {
    fn dim(&self) -> usize {
        SmoothTerm::dim(self)
    }

    fn solve(&self, v: &[f64], rho: f64, out: &mut [f64]) -> Result<()> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter(format!("penalty must be > 0, got {rho}")));
        }
        let mut rhs = self.fourier.forward_stack(v);
        for b in 0..self.op.bins() {
            let t = self.target[b];
            for (r, p) in rhs.bin_mut(b).iter_mut().zip(self.op.bin(b)) {
                *r = p.conj() * t + *r * rho;
            }
        }
        sm_in_place(&self.op, rho, &mut rhs);
        self.counter().add_bin_solves(self.op.bins() as u64);
        out.copy_from_slice(&self.fourier.inverse_stack(&rhs));
        Ok(())
    }

    fn value(&self, x: &[f64]) -> f64 {
        SmoothTerm::value(self, x)
    }
}

/// Sparse coding of a signal set against a fixed dictionary.
#[derive(Clone, Debug)]
pub struct CscProblem {
    dict: Dictionary,
    signals: SignalSet,
    lambda: f64,
}

impl CscProblem {
    pub fn new(dict: Dictionary, signals: SignalSet, lambda: f64) -> Result<Self> {
        if dict.frame() != signals.frame() {
            return Err(Error::Shape(format!(
                "dictionary frame {} differs from signal frame {}",
                dict.frame(),
                signals.frame()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(CscProblem { dict, signals, lambda })
    }

    pub fn dict(&self) -> &Dictionary {
        &self.dict
    }

    pub fn signals(&self) -> &SignalSet {
        &self.signals
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FistaVariant {
    /// Fixed step `1/L` with `L = max_n ||d_hat_n||^2`, Nesterov extrapolation.
    #[default]
    Fista,
    /// Non-decreasing `c`-scaled support-Cauchy step.
    Fista3k,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CscOptions {
    pub iters: usize,
    /// Initial ADMM penalty; `None` means `100 lambda + 1`.
    pub rho0: Option<f64>,
    pub relax: f64,
    pub adaptive: bool,
    /// Overrides the variant's default step rule.
    pub step: Option<StepConfig>,
    /// FISTA-3K multiplicative factor.
    pub c: f64,
    pub inertial: InertialConfig,
    pub trace_every: usize,
    pub execution: Execution,
    pub deterministic: bool,
    /// Code each signal with its mean removed (the mean is added back in reconstructions).
    pub subtract_mean: bool,
}

impl Default for CscOptions {
    fn default() -> Self {
        CscOptions {
            iters: 200,
            rho0: None,
            relax: 1.8,
            adaptive: true,
            step: None,
            c: crate::step::FISTA3K_DEFAULT_C,
            inertial: InertialConfig::Nesterov,
            trace_every: 1,
            execution: Execution::Parallel,
            deterministic: false,
            subtract_mean: false,
        }
    }
}

impl CscOptions {
    pub fn iterations(iters: usize) -> Self {
        CscOptions {
            iters,
            ..Default::default()
        }
    }

    pub fn admm_config(&self, lambda: f64) -> AdmmConfig {
        AdmmConfig {
            rho0: self.rho0.unwrap_or(100.0 * lambda + 1.0),
            relax: self.relax,
            adaptive: self.adaptive,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct CscOutput {
    /// Post-threshold coefficient maps.
    pub maps: CoefficientMaps,
    pub trace: ConvergenceTrace,
    /// Per-signal means removed before coding, when requested.
    pub means: Option<Vec<f64>>,
}

/// Frequency-domain view of a sparse-coding problem shared by the solvers.
pub(crate) struct CodingSetup {
    pub dhat: Arc<FreqBlock>,
    pub terms: Vec<ConvLeastSquares>,
    pub means: Option<Vec<f64>>,
}

impl CodingSetup {
    pub fn new(dict: &Dictionary, signals: &SignalSet, subtract_mean: bool, counter: Arc<OpCounter>) -> Result<Self> {
        let fourier = Arc::new(Fourier::with_counter(dict.frame(), counter));
        let dhat = Arc::new(fourier.forward_stack(&dict.padded()));
        let means = subtract_mean.then(|| signals.iter().map(mean).collect::<Vec<_>>());
        let terms = signals
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let centered: Vec<f64> = match &means {
                    Some(m) => s.iter().map(|v| v - m[k]).collect(),
                    None => s.to_vec(),
                };
                ConvLeastSquares::new(dhat.clone(), fourier.forward(&centered), fourier.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CodingSetup {
            dhat,
            terms,
            means,
        })
    }

    /// Setup from precomputed signal spectra, without mean removal.
    pub fn from_spectra(dict: &Dictionary, shat: Arc<Vec<Vec<C64>>>, fourier: Arc<Fourier>) -> Result<Self> {
        if dict.frame() != fourier.frame() {
            return Err(Error::Shape(format!("dictionary frame {} against transform frame {}", dict.frame(), fourier.frame())));
        }
        let dhat = Arc::new(fourier.forward_stack(&dict.padded()));
        let terms = shat
            .iter()
            .map(|s| ConvLeastSquares::new(dhat.clone(), s.clone(), fourier.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(CodingSetup {
            dhat,
            terms,
            means: None,
        })
    }

    /// `max_n ||d_hat_n||^2`, the Lipschitz constant of the fidelity gradient.
    pub fn lipschitz(&self) -> f64 {
        (0..self.dhat.bins())
            .map(|n| self.dhat.bin(n).iter().map(|v| v.norm_sqr()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn mean(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}

struct JointMonitor {
    trace: ConvergenceTrace,
    guard: DivergenceGuard,
    every: usize,
    iters: usize,
}

impl JointMonitor {
    fn new(opts: &CscOptions) -> Result<Self> {
        if opts.iters == 0 || opts.trace_every == 0 {
            return Err(Error::InvalidParameter("iteration count and trace period must be >= 1".into()));
        }
        Ok(JointMonitor {
            trace: ConvergenceTrace::new(opts.deterministic),
            guard: DivergenceGuard::new(DEFAULT_GUARD_FACTOR),
            every: opts.trace_every,
            iters: opts.iters,
        })
    }

    fn due(&self, i: usize) -> bool {
        i == 0 || i == self.iters || i % self.every == 0
    }

    fn record(&mut self, i: usize, fidelity: f64, l1: f64, step: f64, rho: f64) -> Result<()> {
        let obj = self.trace.record(i, fidelity, l1, step, rho).objective;
        self.guard.check(i, obj)
    }
}

fn joint_value(terms: &[ConvLeastSquares], xs: &[&[f64]], prox: &L1Norm, exec: Execution) -> (f64, f64) {
    let fid: f64 = exec.map(terms.len(), |k| SmoothTerm::value(&terms[k], xs[k])).into_iter().sum();
    let l1: f64 = xs.iter().map(|x| prox.value(x)).sum();
    (fid, l1)
}

fn assemble(p: &CscProblem, blocks: Vec<Vec<f64>>) -> Result<CoefficientMaps> {
    CoefficientMaps::new(
        p.signals.count(),
        p.dict.m_count(),
        p.dict.frame().clone(),
        blocks.concat(),
    )
}

/// Independent scaled ADMM per signal. The trace sums the objective over
/// signals, evaluated at the post-threshold variable.
pub fn csc_admm_solve(p: &CscProblem, opts: &CscOptions) -> Result<CscOutput> {
    csc_admm_solve_counted(p, opts, Arc::new(OpCounter::default()))
}

pub fn csc_admm_solve_counted(p: &CscProblem, opts: &CscOptions, counter: Arc<OpCounter>) -> Result<CscOutput> {
    let setup = CodingSetup::new(&p.dict, &p.signals, opts.subtract_mean, counter)?;
    let prox = L1Norm::new(p.lambda)?;
    let cfg = opts.admm_config(p.lambda);
    let dim = p.dict.m_count() * p.dict.frame().len();
    let mut solvers = (0..p.signals.count())
        .map(|_| Admm::new(vec![0.0; dim], cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut mon = JointMonitor::new(opts)?;
    let ys = |s: &[Admm]| s.iter().map(|a| a.y().to_vec()).collect::<Vec<_>>();
    let (fid, l1) = joint_value(&setup.terms, &vec![&vec![0.0; dim][..]; solvers.len()], &prox, opts.execution);
    mon.record(0, fid, l1, 0.0, cfg.rho0)?;
    for i in 1..=opts.iters {
        let terms = &setup.terms;
        opts.execution.for_each_mut(&mut solvers, |k, s| s.iterate(&terms[k], &prox).map(|_| ()))?;
        if mon.due(i) {
            let y = ys(&solvers);
            let refs: Vec<&[f64]> = y.iter().map(Vec::as_slice).collect();
            let (fid, l1) = joint_value(terms, &refs, &prox, opts.execution);
            let rho = solvers.iter().map(Admm::rho).sum::<f64>() / solvers.len() as f64;
            mon.record(i, fid, l1, 0.0, rho)?;
        }
    }
    Ok(CscOutput {
        maps: assemble(p, ys(&solvers))?,
        trace: mon.trace,
        means: setup.means,
    })
}

/// Accelerated proximal gradient per signal (FISTA or FISTA-3K).
pub fn csc_fista_solve(p: &CscProblem, opts: &CscOptions, variant: FistaVariant) -> Result<CscOutput> {
    let setup = CodingSetup::new(&p.dict, &p.signals, opts.subtract_mean, Arc::new(OpCounter::default()))?;
    let prox = L1Norm::new(p.lambda)?;
    let step = fista_step(opts, variant, &setup)?;
    let dim = p.dict.m_count() * p.dict.frame().len();
    let mut solvers = (0..p.signals.count())
        .map(|_| ApgConsensus::new(vec![0.0; dim], step, opts.inertial))
        .collect::<Result<Vec<_>>>()?;
    let mut mon = JointMonitor::new(opts)?;
    let zero = vec![0.0; dim];
    let (fid, l1) = joint_value(&setup.terms, &vec![&zero[..]; solvers.len()], &prox, opts.execution);
    mon.record(0, fid, l1, 0.0, 0.0)?;
    for i in 1..=opts.iters {
        let terms = &setup.terms;
        opts.execution.for_each_mut(&mut solvers, |k, s| {
            let obj = Terms::new(std::slice::from_ref(&terms[k]), Execution::Sequential)?;
            s.iterate(&obj, &prox).map(|_| ())
        })?;
        if mon.due(i) {
            let refs: Vec<&[f64]> = solvers.iter().map(|s| s.solution()).collect();
            let (fid, l1) = joint_value(terms, &refs, &prox, opts.execution);
            let step = solvers.iter().filter_map(ApgConsensus::last_step).sum::<f64>() / solvers.len() as f64;
            mon.record(i, fid, l1, step, 0.0)?;
        }
    }
    Ok(CscOutput {
        maps: assemble(p, solvers.iter().map(|s| s.solution().to_vec()).collect())?,
        trace: mon.trace,
        means: setup.means,
    })
}

pub(crate) fn fista_step(opts: &CscOptions, variant: FistaVariant, setup: &CodingSetup) -> Result<StepConfig> {
    if let Some(s) = opts.step {
        return Ok(s);
    }
    let l = setup.lipschitz();
    if !(l > 0.0) {
        return Err(Error::Degenerate("dictionary has no energy".into()));
    }
    Ok(match variant {
        FistaVariant::Fista => StepConfig::fixed(1.0 / l),
        // The non-decreasing sequence is bounded by 1/L of the current
        // dictionary, which matters when the dictionary changes between calls.
        FistaVariant::Fista3k => StepConfig {
            rule: StepRule::Fista3k,
            c: opts.c,
            max: Some(1.0 / l),
            ..Default::default()
        },
    })
}

/// Default sparsity weight of the held-out CBPDN evaluation.
pub const CBPDN_LAMBDA: f64 = 0.1;
/// Default iteration count of the held-out CBPDN evaluation.
pub const CBPDN_ITERS: usize = 200;

#[derive(Clone, Debug)]
pub struct CbpdnResult {
    pub maps: CoefficientMaps,
    pub objective: f64,
    pub fidelity: f64,
    pub l1: f64,
    /// `sum_m d_m * x_m` (plus the removed mean, if any).
    pub reconstruction: Vec<f64>,
}

/// Single-signal ADMM sparse coding; reports the final objective
/// `1/2 ||sum_m d_m * x_m - s||^2 + lambda sum_m ||x_m||_1`.
pub fn cbpdn_solve(d: &Dictionary, s: &[f64], lambda: f64, opts: &CscOptions) -> Result<CbpdnResult> {
    let signals = SignalSet::new(d.frame().clone(), s.to_vec())?;
    if signals.count() != 1 {
        return Err(Error::Shape(format!("expected one signal of frame {}, got {}", d.frame(), signals.count())));
    }
    let p = CscProblem::new(d.clone(), signals, lambda)?;
    let out = csc_admm_solve(&p, opts)?;
    let mut reconstruction = crate::tensor::conv_sum(d, &out.maps, 0)?;
    let centered: Vec<f64> = match &out.means {
        Some(m) => s.iter().map(|v| v - m[0]).collect(),
        None => s.to_vec(),
    };
    let fidelity = 0.5 * vecops::dist_sq(&reconstruction, &centered);
    let l1 = lambda * vecops::l1(out.maps.data());
    if let Some(m) = &out.means {
        reconstruction.iter_mut().for_each(|v| *v += m[0]);
    }
    Ok(CbpdnResult {
        maps: out.maps,
        objective: fidelity + l1,
        fidelity,
        l1,
        reconstruction,
    })
}
