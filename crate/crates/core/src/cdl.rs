//! Convolutional dictionary learning: dictionary updates (consensus ADMM,
//! APG, consensus APG) and the alternating training driver.
//!
//! Dictionaries are handled as `M` filters zero-padded to the signal frame
//! and stacked, so every update works on one vector of length `M * N`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{
    Admm, AdmmConfig, AdmmConsensus, ApgConsensus, ConsensusObjective, Execution, L1Norm, ProxOperator,
    Terms,
};
use crate::csc::{dotu, fista_step, CodingSetup, ConvLeastSquares, CscOptions, FistaVariant};
use crate::error::{Error, Result};
use crate::prox::ConstraintSetPN;
use crate::step::{InertialConfig, StepConfig, StepRule};
use crate::tensor::{conv_sum, CoefficientMaps, Dictionary, Fourier, FreqBlock, Frame, OpCounter, OpCounts, SignalSet, C64};
use crate::trace::{ConvergenceTrace, DivergenceGuard, DEFAULT_GUARD_FACTOR};
use crate::vecops;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefSolver {
    Admm,
    Fista,
    Fista3k,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictSolver {
    AdmmCns,
    Apg,
    ApgCns,
}

/// Unit-norm filters with independent standard normal entries.
pub fn random_dictionary(m_count: usize, support: Frame, frame: Frame, seed: u64) -> Result<Dictionary> {
    if m_count == 0 {
        return Err(Error::InvalidParameter("dictionary needs M >= 1 filters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = support.len();
    let mut filters: Vec<f64> = (0..m_count * s).map(|_| StandardNormal.sample(&mut rng)).collect();
    for f in filters.chunks_exact_mut(s) {
        let n = vecops::norm(f);
        f.iter_mut().for_each(|v| *v /= n);
    }
    Dictionary::new(support, frame, filters)
}

/// Projection of stacked padded filters onto the unit-norm, support-limited
/// set. A filter whose supported part vanishes is replaced by a fresh random
/// unit-norm filter.
pub struct DictionaryProjection {
    set: ConstraintSetPN,
    m_count: usize,
    rng: Mutex<ChaCha8Rng>,
    replaced: AtomicUsize,
}

impl DictionaryProjection {
    pub fn new(support: Frame, frame: Frame, m_count: usize, seed: u64) -> Result<Self> {
        Ok(DictionaryProjection {
            set: ConstraintSetPN::new(support, frame)?,
            m_count,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)),
            replaced: AtomicUsize::new(0),
        })
    }

    /// Number of degenerate filters replaced so far.
    pub fn replaced(&self) -> usize {
        self.replaced.load(Ordering::Relaxed)
    }

    pub fn project_in_place(&self, stacked: &mut [f64]) -> Result<()> {
        let n = self.set.frame().len();
        if stacked.len() != n * self.m_count {
            return Err(Error::Shape(format!(
                "{} values for {} filters of frame {}",
                stacked.len(),
                self.m_count,
                self.set.frame()
            )));
        }
        for (m, f) in stacked.chunks_exact_mut(n).enumerate() {
            match self.set.project_in_place(f) {
                Ok(()) => {}
                Err(Error::Degenerate(_)) => {
                    let fresh = {
                        let mut rng = self.rng.lock().expect("rng lock");
                        random_dictionary(1, self.set.support().clone(), self.set.frame().clone(), rand::Rng::random(&mut *rng))?
                    };
                    f.copy_from_slice(&fresh.padded());
                    self.replaced.fetch_add(1, Ordering::Relaxed);
                    log::warn!("filter {m} collapsed to zero; replaced with a random unit-norm filter");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }
}

impl ProxOperator for DictionaryProjection {
    fn prox(&self, v: &[f64], _scale: f64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(v);
        self.project_in_place(out)
    }

    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Frequency-domain data of one dictionary subproblem: the spectra of the
/// coupled coefficient maps and of the signals.
pub struct DictProblem {
    fourier: Arc<Fourier>,
    xhat: Vec<Arc<FreqBlock>>,
    shat: Arc<Vec<Vec<C64>>>,
    m_count: usize,
    exec: Execution,
}

impl DictProblem {
    pub fn new(maps: &CoefficientMaps, signals: &SignalSet, fourier: Arc<Fourier>, exec: Execution) -> Result<Self> {
        let shat = Arc::new(signals.iter().map(|s| fourier.forward(s)).collect::<Vec<_>>());
        Self::with_signal_spectra(maps, shat, fourier, exec)
    }

    pub fn with_signal_spectra(
        maps: &CoefficientMaps,
        shat: Arc<Vec<Vec<C64>>>,
        fourier: Arc<Fourier>,
        exec: Execution,
    ) -> Result<Self> {
        if maps.frame() != fourier.frame() || maps.k_count() != shat.len() {
            return Err(Error::Shape(format!(
                "{} map sets of frame {} against {} signals of frame {}",
                maps.k_count(),
                maps.frame(),
                shat.len(),
                fourier.frame()
            )));
        }
        let xhat = (0..maps.k_count())
            .map(|k| Arc::new(fourier.forward_stack(maps.image(k))))
            .collect();
        Ok(DictProblem {
            fourier,
            xhat,
            shat,
            m_count: maps.m_count(),
            exec,
        })
    }

    pub fn k_count(&self) -> usize {
        self.xhat.len()
    }

    /// One local term per signal, for the consensus ADMM local solves.
    pub fn local_terms(&self) -> Result<Vec<ConvLeastSquares>> {
        self.xhat
            .iter()
            .zip(self.shat.iter())
            .map(|(x, s)| ConvLeastSquares::new(x.clone(), s.clone(), self.fourier.clone()))
            .collect()
    }

    /// Apply `f` to every bin index in parallel chunks, writing `width`
    /// outputs per bin.
    fn per_bin<F>(&self, width: usize, f: F) -> Vec<C64>
    where
        F: Fn(usize, &mut [C64]) + Sync + Send,
    {
        let bins = self.fourier.bins();
        let mut out = vec![C64::new(0.0, 0.0); bins * width];
        let chunk = 256.max(bins / 64);
        match self.exec {
            Execution::Parallel => out.par_chunks_mut(chunk * width).enumerate().for_each(|(c, block)| {
                for (j, dst) in block.chunks_exact_mut(width).enumerate() {
                    f(c * chunk + j, dst);
                }
            }),
            Execution::Sequential => {
                for (n, dst) in out.chunks_exact_mut(width).enumerate() {
                    f(n, dst);
                }
            }
        }
        out
    }
}

impl ConsensusObjective for DictProblem {
    fn replicas(&self) -> usize {
        self.xhat.len()
    }

    fn dim(&self) -> usize {
        self.m_count * self.fourier.bins()
    }

    fn value(&self, d: &[f64]) -> f64 {
        let dhat = self.fourier.forward_stack(d);
        let bins = self.fourier.bins();
        let parts = self.per_bin(1, |n, dst| {
            let mut acc = 0.0;
            for (x, s) in self.xhat.iter().zip(self.shat.iter()) {
                acc += (dotu(x.bin(n), dhat.bin(n)) - s[n]).norm_sqr();
            }
            dst[0] = C64::new(acc, 0.0);
        });
        self.fourier.counter().add_bin_products((bins * self.xhat.len()) as u64);
        0.5 * parts.iter().map(|v| v.re).sum::<f64>() / bins as f64
    }

    fn mean_gradient(&self, d: &[f64], out: &mut [f64]) -> Result<()> {
        let dhat = self.fourier.forward_stack(d);
        let inv_k = 1.0 / self.xhat.len() as f64;
        let g = self.per_bin(self.m_count, |n, dst| {
            let dn = dhat.bin(n);
            for (x, s) in self.xhat.iter().zip(self.shat.iter()) {
                let xn = x.bin(n);
                let r = dotu(xn, dn) - s[n];
                for (gm, xm) in dst.iter_mut().zip(xn) {
                    *gm += xm.conj() * r;
                }
            }
            dst.iter_mut().for_each(|v| *v *= inv_k);
        });
        self.fourier
            .counter()
            .add_bin_products((self.fourier.bins() * self.xhat.len()) as u64);
        let block = FreqBlock::from_data(self.fourier.bins(), self.m_count, g)?;
        let spatial = self.fourier.inverse_stack(&block);
        crate::error::ensure_finite(&spatial, "dictionary gradient")?;
        out.copy_from_slice(&spatial);
        Ok(())
    }

    fn mean_curvature(&self, v: &[f64]) -> Option<f64> {
        let vhat = self.fourier.forward_stack(v);
        let parts = self.per_bin(1, |n, dst| {
            let acc: f64 = self.xhat.iter().map(|x| dotu(x.bin(n), vhat.bin(n)).norm_sqr()).sum();
            dst[0] = C64::new(acc, 0.0);
        });
        let bins = self.fourier.bins() as f64;
        Some(parts.iter().map(|v| v.re).sum::<f64>() / (bins * self.xhat.len() as f64))
    }

    fn mean_hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        let vhat = self.fourier.forward_stack(v);
        let inv_k = 1.0 / self.xhat.len() as f64;
        let h = self.per_bin(self.m_count, |n, dst| {
            for x in &self.xhat {
                let xn = x.bin(n);
                let s = dotu(xn, vhat.bin(n));
                for (hm, xm) in dst.iter_mut().zip(xn) {
                    *hm += xm.conj() * s * inv_k;
                }
            }
        });
        let block = FreqBlock::from_data(self.fourier.bins(), self.m_count, h).ok()?;
        Some(self.fourier.inverse_stack(&block))
    }
}

/// The stacked (non-consensus) view `sum_k f_k` as a single term.
struct Stacked<'a>(&'a DictProblem);

impl ConsensusObjective for Stacked<'_> {
    fn replicas(&self) -> usize {
        1
    }
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn mean_gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.mean_gradient(x, out)?;
        let k = self.0.k_count() as f64;
        out.iter_mut().for_each(|v| *v *= k);
        Ok(())
    }
    fn mean_curvature(&self, v: &[f64]) -> Option<f64> {
        self.0.mean_curvature(v).map(|c| c * self.0.k_count() as f64)
    }
    fn mean_hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        let k = self.0.k_count() as f64;
        self.0.mean_hessian_apply(v).map(|h| h.into_iter().map(|x| x * k).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictOptions {
    /// Initial consensus ADMM penalty; `None` means `100 lambda + 1`.
    pub sigma0: Option<f64>,
    pub relax: f64,
    pub adaptive: bool,
    /// Step rule override; defaults are Cauchy for APG and BB-v3 for consensus APG.
    pub step: Option<StepRule>,
    pub inertial: InertialConfig,
    pub execution: Execution,
    pub seed: u64,
}

impl Default for DictOptions {
    fn default() -> Self {
        DictOptions {
            sigma0: None,
            relax: 1.8,
            adaptive: true,
            step: None,
            inertial: InertialConfig::Nesterov,
            execution: Execution::Parallel,
            seed: 0,
        }
    }
}

enum DictState {
    AdmmCns(AdmmConsensus),
    Apg(ApgConsensus),
    ApgCns(ApgConsensus),
}

/// Persistent state of one dictionary-update method.
pub struct DictUpdate {
    state: DictState,
    projection: DictionaryProjection,
    support: Frame,
    frame: Frame,
    m_count: usize,
}

impl DictUpdate {
    pub fn new(kind: DictSolver, init: &Dictionary, k_count: usize, lambda: f64, opts: &DictOptions) -> Result<Self> {
        let projection = DictionaryProjection::new(init.support().clone(), init.frame().clone(), init.m_count(), opts.seed)?;
        let mut g0 = init.padded();
        projection.project_in_place(&mut g0)?;
        let state = match kind {
            DictSolver::AdmmCns => DictState::AdmmCns(AdmmConsensus::new(
                k_count,
                g0,
                AdmmConfig {
                    rho0: opts.sigma0.unwrap_or(100.0 * lambda + 1.0),
                    relax: opts.relax,
                    adaptive: opts.adaptive,
                    ..Default::default()
                },
            )?),
            DictSolver::Apg => DictState::Apg(ApgConsensus::new(
                g0,
                StepConfig::with_rule(opts.step.unwrap_or(StepRule::Cauchy)),
                opts.inertial,
            )?),
            DictSolver::ApgCns => DictState::ApgCns(ApgConsensus::new(
                g0,
                StepConfig::with_rule(opts.step.unwrap_or(StepRule::Bb3)),
                opts.inertial,
            )?),
        };
        Ok(DictUpdate {
            state,
            projection,
            support: init.support().clone(),
            frame: init.frame().clone(),
            m_count: init.m_count(),
        })
    }

    pub fn kind(&self) -> DictSolver {
        match self.state {
            DictState::AdmmCns(_) => DictSolver::AdmmCns,
            DictState::Apg(_) => DictSolver::Apg,
            DictState::ApgCns(_) => DictSolver::ApgCns,
        }
    }

    /// The dictionary passed to the coefficient update: the consensus
    /// variable for ADMM, the latest projected iterate for the APG methods.
    pub fn padded(&self) -> &[f64] {
        match &self.state {
            DictState::AdmmCns(s) => s.y(),
            DictState::Apg(s) | DictState::ApgCns(s) => s.solution(),
        }
    }

    pub fn dictionary(&self) -> Result<Dictionary> {
        Dictionary::from_padded(self.support.clone(), self.frame.clone(), self.padded())
    }

    /// Last step (APG methods) or current penalty (ADMM).
    pub fn step_and_penalty(&self) -> (f64, f64) {
        match &self.state {
            DictState::AdmmCns(s) => (0.0, s.rho()),
            DictState::Apg(s) | DictState::ApgCns(s) => (s.last_step().unwrap_or(0.0), 0.0),
        }
    }

    pub fn replaced_filters(&self) -> usize {
        self.projection.replaced()
    }

    pub fn m_count(&self) -> usize {
        self.m_count
    }

    /// `iters` updates against fixed coefficient maps.
    pub fn run(&mut self, problem: &DictProblem, iters: usize) -> Result<()> {
        if problem.m_count != self.m_count || problem.fourier.frame() != &self.frame {
            return Err(Error::Shape("dictionary problem does not match the dictionary shape".into()));
        }
        match &mut self.state {
            DictState::AdmmCns(s) => {
                let terms = problem.local_terms()?;
                for _ in 0..iters {
                    s.iterate(&terms, &self.projection, problem.exec)?;
                }
            }
            DictState::Apg(s) => {
                for _ in 0..iters {
                    s.iterate(&Stacked(problem), &self.projection)?;
                }
            }
            DictState::ApgCns(s) => {
                for _ in 0..iters {
                    s.iterate(problem, &self.projection)?;
                }
            }
        }
        Ok(())
    }
}

/// Consensus ADMM dictionary update: per-signal Sherman-Morrison local
/// solves, projected average, dual update.
pub fn dict_admm_consensus_update(state: &mut DictUpdate, problem: &DictProblem, iters: usize) -> Result<()> {
    expect_kind(state, DictSolver::AdmmCns)?;
    state.run(problem, iters)
}

/// Accelerated projected gradient on the stacked dictionary problem with
/// the exact line-search step `||g||^2 / ||X g||^2`.
pub fn dict_apg_update(state: &mut DictUpdate, problem: &DictProblem, iters: usize) -> Result<()> {
    expect_kind(state, DictSolver::Apg)?;
    state.run(problem, iters)
}

/// Consensus APG dictionary update: per-signal gradient steps at the
/// extrapolated dictionary, projected average, extrapolation of the
/// projected iterate.
pub fn dict_apg_consensus_update(state: &mut DictUpdate, problem: &DictProblem, iters: usize) -> Result<()> {
    expect_kind(state, DictSolver::ApgCns)?;
    state.run(problem, iters)
}

fn expect_kind(state: &DictUpdate, kind: DictSolver) -> Result<()> {
    if state.kind() != kind {
        return Err(Error::InvalidParameter(format!(
            "state belongs to {:?}, not {kind:?}",
            state.kind()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdlObjective {
    pub total: f64,
    pub fidelity: f64,
    pub l1: f64,
}

/// `1/2 sum_k ||sum_m d_m * x_{k,m} - s_k||^2 + lambda sum ||x||_1`,
/// evaluated in the signal domain.
pub fn cdl_objective(d: &Dictionary, x: &CoefficientMaps, s: &SignalSet, lambda: f64) -> Result<CdlObjective> {
    if x.k_count() != s.count() || x.frame() != s.frame() {
        return Err(Error::Shape(format!(
            "{} map sets of frame {} against {} signals of frame {}",
            x.k_count(),
            x.frame(),
            s.count(),
            s.frame()
        )));
    }
    let mut fidelity = 0.0;
    for k in 0..s.count() {
        fidelity += 0.5 * vecops::dist_sq(&conv_sum(d, x, k)?, s.signal(k));
    }
    let l1 = lambda * vecops::l1(x.data());
    Ok(CdlObjective {
        total: fidelity + l1,
        fidelity,
        l1,
    })
}

/// Preset solver pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// ADMM coefficient update with consensus ADMM dictionary update.
    AdmmAdmmCns,
    /// FISTA-3K coefficient update with consensus APG dictionary update.
    FistaApgCns,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CdlConfig {
    pub m_count: usize,
    pub support: Vec<usize>,
    pub lambda: f64,
    /// Outer (alternation) iterations.
    pub iters: usize,
    pub coef: CoefSolver,
    pub dict: DictSolver,
    pub coef_inner: usize,
    pub dict_inner: usize,
    pub seed: u64,
    /// Coefficient ADMM penalty; `None` means `100 lambda + 1`.
    pub rho0: Option<f64>,
    /// Dictionary ADMM penalty; `None` means `100 lambda + 1`.
    pub sigma0: Option<f64>,
    pub relax: f64,
    pub adaptive: bool,
    /// FISTA-3K multiplicative factor.
    pub fista_c: f64,
    /// Dictionary step rule for the APG methods.
    pub dict_step: Option<StepRule>,
    pub inertial: InertialConfig,
    pub execution: Execution,
    pub deterministic: bool,
    /// Invoke the checkpoint callback every this many outer iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for CdlConfig {
    fn default() -> Self {
        CdlConfig {
            m_count: 36,
            support: vec![8, 8],
            lambda: 0.1,
            iters: 1000,
            coef: CoefSolver::Fista3k,
            dict: DictSolver::ApgCns,
            coef_inner: 1,
            dict_inner: 1,
            seed: 0,
            rho0: None,
            sigma0: None,
            relax: 1.8,
            adaptive: true,
            fista_c: crate::step::FISTA3K_DEFAULT_C,
            dict_step: None,
            inertial: InertialConfig::Nesterov,
            execution: Execution::Parallel,
            deterministic: false,
            checkpoint_every: 50,
        }
    }
}

impl CdlConfig {
    pub fn with_pipeline(mut self, p: Pipeline) -> Self {
        (self.coef, self.dict) = match p {
            Pipeline::AdmmAdmmCns => (CoefSolver::Admm, DictSolver::AdmmCns),
            Pipeline::FistaApgCns => (CoefSolver::Fista3k, DictSolver::ApgCns),
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_count == 0 || self.iters == 0 || self.coef_inner == 0 || self.dict_inner == 0 {
            return Err(Error::InvalidParameter("filter and iteration counts must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        Frame::new(&self.support)?;
        Ok(())
    }

    fn csc_options(&self) -> CscOptions {
        CscOptions {
            rho0: self.rho0,
            relax: self.relax,
            adaptive: self.adaptive,
            c: self.fista_c,
            inertial: self.inertial,
            execution: self.execution,
            deterministic: self.deterministic,
            ..Default::default()
        }
    }

    fn dict_options(&self) -> DictOptions {
        DictOptions {
            sigma0: self.sigma0,
            relax: self.relax,
            adaptive: self.adaptive,
            step: self.dict_step,
            inertial: self.inertial,
            execution: self.execution,
            seed: self.seed,
        }
    }
}

/// Wall-clock cost of each half of every outer iteration.
#[derive(Clone, Debug, Default, Serialize)]
pub struct CdlTimings {
    pub coef_ms: Vec<f64>,
    pub dict_ms: Vec<f64>,
}

impl CdlTimings {
    pub fn mean_dict_ms(&self) -> f64 {
        mean(&self.dict_ms)
    }

    pub fn mean_coef_ms(&self) -> f64 {
        mean(&self.coef_ms)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub struct CdlOutput {
    pub dict: Dictionary,
    pub maps: CoefficientMaps,
    pub trace: ConvergenceTrace,
    pub timings: CdlTimings,
    /// Work done by the dictionary updates alone.
    pub dict_ops: OpCounts,
    pub replaced_filters: usize,
}

enum CoefState {
    Admm(Vec<Admm>),
    Fista(Vec<ApgConsensus>, FistaVariant),
}

/// Learn a dictionary from `signals`, starting from a seeded random one.
pub fn cdl_train(cfg: &CdlConfig, signals: &SignalSet) -> Result<CdlOutput> {
    cdl_train_with(cfg, signals, None, |_, _| Ok(()))
}

/// As [`cdl_train`], optionally from a given initial dictionary, calling
/// `checkpoint(iter, dict)` every `cfg.checkpoint_every` outer iterations.
pub fn cdl_train_with<F>(
    cfg: &CdlConfig,
    signals: &SignalSet,
    init: Option<&Dictionary>,
    mut checkpoint: F,
) -> Result<CdlOutput>
where
    F: FnMut(usize, &Dictionary) -> Result<()>,
{
    cfg.validate()?;
    let frame = signals.frame().clone();
    let support = Frame::new(&cfg.support)?;
    if !support.fits_within(&frame) {
        return Err(Error::Shape(format!("filter support {support} exceeds signal frame {frame}")));
    }
    let init = match init {
        Some(d) if d.frame() == &frame && d.support() == &support && d.m_count() == cfg.m_count => d.clone(),
        Some(_) => return Err(Error::Shape("initial dictionary does not match the configuration".into())),
        None => random_dictionary(cfg.m_count, support.clone(), frame.clone(), cfg.seed)?,
    };
    let k_count = signals.count();
    let counter = Arc::new(OpCounter::default());
    let fourier = Arc::new(Fourier::with_counter(&frame, counter.clone()));
    let shat = Arc::new(signals.iter().map(|s| fourier.forward(s)).collect::<Vec<_>>());
    let prox = L1Norm::new(cfg.lambda)?;
    let csc = cfg.csc_options();
    let dim = cfg.m_count * frame.len();

    let mut dict = DictUpdate::new(cfg.dict, &init, k_count, cfg.lambda, &cfg.dict_options())?;
    let mut coef = match cfg.coef {
        CoefSolver::Admm => CoefState::Admm(
            (0..k_count)
                .map(|_| Admm::new(vec![0.0; dim], csc.admm_config(cfg.lambda)))
                .collect::<Result<_>>()?,
        ),
        CoefSolver::Fista | CoefSolver::Fista3k => {
            let variant = if cfg.coef == CoefSolver::Fista { FistaVariant::Fista } else { FistaVariant::Fista3k };
            let placeholder = StepConfig::fixed(1.0);
            CoefState::Fista(
                (0..k_count)
                    .map(|_| ApgConsensus::new(vec![0.0; dim], placeholder, cfg.inertial))
                    .collect::<Result<_>>()?,
                variant,
            )
        }
    };
    let mut maps = CoefficientMaps::zeros(k_count, cfg.m_count, frame.clone());
    let mut trace = ConvergenceTrace::new(cfg.deterministic);
    let mut guard = DivergenceGuard::new(DEFAULT_GUARD_FACTOR);
    let mut timings = CdlTimings::default();
    let mut dict_ops = OpCounts::default();

    let fid0 = 0.5 * signals.data().iter().map(|v| v * v).sum::<f64>();
    trace.record(0, fid0, 0.0, 0.0, 0.0);
    guard.check(0, fid0)?;

    for it in 1..=cfg.iters {
        let t0 = Instant::now();
        let current = dict.dictionary()?;
        let setup = CodingSetup::from_spectra(&current, shat.clone(), fourier.clone())?;
        match &mut coef {
            CoefState::Admm(solvers) => {
                let terms = &setup.terms;
                cfg.execution.for_each_mut(solvers, |k, s| {
                    for _ in 0..cfg.coef_inner {
                        s.iterate(&terms[k], &prox)?;
                    }
                    Ok(())
                })?;
                for (k, s) in solvers.iter().enumerate() {
                    maps.image_mut(k).copy_from_slice(s.y());
                }
            }
            CoefState::Fista(solvers, variant) => {
                let step = fista_step(&csc, *variant, &setup)?;
                let terms = &setup.terms;
                cfg.execution.for_each_mut(solvers, |k, s| {
                    s.set_step_config(step)?;
                    let obj = Terms::new(std::slice::from_ref(&terms[k]), Execution::Sequential)?;
                    for _ in 0..cfg.coef_inner {
                        s.iterate(&obj, &prox)?;
                    }
                    Ok(())
                })?;
                for (k, s) in solvers.iter().enumerate() {
                    maps.image_mut(k).copy_from_slice(s.solution());
                }
            }
        }
        timings.coef_ms.push(t0.elapsed().as_secs_f64() * 1e3);

        let before = counter.snapshot();
        let t1 = Instant::now();
        let problem = DictProblem::with_signal_spectra(&maps, shat.clone(), fourier.clone(), cfg.execution)?;
        dict.run(&problem, cfg.dict_inner)?;
        timings.dict_ms.push(t1.elapsed().as_secs_f64() * 1e3);
        let delta = counter.snapshot().since(&before);
        dict_ops.ffts += delta.ffts;
        dict_ops.bin_solves += delta.bin_solves;
        dict_ops.bin_products += delta.bin_products;

        let fidelity = problem.value(dict.padded());
        let l1 = prox.value(maps.data());
        let (step, rho) = dict.step_and_penalty();
        let objective = trace.record(it, fidelity, l1, step, rho).objective;
        guard.check(it, objective)?;
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            checkpoint(it, &dict.dictionary()?)?;
        }
    }
    Ok(CdlOutput {
        dict: dict.dictionary()?,
        maps,
        trace,
        timings,
        dict_ops,
        replaced_filters: dict.replaced_filters(),
    })
}
