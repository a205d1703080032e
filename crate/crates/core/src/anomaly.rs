//! Consensus convolutional anomaly detection on multi-sensor series.
//!
//! Each series `s_p` is modeled as `sum_m d_{m,p} * x_m + e_p` with coefficient
//! maps `x` shared by all series and a per-series anomaly component `e_p`.
//! The solvers minimize
//! `1/2 sum_p ||D_p x + e_p - s_p||^2 + P lambda ||x||_1 + beta sum_p ||e_p||_2`
//! by alternating one consensus step on `x` with an exact update of `e`.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::consensus::{AdmmConfig, AdmmConsensus, ApgConsensus, Execution, L1Norm, Terms};
use crate::csc::ConvLeastSquares;
use crate::error::{ensure_finite, Error, Result};
use crate::prox::block_l2_shrink_in_place;
use crate::step::{InertialConfig, StepConfig};
use crate::tensor::{Dictionary, Fourier, FreqBlock, Frame, SignalSet, C64};
use crate::trace::{ConvergenceTrace, DivergenceGuard, DEFAULT_GUARD_FACTOR};
use crate::vecops;

/// How the anomaly penalty groups entries of `e`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group per series: `beta sum_p ||e_p||_2`.
    #[default]
    PerSeries,
    /// One group per time step across series: `beta sum_t ||e[., t]||_2`.
    PerTimestep,
}

/// Fixed data of one detection problem.
#[derive(Clone, Debug)]
pub struct AnomalyProblem {
    dicts: Vec<Dictionary>,
    series: SignalSet,
    lambda: f64,
    beta: f64,
}

impl AnomalyProblem {
    /// One dictionary per series; all must share filter count, support and
    /// the series frame.
    pub fn new(dicts: Vec<Dictionary>, series: SignalSet, lambda: f64, beta: f64) -> Result<Self> {
        if dicts.is_empty() || dicts.len() != series.count() {
            return Err(Error::Shape(format!("{} dictionaries for {} series", dicts.len(), series.count())));
        }
        let first = &dicts[0];
        for d in &dicts {
            if d.frame() != series.frame() || d.m_count() != first.m_count() || d.support() != first.support() {
                return Err(Error::Shape(format!(
                    "dictionaries must share M = {} filters of support {} on frame {}",
                    first.m_count(),
                    first.support(),
                    series.frame()
                )));
            }
        }
        for (name, v) in [("lambda", lambda), ("beta", beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        ensure_finite(series.data(), "series")?;
        Ok(AnomalyProblem {
            dicts,
            series,
            lambda,
            beta,
        })
    }

    /// The same dictionary for every series.
    pub fn shared(dict: Dictionary, series: SignalSet, lambda: f64, beta: f64) -> Result<Self> {
        let dicts = vec![dict; series.count()];
        Self::new(dicts, series, lambda, beta)
    }

    pub fn series_count(&self) -> usize {
        self.series.count()
    }

    pub fn m_count(&self) -> usize {
        self.dicts[0].m_count()
    }

    pub fn len(&self) -> usize {
        self.series.frame().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dicts(&self) -> &[Dictionary] {
        &self.dicts
    }

    pub fn series(&self) -> &SignalSet {
        &self.series
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub iters: usize,
    pub grouping: Grouping,
    /// Step for the APG solver; `None` means `1/L` of the mean fidelity.
    pub step: Option<StepConfig>,
    pub inertial: InertialConfig,
    /// ADMM penalty; `None` means `100 lambda + 1`.
    pub rho0: Option<f64>,
    pub relax: f64,
    pub adaptive: bool,
    pub execution: Execution,
    pub deterministic: bool,
    /// Flag threshold in standard deviations above the mean score.
    pub threshold_sigmas: f64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            iters: 500,
            grouping: Grouping::PerSeries,
            step: None,
            inertial: InertialConfig::Nesterov,
            rho0: None,
            relax: 1.8,
            adaptive: true,
            execution: Execution::Parallel,
            deterministic: false,
            threshold_sigmas: 3.0,
        }
    }
}

impl AnomalyConfig {
    pub fn iterations(iters: usize) -> Self {
        AnomalyConfig {
            iters,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnomalySolution {
    /// Shared coefficient maps, `M` stacked maps of the series length.
    pub maps: Vec<f64>,
    /// Anomaly component of each series.
    pub anomalies: SignalSet,
    pub score: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AnomalyOutput {
    pub solution: AnomalySolution,
    pub trace: ConvergenceTrace,
}

/// Shared frequency-domain data of both solvers.
struct Setup<'a> {
    problem: &'a AnomalyProblem,
    fourier: Arc<Fourier>,
    dhat: Vec<Arc<FreqBlock>>,
    shat: Vec<Vec<C64>>,
    exec: Execution,
    grouping: Grouping,
}

impl<'a> Setup<'a> {
    fn new(problem: &'a AnomalyProblem, cfg: &AnomalyConfig) -> Self {
        let fourier = Arc::new(Fourier::new(problem.series.frame()));
        let dhat = problem
            .dicts
            .iter()
            .map(|d| Arc::new(fourier.forward_stack(&d.padded())))
            .collect();
        let shat = problem.series.iter().map(|s| fourier.forward(s)).collect();
        Setup {
            problem,
            fourier,
            dhat,
            shat,
            exec: cfg.execution,
            grouping: cfg.grouping,
        }
    }

    fn dim(&self) -> usize {
        self.problem.m_count() * self.problem.len()
    }

    /// Local least-squares terms with targets `s_p - e_p`.
    fn terms(&self, e: &[Vec<f64>]) -> Result<Vec<ConvLeastSquares>> {
        self.exec
            .try_map(self.dhat.len(), |p| {
                let ehat = self.fourier.forward(&e[p]);
                let target = self.shat[p].iter().zip(&ehat).map(|(s, v)| s - v).collect();
                ConvLeastSquares::new(self.dhat[p].clone(), target, self.fourier.clone())
            })
    }

    /// `D_p x` for every series.
    fn reconstruct(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let xhat = self.fourier.forward_stack(x);
        self.exec.map(self.dhat.len(), |p| {
            let spec: Vec<C64> = (0..xhat.bins())
                .map(|n| crate::csc::dotu(self.dhat[p].bin(n), xhat.bin(n)))
                .collect();
            self.fourier.inverse_real(&spec)
        })
    }

    /// Exact minimizer over `e` for fixed reconstructions.
    fn update_anomalies(&self, recon: &[Vec<f64>], e: &mut [Vec<f64>]) {
        for ((ep, rp), sp) in e.iter_mut().zip(recon).zip(self.problem.series.iter()) {
            for ((v, r), s) in ep.iter_mut().zip(rp).zip(sp) {
                *v = s - r;
            }
        }
        shrink_anomalies(e, self.problem.beta, self.grouping);
    }

    /// `(fidelity, regularizer)` of the full objective.
    fn objective(&self, x: &[f64], recon: &[Vec<f64>], e: &[Vec<f64>]) -> (f64, f64) {
        let mut fidelity = 0.0;
        for ((rp, ep), sp) in recon.iter().zip(e).zip(self.problem.series.iter()) {
            fidelity += 0.5
                * rp.iter()
                    .zip(ep)
                    .zip(sp)
                    .map(|((r, v), s)| (r + v - s).powi(2))
                    .sum::<f64>();
        }
        let p = self.problem.series_count() as f64;
        let reg = p * self.problem.lambda * vecops::l1(x) + self.problem.beta * group_norm_sum(e, self.grouping);
        (fidelity, reg)
    }

    /// `max_n (1/P) sum_p ||d_hat_{p,n}||^2`, a Lipschitz bound of the mean fidelity gradient.
    fn lipschitz(&self) -> f64 {
        let p = self.dhat.len() as f64;
        (0..self.fourier.bins())
            .map(|n| {
                self.dhat
                    .iter()
                    .map(|d| d.bin(n).iter().map(|v| v.norm_sqr()).sum::<f64>())
                    .sum::<f64>()
                    / p
            })
            .fold(0.0, f64::max)
    }

    fn finish(&self, x: Vec<f64>, e: Vec<Vec<f64>>, trace: ConvergenceTrace) -> Result<AnomalyOutput> {
        let anomalies = SignalSet::from_signals(self.problem.series.frame().clone(), e)?;
        let score = anomaly_score(&anomalies);
        Ok(AnomalyOutput {
            solution: AnomalySolution {
                maps: x,
                anomalies,
                score,
            },
            trace,
        })
    }
}

/// Shrink `e` in place with the block prox at level `beta` for `grouping`.
pub fn shrink_anomalies(e: &mut [Vec<f64>], beta: f64, grouping: Grouping) {
    match grouping {
        Grouping::PerSeries => e.iter_mut().for_each(|ep| block_l2_shrink_in_place(ep, beta)),
        Grouping::PerTimestep => {
            let len = e.first().map_or(0, Vec::len);
            let mut col = vec![0.0; e.len()];
            for t in 0..len {
                for (c, ep) in col.iter_mut().zip(e.iter()) {
                    *c = ep[t];
                }
                block_l2_shrink_in_place(&mut col, beta);
                for (c, ep) in col.iter().zip(e.iter_mut()) {
                    ep[t] = *c;
                }
            }
        }
    }
}

fn group_norm_sum(e: &[Vec<f64>], grouping: Grouping) -> f64 {
    match grouping {
        Grouping::PerSeries => e.iter().map(|ep| vecops::norm(ep)).sum(),
        Grouping::PerTimestep => {
            let len = e.first().map_or(0, Vec::len);
            (0..len).map(|t| e.iter().map(|ep| ep[t] * ep[t]).sum::<f64>().sqrt()).sum()
        }
    }
}

/// Full objective at `(x, e)`.
pub fn anomaly_objective(problem: &AnomalyProblem, maps: &[f64], e: &SignalSet, grouping: Grouping) -> Result<f64> {
    let cfg = AnomalyConfig {
        grouping,
        execution: Execution::Sequential,
        ..Default::default()
    };
    let setup = Setup::new(problem, &cfg);
    if maps.len() != setup.dim() || e.count() != problem.series_count() || e.frame() != problem.series.frame() {
        return Err(Error::Shape("maps or anomalies do not match the problem".into()));
    }
    let recon = setup.reconstruct(maps);
    let e: Vec<Vec<f64>> = e.iter().map(<[f64]>::to_vec).collect();
    let (f, r) = setup.objective(maps, &recon, &e);
    Ok(f + r)
}

/// Alternating APG-consensus step on the shared maps and exact anomaly update.
pub fn caddict_apg_consensus(problem: &AnomalyProblem, cfg: &AnomalyConfig) -> Result<AnomalyOutput> {
    let setup = Setup::new(problem, cfg);
    let step = match cfg.step {
        Some(s) => s,
        None => {
            let l = setup.lipschitz();
            if !(l > 0.0) {
                return Err(Error::Degenerate("dictionaries have no energy".into()));
            }
            StepConfig::fixed(1.0 / l)
        }
    };
    let prox = L1Norm::new(problem.lambda)?;
    let mut state = ApgConsensus::new(vec![0.0; setup.dim()], step, cfg.inertial)?;
    run_alternating(&setup, cfg, |e| {
        let terms = setup.terms(e)?;
        let alpha = state.iterate(&Terms::new(&terms, cfg.execution)?, &prox)?;
        Ok((state.solution().to_vec(), alpha, 0.0))
    })
}

/// Alternating consensus ADMM step on the shared maps and exact anomaly update.
pub fn caddict_admm_consensus(problem: &AnomalyProblem, cfg: &AnomalyConfig) -> Result<AnomalyOutput> {
    let setup = Setup::new(problem, cfg);
    let prox = L1Norm::new(problem.lambda)?;
    let admm = AdmmConfig {
        rho0: cfg.rho0.unwrap_or(100.0 * problem.lambda + 1.0),
        relax: cfg.relax,
        adaptive: cfg.adaptive,
        ..Default::default()
    };
    let mut state = AdmmConsensus::new(problem.series_count(), vec![0.0; setup.dim()], admm)?;
    run_alternating(&setup, cfg, |e| {
        let terms = setup.terms(e)?;
        state.iterate(&terms, &prox, cfg.execution)?;
        Ok((state.y().to_vec(), 0.0, state.rho()))
    })
}

/// `x_step(e)` advances the map solver against the current anomalies and
/// returns `(maps, step, rho)`.
fn run_alternating<F>(setup: &Setup, cfg: &AnomalyConfig, mut x_step: F) -> Result<AnomalyOutput>
where
    F: FnMut(&[Vec<f64>]) -> Result<(Vec<f64>, f64, f64)>,
{
    let p = setup.problem.series_count();
    let len = setup.problem.len();
    let mut e = vec![vec![0.0; len]; p];
    let mut x = vec![0.0; setup.dim()];
    let mut trace = ConvergenceTrace::new(cfg.deterministic);
    let mut guard = DivergenceGuard::new(DEFAULT_GUARD_FACTOR);
    let fid0 = 0.5 * vecops::norm_sq(setup.problem.series.data());
    trace.record(0, fid0, 0.0, 0.0, 0.0);
    guard.check(0, fid0)?;
    for it in 1..=cfg.iters {
        let (next, step, rho) = x_step(&e)?;
        x = next;
        let recon = setup.reconstruct(&x);
        setup.update_anomalies(&recon, &mut e);
        let (f, r) = setup.objective(&x, &recon, &e);
        let obj = trace.record(it, f, r, step, rho).objective;
        guard.check(it, obj)?;
    }
    setup.finish(x, e, trace)
}

/// `score[t] = sqrt(sum_p e_p[t]^2)`.
pub fn anomaly_score(e: &SignalSet) -> Vec<f64> {
    let len = e.frame().len();
    (0..len).map(|t| e.iter().map(|ep| ep[t] * ep[t]).sum::<f64>().sqrt()).collect()
}

/// Flags scores above `mean + sigmas * stddev` (population statistics).
pub fn flag_scores(score: &[f64], sigmas: f64) -> Vec<bool> {
    if score.is_empty() {
        return Vec::new();
    }
    let n = score.len() as f64;
    let mean = score.iter().sum::<f64>() / n;
    let var = score.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let threshold = mean + sigmas * var.sqrt();
    score.iter().map(|&s| s > threshold).collect()
}

/// Maximal runs of flagged steps as half-open `(start, end)` ranges.
pub fn flagged_windows(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Sensor series read from delimited text.
#[derive(Clone, Debug)]
pub struct SeriesTable {
    pub names: Vec<String>,
    /// One signal per sensor column.
    pub series: SignalSet,
}

/// Parses comma-separated text with a header row of sensor names and one
/// numeric column per sensor. Empty or non-finite cells are rejected.
pub fn read_series_csv<R: Read>(input: R) -> Result<SeriesTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let names: Vec<String> = reader
        .headers()
        .map_err(series_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(Error::Series("header row must name every column".into()));
    }
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Series(format!("duplicate column name {n:?}")));
        }
        if n.parse::<f64>().is_ok() {
            return Err(Error::Series(format!("header row is missing: found numeric column name {n:?}")));
        }
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(series_err)?;
        let line = row + 2;
        for (c, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::Series(format!("line {line}: missing value in column {:?}", names[c])));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Series(format!("line {line}: {cell:?} in column {:?} is not a number", names[c])))?;
            if !v.is_finite() {
                return Err(Error::Series(format!("line {line}: missing value {cell:?} in column {:?}", names[c])));
            }
            columns[c].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::Series("no data rows".into()));
    }
    let series = SignalSet::from_signals(Frame::d1(columns[0].len())?, columns)?;
    Ok(SeriesTable { names, series })
}

fn series_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Series(format!(
            "line {}: {len} fields where the header has {expected_len}",
            line.unwrap_or(0)
        )),
        other => Error::Series(format!("{other:?}")),
    }
}

/// Writes `t,score,flag` rows.
pub fn write_scores_csv<W: Write>(out: W, score: &[f64], flags: &[bool]) -> Result<()> {
    if score.len() != flags.len() {
        return Err(Error::Shape(format!("{} scores for {} flags", score.len(), flags.len())));
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["t", "score", "flag"]).map_err(io)?;
    for (t, (s, f)) in score.iter().zip(flags).enumerate() {
        w.write_record([t.to_string(), format!("{s:e}"), u8::from(*f).to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// A generated detection instance with known anomaly windows.
#[derive(Clone, Debug)]
pub struct SyntheticAnomalies {
    pub problem: AnomalyProblem,
    /// Half-open ranges where anomalies were added.
    pub injected: Vec<(usize, usize)>,
}

/// Parameters of [`synthetic_anomalies`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub series: usize,
    pub len: usize,
    pub m_count: usize,
    pub support: usize,
    /// Fraction of nonzero coefficients.
    pub density: f64,
    pub noise: f64,
    pub windows: usize,
    pub window_len: usize,
    pub amplitude: f64,
    pub lambda: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            series: 3,
            len: 512,
            m_count: 4,
            support: 16,
            density: 0.01,
            noise: 0.01,
            windows: 3,
            window_len: 12,
            amplitude: 1.5,
            lambda: 0.05,
            beta: 0.5,
            seed: 0,
        }
    }
}

/// Series generated from shared sparse maps and per-series random
/// dictionaries, with noise and `windows` non-overlapping offset bumps
/// added to every series.
pub fn synthetic_anomalies(spec: &SyntheticSpec) -> Result<SyntheticAnomalies> {
    let stride = spec.len / spec.windows.max(1);
    if spec.windows > 0 && stride < spec.window_len + 2 {
        return Err(Error::InvalidParameter("series too short for the requested windows".into()));
    }
    let frame = Frame::d1(spec.len)?;
    let support = Frame::d1(spec.support)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dicts = (0..spec.series)
        .map(|p| crate::cdl::random_dictionary(spec.m_count, support.clone(), frame.clone(), spec.seed.wrapping_add(1 + p as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut maps = vec![0.0; spec.m_count * spec.len];
    for v in maps.iter_mut() {
        if rand::Rng::random::<f64>(&mut rng) < spec.density {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let shell = SignalSet::new(frame.clone(), vec![0.0; spec.series * spec.len])?;
    let clean_problem = AnomalyProblem::new(dicts.clone(), shell, 0.0, 0.0)?;
    let setup = Setup::new(
        &clean_problem,
        &AnomalyConfig {
            execution: Execution::Sequential,
            ..Default::default()
        },
    );
    let mut series = setup.reconstruct(&maps);
    let injected: Vec<(usize, usize)> = (0..spec.windows)
        .map(|w| {
            let slack = stride - spec.window_len;
            let start = w * stride + 1 + rand::Rng::random_range(&mut rng, 0..slack - 1);
            (start, start + spec.window_len)
        })
        .collect();
    for s in series.iter_mut() {
        for v in s.iter_mut() {
            *v += noise.sample(&mut rng);
        }
        for &(a, b) in &injected {
            s[a..b].iter_mut().for_each(|v| *v += spec.amplitude);
        }
    }
    let signals = SignalSet::from_signals(frame, series)?;
    Ok(SyntheticAnomalies {
        problem: AnomalyProblem::new(dicts, signals, spec.lambda, spec.beta)?,
        injected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p: usize, seed: u64) -> AnomalyProblem {
        synthetic_anomalies(&SyntheticSpec {
            series: p,
            len: 96,
            m_count: 3,
            support: 6,
            windows: 1,
            window_len: 6,
            density: 0.05,
            seed,
            ..Default::default()
        })
        .unwrap()
        .problem
    }

    #[test]
    fn score_examples() {
        let e = SignalSet::new(Frame::d1(2).unwrap(), vec![3.0, 0.0, 4.0, -2.0]).unwrap();
        assert_eq!(anomaly_score(&e), vec![5.0, 2.0]);
        let z = SignalSet::new(Frame::d1(3).unwrap(), vec![0.0; 6]).unwrap();
        assert!(anomaly_score(&z).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn windows_from_flags() {
        let f = [false, true, true, false, true, false, true];
        assert_eq!(flagged_windows(&f), vec![(1, 3), (4, 5), (6, 7)]);
        assert!(flagged_windows(&[]).is_empty());
    }

    #[test]
    fn large_beta_gives_no_anomalies() {
        let mut p = small(2, 1);
        p.beta = 1e6;
        let out = caddict_apg_consensus(&p, &AnomalyConfig::iterations(20)).unwrap();
        assert!(out.solution.anomalies.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_series_gives_zero_solution() {
        let p = small(2, 2);
        let zero = SignalSet::new(p.series().frame().clone(), vec![0.0; p.series().data().len()]).unwrap();
        let p = AnomalyProblem::new(p.dicts().to_vec(), zero, 0.1, 0.5).unwrap();
        for out in [
            caddict_admm_consensus(&p, &AnomalyConfig::iterations(10)).unwrap(),
            caddict_apg_consensus(&p, &AnomalyConfig::iterations(10)).unwrap(),
        ] {
            assert!(out.solution.maps.iter().all(|&v| v == 0.0));
            assert!(out.solution.score.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn anomalies_satisfy_the_exact_update() {
        let p = small(3, 3);
        let out = caddict_apg_consensus(&p, &AnomalyConfig::iterations(30)).unwrap();
        let setup = Setup::new(&p, &AnomalyConfig::default());
        let recon = setup.reconstruct(&out.solution.maps);
        for (k, rp) in recon.iter().enumerate() {
            let r: Vec<f64> = p.series().signal(k).iter().zip(rp).map(|(s, r)| s - r).collect();
            let expect = crate::prox::block_l2_shrink(&r, p.beta()).unwrap();
            for (a, b) in expect.iter().zip(out.solution.anomalies.signal(k)) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn per_timestep_grouping_shrinks_columns() {
        let mut e = vec![vec![3.0, 0.1], vec![4.0, 0.0]];
        shrink_anomalies(&mut e, 1.0, Grouping::PerTimestep);
        assert!((e[0][0] - 2.4).abs() < 1e-15 && (e[1][0] - 3.2).abs() < 1e-15);
        assert_eq!((e[0][1], e[1][1]), (0.0, 0.0));
    }

    #[test]
    fn csv_round_trip_and_rejections() {
        let t = read_series_csv("a, b\n1,2\n3 ,4\n".as_bytes()).unwrap();
        assert_eq!(t.names, ["a", "b"]);
        assert_eq!(t.series.signal(1), &[2.0, 4.0]);
        for bad in ["a,b\n1,\n", "a,b\n1,2\n3\n", "1,2\n3,4\n", "a,a\n1,2\n", "a,b\n", "a,b\nNaN,1\n", "a,b\nx,1\n"] {
            assert!(matches!(read_series_csv(bad.as_bytes()), Err(Error::Series(_))), "{bad:?}");
        }
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &[0.5, 2.0], &[false, true]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,score,flag\n0,5e-1,0\n1,2e0,1\n");
    }
}
