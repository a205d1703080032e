//! Experiment configuration files (TOML).
//!
//! Every field has a default, so an empty file runs the default dictionary
//! learning experiment on the built-in synthetic images.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;
use toml::de::{DeTable, DeValue};

use cnsprox::anomaly::AnomalyConfig;
use cnsprox::cdl::{CdlConfig, CoefSolver, Pipeline};
use cnsprox::csc::CscOptions;

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cdl,
    Csc,
    Denoise,
    Anomaly,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Cdl => "cdl",
            Task::Csc => "csc",
            Task::Denoise => "denoise",
            Task::Anomaly => "anomaly",
        })
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must agree with the subcommand when given.
    pub task: Option<Spanned<Task>>,
    /// Seeds dictionary initialization, synthetic data and noise; overrides `[cdl] seed`.
    pub seed: u64,
    /// Index-ordered reductions, zeroed trace times and no timing files.
    pub deterministic: bool,
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub cdl: CdlConfig,
    pub protocol: ProtocolConfig,
    pub csc: CscSection,
    pub denoise: DenoiseConfig,
    pub anomaly: AnomalySection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training images; when empty, synthetic images are generated.
    pub train: Vec<Spanned<PathBuf>>,
    /// Held-out images; when empty, synthetic images are generated.
    pub test: Vec<Spanned<PathBuf>>,
    pub synthetic: SyntheticImages,
    /// Side of the centered square crop applied before resizing.
    pub crop: Option<usize>,
    /// Target `[rows, cols]` after cropping.
    pub size: Option<[usize; 2]>,
    /// Accept color images by converting them to luma.
    pub convert_color: bool,
    /// Remove each training image's mean before learning.
    pub subtract_mean: bool,
    /// Multi-series CSV for the anomaly task.
    pub series: Option<Spanned<PathBuf>>,
    /// Pre-trained dictionaries (`.cdla`) for the coding and denoising tasks.
    pub dictionaries: Vec<Spanned<PathBuf>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticImages {
    pub train: usize,
    pub test: usize,
    /// Side length in pixels.
    pub size: usize,
}

impl Default for SyntheticImages {
    fn default() -> Self {
        SyntheticImages { train: 5, test: 5, size: 64 }
    }
}

/// Comparison protocol of the `cdl` task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Pipelines to compare; empty runs the solvers selected in `[cdl]`.
    pub pipelines: Vec<Pipeline>,
    /// Training-set sizes; each takes the first `k` training images.
    pub k_sweep: Vec<usize>,
    /// Filter counts.
    pub m_sweep: Vec<usize>,
    /// Held-out coding check every this many outer iterations (0 disables).
    pub eval_every: usize,
    pub eval_lambda: f64,
    pub eval_iters: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            pipelines: Vec::new(),
            k_sweep: Vec::new(),
            m_sweep: Vec::new(),
            eval_every: 50,
            eval_lambda: cnsprox::csc::CBPDN_LAMBDA,
            eval_iters: cnsprox::csc::CBPDN_ITERS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CscSection {
    pub lambda: f64,
    pub solver: CoefSolver,
    pub options: CscOptions,
}

impl Default for CscSection {
    fn default() -> Self {
        CscSection {
            lambda: cnsprox::csc::CBPDN_LAMBDA,
            solver: CoefSolver::Admm,
            options: CscOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    /// Noise standard deviation on the `[0, 1]` intensity scale.
    pub sigma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Points of the logarithmic sparsity-weight grid.
    pub lambda_points: usize,
    pub iters: usize,
    /// Code the noisy image with its mean removed.
    pub subtract_mean: bool,
    /// Pipelines trained on the training images when no dictionaries are given.
    pub pipelines: Vec<Pipeline>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            sigma: 0.1,
            lambda_min: 0.01,
            lambda_max: 1.0,
            lambda_points: 10,
            iters: cnsprox::csc::CBPDN_ITERS,
            subtract_mean: true,
            pipelines: vec![Pipeline::AdmmAdmmCns, Pipeline::FistaApgCns],
        }
    }
}

impl DenoiseConfig {
    /// `lambda_points` values spaced evenly in `log10` between the bounds.
    pub fn lambda_grid(&self) -> Vec<f64> {
        log_grid(self.lambda_min, self.lambda_max, self.lambda_points)
    }
}

/// `n` points spaced evenly in `log10` from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
                .collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalySolver {
    ApgCns,
    AdmmCns,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalySection {
    pub lambda: f64,
    pub beta: f64,
    pub solvers: Vec<AnomalySolver>,
    pub solver: AnomalyConfig,
    /// Filters per series dictionary.
    pub m_count: usize,
    /// Filter length in samples.
    pub support: usize,
    /// Leading fraction of each series used to learn its dictionary.
    pub train_fraction: f64,
    pub train_iters: usize,
    pub train_lambda: f64,
    /// Learn one dictionary from all series instead of one per series.
    pub shared_dictionary: bool,
    /// Generated data used when no series file is given.
    pub synthetic: cnsprox::anomaly::SyntheticSpec,
}

impl Default for AnomalySection {
    fn default() -> Self {
        AnomalySection {
            lambda: 0.05,
            beta: 0.5,
            solvers: vec![AnomalySolver::ApgCns, AnomalySolver::AdmmCns],
            solver: AnomalyConfig::default(),
            m_count: 200,
            support: 100,
            train_fraction: 0.3,
            train_iters: 100,
            train_lambda: 0.1,
            shared_dictionary: false,
            synthetic: cnsprox::anomaly::SyntheticSpec::default(),
        }
    }
}

/// Values given on the command line; they take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub deterministic: bool,
}

/// A parsed configuration together with the text it came from, so that
/// validation problems can point at a line.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    source: String,
    origin: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let mut loaded = Self::from_str(&text)?;
        loaded.origin = path.to_path_buf();
        Ok(loaded)
    }

    /// Relative dataset paths resolve against the config file's directory.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            BenchError::Config {
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        Ok(LoadedConfig {
            config,
            source: text.to_string(),
            origin: PathBuf::new(),
        })
    }

    pub fn base_dir(&self) -> PathBuf {
        self.origin.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Resolve `p` against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    /// Apply command-line overrides and the subcommand's task, then check
    /// the result. Seeds and the deterministic flag are pushed down into
    /// every solver section.
    pub fn finalize(mut self, task: Task, ov: &Overrides) -> Result<ExperimentConfig> {
        if let Some(t) = &self.config.task {
            if *t.get_ref() != task {
                return Err(self.error_at(
                    t.span().start,
                    format!("task `{}` does not match subcommand `{task}`", t.get_ref()),
                ));
            }
        }
        let c = &mut self.config;
        c.task = Some(Spanned::new(0..0, task));
        if let Some(o) = &ov.out {
            c.out = Some(o.clone());
        }
        if let Some(s) = ov.seed {
            c.seed = s;
        }
        if ov.workers.is_some() {
            c.workers = ov.workers;
        }
        c.deterministic |= ov.deterministic;
        c.cdl.seed = c.seed;
        c.cdl.deterministic = c.deterministic;
        c.csc.options.deterministic = c.deterministic;
        c.anomaly.solver.deterministic = c.deterministic;
        c.anomaly.synthetic.seed = c.seed;
        self.validate(task)?;
        let mut cfg = self.config.clone();
        for p in cfg
            .data
            .train
            .iter_mut()
            .chain(cfg.data.test.iter_mut())
            .chain(cfg.data.dictionaries.iter_mut())
            .chain(cfg.data.series.iter_mut())
        {
            let span = p.span();
            *p = Spanned::new(span, self.resolve(p.get_ref()));
        }
        if let Some(o) = &cfg.out {
            if ov.out.is_none() {
                cfg.out = Some(self.resolve(o));
            }
        }
        Ok(cfg)
    }

    fn validate(&self, task: Task) -> Result<()> {
        let c = &self.config;
        let d = &c.data;
        let mut paths: Vec<&Spanned<PathBuf>> = Vec::new();
        match task {
            Task::Cdl => paths.extend(d.train.iter().chain(&d.test)),
            Task::Csc => {
                paths.extend(d.test.iter().chain(&d.dictionaries));
                if d.dictionaries.is_empty() {
                    paths.extend(&d.train);
                }
            }
            Task::Denoise => {
                paths.extend(d.test.iter().chain(&d.dictionaries));
                if d.dictionaries.is_empty() {
                    paths.extend(&d.train);
                }
            }
            Task::Anomaly => paths.extend(&d.series),
        }
        for p in paths {
            let resolved = self.resolve(p.get_ref());
            if !resolved.exists() {
                return Err(self.error_at(
                    p.span().start,
                    format!("path `{}` does not exist", resolved.display()),
                ));
            }
        }
        if c.workers == Some(0) {
            return Err(self.error_key(&["workers"], "workers must be at least 1".into()));
        }
        if let Some(0) = d.crop {
            return Err(self.error_key(&["data", "crop"], "crop must be positive".into()));
        }
        if let Some([r, cc]) = d.size {
            if r == 0 || cc == 0 {
                return Err(self.error_key(&["data", "size"], "size must be positive".into()));
            }
        }
        if d.synthetic.size == 0 || d.synthetic.train == 0 || d.synthetic.test == 0 {
            return Err(self.error_key(&["data", "synthetic"], "synthetic counts and size must be positive".into()));
        }
        c.cdl
            .validate()
            .map_err(|e| self.error_key(&["cdl"], e.to_string()))?;
        match task {
            Task::Cdl => {
                let p = &c.protocol;
                if p.k_sweep.contains(&0) {
                    return Err(self.error_key(&["protocol", "k_sweep"], "training-set sizes must be positive".into()));
                }
                if p.m_sweep.contains(&0) {
                    return Err(self.error_key(&["protocol", "m_sweep"], "filter counts must be positive".into()));
                }
                check_nonneg(self, &["protocol", "eval_lambda"], p.eval_lambda)?;
                if p.eval_iters == 0 {
                    return Err(self.error_key(&["protocol", "eval_iters"], "must be positive".into()));
                }
            }
            Task::Csc => {
                check_nonneg(self, &["csc", "lambda"], c.csc.lambda)?;
                if c.csc.options.iters == 0 {
                    return Err(self.error_key(&["csc", "options", "iters"], "must be positive".into()));
                }
            }
            Task::Denoise => {
                let n = &c.denoise;
                check_nonneg(self, &["denoise", "sigma"], n.sigma)?;
                if !(n.lambda_min > 0.0 && n.lambda_max >= n.lambda_min && n.lambda_max.is_finite()) {
                    return Err(self.error_key(
                        &["denoise", "lambda_min"],
                        "need 0 < lambda_min <= lambda_max".into(),
                    ));
                }
                if n.lambda_points == 0 || n.iters == 0 {
                    return Err(self.error_key(&["denoise"], "lambda_points and iters must be positive".into()));
                }
                if d.dictionaries.is_empty() && n.pipelines.is_empty() {
                    return Err(self.error_key(
                        &["denoise", "pipelines"],
                        "give dictionaries or at least one pipeline to train".into(),
                    ));
                }
            }
            Task::Anomaly => {
                let a = &c.anomaly;
                check_nonneg(self, &["anomaly", "lambda"], a.lambda)?;
                check_nonneg(self, &["anomaly", "beta"], a.beta)?;
                check_nonneg(self, &["anomaly", "train_lambda"], a.train_lambda)?;
                if a.solvers.is_empty() {
                    return Err(self.error_key(&["anomaly", "solvers"], "at least one solver is required".into()));
                }
                if !(a.train_fraction > 0.0 && a.train_fraction <= 1.0) {
                    return Err(self.error_key(&["anomaly", "train_fraction"], "must lie in (0, 1]".into()));
                }
                if a.m_count == 0 || a.support == 0 || a.train_iters == 0 || a.solver.iters == 0 {
                    return Err(self.error_key(&["anomaly"], "filter counts, lengths and iterations must be positive".into()));
                }
            }
        }
        Ok(())
    }

    fn error_at(&self, offset: usize, message: String) -> BenchError {
        let (line, column) = line_col(&self.source, offset);
        BenchError::Config { line, column, message }
    }

    /// Error pointing at the key `path`, or a location-free error when the
    /// key is absent from the file (the offending value is a default).
    fn error_key(&self, path: &[&str], message: String) -> BenchError {
        match locate_key(&self.source, path) {
            Some(offset) => self.error_at(offset, format!("`{}`: {message}", path.join("."))),
            None => BenchError::Invalid(format!("`{}`: {message}", path.join("."))),
        }
    }
}

fn check_nonneg(cfg: &LoadedConfig, path: &[&str], v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(cfg.error_key(path, format!("must be finite and >= 0, got {v}")))
    }
}

/// Byte offset of the key at `path` in a TOML document.
pub fn locate_key(source: &str, path: &[&str]) -> Option<usize> {
    let doc = DeTable::parse(source).ok()?;
    let mut table = doc.get_ref();
    let mut found = None;
    for (i, name) in path.iter().enumerate() {
        let (key, value) = table.iter().find(|(k, _)| k.get_ref().as_ref() == *name)?;
        found = Some(key.span().start);
        if i + 1 < path.len() {
            match value.get_ref() {
                DeValue::Table(t) => table = t,
                _ => return found,
            }
        }
    }
    found
}

/// One-based line and column of a byte offset.
pub fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(source.len());
    let before = &source[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, column)
}
