//! Step-size rules and inertial (extrapolation) sequences for proximal
//! gradient methods.
//!
//! Every rule can fail on degenerate data (zero gradient, non-positive
//! Barzilai-Borwein quotient). [`StepController`] applies the fallback policy:
//! reuse the last accepted step, or `1/L` from a 10-step power iteration when
//! no step has been accepted yet.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops;

/// Default multiplicative factor of the FISTA-3K step.
pub const FISTA3K_DEFAULT_C: f64 = 0.2;
/// Power-iteration steps used for the `1/L` fallback.
pub const POWER_ITERATIONS: usize = 10;

/// Extrapolation sequence `t_k` with `gamma_k = (t_{k-1} - 1) / t_k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InertialConfig {
    /// No extrapolation (`gamma = 0`): plain proximal gradient.
    Off,
    /// `t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2`
    Nesterov,
    /// `t_k = (k - 1 + b) / b`
    Linear { b: f64 },
    /// `t_k = (k - 1 + a) / b`
    Generalized { a: f64, b: f64 },
}

impl Default for InertialConfig {
    fn default() -> Self {
        InertialConfig::Nesterov
    }
}

impl InertialConfig {
    pub fn generalized_default() -> Self {
        InertialConfig::Generalized { a: 50.0, b: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InertialConfig::Off | InertialConfig::Nesterov => Ok(()),
            InertialConfig::Linear { b } if b.is_finite() && b >= 2.0 => Ok(()),
            InertialConfig::Generalized { a, b }
                if b.is_finite() && a.is_finite() && b >= 2.0 && a >= b =>
            {
                Ok(())
            }
            other => Err(Error::InvalidParameter(format!(
                "inertial scheme {other:?} needs b >= 2 and a >= b"
            ))),
        }
    }

    /// `t_1`. The generalized scheme starts on its own formula (`a / b`),
    /// which is what keeps `t_{k+1}^2 - t_{k+1} <= t_k^2` true from k = 1.
    pub fn initial_t(&self) -> f64 {
        match *self {
            InertialConfig::Generalized { a, b } => a / b,
            _ => 1.0,
        }
    }
}

impl FromStr for InertialConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(InertialConfig::Off),
            "nesterov" => Ok(InertialConfig::Nesterov),
            "linear" => Ok(InertialConfig::Linear { b: 2.0 }),
            "generalized" => Ok(InertialConfig::generalized_default()),
            other => Err(Error::InvalidParameter(format!(
                "unknown inertial scheme `{other}` (expected off, nesterov, linear, generalized)"
            ))),
        }
    }
}

/// Next element `t_k` of the sequence given `t_{k-1}`, and the matching
/// extrapolation weight `gamma = (t_{k-1} - 1) / t_k`.
pub fn inertial_next(cfg: &InertialConfig, t_prev: f64, k: usize) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(t_prev >= 1.0) || !t_prev.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "inertial sequence needs t_prev >= 1, got {t_prev}"
        )));
    }
    let kf = k as f64;
    let mut t = match *cfg {
        InertialConfig::Off => return Ok((1.0, 0.0)),
        InertialConfig::Nesterov => 0.5 * (1.0 + (1.0 + 4.0 * t_prev * t_prev).sqrt()),
        InertialConfig::Linear { b } => (kf - 1.0 + b) / b,
        InertialConfig::Generalized { a, b } => (kf - 1.0 + a) / b,
    };
    // Rounding can push the Nesterov update an ulp past t^2 - t = t_prev^2.
    for _ in 0..16 {
        if t * t - t <= t_prev * t_prev {
            break;
        }
        t = t.next_down();
    }
    Ok((t, (t_prev - 1.0) / t))
}

/// Running inertial sequence.
#[derive(Clone, Debug)]
pub struct Inertia {
    config: InertialConfig,
    t: f64,
    k: usize,
}

impl Inertia {
    pub fn new(config: InertialConfig) -> Result<Self> {
        config.validate()?;
        Ok(Inertia {
            config,
            t: config.initial_t(),
            k: 1,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Advance to the next `t` and return the extrapolation weight.
    pub fn advance(&mut self) -> f64 {
        self.k += 1;
        let (t, gamma) = inertial_next(&self.config, self.t, self.k).expect("validated at construction");
        self.t = t;
        gamma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Fixed,
    Bb1,
    Bb2,
    Bb3,
    Cauchy,
    CauchySupport,
    CauchyModified,
    Fista3k,
}

impl StepRule {
    pub const ALL: [StepRule; 8] = [
        StepRule::Fixed,
        StepRule::Bb1,
        StepRule::Bb2,
        StepRule::Bb3,
        StepRule::Cauchy,
        StepRule::CauchySupport,
        StepRule::CauchyModified,
        StepRule::Fista3k,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StepRule::Fixed => "fixed",
            StepRule::Bb1 => "bb1",
            StepRule::Bb2 => "bb2",
            StepRule::Bb3 => "bb3",
            StepRule::Cauchy => "cauchy",
            StepRule::CauchySupport => "cauchy_support",
            StepRule::CauchyModified => "cauchy_modified",
            StepRule::Fista3k => "fista3k",
        }
    }

    fn bb_mode(&self) -> Option<BbMode> {
        match self {
            StepRule::Bb1 => Some(BbMode::V1),
            StepRule::Bb2 => Some(BbMode::V2),
            StepRule::Bb3 => Some(BbMode::V3),
            _ => None,
        }
    }
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StepRule::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown step rule `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub rule: StepRule,
    /// Base step of the `fixed` rule.
    pub fixed: f64,
    /// Consensus penalty; the `fixed` rule uses `alpha / (1 + rho * alpha)`.
    pub rho: f64,
    /// Multiplicative factor of the `fista3k` rule.
    pub c: f64,
    /// Upper bound on the step of every rule.
    pub max: Option<f64>,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            rule: StepRule::Bb3,
            fixed: 1.0,
            rho: 0.0,
            c: FISTA3K_DEFAULT_C,
            max: None,
        }
    }
}

impl StepConfig {
    pub fn with_rule(rule: StepRule) -> Self {
        StepConfig {
            rule,
            ..Default::default()
        }
    }

    pub fn fixed(alpha: f64) -> Self {
        StepConfig {
            rule: StepRule::Fixed,
            fixed: alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidParameter(format!("step factor c must be > 0, got {}", self.c)));
        }
        if !(self.fixed > 0.0) || !self.fixed.is_finite() {
            return Err(Error::InvalidParameter(format!("fixed step must be > 0, got {}", self.fixed)));
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter(format!("consensus penalty must be >= 0, got {}", self.rho)));
        }
        if let Some(m) = self.max {
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::InvalidParameter(format!("step bound must be > 0, got {m}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BbMode {
    V1,
    V2,
    V3,
}

fn positive(v: f64) -> Option<f64> {
    (v.is_finite() && v > 0.0).then_some(v)
}

/// Barzilai-Borwein step from the inner products `<z,z>`, `<z,r>`, `<r,r>`.
pub fn bb_from_products(zz: f64, zr: f64, rr: f64, mode: BbMode) -> Option<f64> {
    match mode {
        BbMode::V1 if rr > 0.0 => positive(zr / rr),
        BbMode::V2 if zr > 0.0 => positive(zz / zr),
        BbMode::V3 if rr > 0.0 => positive((zz / rr).sqrt()),
        _ => None,
    }
}

/// Barzilai-Borwein step for iterate difference `z` and gradient difference `r`.
/// With averaged (consensus) differences this is the consensus BB step.
pub fn bb_step(z: &[f64], r: &[f64], mode: BbMode) -> Option<f64> {
    bb_from_products(vecops::norm_sq(z), vecops::dot(z, r), vecops::norm_sq(r), mode)
}

/// A linear map `Phi` and its adjoint.
pub trait LinearOperator {
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64>;
}

/// Curvature of a least-squares smooth term along a direction.
pub trait Curvature {
    /// `||Phi v||^2`, i.e. `<v, H v>` for the Hessian `H = Phi^T Phi`.
    fn curvature(&self, v: &[f64]) -> Option<f64>;
    /// `H v`.
    fn hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>>;
}

/// [`Curvature`] of `1/2 ||Phi x - b||^2` for an explicit operator.
pub struct OperatorCurvature<'a>(pub &'a dyn LinearOperator);

impl Curvature for OperatorCurvature<'_> {
    fn curvature(&self, v: &[f64]) -> Option<f64> {
        Some(vecops::norm_sq(&self.0.apply(v)))
    }

    fn hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        Some(self.0.apply_adjoint(&self.0.apply(v)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CauchyMode {
    Standard,
    Support,
    Modified,
}

fn masked(g: &[f64], support: &[bool]) -> Vec<f64> {
    g.iter()
        .zip(support)
        .map(|(&v, &s)| if s { v } else { 0.0 })
        .collect()
}

fn cauchy_from(g: &[f64], curv: &dyn Curvature) -> Option<f64> {
    let gg = vecops::norm_sq(g);
    if gg == 0.0 {
        return None;
    }
    positive(gg / curv.curvature(g)?)
}

fn cauchy_modified_from(g: &[f64], curv: &dyn Curvature) -> Option<f64> {
    let gn = vecops::norm(g);
    if gn == 0.0 {
        return None;
    }
    positive(gn / vecops::norm(&curv.hessian_apply(g)?))
}

/// Cauchy step `||g||^2 / ||Phi g||^2` and its support-restricted and
/// modified (`||g|| / ||Phi^T Phi g||`) variants.
pub fn cauchy_step(
    g: &[f64],
    op: &dyn LinearOperator,
    mode: CauchyMode,
    support: Option<&[bool]>,
) -> Option<f64> {
    let curv = OperatorCurvature(op);
    match mode {
        CauchyMode::Standard => cauchy_from(g, &curv),
        CauchyMode::Support => match support {
            Some(s) => cauchy_from(&masked(g, s), &curv),
            None => cauchy_from(g, &curv),
        },
        CauchyMode::Modified => cauchy_modified_from(g, &curv),
    }
}

/// `c` times the support-restricted Cauchy step.
pub fn fista3k_step(g: &[f64], op: &dyn LinearOperator, support: Option<&[bool]>, c: f64) -> Option<f64> {
    cauchy_step(g, op, CauchyMode::Support, support).map(|a| c * a)
}

/// Effective step `alpha / (1 + rho * alpha)` of the proximal-gradient
/// consensus update.
pub fn consensus_alpha(alpha: f64, rho: f64) -> f64 {
    debug_assert!(alpha > 0.0 && rho >= 0.0);
    alpha / (1.0 + rho * alpha)
}

/// Exact line-search step along the averaged gradient:
/// `||g||^2 / ((1/R) sum_i ||Phi_i g||^2)`.
pub fn consensus_cauchy(gbar: &[f64], ops: &[&dyn LinearOperator]) -> Option<f64> {
    if ops.is_empty() {
        return None;
    }
    let gg = vecops::norm_sq(gbar);
    if gg == 0.0 {
        return None;
    }
    let mean = ops
        .iter()
        .map(|op| vecops::norm_sq(&op.apply(gbar)))
        .sum::<f64>()
        / ops.len() as f64;
    positive(gg / mean)
}

/// Largest Hessian eigenvalue from a fixed-seed power iteration.
pub fn power_lipschitz(curv: &dyn Curvature, dim: usize, iterations: usize) -> Option<f64> {
    if dim == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = vecops::norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let w = curv.hessian_apply(&v)?;
        lambda = vecops::norm(&w);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return None;
        }
        v = w.into_iter().map(|x| x / lambda).collect();
    }
    Some(lambda)
}

/// Stateful step selection for one solver instance.
#[derive(Clone, Debug)]
pub struct StepController {
    config: StepConfig,
    prev_point: Option<Vec<f64>>,
    prev_grad: Option<Vec<f64>>,
    last: Option<f64>,
    fallbacks: usize,
}

impl StepController {
    pub fn new(config: StepConfig) -> Result<Self> {
        config.validate()?;
        Ok(StepController {
            config,
            prev_point: None,
            prev_grad: None,
            last: None,
            fallbacks: 0,
        })
    }

    pub fn config(&self) -> &StepConfig {
        &self.config
    }

    /// Swap the rule parameters, keeping the history.
    pub fn set_config(&mut self, config: StepConfig) -> Result<()> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    /// Last accepted step.
    pub fn last(&self) -> Option<f64> {
        self.last
    }

    /// Number of times the fallback policy replaced a rule's value.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Step for the gradient `grad` evaluated at `point`. `support` marks the
    /// nonzero entries of the current iterate (Cauchy-support and FISTA-3K).
    pub fn next(
        &mut self,
        point: &[f64],
        grad: &[f64],
        support: Option<&[bool]>,
        curv: &dyn Curvature,
    ) -> f64 {
        let cfg = self.config;
        let support_cauchy = || match support {
            Some(s) if s.iter().any(|&b| b) => cauchy_from(&masked(grad, s), curv),
            // empty support (e.g. the all-zero first iterate): standard Cauchy
            _ => cauchy_from(grad, curv),
        };
        let proposal = match cfg.rule {
            StepRule::Fixed => Some(consensus_alpha(cfg.fixed, cfg.rho)),
            StepRule::Bb1 | StepRule::Bb2 | StepRule::Bb3 => {
                let mode = cfg.rule.bb_mode().expect("bb rule");
                match (&self.prev_point, &self.prev_grad) {
                    (Some(p), Some(g)) => {
                        let z = vecops::sub(point, p);
                        let r = vecops::sub(grad, g);
                        bb_step(&z, &r, mode)
                    }
                    _ => cauchy_from(grad, curv),
                }
            }
            StepRule::Cauchy => cauchy_from(grad, curv),
            StepRule::CauchySupport => support_cauchy(),
            StepRule::CauchyModified => cauchy_modified_from(grad, curv),
            StepRule::Fista3k => support_cauchy().map(|a| cfg.c * a),
        };
        let mut alpha = match proposal.and_then(positive) {
            Some(a) => a,
            None => {
                self.fallbacks += 1;
                self.last
                    .or_else(|| power_lipschitz(curv, grad.len(), POWER_ITERATIONS).map(|l| 1.0 / l))
                    .unwrap_or(1.0)
            }
        };
        if cfg.rule == StepRule::Fista3k {
            if let Some(prev) = self.last {
                alpha = alpha.max(prev);
            }
        }
        if let Some(m) = cfg.max {
            alpha = alpha.min(m);
        }
        if cfg.rule.bb_mode().is_some() {
            self.prev_point = Some(point.to_vec());
            self.prev_grad = Some(grad.to_vec());
        }
        self.last = Some(alpha);
        alpha
    }
}

/// Row-major dense matrix; the explicit operator used by the generic
/// least-squares terms and by tests.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in d.iter().enumerate() {
            data[i * n + i] = *v;
        }
        DenseMatrix { rows: n, cols: n, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `Phi^T Phi`
    pub fn gram(&self) -> DenseMatrix {
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        for r in 0..self.rows {
            let row = &self.data[r * n..(r + 1) * n];
            for i in 0..n {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    g[i * n + j] += row[i] * row[j];
                }
            }
        }
        DenseMatrix { rows: n, cols: n, data: g }
    }
}

impl LinearOperator for DenseMatrix {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| vecops::dot(row, x))
            .collect()
    }

    fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            vecops::axpy(yi, row, &mut out);
        }
        out
    }
}
