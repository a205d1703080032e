//! Generic consensus solvers: proximal gradient with extrapolation (APG)
//! and ADMM, in single and consensus form.
//!
//! The consensus problem is `min sum_i f_i(x) + R g(x)` over one shared
//! variable, i.e. every replica carries its own copy of the regularizer.
//! Dividing by `R` gives the mean objective `f_bar + g`, on which the
//! consensus proximal-gradient iteration
//! `x+ = prox_{a g}((1/R) sum_i (x_i - a grad f_i(x_i)))`
//! coincides with plain proximal gradient.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::prox::soft_threshold_in_place;
use crate::step::{Curvature, DenseMatrix, InertialConfig, Inertia, LinearOperator, StepConfig, StepController, StepRule};
use crate::trace::{ConvergenceTrace, DivergenceGuard, DEFAULT_GUARD_FACTOR};
use crate::vecops;

/// How the per-replica work of one iteration is scheduled. Reductions always
/// run in replica order, so both modes give bit-identical results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            Execution::Sequential => (0..n).map(f).collect(),
        }
    }

    pub fn try_map<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }

    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F) -> Result<()>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<()> + Sync + Send,
    {
        let results: Vec<Result<()>> = match self {
            Execution::Parallel => items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect(),
            Execution::Sequential => items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect(),
        };
        results.into_iter().collect()
    }
}

/// One differentiable local term `f_i`.
pub trait SmoothTerm: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// `||Phi v||^2` for terms of the form `1/2 ||Phi x - b||^2`.
    fn curvature(&self, _v: &[f64]) -> Option<f64> {
        None
    }
    /// `Phi^T Phi v`.
    fn hessian_apply(&self, _v: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<T: SmoothTerm + ?Sized> SmoothTerm for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
    fn curvature(&self, v: &[f64]) -> Option<f64> {
        (**self).curvature(v)
    }
    fn hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        (**self).hessian_apply(v)
    }
}

/// The smooth part `sum_i f_i` of a consensus problem, seen through the
/// averaged quantities the consensus iteration needs.
pub trait ConsensusObjective: Sync {
    fn replicas(&self) -> usize;
    fn dim(&self) -> usize;
    /// `sum_i f_i(x)`.
    fn value(&self, x: &[f64]) -> f64;
    /// `(1/R) sum_i grad f_i(x)`.
    fn mean_gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// `(1/R) sum_i ||Phi_i v||^2`.
    fn mean_curvature(&self, v: &[f64]) -> Option<f64>;
    /// `(1/R) sum_i Phi_i^T Phi_i v`.
    fn mean_hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>>;
}

/// A slice of local terms evaluated replica by replica.
pub struct Terms<'a, T> {
    terms: &'a [T],
    exec: Execution,
}

impl<'a, T: SmoothTerm> Terms<'a, T> {
    pub fn new(terms: &'a [T], exec: Execution) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("consensus problem needs R >= 1 terms".into()))?;
        if let Some(bad) = terms.iter().find(|t| t.dim() != first.dim()) {
            return Err(Error::Shape(format!(
                "local term of dimension {} against {}",
                bad.dim(),
                first.dim()
            )));
        }
        Ok(Terms { terms, exec })
    }

    pub fn terms(&self) -> &[T] {
        self.terms
    }
}

impl<T: SmoothTerm> ConsensusObjective for Terms<'_, T> {
    fn replicas(&self) -> usize {
        self.terms.len()
    }

    fn dim(&self) -> usize {
        self.terms[0].dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.exec
            .map(self.terms.len(), |i| self.terms[i].value(x))
            .into_iter()
            .sum()
    }

    fn mean_gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let grads = self.exec.map(self.terms.len(), |i| {
            let mut g = vec![0.0; x.len()];
            self.terms[i].gradient(x, &mut g);
            g
        });
        let mean = vecops::mean_of(grads.iter().map(Vec::as_slice), x.len());
        ensure_finite(&mean, "gradient")?;
        out.copy_from_slice(&mean);
        Ok(())
    }

    fn mean_curvature(&self, v: &[f64]) -> Option<f64> {
        let parts = self.exec.map(self.terms.len(), |i| self.terms[i].curvature(v));
        let total: Option<f64> = parts.into_iter().sum();
        total.map(|t| t / self.terms.len() as f64)
    }

    fn mean_hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        let parts: Option<Vec<Vec<f64>>> = self
            .exec
            .map(self.terms.len(), |i| self.terms[i].hessian_apply(v))
            .into_iter()
            .collect();
        parts.map(|p| vecops::mean_of(p.iter().map(Vec::as_slice), v.len()))
    }
}

/// Adapter exposing a consensus objective's mean curvature to the step rules.
pub struct MeanCurvature<'a>(pub &'a dyn ConsensusObjective);

impl Curvature for MeanCurvature<'_> {
    fn curvature(&self, v: &[f64]) -> Option<f64> {
        self.0.mean_curvature(v)
    }

    fn hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        self.0.mean_hessian_apply(v)
    }
}

/// A possibly nonsmooth term `g` with a computable proximal operator.
pub trait ProxOperator: Sync {
    /// `argmin_u 1/2 ||u - v||^2 + scale * g(u)`.
    fn prox(&self, v: &[f64], scale: f64, out: &mut [f64]) -> Result<()>;
    /// `g(x)`; indicator functions report 0 on their set.
    fn value(&self, x: &[f64]) -> f64;
}

/// `lambda ||x||_1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L1Norm {
    lambda: f64,
}

impl L1Norm {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "l1 weight must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(L1Norm { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl ProxOperator for L1Norm {
    fn prox(&self, v: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(v);
        soft_threshold_in_place(out, scale * self.lambda);
        Ok(())
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.lambda * vecops::l1(x)
    }
}

/// `g = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Zero;

impl ProxOperator for Zero {
    fn prox(&self, v: &[f64], _scale: f64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(v);
        Ok(())
    }

    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// A term `f` whose proximal subproblem `argmin_x f(x) + rho/2 ||x - v||^2`
/// can be solved directly (the ADMM x-update).
pub trait ProximalSubproblem: Sync {
    fn dim(&self) -> usize;
    fn solve(&self, v: &[f64], rho: f64, out: &mut [f64]) -> Result<()>;
    fn value(&self, x: &[f64]) -> f64;
}

impl<T: ProximalSubproblem + ?Sized> ProximalSubproblem for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn solve(&self, v: &[f64], rho: f64, out: &mut [f64]) -> Result<()> {
        (**self).solve(v, rho, out)
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

/// Dense least squares `1/2 ||A x - b||^2`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    a: DenseMatrix,
    b: Vec<f64>,
    gram: DMatrix<f64>,
    atb: DVector<f64>,
}

impl LeastSquares {
    pub fn new(a: DenseMatrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(Error::Shape(format!(
                "right-hand side of length {} for a matrix with {} rows",
                b.len(),
                a.rows()
            )));
        }
        let n = a.cols();
        let g = a.gram();
        let gram = DMatrix::from_fn(n, n, |i, j| g.get(i, j));
        let atb = DVector::from_vec(a.apply_adjoint(&b));
        Ok(LeastSquares { a, b, gram, atb })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r = self.a.apply(x);
        vecops::axpy(-1.0, &self.b, &mut r);
        r
    }
}

impl SmoothTerm for LeastSquares {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * vecops::norm_sq(&self.residual(x))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a.apply_adjoint(&self.residual(x)));
    }

    fn curvature(&self, v: &[f64]) -> Option<f64> {
        Some(vecops::norm_sq(&self.a.apply(v)))
    }

    fn hessian_apply(&self, v: &[f64]) -> Option<Vec<f64>> {
        Some(self.a.apply_adjoint(&self.a.apply(v)))
    }
}

impl ProximalSubproblem for LeastSquares {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn solve(&self, v: &[f64], rho: f64, out: &mut [f64]) -> Result<()> {
        let n = self.a.cols();
        let lhs = &self.gram + DMatrix::identity(n, n) * rho;
        let rhs = &self.atb + DVector::from_column_slice(v) * rho;
        let chol = lhs
            .cholesky()
            .ok_or_else(|| Error::Degenerate("least-squares subproblem is not positive definite".into()))?;
        out.copy_from_slice(chol.solve(&rhs).as_slice());
        Ok(())
    }

    fn value(&self, x: &[f64]) -> f64 {
        SmoothTerm::value(self, x)
    }
}

/// One proximal-gradient consensus update from the local iterates `locals`:
/// `prox_{a g}((1/R) sum_i (x_i - a grad f_i(x_i)))`.
pub fn pg_consensus_step<T: SmoothTerm>(
    locals: &[Vec<f64>],
    terms: &[T],
    prox: &dyn ProxOperator,
    alpha_c: f64,
) -> Result<Vec<f64>> {
    if locals.len() != terms.len() || locals.is_empty() {
        return Err(Error::Shape(format!(
            "{} local iterates for {} terms",
            locals.len(),
            terms.len()
        )));
    }
    if !(alpha_c > 0.0) || !alpha_c.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be > 0, got {alpha_c}")));
    }
    let dim = terms[0].dim();
    let mut mean = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for (x, f) in locals.iter().zip(terms) {
        if x.len() != dim || f.dim() != dim {
            return Err(Error::Shape("local iterates and terms differ in dimension".into()));
        }
        f.gradient(x, &mut g);
        ensure_finite(&g, "gradient")?;
        for ((m, xi), gi) in mean.iter_mut().zip(x).zip(&g) {
            *m += xi - alpha_c * gi;
        }
    }
    let inv = 1.0 / locals.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let mut out = vec![0.0; dim];
    prox.prox(&mean, alpha_c, &mut out)?;
    Ok(out)
}

/// State of an accelerated proximal-gradient consensus solver. `x` is the
/// latest post-prox iterate and `z` the extrapolated point where the next
/// gradient is evaluated.
#[derive(Clone, Debug)]
pub struct ApgConsensus {
    x: Vec<f64>,
    z: Vec<f64>,
    grad: Vec<f64>,
    inertia: Inertia,
    steps: StepController,
    iteration: usize,
}

impl ApgConsensus {
    pub fn new(x0: Vec<f64>, step: StepConfig, inertial: InertialConfig) -> Result<Self> {
        ensure_finite(&x0, "initial iterate")?;
        Ok(ApgConsensus {
            z: x0.clone(),
            grad: vec![0.0; x0.len()],
            x: x0,
            inertia: Inertia::new(inertial)?,
            steps: StepController::new(step)?,
            iteration: 0,
        })
    }

    pub fn solution(&self) -> &[f64] {
        &self.x
    }

    pub fn extrapolated(&self) -> &[f64] {
        &self.z
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn last_step(&self) -> Option<f64> {
        self.steps.last()
    }

    pub fn step_fallbacks(&self) -> usize {
        self.steps.fallbacks()
    }

    pub fn set_step_config(&mut self, step: StepConfig) -> Result<()> {
        self.steps.set_config(step)
    }

    /// One consensus update; returns the step used.
    pub fn iterate(&mut self, obj: &dyn ConsensusObjective, prox: &dyn ProxOperator) -> Result<f64> {
        if obj.dim() != self.x.len() {
            return Err(Error::Shape(format!(
                "objective of dimension {} for an iterate of length {}",
                obj.dim(),
                self.x.len()
            )));
        }
        obj.mean_gradient(&self.z, &mut self.grad)?;
        let rule = self.steps.config().rule;
        let support: Option<Vec<bool>> = matches!(rule, StepRule::CauchySupport | StepRule::Fista3k)
            .then(|| self.z.iter().map(|v| *v != 0.0).collect());
        let alpha = self
            .steps
            .next(&self.z, &self.grad, support.as_deref(), &MeanCurvature(obj));
        let mut v = self.z.clone();
        vecops::axpy(-alpha, &self.grad, &mut v);
        let mut next = vec![0.0; v.len()];
        prox.prox(&v, alpha, &mut next)?;
        ensure_finite(&next, "iterate")?;
        let gamma = self.inertia.advance();
        for ((z, xn), xo) in self.z.iter_mut().zip(&next).zip(&self.x) {
            *z = xn + gamma * (xn - xo);
        }
        self.x = next;
        self.iteration += 1;
        Ok(alpha)
    }
}

/// Residual-balancing penalty adaptation and over-relaxation settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho0: f64,
    /// Over-relaxation factor in (0, 2]; 1 disables relaxation.
    pub relax: f64,
    pub adaptive: bool,
    /// Check residual balance every this many iterations.
    pub balance_every: usize,
    /// Adapt when one residual exceeds the other by this factor.
    pub balance_ratio: f64,
    /// Multiply or divide the penalty by this factor.
    pub balance_scale: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            rho0: 1.0,
            relax: 1.8,
            adaptive: true,
            balance_every: 10,
            balance_ratio: 10.0,
            balance_scale: 2.0,
        }
    }
}

impl AdmmConfig {
    pub fn with_rho(rho0: f64) -> Self {
        AdmmConfig {
            rho0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) || !self.rho0.is_finite() {
            return Err(Error::InvalidParameter(format!("penalty must be > 0, got {}", self.rho0)));
        }
        if !(self.relax > 0.0 && self.relax <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "relaxation must lie in (0, 2], got {}",
                self.relax
            )));
        }
        if self.adaptive && (self.balance_every == 0 || !(self.balance_ratio > 1.0) || !(self.balance_scale > 1.0)) {
            return Err(Error::InvalidParameter("residual balancing needs period >= 1 and factors > 1".into()));
        }
        Ok(())
    }

    /// New penalty after a balancing check, or `None` to keep it. The
    /// residuals are compared relative to the size of the primal iterates
    /// and of the unscaled dual, which keeps the test scale-free.
    fn rebalance(&self, iteration: usize, rho: f64, res: Residuals, primal_scale: f64, dual_scale: f64) -> Option<f64> {
        if !self.adaptive || iteration % self.balance_every != 0 {
            return None;
        }
        let rel = |v: f64, scale: f64| if scale > 0.0 { v / scale } else { v };
        let (r, s) = (rel(res.primal, primal_scale), rel(res.dual, dual_scale));
        if r > self.balance_ratio * s {
            Some(rho * self.balance_scale)
        } else if s > self.balance_ratio * r {
            Some(rho / self.balance_scale)
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
}

/// Scaled-form ADMM for `min f(x) + g(y)` subject to `x = y`.
#[derive(Clone, Debug)]
pub struct Admm {
    cfg: AdmmConfig,
    x: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    rho: f64,
    iteration: usize,
}

impl Admm {
    pub fn new(y0: Vec<f64>, cfg: AdmmConfig) -> Result<Self> {
        cfg.validate()?;
        ensure_finite(&y0, "initial iterate")?;
        Ok(Admm {
            cfg,
            x: y0.clone(),
            u: vec![0.0; y0.len()],
            y: y0,
            rho: cfg.rho0,
            iteration: 0,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn iterate(&mut self, f: &dyn ProximalSubproblem, prox: &dyn ProxOperator) -> Result<Residuals> {
        let n = self.y.len();
        if f.dim() != n {
            return Err(Error::Shape(format!("subproblem of dimension {} for {n} unknowns", f.dim())));
        }
        let v = vecops::sub(&self.y, &self.u);
        f.solve(&v, self.rho, &mut self.x)?;
        ensure_finite(&self.x, "ADMM x-update")?;
        let beta = self.cfg.relax;
        let xr: Vec<f64> = self.x.iter().zip(&self.y).map(|(x, y)| beta * x + (1.0 - beta) * y).collect();
        let w: Vec<f64> = xr.iter().zip(&self.u).map(|(a, b)| a + b).collect();
        let y_old = std::mem::take(&mut self.y);
        self.y = vec![0.0; n];
        prox.prox(&w, 1.0 / self.rho, &mut self.y)?;
        for ((u, a), y) in self.u.iter_mut().zip(&xr).zip(&self.y) {
            *u += a - y;
        }
        let res = Residuals {
            primal: vecops::dist_sq(&self.x, &self.y).sqrt(),
            dual: self.rho * vecops::dist_sq(&self.y, &y_old).sqrt(),
        };
        self.iteration += 1;
        let primal_scale = vecops::norm(&self.x).max(vecops::norm(&self.y));
        let dual_scale = self.rho * vecops::norm(&self.u);
        if let Some(rho) = self.cfg.rebalance(self.iteration, self.rho, res, primal_scale, dual_scale) {
            let scale = self.rho / rho;
            self.u.iter_mut().for_each(|u| *u *= scale);
            self.rho = rho;
        }
        Ok(res)
    }
}

/// Scaled-form consensus ADMM for `min sum_i f_i(x_i) + R g(y)` subject to
/// `x_i = y` for every replica.
#[derive(Clone, Debug)]
pub struct AdmmConsensus {
    cfg: AdmmConfig,
    xs: Vec<Vec<f64>>,
    us: Vec<Vec<f64>>,
    y: Vec<f64>,
    rho: f64,
    iteration: usize,
}

impl AdmmConsensus {
    pub fn new(replicas: usize, y0: Vec<f64>, cfg: AdmmConfig) -> Result<Self> {
        cfg.validate()?;
        if replicas == 0 {
            return Err(Error::InvalidParameter("consensus ADMM needs R >= 1".into()));
        }
        ensure_finite(&y0, "initial iterate")?;
        Ok(AdmmConsensus {
            cfg,
            xs: vec![y0.clone(); replicas],
            us: vec![vec![0.0; y0.len()]; replicas],
            y: y0,
            rho: cfg.rho0,
            iteration: 0,
        })
    }

    pub fn replicas(&self) -> usize {
        self.xs.len()
    }

    pub fn locals(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn duals(&self) -> &[Vec<f64>] {
        &self.us
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn iterate<S: ProximalSubproblem>(
        &mut self,
        subs: &[S],
        prox: &dyn ProxOperator,
        exec: Execution,
    ) -> Result<Residuals> {
        let n = self.y.len();
        if subs.len() != self.xs.len() {
            return Err(Error::Shape(format!(
                "{} subproblems for {} replicas",
                subs.len(),
                self.xs.len()
            )));
        }
        if let Some(bad) = subs.iter().find(|s| s.dim() != n) {
            return Err(Error::Shape(format!("subproblem of dimension {} for {n} unknowns", bad.dim())));
        }
        let (y, us, rho) = (&self.y, &self.us, self.rho);
        exec.for_each_mut(&mut self.xs, |i, x| {
            let v = vecops::sub(y, &us[i]);
            subs[i].solve(&v, rho, x)?;
            ensure_finite(x, "ADMM local update")
        })?;
        let beta = self.cfg.relax;
        let relaxed: Vec<Vec<f64>> = self
            .xs
            .iter()
            .map(|x| x.iter().zip(&self.y).map(|(a, b)| beta * a + (1.0 - beta) * b).collect())
            .collect();
        let shifted: Vec<Vec<f64>> = relaxed
            .iter()
            .zip(&self.us)
            .map(|(a, u)| a.iter().zip(u).map(|(p, q)| p + q).collect())
            .collect();
        let w = vecops::mean_of(shifted.iter().map(Vec::as_slice), n);
        let y_old = std::mem::take(&mut self.y);
        self.y = vec![0.0; n];
        prox.prox(&w, 1.0 / self.rho, &mut self.y)?;
        for (u, a) in self.us.iter_mut().zip(&relaxed) {
            for ((ui, ai), yi) in u.iter_mut().zip(a).zip(&self.y) {
                *ui += ai - yi;
            }
        }
        let primal = self.xs.iter().map(|x| vecops::dist_sq(x, &self.y)).sum::<f64>().sqrt();
        let dual = self.rho * (self.xs.len() as f64).sqrt() * vecops::dist_sq(&self.y, &y_old).sqrt();
        let res = Residuals { primal, dual };
        self.iteration += 1;
        let primal_scale = self
            .xs
            .iter()
            .map(|x| vecops::norm_sq(x))
            .sum::<f64>()
            .sqrt()
            .max((self.xs.len() as f64).sqrt() * vecops::norm(&self.y));
        let dual_scale = self.rho * self.us.iter().map(|u| vecops::norm_sq(u)).sum::<f64>().sqrt();
        if let Some(rho) = self.cfg.rebalance(self.iteration, self.rho, res, primal_scale, dual_scale) {
            let scale = self.rho / rho;
            self.us.iter_mut().flatten().for_each(|u| *u *= scale);
            self.rho = rho;
        }
        Ok(res)
    }
}

/// Iteration budget, stopping and logging settings shared by the run drivers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub iters: usize,
    /// Stop early once the relative objective change between two trace
    /// points falls below this value.
    pub tol: Option<f64>,
    /// Record a trace row every this many iterations (the last one is always recorded).
    pub trace_every: usize,
    pub execution: Execution,
    pub deterministic: bool,
    pub guard_factor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iters: 1000,
            tol: None,
            trace_every: 1,
            execution: Execution::Parallel,
            deterministic: false,
            guard_factor: DEFAULT_GUARD_FACTOR,
        }
    }
}

impl RunConfig {
    pub fn iterations(iters: usize) -> Self {
        RunConfig {
            iters,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iters == 0 || self.trace_every == 0 {
            return Err(Error::InvalidParameter("iteration count and trace period must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub solution: Vec<f64>,
    pub trace: ConvergenceTrace,
    /// Per-iteration primal/dual residuals (ADMM drivers only).
    pub residuals: Vec<Residuals>,
    pub iterations: usize,
}

/// Trace bookkeeping common to the run drivers.
struct Monitor {
    run: RunConfig,
    trace: ConvergenceTrace,
    guard: DivergenceGuard,
    previous: Option<f64>,
}

impl Monitor {
    fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        Ok(Monitor {
            run,
            trace: ConvergenceTrace::new(run.deterministic),
            guard: DivergenceGuard::new(run.guard_factor),
            previous: None,
        })
    }

    fn due(&self, iter: usize) -> bool {
        iter == 0 || iter == self.run.iters || iter % self.run.trace_every == 0
    }

    /// Record a row; returns true when the tolerance test says to stop.
    fn record(&mut self, iter: usize, fidelity: f64, regularizer: f64, step: f64, rho: f64) -> Result<bool> {
        let objective = self.trace.record(iter, fidelity, regularizer, step, rho).objective;
        self.guard.check(iter, objective)?;
        let stop = match (self.run.tol, self.previous) {
            (Some(tol), Some(prev)) if iter > 0 => (prev - objective).abs() <= tol * prev.abs().max(f64::MIN_POSITIVE),
            _ => false,
        };
        self.previous = Some(objective);
        Ok(stop)
    }
}

/// Accelerated proximal-gradient consensus iterations from `x0`.
pub fn apg_consensus_run(
    obj: &dyn ConsensusObjective,
    prox: &dyn ProxOperator,
    x0: Vec<f64>,
    step: StepConfig,
    inertial: InertialConfig,
    run: RunConfig,
) -> Result<RunOutput> {
    let r = obj.replicas() as f64;
    let mut mon = Monitor::new(run)?;
    let mut solver = ApgConsensus::new(x0, step, inertial)?;
    mon.record(0, obj.value(solver.solution()), r * prox.value(solver.solution()), 0.0, step.rho)?;
    let mut done = 0;
    for k in 1..=run.iters {
        let alpha = solver.iterate(obj, prox)?;
        done = k;
        if mon.due(k) {
            let x = solver.solution();
            if mon.record(k, obj.value(x), r * prox.value(x), alpha, step.rho)? {
                break;
            }
        }
    }
    Ok(RunOutput {
        solution: solver.x,
        trace: mon.trace,
        residuals: Vec::new(),
        iterations: done,
    })
}

/// Scaled ADMM iterations; the trace is evaluated at `y`.
pub fn admm_run(
    f: &dyn ProximalSubproblem,
    prox: &dyn ProxOperator,
    y0: Vec<f64>,
    cfg: AdmmConfig,
    run: RunConfig,
) -> Result<RunOutput> {
    let mut mon = Monitor::new(run)?;
    let mut solver = Admm::new(y0, cfg)?;
    mon.record(0, f.value(solver.y()), prox.value(solver.y()), 0.0, solver.rho())?;
    let mut residuals = Vec::with_capacity(run.iters);
    for k in 1..=run.iters {
        let rho = solver.rho();
        residuals.push(solver.iterate(f, prox)?);
        if mon.due(k) && mon.record(k, f.value(solver.y()), prox.value(solver.y()), 0.0, rho)? {
            break;
        }
    }
    Ok(RunOutput {
        iterations: residuals.len(),
        solution: solver.y,
        trace: mon.trace,
        residuals,
    })
}

/// Consensus ADMM iterations; the trace is evaluated at the global `y`.
pub fn admm_consensus_run<S: ProximalSubproblem>(
    subs: &[S],
    prox: &dyn ProxOperator,
    y0: Vec<f64>,
    cfg: AdmmConfig,
    run: RunConfig,
) -> Result<RunOutput> {
    let mut mon = Monitor::new(run)?;
    let mut solver = AdmmConsensus::new(subs.len(), y0, cfg)?;
    let r = subs.len() as f64;
    let value = |y: &[f64]| -> f64 {
        run.execution
            .map(subs.len(), |i| subs[i].value(y))
            .into_iter()
            .sum()
    };
    mon.record(0, value(solver.y()), r * prox.value(solver.y()), 0.0, solver.rho())?;
    let mut residuals = Vec::with_capacity(run.iters);
    for k in 1..=run.iters {
        let rho = solver.rho();
        residuals.push(solver.iterate(subs, prox, run.execution)?);
        if mon.due(k) && mon.record(k, value(solver.y()), r * prox.value(solver.y()), 0.0, rho)? {
            break;
        }
    }
    Ok(RunOutput {
        iterations: residuals.len(),
        solution: solver.y,
        trace: mon.trace,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `1/2 (x - a)^2` per coordinate.
    fn shift(a: Vec<f64>) -> LeastSquares {
        let n = a.len();
        LeastSquares::new(DenseMatrix::identity(n), a).unwrap()
    }

    #[test]
    fn single_replica_is_plain_pg() {
        let f = shift(vec![2.0, -1.0]);
        let x = pg_consensus_step(&[vec![0.0, 0.0]], &[f], &L1Norm::new(0.5).unwrap(), 1.0).unwrap();
        assert_eq!(x, vec![1.5, -0.5]);
    }

    #[test]
    fn averaged_step_then_prox() {
        let terms = [shift(vec![1.0]), shift(vec![3.0])];
        let x = pg_consensus_step(&[vec![0.0], vec![0.0]], &terms, &L1Norm::new(0.5).unwrap(), 1.0).unwrap();
        assert_eq!(x, vec![1.5]);
    }

    #[test]
    fn large_lambda_zeroes_in_one_iteration() {
        let terms = [shift(vec![1.0, -2.0]), shift(vec![3.0, 0.5])];
        let obj = Terms::new(&terms, Execution::Sequential).unwrap();
        let out = apg_consensus_run(
            &obj,
            &L1Norm::new(1e6).unwrap(),
            vec![0.0; 2],
            StepConfig::with_rule(StepRule::Bb3),
            InertialConfig::Nesterov,
            RunConfig::iterations(1),
        )
        .unwrap();
        assert_eq!(out.solution, vec![0.0, 0.0]);
        assert_eq!(out.trace.rows().len(), 2);
    }

    #[test]
    fn admm_unconstrained_reaches_least_squares() {
        let a = DenseMatrix::new(3, 2, vec![1.0, 0.0, 1.0, 1.0, 0.0, 2.0]).unwrap();
        let f = LeastSquares::new(a, vec![1.0, 2.0, 3.0]).unwrap();
        let out = admm_run(&f, &Zero, vec![0.0; 2], AdmmConfig::default(), RunConfig::iterations(300)).unwrap();
        // normal equations: [[2,1],[1,5]] x = [3,8]
        let want = [7.0 / 9.0, 13.0 / 9.0];
        for (x, w) in out.solution.iter().zip(want) {
            assert!((x - w).abs() < 1e-8, "{x} vs {w}");
        }
        let last = out.residuals.last().unwrap();
        assert!(last.primal < 1e-8 && last.dual < 1e-8);
    }

    #[test]
    fn identical_replicas_stay_identical() {
        let terms = vec![shift(vec![1.0, 2.0]); 3];
        let mut s = AdmmConsensus::new(3, vec![0.0; 2], AdmmConfig::with_rho(1.0)).unwrap();
        for _ in 0..5 {
            s.iterate(&terms, &L1Norm::new(0.1).unwrap(), Execution::Parallel).unwrap();
            assert!(s.locals().iter().all(|x| x == &s.locals()[0]));
        }
    }

    #[test]
    fn guard_aborts_divergent_fixed_step() {
        let terms = [shift(vec![1.0])];
        let obj = Terms::new(&terms, Execution::Sequential).unwrap();
        let err = apg_consensus_run(
            &obj,
            &Zero,
            vec![0.0],
            StepConfig::fixed(3.0),
            InertialConfig::Off,
            RunConfig::iterations(100),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(AdmmConfig { relax: 2.5, ..Default::default() }.validate().is_err());
        assert!(AdmmConfig::with_rho(0.0).validate().is_err());
        assert!(L1Norm::new(-1.0).is_err());
        let empty: [LeastSquares; 0] = [];
        assert!(Terms::new(&empty, Execution::Sequential).is_err());
    }
}
