//! Training loops: Newton and gradient ascent, in the RKHS and in a
//! polynomial parameter space.
//!
//! Every method maximizes expected return. Newton variants minimize the
//! cubic model of `-J`, so the solver sees `(-v, -sym(H), beta)` and its
//! minimizer is used directly as the ascent step.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cubic::{solve, CubicSubproblem, SolverConfig, SolverReport, StepNorm};
use crate::env::{sample_batch, DiscountConvention, Environment, TabularMdp, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::estimators::{
    newton_coefficients, parametric_gradient, parametric_hessian, rkhs_gradient_expansion, weighted_coefficients,
    EstimatorOptions, NewtonCoefficients, SampleSet,
};
use crate::kernel::{gram, pivoted_cholesky, KernelExpansion, KernelSpec, StateActionPoint};
use crate::oracle;
use crate::policy::{ParametricSoftmaxPolicy, PolicyCheckpoint, RkhsSoftmaxPolicy};

/// Retries allowed when `adaptive_beta` keeps rejecting a step.
const MAX_BETA_DOUBLINGS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RkhsNewton,
    RkhsPg,
    ParamPg,
    ParamNewton,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::RkhsNewton => "rkhs_newton",
            Method::RkhsPg => "rkhs_pg",
            Method::ParamPg => "param_pg",
            Method::ParamNewton => "param_newton",
        }
    }

    pub fn is_newton(&self) -> bool {
        matches!(self, Method::RkhsNewton | Method::ParamNewton)
    }

    pub fn default_learning_rate(&self) -> f64 {
        if self.is_newton() {
            1.0
        } else {
            0.05
        }
    }
}

/// Source of derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    #[default]
    MonteCarlo,
    /// Exact derivatives under the enumerated trajectory distribution.
    /// Tabular environments only.
    Expectation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub method: Method,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub discount: DiscountConvention,
    pub temperature: f64,
    pub kernel: KernelSpec,
    pub solver: SolverConfig,
    /// 0 disables pruning.
    pub prune_epsilon: f64,
    /// Sum the weights of identical centers after every update.
    pub merge_duplicates: bool,
    pub seed: u64,
    pub derivative_mode: DerivativeMode,
    pub estimator: EstimatorOptions,
    /// Polynomial degree of the parametric feature map.
    pub poly_degree: usize,
}

impl OptimizerConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            iterations: 50,
            batch_size: 100,
            learning_rate: method.default_learning_rate(),
            gamma: 0.99,
            discount: DiscountConvention::Standard,
            temperature: 1.0,
            kernel: KernelSpec::TabularDelta,
            solver: SolverConfig::default(),
            prune_epsilon: 0.0,
            merge_duplicates: false,
            seed: 0,
            derivative_mode: DerivativeMode::MonteCarlo,
            estimator: EstimatorOptions::default(),
            poly_degree: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.prune_epsilon.is_finite() && self.prune_epsilon >= 0.0) {
            return Err(Error::Config(format!("prune_epsilon must be non-negative, got {}", self.prune_epsilon)));
        }
        if self.poly_degree == 0 {
            return Err(Error::Config("poly_degree must be at least 1".into()));
        }
        self.discount.validate(self.gamma).map_err(|e| Error::Config(e.to_string()))?;
        self.kernel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.solver.validate()?;
        if self.solver.adaptive_beta && self.derivative_mode != DerivativeMode::Expectation {
            return Err(Error::Config("solver.adaptive_beta requires derivative_mode = expectation".into()));
        }
        Ok(())
    }

    fn check_env<E: Environment>(&self, env: &E, method: Method) -> Result<()> {
        self.validate()?;
        if self.method != method {
            return Err(Error::Config(format!("config selects {}, called {}", self.method.name(), method.name())));
        }
        if self.derivative_mode == DerivativeMode::Expectation && env.as_tabular().is_none() {
            return Err(Error::Config(format!("expectation mode needs a tabular environment, got {}", env.name())));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub max_return: f64,
    /// Objective of the policy that sampled this iteration's batch.
    pub disc_objective: f64,
    pub step_norm: f64,
    pub solver_newton_iters: usize,
    pub solver_converged: bool,
    /// Centers, or parameters, after the update.
    pub expansion_size: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<IterationRecord>,
}

impl TrainingLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
}

/// Final policy of any method.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedPolicy {
    Rkhs(RkhsSoftmaxPolicy),
    Parametric(ParametricSoftmaxPolicy),
}

impl TrainedPolicy {
    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        match self {
            TrainedPolicy::Rkhs(p) => p.to_checkpoint(),
            TrainedPolicy::Parametric(p) => p.to_checkpoint(),
        }
    }
}

/// Policy state visible to observers.
pub trait Snapshot {
    fn checkpoint(&self) -> PolicyCheckpoint;
}

impl Snapshot for RkhsSoftmaxPolicy {
    fn checkpoint(&self) -> PolicyCheckpoint {
        self.to_checkpoint()
    }
}

impl Snapshot for ParametricSoftmaxPolicy {
    fn checkpoint(&self) -> PolicyCheckpoint {
        self.to_checkpoint()
    }
}

/// Called after every iteration with its record and the updated policy.
pub type Observer<'a> = dyn FnMut(&IterationRecord, &dyn Snapshot) -> Result<()> + 'a;

fn ignore(_: &IterationRecord, _: &dyn Snapshot) -> Result<()> {
    Ok(())
}

/// Runs the method selected by `cfg.method`.
pub fn run<E: Environment>(env: &E, cfg: &OptimizerConfig) -> Result<(TrainedPolicy, TrainingLog)> {
    run_observed(env, cfg, &mut ignore)
}

/// [`run`], reporting each iteration to `observer`.
pub fn run_observed<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    observer: &mut Observer,
) -> Result<(TrainedPolicy, TrainingLog)> {
    Ok(match cfg.method {
        Method::RkhsNewton => {
            let (p, log) = rkhs_newton(env, cfg, initial_rkhs_policy(env, cfg)?, observer)?;
            (TrainedPolicy::Rkhs(p), log)
        }
        Method::RkhsPg => {
            let (p, log) = rkhs_pg(env, cfg, initial_rkhs_policy(env, cfg)?, observer)?;
            (TrainedPolicy::Rkhs(p), log)
        }
        Method::ParamPg => {
            let (p, log) = param_pg(env, cfg, initial_param_policy(env, cfg)?, observer)?;
            (TrainedPolicy::Parametric(p), log)
        }
        Method::ParamNewton => {
            let (p, log) = param_newton(env, cfg, initial_param_policy(env, cfg)?, observer)?;
            (TrainedPolicy::Parametric(p), log)
        }
    })
}

/// Uniform RKHS policy for `env`.
pub fn initial_rkhs_policy<E: Environment>(env: &E, cfg: &OptimizerConfig) -> Result<RkhsSoftmaxPolicy> {
    RkhsSoftmaxPolicy::new(cfg.kernel, env.feature_dim(), env.n_actions(), cfg.temperature, env.featurizer_name())
}

/// Uniform parametric policy for `env`.
pub fn initial_param_policy<E: Environment>(env: &E, cfg: &OptimizerConfig) -> Result<ParametricSoftmaxPolicy> {
    ParametricSoftmaxPolicy::zeros(env.n_actions(), env.feature_dim(), cfg.poly_degree)
}

pub fn run_rkhs_newton<E: Environment>(env: &E, cfg: &OptimizerConfig) -> Result<(RkhsSoftmaxPolicy, TrainingLog)> {
    run_rkhs_newton_from(env, cfg, initial_rkhs_policy(env, cfg)?)
}

pub fn run_rkhs_pg<E: Environment>(env: &E, cfg: &OptimizerConfig) -> Result<(RkhsSoftmaxPolicy, TrainingLog)> {
    run_rkhs_pg_from(env, cfg, initial_rkhs_policy(env, cfg)?)
}

pub fn run_param_pg<E: Environment>(env: &E, cfg: &OptimizerConfig) -> Result<(ParametricSoftmaxPolicy, TrainingLog)> {
    run_param_pg_from(env, cfg, initial_param_policy(env, cfg)?)
}

pub fn run_param_newton<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
) -> Result<(ParametricSoftmaxPolicy, TrainingLog)> {
    run_param_newton_from(env, cfg, initial_param_policy(env, cfg)?)
}

/// Per-iteration quantities shared by every method.
struct Sampled<S> {
    batch: TrajectoryBatch<S>,
    objective: f64,
}

struct Context<'a, E: Environment> {
    env: &'a E,
    cfg: &'a OptimizerConfig,
    /// The tabular model with the configured discount, in expectation mode.
    exact: Option<TabularMdp>,
}

impl<'a, E: Environment> Context<'a, E> {
    fn new(env: &'a E, cfg: &'a OptimizerConfig, method: Method) -> Result<Self> {
        cfg.check_env(env, method)?;
        let exact = match cfg.derivative_mode {
            DerivativeMode::Expectation => {
                let mdp = env.as_tabular().expect("checked").clone().with_gamma(cfg.gamma);
                oracle::check_budget(&mdp, env.horizon())?;
                Some(mdp)
            }
            DerivativeMode::MonteCarlo => None,
        };
        Ok(Self { env, cfg, exact })
    }

    fn horizon(&self) -> usize {
        self.env.horizon()
    }

    fn exact_j<P: crate::policy::Policy>(&self, mdp: &TabularMdp, policy: &P) -> Result<f64> {
        oracle::exact_J(mdp, policy, self.horizon(), self.cfg.discount)
    }

    fn sample<P: crate::policy::Policy + Sync>(&self, policy: &P, iteration: usize) -> Result<Sampled<E::State>> {
        let cfg = self.cfg;
        let trajs = sample_batch(self.env, policy, cfg.batch_size, cfg.seed, iteration as u64)?;
        let batch = TrajectoryBatch::new(trajs, cfg.gamma, cfg.discount)?;
        let objective = match &self.exact {
            Some(mdp) => self.exact_j(mdp, policy)?,
            None => batch.mean_discounted_return(),
        };
        Ok(Sampled { batch, objective })
    }

    /// Runs `body` once per iteration, wrapping errors with the 1-based index.
    fn drive<P: Snapshot>(
        &self,
        mut policy: P,
        observer: &mut Observer,
        mut body: impl FnMut(&mut P, usize) -> Result<(Sampled<E::State>, Step)>,
    ) -> Result<(P, TrainingLog)> {
        let mut log = TrainingLog::default();
        for m in 0..self.cfg.iterations {
            let start = Instant::now();
            let (sampled, step) =
                body(&mut policy, m).map_err(|e| Error::Iteration { iteration: m + 1, source: Box::new(e) })?;
            let returns = sampled.batch.returns();
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
            let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            log.records.push(IterationRecord {
                iter: m + 1,
                mean_return: mean,
                min_return: min,
                max_return: max,
                disc_objective: sampled.objective,
                step_norm: step.norm,
                solver_newton_iters: step.newton_iters,
                solver_converged: step.converged,
                expansion_size: step.size,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            observer(log.records.last().expect("just pushed"), &policy)
                .map_err(|e| Error::Iteration { iteration: m + 1, source: Box::new(e) })?;
        }
        Ok((policy, log))
    }

    fn tidy(&self, h: KernelExpansion) -> KernelExpansion {
        if self.cfg.merge_duplicates || self.cfg.prune_epsilon > 0.0 {
            h.prune(self.cfg.prune_epsilon)
        } else {
            h
        }
    }
}

struct Step {
    norm: f64,
    newton_iters: usize,
    converged: bool,
    size: usize,
}

impl Step {
    fn gradient(norm: f64, size: usize) -> Self {
        Self { norm, newton_iters: 0, converged: true, size }
    }
}

fn is_zero<'a>(xs: impl IntoIterator<Item = &'a f64>) -> bool {
    xs.into_iter().all(|x| *x == 0.0)
}

/// Minimizer of the cubic model of `-J` with gradient `g` and Hessian `hess`.
fn ascent_step(g: &DVector<f64>, hess: &DMatrix<f64>, beta: f64, solver: &SolverConfig) -> Result<SolverReport> {
    let neg_h = -(hess + hess.transpose()) * 0.5;
    solve(&CubicSubproblem::new(-g, neg_h, beta)?, solver, None)
}

/// Local quadratic model of `J` over the span of a set of kernel sections.
struct StepModel {
    centers: Vec<StateActionPoint>,
    v: DVector<f64>,
    hess: DMatrix<f64>,
    /// Lower Cholesky factor of the Gram matrix when steps are measured in
    /// the RKHS norm.
    whiten: Option<DMatrix<f64>>,
}

impl StepModel {
    fn coefficient(coeffs: NewtonCoefficients) -> Self {
        let hess = coeffs.h_sym();
        Self { centers: coeffs.centers, v: coeffs.v, hess, whiten: None }
    }

    /// Whitened model over `centers`, which should have a well-conditioned Gram matrix.
    fn rkhs(centers: Vec<StateActionPoint>, v: DVector<f64>, hess: DMatrix<f64>, spec: &KernelSpec) -> Result<Self> {
        let l = gram_factor(gram(spec, &centers)?)?;
        let v = l.solve_lower_triangular(&v).ok_or_else(singular)?;
        let left = l.solve_lower_triangular(&hess).ok_or_else(singular)?;
        let both = l.solve_lower_triangular(&left.transpose()).ok_or_else(singular)?;
        let hess = (&both + both.transpose()) * 0.5;
        Ok(Self { centers, v, hess, whiten: Some(l) })
    }

    /// Model for one iteration. Entries of `(v, H)` are pairwise in the
    /// centers, so restricting to pivots is exact.
    fn build<E: Environment>(ctx: &Context<E>, policy: &RkhsSoftmaxPolicy, batch: &TrajectoryBatch<E::State>) -> Result<Self> {
        let cfg = ctx.cfg;
        let spec = policy.spec();
        match (&ctx.exact, cfg.solver.step_norm) {
            (Some(mdp), norm) => {
                let coeffs = oracle::expectation_coefficients(mdp, policy, ctx.horizon(), cfg.discount, cfg.estimator)?;
                if norm == StepNorm::Coefficient {
                    return Ok(Self::coefficient(coeffs));
                }
                let hess = coeffs.h_sym();
                let piv = pivoted_cholesky(spec, &coeffs.centers, cfg.solver.pivot_tol)?;
                let centers = piv.iter().map(|&i| coeffs.centers[i].clone()).collect();
                let v = DVector::from_iterator(piv.len(), piv.iter().map(|&i| coeffs.v[i]));
                let h = DMatrix::from_fn(piv.len(), piv.len(), |r, c| hess[(piv[r], piv[c])]);
                Self::rkhs(centers, v, h, spec)
            }
            (None, StepNorm::Coefficient) => Ok(Self::coefficient(newton_coefficients(batch, policy, cfg.estimator)?)),
            (None, StepNorm::Rkhs) => {
                let samples = SampleSet::from_batch(batch);
                let points = samples.points();
                let piv = pivoted_cholesky(spec, &points, cfg.solver.pivot_tol)?;
                let centers: Vec<StateActionPoint> = piv.iter().map(|&i| points[i].clone()).collect();
                let (v, h) = weighted_coefficients(&samples, &centers, policy, cfg.estimator)?;
                let hess = (&h + h.transpose()) * 0.5;
                Self::rkhs(centers, v, hess, spec)
            }
        }
    }

    fn is_degenerate(&self) -> bool {
        is_zero(self.v.iter()) && is_zero(self.hess.iter())
    }

    /// Solves the subproblem and returns the step with its norm.
    fn step(&self, policy: &RkhsSoftmaxPolicy, beta: f64, solver: &SolverConfig) -> Result<(SolverReport, KernelExpansion, f64)> {
        let report = ascent_step(&self.v, &self.hess, beta, solver)?;
        let alpha = match &self.whiten {
            Some(l) => l.transpose().solve_upper_triangular(&report.alpha).ok_or_else(singular)?,
            None => report.alpha.clone(),
        };
        let delta = KernelExpansion::from_points(*policy.spec(), policy.feature_dim(), &self.centers, alpha.as_slice())?;
        let norm = match self.whiten {
            Some(_) => report.alpha.norm(),
            None => delta.norm_sq().max(0.0).sqrt(),
        };
        Ok((report, delta, norm))
    }
}

fn gram_factor(g: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = g.diagonal().max().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let shifted = &g + DMatrix::identity(g.nrows(), g.ncols()) * jitter;
        if let Some(c) = shifted.cholesky() {
            return Ok(c.l());
        }
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
    }
    Err(singular())
}

fn singular() -> Error {
    Error::Validation("Gram matrix of the pivot centers is not positive definite".into())
}

fn idle_report(dim: usize) -> SolverReport {
    SolverReport {
        alpha: DVector::zeros(dim),
        objective: 0.0,
        grad_norm: 0.0,
        newton_iters: 0,
        cg_iters_total: 0,
        converged: true,
        negative_curvature_hits: 0,
    }
}

/// Cubic-regularized Newton steps on `h`, starting from `policy`.
pub fn run_rkhs_newton_from<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    policy: RkhsSoftmaxPolicy,
) -> Result<(RkhsSoftmaxPolicy, TrainingLog)> {
    rkhs_newton(env, cfg, policy, &mut ignore)
}

fn rkhs_newton<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    policy: RkhsSoftmaxPolicy,
    observer: &mut Observer,
) -> Result<(RkhsSoftmaxPolicy, TrainingLog)> {
    let ctx = Context::new(env, cfg, Method::RkhsNewton)?;
    let beta0 = cfg.solver.beta;
    let mut beta = beta0;
    ctx.drive(policy, observer, |policy, m| {
        let sampled = ctx.sample(policy, m)?;
        let model = StepModel::build(&ctx, policy, &sampled.batch)?;
        if model.is_degenerate() {
            return Ok((sampled, Step { norm: 0.0, newton_iters: 0, converged: true, size: policy.h.len() }));
        }
        let mut attempts = 0;
        let (report, next) = loop {
            let (report, delta, norm) = model.step(policy, beta, &cfg.solver)?;
            let next = ctx.tidy(policy.h.add_scaled(&delta, cfg.learning_rate)?);
            let Some(mdp) = ctx.exact.as_ref().filter(|_| cfg.solver.adaptive_beta) else {
                break (report, Some((norm, next)));
            };
            if ctx.exact_j(mdp, &policy.with_h(next.clone()))? >= sampled.objective {
                beta = (beta * 0.5).max(beta0);
                break (report, Some((norm, next)));
            }
            attempts += 1;
            if attempts > MAX_BETA_DOUBLINGS {
                break (report, None);
            }
            beta *= 2.0;
        };
        let norm = match next {
            Some((norm, h)) => {
                policy.h = h;
                norm
            }
            None => 0.0,
        };
        let step = Step { norm, newton_iters: report.newton_iters, converged: report.converged, size: policy.h.len() };
        Ok((sampled, step))
    })
}

/// Functional gradient ascent on `h`, starting from `policy`.
pub fn run_rkhs_pg_from<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    policy: RkhsSoftmaxPolicy,
) -> Result<(RkhsSoftmaxPolicy, TrainingLog)> {
    rkhs_pg(env, cfg, policy, &mut ignore)
}

fn rkhs_pg<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    policy: RkhsSoftmaxPolicy,
    observer: &mut Observer,
) -> Result<(RkhsSoftmaxPolicy, TrainingLog)> {
    let ctx = Context::new(env, cfg, Method::RkhsPg)?;
    ctx.drive(policy, observer, |policy, m| {
        let sampled = ctx.sample(policy, m)?;
        let grad = match &ctx.exact {
            Some(mdp) => oracle::expectation_gradient(mdp, policy, ctx.horizon(), cfg.discount)?,
            None => rkhs_gradient_expansion(&sampled.batch, policy)?,
        };
        if is_zero(grad.weights()) {
            return Ok((sampled, Step::gradient(0.0, policy.h.len())));
        }
        policy.h = ctx.tidy(policy.h.add_scaled(&grad, cfg.learning_rate)?);
        let norm = grad.norm_sq().max(0.0).sqrt();
        Ok((sampled, Step::gradient(norm, policy.h.len())))
    })
}

/// Gradient ascent on `theta`, starting from `policy`.
pub fn run_param_pg_from<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    policy: ParametricSoftmaxPolicy,
) -> Result<(ParametricSoftmaxPolicy, TrainingLog)> {
    param_pg(env, cfg, policy, &mut ignore)
}

fn param_pg<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    policy: ParametricSoftmaxPolicy,
    observer: &mut Observer,
) -> Result<(ParametricSoftmaxPolicy, TrainingLog)> {
    let ctx = Context::new(env, cfg, Method::ParamPg)?;
    ctx.drive(policy, observer, |policy, m| {
        let sampled = ctx.sample(policy, m)?;
        let grad = match &ctx.exact {
            Some(mdp) => oracle::expectation_parametric(mdp, policy, ctx.horizon(), cfg.discount)?.0,
            None => parametric_gradient(&sampled.batch, policy)?,
        };
        policy.theta += &grad * cfg.learning_rate;
        Ok((sampled, Step::gradient(grad.norm(), policy.n_params())))
    })
}

/// Cubic-regularized Newton steps on `theta`, starting from `policy`.
pub fn run_param_newton_from<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    policy: ParametricSoftmaxPolicy,
) -> Result<(ParametricSoftmaxPolicy, TrainingLog)> {
    param_newton(env, cfg, policy, &mut ignore)
}

fn param_newton<E: Environment>(
    env: &E,
    cfg: &OptimizerConfig,
    policy: ParametricSoftmaxPolicy,
    observer: &mut Observer,
) -> Result<(ParametricSoftmaxPolicy, TrainingLog)> {
    let ctx = Context::new(env, cfg, Method::ParamNewton)?;
    let beta0 = cfg.solver.beta;
    let mut beta = beta0;
    ctx.drive(policy, observer, |policy, m| {
        let sampled = ctx.sample(policy, m)?;
        let (grad, hess) = match &ctx.exact {
            Some(mdp) => oracle::expectation_parametric(mdp, policy, ctx.horizon(), cfg.discount)?,
            None => (parametric_gradient(&sampled.batch, policy)?, parametric_hessian(&sampled.batch, policy)?),
        };
        let g = DVector::from_iterator(grad.len(), grad.transpose().iter().copied());
        let theta = policy.flat_params();
        let mut attempts = 0;
        let report = if is_zero(g.iter()) && is_zero(hess.iter()) {
            idle_report(g.len())
        } else {
            loop {
                let report = ascent_step(&g, &hess, beta, &cfg.solver)?;
                let next = policy.from_flat(&(&theta + &report.alpha * cfg.learning_rate));
                let Some(mdp) = ctx.exact.as_ref().filter(|_| cfg.solver.adaptive_beta) else {
                    *policy = next;
                    break report;
                };
                if ctx.exact_j(mdp, &next)? >= sampled.objective {
                    beta = (beta * 0.5).max(beta0);
                    *policy = next;
                    break report;
                }
                attempts += 1;
                if attempts > MAX_BETA_DOUBLINGS {
                    break idle_report(g.len());
                }
                beta *= 2.0;
            }
        };
        let step = Step {
            norm: report.alpha.norm(),
            newton_iters: report.newton_iters,
            converged: report.converged,
            size: policy.n_params(),
        };
        Ok((sampled, step))
    })
}
