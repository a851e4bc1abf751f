//! Built-in numerical self-checks.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::cubic::{solve, CubicSubproblem, SolverConfig};
use crate::env::{sample_batch, AssetAllocationSpec, DiscountConvention, Environment, TabularMdp, TrajectoryBatch};
use crate::error::Result;
use crate::estimators::{assemble_h, estimate_b_c, estimate_sigma, newton_coefficients, EstimatorOptions};
use crate::kernel::{gram, KernelExpansion, KernelSpec, StateActionPoint};
use crate::optim::{run, Method, OptimizerConfig};
use crate::oracle;
use crate::policy::{Policy, RkhsSoftmaxPolicy};
use crate::rng::{substream, StreamRng};

/// Deliberate corruption for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    KernelSymmetry,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub error: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<4}  {:<28}  err {:>10.3e}  tol {:>8.1e}  {:>6.2}s  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.error,
                c.tolerance,
                c.seconds,
                c.detail
            )?;
        }
        Ok(())
    }
}

struct Outcome {
    error: f64,
    passed: bool,
    detail: String,
}

impl Outcome {
    fn within(error: f64, tolerance: f64) -> Self {
        Self { error, passed: error <= tolerance, detail: String::new() }
    }

    fn note(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

type CheckFn = fn(Option<Fault>) -> Result<Outcome>;

const CHECKS: [(&str, f64, CheckFn); 10] = [
    ("kernel_symmetry", 1e-12, kernel_symmetry),
    ("kernel_psd", 1e-9, kernel_psd),
    ("reproducing_property", 1e-12, reproducing_property),
    ("score_zero_mean", 1e-12, score_zero_mean),
    ("gradient_vs_finite_diff", 1e-6, gradient_vs_fd),
    ("hessian_vs_finite_diff", 1e-5, hessian_vs_fd),
    ("factored_hessian", 1e-10, factored_hessian),
    ("monte_carlo_vs_exact", 4.0, monte_carlo_vs_exact),
    ("cubic_solver_analytic", 1e-6, cubic_analytic),
    ("run_determinism", 0.0, determinism),
];

/// Runs every check; `fault` corrupts the matching one.
pub fn verify(fault: Option<Fault>) -> VerifyReport {
    let checks = CHECKS
        .iter()
        .map(|&(name, tolerance, check)| {
            let start = Instant::now();
            let (passed, error, detail) = match check(fault) {
                Ok(o) => (o.passed && o.error <= tolerance, o.error, o.detail),
                Err(e) => (false, f64::NAN, format!("error: {e}")),
            };
            CheckResult { name, passed, error, tolerance, detail, seconds: start.elapsed().as_secs_f64() }
        })
        .collect();
    VerifyReport { checks }
}

fn rng(index: u64) -> StreamRng {
    substream(0x5eed, 0, index)
}

fn asset() -> Result<TabularMdp> {
    AssetAllocationSpec::default().build()
}

fn random_points(r: &mut StreamRng, n: usize, dim: usize, n_actions: usize) -> Vec<StateActionPoint> {
    (0..n)
        .map(|_| {
            StateActionPoint::new((0..dim).map(|_| r.random_range(-1.0..1.0)).collect(), r.random_range(0..n_actions))
        })
        .collect()
}

/// Random policy on the asset MDP with 10 centers.
fn random_asset_policy(mdp: &TabularMdp, r: &mut StreamRng) -> Result<RkhsSoftmaxPolicy> {
    let mut h = KernelExpansion::empty(KernelSpec::TabularDelta, mdp.n_states());
    for _ in 0..10 {
        let s = r.random_range(0..mdp.n_states());
        h.push(&StateActionPoint::new(mdp.one_hot(s), r.random_range(0..3)), r.random_range(-1.0..1.0))?;
    }
    RkhsSoftmaxPolicy::with_function(h, 3, 1.0, "one_hot")
}

fn kernel_symmetry(fault: Option<Fault>) -> Result<Outcome> {
    let mut r = rng(1);
    let pts = random_points(&mut r, 12, 3, 2);
    let mut g = gram(&KernelSpec::rbf(0.7)?, &pts)?;
    if fault == Some(Fault::KernelSymmetry) {
        g[(0, 1)] += 1e-3;
    }
    Ok(Outcome::within((&g - g.transpose()).abs().max(), 1e-12))
}

fn kernel_psd(_: Option<Fault>) -> Result<Outcome> {
    let mut r = rng(2);
    let pts = random_points(&mut r, 20, 2, 2);
    let g = gram(&KernelSpec::rbf(0.5)?, &pts)?;
    let min = g.symmetric_eigenvalues().min();
    Ok(Outcome::within((-min).max(0.0), 1e-9).note(format!("min eigenvalue {min:.3e}")))
}

fn reproducing_property(_: Option<Fault>) -> Result<Outcome> {
    let mut r = rng(3);
    let spec = KernelSpec::rbf(0.8)?;
    let pts = random_points(&mut r, 8, 3, 2);
    let weights: Vec<f64> = (0..8).map(|_| r.random_range(-1.0..1.0)).collect();
    let h = KernelExpansion::from_points(spec, 3, &pts, &weights)?;
    let mut worst: f64 = 0.0;
    for x in random_points(&mut r, 10, 3, 2) {
        let section = KernelExpansion::from_points(spec, 3, std::slice::from_ref(&x), &[1.0])?;
        worst = worst.max((h.eval(&x)? - h.inner(&section)?).abs());
    }
    Ok(Outcome::within(worst, 1e-12))
}

fn score_zero_mean(_: Option<Fault>) -> Result<Outcome> {
    let mut r = rng(4);
    let spec = KernelSpec::rbf(0.6)?;
    let pts = random_points(&mut r, 6, 2, 3);
    let weights: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
    let policy = RkhsSoftmaxPolicy::with_function(KernelExpansion::from_points(spec, 2, &pts, &weights)?, 3, 1.5, "raw")?;
    let mut worst: f64 = 0.0;
    for probe in random_points(&mut r, 5, 2, 3) {
        let probs = policy.action_probs(&probe.features);
        let mut mean = KernelExpansion::empty(spec, 2);
        for (a, p) in probs.iter().enumerate() {
            mean = mean.add_scaled(&policy.score_function(&probe.features, a)?, *p)?;
        }
        for x in random_points(&mut r, 5, 2, 3) {
            worst = worst.max(mean.eval(&x)?.abs());
        }
    }
    Ok(Outcome::within(worst, 1e-12))
}

fn gradient_vs_fd(_: Option<Fault>) -> Result<Outcome> {
    let mdp = asset()?;
    let conv = DiscountConvention::PaperLiteral;
    let mut r = rng(5);
    let policy = random_asset_policy(&mdp, &mut r)?;
    let horizon = mdp.horizon();
    let coeffs = oracle::expectation_coefficients(&mdp, &policy, horizon, conv, EstimatorOptions::default())?;
    let mut worst: f64 = 0.0;
    for (i, c) in coeffs.centers.iter().enumerate() {
        let dir = KernelExpansion::from_points(*policy.spec(), mdp.n_states(), std::slice::from_ref(c), &[1.0])?;
        let fd = oracle::fd_directional(&mdp, &policy, &dir, 1, 1e-5, horizon, conv)?;
        worst = worst.max((fd - coeffs.v[i]).abs());
    }
    Ok(Outcome::within(worst, 1e-6).note(format!("{} centers", coeffs.dim())))
}

fn hessian_vs_fd(_: Option<Fault>) -> Result<Outcome> {
    let mdp = asset()?;
    let conv = DiscountConvention::PaperLiteral;
    let mut r = rng(6);
    let policy = random_asset_policy(&mdp, &mut r)?;
    let horizon = mdp.horizon();
    let coeffs = oracle::expectation_coefficients(&mdp, &policy, horizon, conv, EstimatorOptions::default())?;
    let h = coeffs.h_sym();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let alpha = DVector::from_fn(coeffs.dim(), |_, _| r.random_range(-1.0..1.0));
        let dir = coeffs.direction(&policy, &alpha)?;
        let fd = oracle::fd_directional(&mdp, &policy, &dir, 2, 1e-3, horizon, conv)?;
        let q = alpha.dot(&(&h * &alpha));
        let err = if fd.abs() < 1e-6 { (q - fd).abs() } else { (q - fd).abs() / fd.abs() };
        worst = worst.max(err);
    }
    Ok(Outcome::within(worst, 1e-5).note("relative error"))
}

fn factored_hessian(_: Option<Fault>) -> Result<Outcome> {
    let mdp = asset()?;
    let mut r = rng(7);
    let policy = random_asset_policy(&mdp, &mut r)?;
    let trajs = sample_batch(&mdp, &policy, 1, 7, 0)?;
    let batch = TrajectoryBatch::new(trajs, 0.9, DiscountConvention::Standard)?;
    let coeffs = newton_coefficients(&batch, &policy, EstimatorOptions::default())?;
    let (b, c) = estimate_b_c(&batch, &policy)?;
    let sigmas = (0..batch.total_steps()).map(|l| estimate_sigma(&batch, &policy, l)).collect::<Result<Vec<_>>>()?;
    let direct = assemble_h(&b, &c, &sigmas, &batch.psi_flat(), policy.temperature(), 1)?;
    Ok(Outcome::within((&coeffs.h - direct).abs().max(), 1e-10))
}

fn monte_carlo_vs_exact(_: Option<Fault>) -> Result<Outcome> {
    let mdp = asset()?;
    let mut r = rng(8);
    let policy = random_asset_policy(&mdp, &mut r)?;
    let exact = oracle::exact_J(&mdp, &policy, mdp.horizon(), DiscountConvention::Standard)?;
    let batch = TrajectoryBatch::new(sample_batch(&mdp, &policy, 4000, 8, 0)?, mdp.gamma(), DiscountConvention::Standard)?;
    let returns: Vec<f64> = batch
        .trajectories
        .iter()
        .map(|t| t.discounted_return(mdp.gamma(), DiscountConvention::Standard))
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let z = (mean - exact).abs() / (var / n).sqrt();
    Ok(Outcome::within(z, 4.0).note("standard errors"))
}

fn cubic_analytic(_: Option<Fault>) -> Result<Outcome> {
    let cfg = SolverConfig { grad_tol: 1e-10, ..Default::default() };
    let one = CubicSubproblem::new(DVector::from_element(1, 1.0), DMatrix::zeros(1, 1), 6.0)?;
    let e1 = (solve(&one, &cfg, None)?.alpha[0] + 1.0 / 3f64.sqrt()).abs();
    let two = CubicSubproblem::new(DVector::from_vec(vec![-1.0, 0.0]), DMatrix::identity(2, 2), 2.0)?;
    let a = solve(&two, &cfg, None)?.alpha;
    let e2 = (&a - DVector::from_vec(vec![(5f64.sqrt() - 1.0) / 2.0, 0.0])).abs().max();
    Ok(Outcome::within(e1.max(e2), 1e-6))
}

fn determinism(_: Option<Fault>) -> Result<Outcome> {
    let mdp = asset()?;
    let cfg = OptimizerConfig { iterations: 3, batch_size: 10, seed: 3, ..OptimizerConfig::new(Method::RkhsNewton) };
    let (p1, l1) = run(&mdp, &cfg)?;
    let (p2, l2) = run(&mdp, &cfg)?;
    let same_logs = l1.records.iter().zip(&l2.records).all(|(a, b)| {
        (a.iter, a.mean_return, a.disc_objective, a.step_norm, a.expansion_size)
            == (b.iter, b.mean_return, b.disc_objective, b.step_norm, b.expansion_size)
    });
    let ok = p1 == p2 && same_logs;
    Ok(Outcome { error: if ok { 0.0 } else { 1.0 }, passed: ok, detail: "repeated run".into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let report = verify(None);
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn injected_asymmetry_is_reported() {
        let report = verify(Some(Fault::KernelSymmetry));
        assert_eq!(report.failures(), vec!["kernel_symmetry"]);
    }
}
