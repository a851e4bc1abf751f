//! Cubic-regularized quadratic model minimization by Newton-CG.
//!
//! Minimizes `f(a) = <v, a> + 1/2 <H a, a> + beta/6 |a|^3`. Each outer step
//! solves a Newton system for `d` with truncated conjugate gradients and
//! backtracks along `d`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;
const MAX_RESTARTS: usize = 3;
const POLISH: f64 = 1e-4;
const GLOBAL_SLACK: f64 = 1e-6;
const DENSE_EIGEN_MAX: usize = 64;
const LANCZOS_STEPS: usize = 80;

#[derive(Clone, Debug, PartialEq)]
pub struct CubicSubproblem {
    v: DVector<f64>,
    h: DMatrix<f64>,
    beta: f64,
}

impl CubicSubproblem {
    /// `h` must already be symmetric.
    pub fn new(v: DVector<f64>, h: DMatrix<f64>, beta: f64) -> Result<Self> {
        check_dim(v.len(), h.nrows())?;
        check_dim(v.len(), h.ncols())?;
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidInput(format!("beta must be non-negative and finite, got {beta}")));
        }
        if v.iter().chain(h.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in cubic subproblem".into()));
        }
        let asym = (&h - h.transpose()).abs().max();
        let scale = h.abs().max().max(1.0);
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!("H is not symmetric (max asymmetry {asym:e})")));
        }
        Ok(Self { v, h, beta })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Matrix of the outer linear system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewtonSystem {
    /// `H + beta/2 |a| I + beta/2 a a^T / |a|`, the Hessian of `f`.
    #[default]
    Full,
    /// `H + beta/2 |a| I`. Converges only linearly near the solution.
    Regularized,
}

/// Norm inside the cubic term of kernel-space subproblems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepNorm {
    /// Euclidean norm of the coefficient vector.
    #[default]
    Coefficient,
    /// RKHS norm of the step. The step is restricted to a subset of the
    /// centers whose kernel sections span the rest to within `pivot_tol`.
    Rkhs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub grad_tol: f64,
    /// Outer Newton iterations.
    pub max_newton_iters: usize,
    /// Relative residual target for the inner solve.
    pub cg_tol: f64,
    /// Defaults to ten times the problem dimension.
    pub cg_max_iters: Option<usize>,
    pub ls_backtrack: f64,
    pub system: NewtonSystem,
    /// Cubic weight used when optimizers build subproblems.
    pub beta: f64,
    /// Double `beta` on a rejected step and halve it, down to its initial
    /// value, on an accepted one. Needs exact objective values.
    pub adaptive_beta: bool,
    pub step_norm: StepNorm,
    /// Residual tolerance of the center selection under [`StepNorm::Rkhs`].
    pub pivot_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-3,
            max_newton_iters: 500,
            cg_tol: 1e-8,
            cg_max_iters: None,
            ls_backtrack: 0.5,
            system: NewtonSystem::Full,
            beta: 1.0,
            adaptive_beta: false,
            step_norm: StepNorm::Coefficient,
            pivot_tol: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0 && self.cg_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.max_newton_iters == 0 || self.cg_max_iters == Some(0) {
            return Err(Error::Config("solver iteration limits must be positive".into()));
        }
        if !(self.ls_backtrack > 0.0 && self.ls_backtrack < 1.0) {
            return Err(Error::Config(format!("ls_backtrack must lie in (0, 1), got {}", self.ls_backtrack)));
        }
        if !(self.pivot_tol.is_finite() && self.pivot_tol > 0.0) {
            return Err(Error::Config(format!("pivot_tol must be positive, got {}", self.pivot_tol)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive and finite, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverReport {
    pub alpha: DVector<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub newton_iters: usize,
    pub cg_iters_total: usize,
    pub converged: bool,
    pub negative_curvature_hits: usize,
}

pub fn cubic_objective(p: &CubicSubproblem, alpha: &DVector<f64>) -> Result<f64> {
    check_dim(p.dim(), alpha.len())?;
    let ha = &p.h * alpha;
    Ok(objective_with(p, alpha, &ha))
}

fn objective_with(p: &CubicSubproblem, alpha: &DVector<f64>, ha: &DVector<f64>) -> f64 {
    let n = alpha.norm();
    p.v.dot(alpha) + 0.5 * ha.dot(alpha) + p.beta / 6.0 * n * n * n
}

/// `v + H a + beta/2 |a| a`.
pub fn cubic_gradient(p: &CubicSubproblem, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(p.dim(), alpha.len())?;
    let ha = &p.h * alpha;
    Ok(gradient_with(p, alpha, &ha))
}

fn gradient_with(p: &CubicSubproblem, alpha: &DVector<f64>, ha: &DVector<f64>) -> DVector<f64> {
    &p.v + ha + alpha * (0.5 * p.beta * alpha.norm())
}

struct CgOutcome {
    x: DVector<f64>,
    iters: usize,
    negative_curvature: bool,
}

/// `A = H + shift I + rank1_scale u u^T`.
struct NewtonOperator<'a> {
    h: &'a DMatrix<f64>,
    shift: f64,
    u: &'a DVector<f64>,
    rank1_scale: f64,
}

impl NewtonOperator<'_> {
    fn apply(&self, p: &DVector<f64>, out: &mut DVector<f64>) {
        out.gemv(1.0, self.h, p, 0.0);
        out.axpy(self.shift, p, 1.0);
        if self.rank1_scale != 0.0 {
            out.axpy(self.rank1_scale * self.u.dot(p), self.u, 1.0);
        }
    }
}

/// Truncated CG on `A x = b`. Stops at the first direction of non-positive
/// curvature, returning `b` itself if that happens immediately.
fn truncated_cg(op: &NewtonOperator, b: &DVector<f64>, tol: f64, max_iters: usize) -> CgOutcome {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let target = tol * rs.sqrt();
    let mut ap = DVector::zeros(b.len());
    for k in 0..max_iters {
        if rs.sqrt() <= target {
            return CgOutcome { x, iters: k, negative_curvature: false };
        }
        op.apply(&p, &mut ap);
        let curv = p.dot(&ap);
        if curv <= 0.0 {
            if k == 0 {
                x.copy_from(b);
            }
            return CgOutcome { x, iters: k + 1, negative_curvature: true };
        }
        let step = rs / curv;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rs_next = r.dot(&r);
        p *= rs_next / rs;
        p += &r;
        rs = rs_next;
    }
    CgOutcome { x, iters: max_iters, negative_curvature: false }
}

/// Newton-CG from `alpha0` (zero when `None`).
///
/// A converged point is a global minimizer iff `H + beta/2 |a| I` is positive
/// semidefinite. When the leftmost eigenvalue of `H` says otherwise, Newton
/// restarts along its eigenvector at the radius every global minimizer
/// exceeds, and the better point is kept.
pub fn solve(p: &CubicSubproblem, cfg: &SolverConfig, alpha0: Option<&DVector<f64>>) -> Result<SolverReport> {
    cfg.validate()?;
    let dim = p.dim();
    let start = match alpha0 {
        Some(a) => {
            check_dim(dim, a.len())?;
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("non-finite starting point".into()));
            }
            a.clone()
        }
        None => DVector::zeros(dim),
    };
    let mut best = newton(p, cfg, start);
    if dim == 0 {
        return Ok(best);
    }
    let (lambda, u) = leftmost_eigenpair(&p.h);
    let mut radius = -2.0 * lambda / p.beta;
    for _ in 0..MAX_RESTARTS {
        if lambda + 0.5 * p.beta * best.alpha.norm() >= -GLOBAL_SLACK * lambda.abs().max(1.0) {
            break;
        }
        let sign = if p.v.dot(&u) > 0.0 { -1.0 } else { 1.0 };
        let start = &u * (sign * radius.max(best.alpha.norm()) * 1.01);
        let mut next = newton(p, cfg, start);
        next.newton_iters += best.newton_iters;
        next.cg_iters_total += best.cg_iters_total;
        next.negative_curvature_hits += best.negative_curvature_hits;
        if next.objective < best.objective {
            best = next;
        } else {
            radius *= 2.0;
            best.newton_iters = next.newton_iters;
            best.cg_iters_total = next.cg_iters_total;
            best.negative_curvature_hits = next.negative_curvature_hits;
        }
    }
    Ok(best)
}

/// Smallest eigenvalue of the symmetric `h` with a unit eigenvector. Exact
/// for small matrices, a Lanczos estimate otherwise.
fn leftmost_eigenpair(h: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = h.nrows();
    if n <= DENSE_EIGEN_MAX {
        let eig = h.clone().symmetric_eigen();
        let k = eig.eigenvalues.imin();
        return (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned());
    }
    let m = LANCZOS_STEPS.min(n);
    let mut q = DMatrix::zeros(n, m);
    let mut start = DVector::from_fn(n, |i, _| 1.0 + ((i as f64) * 0.618_033_988_75).fract());
    start /= start.norm();
    q.set_column(0, &start);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut steps = m;
    for j in 0..m {
        let mut w = h * q.column(j);
        alpha.push(w.dot(&q.column(j)));
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for i in 0..=j {
                let c = w.dot(&q.column(i));
                w.axpy(-c, &q.column(i), 1.0);
            }
        }
        if j + 1 == m {
            break;
        }
        let b = w.norm();
        if b < 1e-12 * (alpha[j].abs() + 1.0) {
            steps = j + 1;
            break;
        }
        beta.push(b);
        q.set_column(j + 1, &(w / b));
    }
    let t = DMatrix::from_fn(steps, steps, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let eig = t.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let u = q.columns(0, steps) * eig.eigenvectors.column(k);
    let norm = u.norm();
    (eig.eigenvalues[k], u / norm)
}

fn newton(p: &CubicSubproblem, cfg: &SolverConfig, mut alpha: DVector<f64>) -> SolverReport {
    let dim = p.dim();
    let cg_max = cfg.cg_max_iters.unwrap_or(10 * dim).max(1);
    let mut ha = &p.h * &alpha;
    let mut f = objective_with(p, &alpha, &ha);
    let mut report = SolverReport {
        alpha: alpha.clone(),
        objective: f,
        grad_norm: 0.0,
        newton_iters: 0,
        cg_iters_total: 0,
        converged: false,
        negative_curvature_hits: 0,
    };
    let mut trial = DVector::zeros(dim);
    let mut h_trial = DVector::zeros(dim);
    loop {
        let g = gradient_with(p, &alpha, &ha);
        let gn = g.norm();
        report.grad_norm = gn;
        report.converged = gn <= cfg.grad_tol;
        // refine well below grad_tol
        if gn <= cfg.grad_tol * POLISH || report.newton_iters >= cfg.max_newton_iters {
            break;
        }
        report.newton_iters += 1;
        let norm = alpha.norm();
        let rank1_scale = match cfg.system {
            NewtonSystem::Full if norm > 0.0 => 0.5 * p.beta / norm,
            _ => 0.0,
        };
        let op = NewtonOperator { h: &p.h, shift: 0.5 * p.beta * norm, u: &alpha, rank1_scale };
        let cg = truncated_cg(&op, &(-&g), cfg.cg_tol, cg_max);
        report.cg_iters_total += cg.iters;
        if cg.negative_curvature {
            report.negative_curvature_hits += 1;
        }
        let mut d = cg.x;
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -&g;
            slope = -gn * gn;
        }
        let hd = &p.h * &d;
        let mut t = 1.0;
        let accepted = loop {
            trial.copy_from(&alpha);
            trial.axpy(t, &d, 1.0);
            h_trial.copy_from(&ha);
            h_trial.axpy(t, &hd, 1.0);
            let ft = objective_with(p, &trial, &h_trial);
            if ft <= f + ARMIJO_C * t * slope {
                break Some(ft);
            }
            t *= cfg.ls_backtrack;
            if t < MIN_STEP {
                break None;
            }
        };
        match accepted {
            Some(ft) => {
                std::mem::swap(&mut alpha, &mut trial);
                // recompute rather than accumulate to keep H alpha exact
                ha.gemv(1.0, &p.h, &alpha, 0.0);
                f = ft.min(objective_with(p, &alpha, &ha));
            }
            None => break,
        }
    }
    report.objective = objective_with(p, &alpha, &ha);
    report.alpha = alpha;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn sub(v: &[f64], h: &[f64], beta: f64) -> CubicSubproblem {
        let n = v.len();
        CubicSubproblem::new(DVector::from_column_slice(v), DMatrix::from_row_slice(n, n, h), beta).unwrap()
    }

    fn random_sub(rng: &mut StreamRng, n: usize) -> CubicSubproblem {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = (&a + a.transpose()) * 0.5;
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        CubicSubproblem::new(v, h, rng.random_range(0.5..4.0)).unwrap()
    }

    #[test]
    fn objective_examples() {
        let p = sub(&[1.0], &[0.0], 6.0);
        assert_eq!(cubic_objective(&p, &DVector::zeros(1)).unwrap(), 0.0);
        assert_relative_eq!(cubic_objective(&p, &DVector::from_element(1, 1.0)).unwrap(), 2.0);
        let q = sub(&[0.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 0.0);
        assert_relative_eq!(cubic_objective(&q, &DVector::from_vec(vec![3.0, 4.0])).unwrap(), 12.5);
        assert!(cubic_objective(&q, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn gradient_examples() {
        let p = sub(&[1.0], &[0.0], 6.0);
        assert_eq!(cubic_gradient(&p, &DVector::zeros(1)).unwrap()[0], 1.0);
        let stat = DVector::from_element(1, -1.0 / 3f64.sqrt());
        assert!(cubic_gradient(&p, &stat).unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = StreamRng::seed_from_u64(1);
        for n in 1..6 {
            let p = random_sub(&mut rng, n);
            let a = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let g = cubic_gradient(&p, &a).unwrap();
            let eps = 1e-6;
            for i in 0..n {
                let mut up = a.clone();
                up[i] += eps;
                let mut dn = a.clone();
                dn[i] -= eps;
                let fd = (cubic_objective(&p, &up).unwrap() - cubic_objective(&p, &dn).unwrap()) / (2.0 * eps);
                assert!((fd - g[i]).abs() <= 1e-7 * g[i].abs().max(1.0), "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn analytic_solutions() {
        let cfg = SolverConfig { grad_tol: 1e-10, ..Default::default() };
        let r = solve(&sub(&[1.0], &[0.0], 6.0), &cfg, None).unwrap();
        assert!(r.converged);
        assert!((r.alpha[0] + 1.0 / 3f64.sqrt()).abs() < 1e-6);

        let r = solve(&sub(&[-1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2.0), &cfg, None).unwrap();
        assert!(r.converged);
        assert!((r.alpha[0] - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-6);
        assert!(r.alpha[1].abs() < 1e-6);

        let paper = SolverConfig { system: NewtonSystem::Regularized, grad_tol: 1e-6, ..Default::default() };
        let r = solve(&sub(&[-1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2.0), &paper, None).unwrap();
        assert!(r.converged);
        assert!((r.alpha[0] - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-5);

        let r = solve(&sub(&[0.0, 0.0], &[2.0, 0.5, 0.5, 1.0], 1.0), &SolverConfig::default(), None).unwrap();
        assert!(r.converged);
        assert_eq!(r.newton_iters, 0);
        assert_eq!(r.alpha, DVector::zeros(2));
    }

    #[test]
    fn rejects_bad_inputs() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(CubicSubproblem::new(DVector::zeros(2), h, 1.0).is_err());
        assert!(CubicSubproblem::new(DVector::from_element(1, f64::NAN), DMatrix::zeros(1, 1), 1.0).is_err());
        assert!(CubicSubproblem::new(DVector::zeros(1), DMatrix::zeros(1, 1), -1.0).is_err());
        let p = sub(&[1.0], &[0.0], 1.0);
        let bad = SolverConfig { ls_backtrack: 1.0, ..Default::default() };
        assert!(solve(&p, &bad, None).is_err());
    }

    #[test]
    fn indefinite_curvature_is_truncated() {
        let p = sub(&[0.1, 0.0], &[-1.0, 0.0, 0.0, 2.0], 1.0);
        let r = solve(&p, &SolverConfig::default(), None).unwrap();
        assert!(r.converged);
        assert!(r.negative_curvature_hits > 0);
        assert!(r.objective < 0.0);
    }

    #[test]
    fn lanczos_finds_the_leftmost_eigenvalue() {
        let mut rng = StreamRng::seed_from_u64(12);
        let n = 150;
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = (&m + m.transpose()) * 0.5;
        let (lambda, u) = leftmost_eigenpair(&h);
        let exact = h.clone().symmetric_eigen().eigenvalues.min();
        assert_relative_eq!(lambda, exact, max_relative = 1e-6);
        assert!((&h * &u - &u * lambda).norm() < 1e-3);
    }

    #[test]
    fn escapes_a_local_minimizer() {
        // from zero, plain Newton stops at a local minimizer of this instance
        let p = sub(&[0.758, -1.336], &[-0.773, -0.913, -0.913, 0.313], 3.78);
        let r = solve(&p, &SolverConfig::default(), None).unwrap();
        let eig = p.h().clone().symmetric_eigen().eigenvalues.min();
        assert!(eig + 0.5 * p.beta() * r.alpha.norm() >= -1e-6);
        assert!(r.converged);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn descent_and_scale_invariance(seed in any::<u64>(), n in 1usize..8, c in 0.1f64..10.0) {
            let mut rng = StreamRng::seed_from_u64(seed);
            let p = random_sub(&mut rng, n);
            let a0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let cfg = SolverConfig::default();
            let r = solve(&p, &cfg, Some(&a0)).unwrap();
            prop_assert!(r.objective <= cubic_objective(&p, &a0).unwrap() + 1e-12);
            prop_assert!(r.converged);
            prop_assert!(r.grad_norm <= cfg.grad_tol);
            let scaled = CubicSubproblem::new(p.v() * c, p.h() * c, p.beta() * c).unwrap();
            let g = cubic_gradient(&scaled, &r.alpha).unwrap();
            prop_assert!(g.norm() <= c * cfg.grad_tol * (1.0 + 1e-9));
        }
    }
}
