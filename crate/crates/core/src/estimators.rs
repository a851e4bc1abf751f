//! Gradient and second-order model coefficients from weighted trajectories.
//!
//! Every estimator works on a [`SampleSet`]: flat steps grouped into
//! trajectories, each trajectory carrying a weight. A Monte-Carlo batch of `N`
//! episodes uses weight `1/N`; exact enumeration uses the trajectory
//! probabilities.
//!
//! With state Gram `G[i][l] = k(s_i, s_l)` and `P_l = pi(.|s_l)`, the centred
//! kernel response of center `i` to sample `l` is
//! `S[i][l] = G[i][l] ([a_i = a_l] - P_l(a_i))`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::TrajectoryBatch;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{KernelExpansion, StateActionPoint};
use crate::linalg::{mul_abt, symmetrize};
use crate::policy::{ParametricSoftmaxPolicy, Policy, RkhsSoftmaxPolicy};

/// How the rank-one score product enters `H`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `sum_tau w_tau b^tau (c^tau)^T`, one product per trajectory.
    #[default]
    PerTrajectory,
    /// `(T^2/N) b c^T` with `b` and `c` summed over the whole batch.
    Pooled,
}

/// Power of the temperature multiplying the covariance term of `H`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceScaling {
    /// `T * sum_l Psi_l Sigma^(l)`.
    #[default]
    Linear,
    /// `T^2 * sum_l Psi_l Sigma^(l)`, the exact second derivative of `log pi` for any `T`.
    Quadratic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub coupling: Coupling,
    pub covariance_scaling: CovarianceScaling,
}

/// Flat steps grouped into weighted trajectories.
#[derive(Clone, Debug)]
pub struct SampleSet<'a> {
    features: Vec<&'a [f64]>,
    actions: Vec<usize>,
    psi: Vec<f64>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
}

impl<'a> SampleSet<'a> {
    /// `offsets` has one entry per group plus the final length; group `g`
    /// owns steps `offsets[g]..offsets[g+1]`.
    pub fn new(
        features: Vec<&'a [f64]>,
        actions: Vec<usize>,
        psi: Vec<f64>,
        offsets: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty sample set".into()));
        }
        check_dim(n, actions.len())?;
        check_dim(n, psi.len())?;
        if offsets.first() != Some(&0) || offsets.last() != Some(&n) || offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("group offsets must increase strictly from 0 to the sample count".into()));
        }
        check_dim(offsets.len() - 1, weights.len())?;
        if psi.iter().chain(&weights).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite return or weight".into()));
        }
        Ok(Self { features, actions, psi, offsets, weights })
    }

    /// Episodes of a batch, each weighted `1/N`.
    pub fn from_batch<S>(batch: &'a TrajectoryBatch<S>) -> Self {
        let n = batch.n_trajectories();
        Self {
            features: batch.flat_features(),
            actions: batch.flat_actions(),
            psi: batch.psi_flat(),
            offsets: (0..=n).map(|i| if i == n { batch.total_steps() } else { batch.span(i).start }).collect(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.weights.len()
    }

    pub fn group(&self, g: usize) -> Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn weight(&self, g: usize) -> f64 {
        self.weights[g]
    }

    pub fn features(&self) -> &[&'a [f64]] {
        &self.features
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn points(&self) -> Vec<StateActionPoint> {
        self.features
            .iter()
            .zip(&self.actions)
            .map(|(f, &a)| StateActionPoint::new(f.to_vec(), a))
            .collect()
    }

    /// `w_g(l) * Psi_l` per step.
    fn step_weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for g in 0..self.n_groups() {
            out.extend(self.group(g).map(|l| self.weights[g] * self.psi[l]));
        }
        out
    }
}

/// Coefficients of the second-order model over `h_bar = sum_i alpha_i K(x_i, .)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonCoefficients {
    pub v: DVector<f64>,
    /// Raw, generally nonsymmetric.
    pub h: DMatrix<f64>,
    pub centers: Vec<StateActionPoint>,
    pub temperature: f64,
    pub n_trajectories: usize,
    pub gamma: f64,
}

impl NewtonCoefficients {
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `(H + H^T) / 2`.
    pub fn h_sym(&self) -> DMatrix<f64> {
        symmetrize(&self.h)
    }

    /// `sum_i alpha_i K(x_i, .)` in the space of `policy`.
    pub fn direction(&self, policy: &RkhsSoftmaxPolicy, alpha: &DVector<f64>) -> Result<KernelExpansion> {
        check_dim(self.dim(), alpha.len())?;
        KernelExpansion::from_points(*policy.spec(), policy.feature_dim(), &self.centers, alpha.as_slice())
    }
}

fn check_rkhs_inputs(policy: &RkhsSoftmaxPolicy, samples: &SampleSet, centers: &[StateActionPoint]) -> Result<()> {
    let dim = policy.feature_dim();
    for f in samples.features() {
        check_dim(dim, f.len())?;
    }
    for c in centers {
        check_dim(dim, c.dim())?;
    }
    let n_actions = policy.n_actions();
    if let Some(a) = samples.actions().iter().chain(centers.iter().map(|c| &c.action)).find(|&&a| a >= n_actions) {
        return Err(Error::InvalidInput(format!("action {a} out of range for {n_actions} actions")));
    }
    Ok(())
}

fn sample_probs<P: Policy + Sync>(policy: &P, features: &[&[f64]]) -> Vec<Vec<f64>> {
    features.par_iter().map(|f| policy.action_probs(f)).collect()
}

/// `G[i][l] = k(s_i, s_l)` and `U[i][l] = G[i][l] P_l(a_i)`, centers by samples.
struct Blocks {
    g: DMatrix<f64>,
    u: DMatrix<f64>,
}

fn blocks(policy: &RkhsSoftmaxPolicy, centers: &[StateActionPoint], samples: &SampleSet, probs: &[Vec<f64>]) -> Blocks {
    let d = centers.len();
    let spec = policy.spec();
    let mut g = vec![0.0; d * samples.len()];
    let mut u = vec![0.0; d * samples.len()];
    g.par_chunks_mut(d.max(1))
        .zip(u.par_chunks_mut(d.max(1)))
        .enumerate()
        .for_each(|(l, (gc, uc))| {
            let f = samples.features[l];
            let p = &probs[l];
            for (i, c) in centers.iter().enumerate() {
                let k = spec.state_kernel(&c.features, f);
                gc[i] = k;
                uc[i] = k * p[c.action];
            }
        });
    Blocks { g: DMatrix::from_vec(d, samples.len(), g), u: DMatrix::from_vec(d, samples.len(), u) }
}

/// Per-group score sums `B[:, g] = sum_{l in g} Psi_l S[:, l]` and `C[:, g] = sum_{l in g} S[:, l]`.
fn group_scores(blocks: &Blocks, centers: &[StateActionPoint], samples: &SampleSet) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = centers.len();
    let ng = samples.n_groups();
    let mut b = vec![0.0; d * ng];
    let mut c = vec![0.0; d * ng];
    b.par_chunks_mut(d.max(1))
        .zip(c.par_chunks_mut(d.max(1)))
        .enumerate()
        .for_each(|(grp, (bc, cc))| {
            for l in samples.group(grp) {
                let (gcol, ucol) = (blocks.g.column(l), blocks.u.column(l));
                let (al, psi) = (samples.actions[l], samples.psi[l]);
                for i in 0..d {
                    let hit = if centers[i].action == al { gcol[i] } else { 0.0 };
                    let s = hit - ucol[i];
                    bc[i] += psi * s;
                    cc[i] += s;
                }
            }
        });
    (DMatrix::from_vec(d, ng, b), DMatrix::from_vec(d, ng, c))
}

/// `sum_l omega_l Sigma^(l)` with `omega_l = w_g(l) Psi_l`.
fn covariance_sum(blocks: &Blocks, centers: &[StateActionPoint], samples: &SampleSet) -> DMatrix<f64> {
    let d = centers.len();
    let omega = samples.step_weights();
    let mut uw = blocks.u.clone();
    uw.column_iter_mut().zip(&omega).for_each(|(mut col, w)| col *= *w);
    let m1 = mul_abt(&uw, &blocks.g);
    let m2 = mul_abt(&uw, &blocks.u);
    let q = DMatrix::from_fn(d, d, |i, j| {
        let diag = if centers[i].action == centers[j].action { m1[(i, j)] } else { 0.0 };
        diag - m2[(i, j)]
    });
    symmetrize(&q)
}

fn weighted_sum_columns(m: &DMatrix<f64>, weights: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for (col, w) in m.column_iter().zip(weights) {
        out.axpy(*w, &col, 1.0);
    }
    out
}

/// `v` at arbitrary centers: `v_i = T sum_g w_g sum_{l in g} Psi_l S[i][l]`.
pub fn weighted_v(samples: &SampleSet, centers: &[StateActionPoint], policy: &RkhsSoftmaxPolicy) -> Result<DVector<f64>> {
    check_rkhs_inputs(policy, samples, centers)?;
    let probs = sample_probs(policy, samples.features());
    let bl = blocks(policy, centers, samples, &probs);
    let (b, _) = group_scores(&bl, centers, samples);
    Ok(weighted_sum_columns(&b, &samples.weights) * policy.temperature())
}

/// `(v, H)` at the given centers.
pub fn weighted_coefficients(
    samples: &SampleSet,
    centers: &[StateActionPoint],
    policy: &RkhsSoftmaxPolicy,
    options: EstimatorOptions,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_rkhs_inputs(policy, samples, centers)?;
    let t = policy.temperature();
    let probs = sample_probs(policy, samples.features());
    let bl = blocks(policy, centers, samples, &probs);
    let (b, c) = group_scores(&bl, centers, samples);
    let v = weighted_sum_columns(&b, &samples.weights) * t;
    let outer = match options.coupling {
        Coupling::PerTrajectory => {
            let mut bw = b.clone();
            bw.column_iter_mut().zip(&samples.weights).for_each(|(mut col, w)| col *= *w);
            mul_abt(&bw, &c)
        }
        Coupling::Pooled => {
            let bsum = weighted_sum_columns(&b, &samples.weights);
            let csum = c.column_sum();
            &bsum * csum.transpose()
        }
    };
    let q = covariance_sum(&bl, centers, samples);
    let cov_scale = match options.covariance_scaling {
        CovarianceScaling::Linear => t,
        CovarianceScaling::Quadratic => t * t,
    };
    let h = outer * (t * t) - q * cov_scale;
    Ok((v, h))
}

/// Monte-Carlo `(v, H)` with the batch's own steps as centers.
pub fn newton_coefficients<S>(
    batch: &TrajectoryBatch<S>,
    policy: &RkhsSoftmaxPolicy,
    options: EstimatorOptions,
) -> Result<NewtonCoefficients> {
    let samples = SampleSet::from_batch(batch);
    let centers = samples.points();
    let (v, h) = weighted_coefficients(&samples, &centers, policy, options)?;
    Ok(NewtonCoefficients {
        v,
        h,
        centers,
        temperature: policy.temperature(),
        n_trajectories: batch.n_trajectories(),
        gamma: batch.gamma,
    })
}

/// `v_i = (T/N) sum_l Psi_l (K_li - E_a' K((s_l, a'), x_i))` over the batch's own steps.
pub fn estimate_v<S>(batch: &TrajectoryBatch<S>, policy: &RkhsSoftmaxPolicy) -> Result<DVector<f64>> {
    let samples = SampleSet::from_batch(batch);
    weighted_v(&samples, &samples.points(), policy)
}

/// `v` evaluated at arbitrary probe points.
pub fn estimate_v_at<S>(
    batch: &TrajectoryBatch<S>,
    policy: &RkhsSoftmaxPolicy,
    probes: &[StateActionPoint],
) -> Result<DVector<f64>> {
    weighted_v(&SampleSet::from_batch(batch), probes, policy)
}

/// `b_i = sum_l Psi_l S[i][l]`, `c_i = sum_l S[i][l]`.
pub fn estimate_b_c<S>(batch: &TrajectoryBatch<S>, policy: &RkhsSoftmaxPolicy) -> Result<(DVector<f64>, DVector<f64>)> {
    let samples = SampleSet::from_batch(batch);
    let centers = samples.points();
    check_rkhs_inputs(policy, &samples, &centers)?;
    let probs = sample_probs(policy, samples.features());
    let bl = blocks(policy, &centers, &samples, &probs);
    let (b, c) = group_scores(&bl, &centers, &samples);
    Ok((b.column_sum(), c.column_sum()))
}

/// `Sigma^(l)_ij = Cov_{a' ~ pi(.|s_l)}[K((s_l,a'), x_i), K((s_l,a'), x_j)]`.
pub fn estimate_sigma<S>(batch: &TrajectoryBatch<S>, policy: &RkhsSoftmaxPolicy, l: usize) -> Result<DMatrix<f64>> {
    let d = batch.total_steps();
    if l >= d {
        return Err(Error::InvalidInput(format!("flat index {l} out of range for {d} steps")));
    }
    let centers = batch.points();
    let (traj, t) = batch.locate(l);
    let fl = &batch.trajectories[traj].features[t];
    check_dim(policy.feature_dim(), fl.len())?;
    let p = policy.action_probs(fl);
    let spec = policy.spec();
    let k: Vec<f64> = centers.iter().map(|c| spec.state_kernel(&c.features, fl)).collect();
    let mean: Vec<f64> = centers.iter().zip(&k).map(|(c, ki)| ki * p[c.action]).collect();
    Ok(DMatrix::from_fn(d, d, |i, j| {
        let second = if centers[i].action == centers[j].action { k[i] * k[j] * p[centers[i].action] } else { 0.0 };
        second - mean[i] * mean[j]
    }))
}

/// `H = (T^2/N) b c^T - (T/N) sum_l Psi_l Sigma^(l)`.
pub fn assemble_h(
    b: &DVector<f64>,
    c: &DVector<f64>,
    sigmas: &[DMatrix<f64>],
    psi: &[f64],
    temperature: f64,
    n_trajectories: usize,
) -> Result<DMatrix<f64>> {
    let d = b.len();
    check_dim(d, c.len())?;
    check_dim(sigmas.len(), psi.len())?;
    if n_trajectories == 0 {
        return Err(Error::InvalidInput("trajectory count must be positive".into()));
    }
    let n = n_trajectories as f64;
    let mut h = b * c.transpose() * (temperature * temperature / n);
    for (s, p) in sigmas.iter().zip(psi) {
        if s.shape() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, got: s.nrows() });
        }
        h -= s * (temperature * p / n);
    }
    Ok(h)
}

/// `sum_g w_g sum_{l in g} Psi_l T (K((s_l,a_l),.) - E_a' K((s_l,a'),.))`, one center per `(s_l, a')`.
pub fn weighted_gradient_expansion(samples: &SampleSet, policy: &RkhsSoftmaxPolicy) -> Result<KernelExpansion> {
    check_rkhs_inputs(policy, samples, &[])?;
    let t = policy.temperature();
    let probs = sample_probs(policy, samples.features());
    let omega = samples.step_weights();
    let mut g = KernelExpansion::empty(*policy.spec(), policy.feature_dim());
    for l in 0..samples.len() {
        let f = samples.features[l];
        for (a, p) in probs[l].iter().enumerate() {
            let hit = if a == samples.actions[l] { 1.0 } else { 0.0 };
            g.push(&StateActionPoint::new(f.to_vec(), a), t * omega[l] * (hit - p))?;
        }
    }
    Ok(g)
}

/// Functional policy gradient estimated from a batch.
pub fn rkhs_gradient_expansion<S>(batch: &TrajectoryBatch<S>, policy: &RkhsSoftmaxPolicy) -> Result<KernelExpansion> {
    weighted_gradient_expansion(&SampleSet::from_batch(batch), policy)
}

fn flat_row_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

fn check_parametric_inputs(policy: &ParametricSoftmaxPolicy, samples: &SampleSet) -> Result<()> {
    let n_actions = policy.n_actions();
    if let Some(a) = samples.actions().iter().find(|&&a| a >= n_actions) {
        return Err(Error::InvalidInput(format!("action {a} out of range for {n_actions} actions")));
    }
    Ok(())
}

/// `sum_g w_g sum_{l in g} Psi_l grad log pi(a_l|s_l)`, shaped like `theta`.
pub fn weighted_parametric_gradient(samples: &SampleSet, policy: &ParametricSoftmaxPolicy) -> Result<DMatrix<f64>> {
    check_parametric_inputs(policy, samples)?;
    let omega = samples.step_weights();
    let terms: Vec<DMatrix<f64>> = (0..samples.len())
        .into_par_iter()
        .map(|l| policy.log_prob_grad(samples.features[l], samples.actions[l]) * omega[l])
        .collect();
    let mut out = DMatrix::zeros(policy.theta.nrows(), policy.theta.ncols());
    for t in terms {
        out += t;
    }
    Ok(out)
}

/// `sum_g w_g [(sum_t Psi_t g_t)(sum_t g_t)^T + sum_t Psi_t grad^2 log pi_t]` over flat parameters.
pub fn weighted_parametric_hessian(samples: &SampleSet, policy: &ParametricSoftmaxPolicy) -> Result<DMatrix<f64>> {
    check_parametric_inputs(policy, samples)?;
    let n = policy.n_params();
    let per_group: Vec<DMatrix<f64>> = (0..samples.n_groups())
        .into_par_iter()
        .map(|grp| {
            let mut weighted = DVector::zeros(n);
            let mut plain = DVector::zeros(n);
            let mut curv = DMatrix::zeros(n, n);
            for l in samples.group(grp) {
                let (f, a, psi) = (samples.features[l], samples.actions[l], samples.psi[l]);
                let g = flat_row_major(&policy.log_prob_grad(f, a));
                weighted.axpy(psi, &g, 1.0);
                plain += g;
                curv += policy.log_prob_hessian(f) * psi;
            }
            (weighted * plain.transpose() + curv) * samples.weights[grp]
        })
        .collect();
    let mut out = DMatrix::zeros(n, n);
    for m in per_group {
        out += m;
    }
    Ok(out)
}

pub fn parametric_gradient<S>(batch: &TrajectoryBatch<S>, policy: &ParametricSoftmaxPolicy) -> Result<DMatrix<f64>> {
    weighted_parametric_gradient(&SampleSet::from_batch(batch), policy)
}

pub fn parametric_hessian<S>(batch: &TrajectoryBatch<S>, policy: &ParametricSoftmaxPolicy) -> Result<DMatrix<f64>> {
    weighted_parametric_hessian(&SampleSet::from_batch(batch), policy)
}
