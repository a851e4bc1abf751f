//! Softmax policies: RKHS-scored and polynomial-feature parametric.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::sample_categorical;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{ExpansionRecord, KernelExpansion, KernelSpec, StateActionPoint};

/// A stochastic policy over a finite action set, acting on featurized states.
pub trait Policy {
    fn n_actions(&self) -> usize;

    fn action_probs(&self, features: &[f64]) -> Vec<f64>;

    /// Inverse-CDF draw from [`Policy::action_probs`].
    fn sample_action<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> usize
    where
        Self: Sized,
    {
        sample_categorical(&self.action_probs(features), rng)
    }
}

/// Numerically stable softmax of `scale * scores`.
pub fn softmax(scores: &[f64], scale: f64) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(scale * s));
    let mut p: Vec<f64> = scores.iter().map(|&s| (scale * s - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// State-independent action distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPolicy {
    probs: Vec<f64>,
}

impl FixedPolicy {
    pub fn new(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn uniform(n_actions: usize) -> Self {
        Self { probs: vec![1.0 / n_actions as f64; n_actions] }
    }
}

impl Policy for FixedPolicy {
    fn n_actions(&self) -> usize {
        self.probs.len()
    }

    fn action_probs(&self, _features: &[f64]) -> Vec<f64> {
        self.probs.clone()
    }
}

/// `pi_h(a|s) = exp(T h(s,a)) / sum_a' exp(T h(s,a'))`.
#[derive(Clone, Debug, PartialEq)]
pub struct RkhsSoftmaxPolicy {
    pub h: KernelExpansion,
    temperature: f64,
    n_actions: usize,
    featurizer: String,
}

impl RkhsSoftmaxPolicy {
    /// Policy with `h = 0`, i.e. uniform over actions.
    pub fn new(
        spec: KernelSpec,
        feature_dim: usize,
        n_actions: usize,
        temperature: f64,
        featurizer: impl Into<String>,
    ) -> Result<Self> {
        Self::with_function(KernelExpansion::empty(spec, feature_dim), n_actions, temperature, featurizer)
    }

    pub fn with_function(
        h: KernelExpansion,
        n_actions: usize,
        temperature: f64,
        featurizer: impl Into<String>,
    ) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
        }
        if n_actions == 0 {
            return Err(Error::InvalidInput("policy needs at least one action".into()));
        }
        h.spec().validate()?;
        Ok(Self { h, temperature, n_actions, featurizer: featurizer.into() })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn spec(&self) -> &KernelSpec {
        self.h.spec()
    }

    pub fn feature_dim(&self) -> usize {
        self.h.dim()
    }

    pub fn featurizer(&self) -> &str {
        &self.featurizer
    }

    /// `h(s, a)` for every action.
    pub fn scores(&self, features: &[f64]) -> Vec<f64> {
        self.h
            .eval_actions(features, self.n_actions)
            .expect("feature dimension matches the policy's expansion")
    }

    pub fn log_prob(&self, features: &[f64], action: usize) -> f64 {
        let s = self.scores(features);
        let m = s.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(self.temperature * x));
        let lse = m + s.iter().map(|&x| (self.temperature * x - m).exp()).sum::<f64>().ln();
        self.temperature * s[action] - lse
    }

    /// `grad_h log pi(a|s) = T (K((s,a),.) - sum_a' pi(a'|s) K((s,a'),.))` as an expansion.
    pub fn score_function(&self, features: &[f64], action: usize) -> Result<KernelExpansion> {
        check_dim(self.feature_dim(), features.len())?;
        let probs = self.action_probs(features);
        let mut g = KernelExpansion::empty(*self.spec(), self.feature_dim());
        g.push(&StateActionPoint::new(features.to_vec(), action), self.temperature)?;
        for (b, p) in probs.iter().enumerate() {
            g.push(&StateActionPoint::new(features.to_vec(), b), -self.temperature * p)?;
        }
        Ok(g)
    }

    pub fn with_h(&self, h: KernelExpansion) -> Self {
        Self { h, ..self.clone() }
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::Rkhs {
            temperature: self.temperature,
            n_actions: self.n_actions,
            featurizer: self.featurizer.clone(),
            expansion: self.h.to_record(),
        }
    }
}

impl Policy for RkhsSoftmaxPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.scores(features), self.temperature)
    }
}

/// All monomials of `s` up to total degree `degree`, graded lexicographic,
/// starting with the constant 1.
pub fn parametric_features(s: &[f64], degree: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    // nondecreasing index tuples of length d enumerate degree-d monomials in lex order
    let mut frontier: Vec<(usize, f64)> = vec![(0, 1.0)];
    for _ in 0..degree {
        let mut next = Vec::new();
        for &(start, val) in &frontier {
            for (i, x) in s.iter().enumerate().skip(start) {
                next.push((i, val * x));
            }
        }
        out.extend(next.iter().map(|&(_, v)| v));
        frontier = next;
    }
    out
}

/// Number of monomials of `n` variables up to total degree `degree`.
pub fn parametric_feature_count(n: usize, degree: usize) -> usize {
    // C(n + degree, degree)
    (1..=degree).fold(1usize, |acc, k| acc * (n + k) / k)
}

/// Softmax over per-action linear scores of polynomial features.
#[derive(Clone, Debug, PartialEq)]
pub struct ParametricSoftmaxPolicy {
    /// `n_actions x n_features`.
    pub theta: DMatrix<f64>,
    degree: usize,
    state_dim: usize,
}

impl ParametricSoftmaxPolicy {
    pub fn zeros(n_actions: usize, state_dim: usize, degree: usize) -> Result<Self> {
        if degree == 0 || n_actions == 0 {
            return Err(Error::InvalidInput("degree and action count must be positive".into()));
        }
        let f = parametric_feature_count(state_dim, degree);
        Ok(Self { theta: DMatrix::zeros(n_actions, f), degree, state_dim })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn features(&self, state: &[f64]) -> Vec<f64> {
        debug_assert_eq!(state.len(), self.state_dim);
        parametric_features(state, self.degree)
    }

    /// Parameters flattened row-major: index `a * n_features + k`.
    pub fn flat_params(&self) -> DVector<f64> {
        DVector::from_iterator(self.theta.len(), self.theta.transpose().iter().copied())
    }

    pub fn from_flat(&self, flat: &DVector<f64>) -> Self {
        let (r, c) = self.theta.shape();
        Self { theta: DMatrix::from_row_slice(r, c, flat.as_slice()), ..self.clone() }
    }

    pub fn log_prob(&self, state: &[f64], action: usize) -> f64 {
        let z = &self.theta * DVector::from_vec(self.features(state));
        let m = z.max();
        z[action] - (m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln())
    }

    /// `grad_theta log pi(a|s)`: row `b` is `([b == a] - pi(b|s)) * f(s)`.
    pub fn log_prob_grad(&self, state: &[f64], action: usize) -> DMatrix<f64> {
        let f = self.features(state);
        let p = self.action_probs(state);
        DMatrix::from_fn(self.theta.nrows(), f.len(), |b, k| {
            let ind = if b == action { 1.0 } else { 0.0 };
            (ind - p[b]) * f[k]
        })
    }

    /// `grad^2_theta log pi(.|s) = -(diag(pi) - pi pi^T) (x) f f^T` over flat parameters.
    /// Independent of the action taken.
    pub fn log_prob_hessian(&self, state: &[f64]) -> DMatrix<f64> {
        let f = self.features(state);
        let p = self.action_probs(state);
        let nf = f.len();
        let n = self.theta.len();
        DMatrix::from_fn(n, n, |i, j| {
            let (b, k) = (i / nf, i % nf);
            let (c, l) = (j / nf, j % nf);
            let cov = if b == c { p[b] - p[b] * p[c] } else { -p[b] * p[c] };
            -cov * (f[k] * f[l])
        })
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint::Parametric {
            degree: self.degree,
            state_dim: self.state_dim,
            n_actions: self.theta.nrows(),
            theta: self.flat_params().as_slice().to_vec(),
        }
    }
}

impl Policy for ParametricSoftmaxPolicy {
    fn n_actions(&self) -> usize {
        self.theta.nrows()
    }

    fn action_probs(&self, state: &[f64]) -> Vec<f64> {
        let z = &self.theta * DVector::from_vec(self.features(state));
        softmax(z.as_slice(), 1.0)
    }
}

/// Serialized final policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyCheckpoint {
    Rkhs {
        temperature: f64,
        n_actions: usize,
        featurizer: String,
        expansion: ExpansionRecord,
    },
    Parametric {
        degree: usize,
        state_dim: usize,
        n_actions: usize,
        theta: Vec<f64>,
    },
}

impl PolicyCheckpoint {
    pub fn to_rkhs(&self) -> Result<RkhsSoftmaxPolicy> {
        match self {
            PolicyCheckpoint::Rkhs { temperature, n_actions, featurizer, expansion } => {
                RkhsSoftmaxPolicy::with_function(
                    KernelExpansion::from_record(expansion)?,
                    *n_actions,
                    *temperature,
                    featurizer.clone(),
                )
            }
            _ => Err(Error::Validation("checkpoint does not hold an rkhs policy".into())),
        }
    }

    pub fn to_parametric(&self) -> Result<ParametricSoftmaxPolicy> {
        match self {
            PolicyCheckpoint::Parametric { degree, state_dim, n_actions, theta } => {
                let p = ParametricSoftmaxPolicy::zeros(*n_actions, *state_dim, *degree)?;
                check_dim(p.n_params(), theta.len())?;
                Ok(p.from_flat(&DVector::from_column_slice(theta)))
            }
            _ => Err(Error::Validation("checkpoint does not hold a parametric policy".into())),
        }
    }
}
