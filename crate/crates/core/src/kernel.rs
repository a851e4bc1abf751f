//! Kernels over state-action pairs and finite kernel expansions.
//!
//! Every supported kernel factors as `k_state(s, s') * [a == a']`, so a
//! function in the induced RKHS keeps an independent score surface per
//! action. [`KernelExpansion`] stores `h = sum_i w_i K(x_i, .)` with centers in
//! a flat feature buffer, which is also the layout used for checkpoints.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A featurized state paired with a discrete action index.
#[derive(Clone, Debug, PartialEq)]
pub struct StateActionPoint {
    pub features: Vec<f64>,
    pub action: usize,
}

impl StateActionPoint {
    pub fn new(features: Vec<f64>, action: usize) -> Self {
        Self { features, action }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// Kernel family on state-action pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelSpec {
    /// 1 iff features and action match exactly.
    TabularDelta,
    /// `exp(-|s - s'|^2 / (2 bandwidth^2)) * [a == a']`.
    RbfTimesActionDelta { bandwidth: f64 },
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec::RbfTimesActionDelta { bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::TabularDelta => Ok(()),
            KernelSpec::RbfTimesActionDelta { bandwidth } => {
                if bandwidth.is_finite() && bandwidth > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidInput(format!(
                        "rbf bandwidth must be positive and finite, got {bandwidth}"
                    )))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::TabularDelta => "tabular_delta",
            KernelSpec::RbfTimesActionDelta { .. } => "rbf_times_action_delta",
        }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match *self {
            KernelSpec::TabularDelta => None,
            KernelSpec::RbfTimesActionDelta { bandwidth } => Some(bandwidth),
        }
    }

    /// State factor of the kernel. Callers guarantee equal lengths.
    #[inline]
    pub fn state_kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match *self {
            KernelSpec::TabularDelta => {
                if a.iter().zip(b).all(|(x, y)| x == y) {
                    1.0
                } else {
                    0.0
                }
            }
            KernelSpec::RbfTimesActionDelta { bandwidth } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }

    /// Upper bound of `K(c, x)` over all `x`.
    pub fn sup(&self) -> f64 {
        1.0
    }
}

pub fn eval_kernel(spec: &KernelSpec, x: &StateActionPoint, y: &StateActionPoint) -> Result<f64> {
    check_dim(x.dim(), y.dim())?;
    if x.action != y.action {
        return Ok(0.0);
    }
    Ok(spec.state_kernel(&x.features, &y.features))
}

/// Dense Gram matrix `G[i][j] = K(p_i, p_j)`.
pub fn gram(spec: &KernelSpec, points: &[StateActionPoint]) -> Result<DMatrix<f64>> {
    cross_gram(spec, points, points)
}

/// Dense cross-Gram `G[i][j] = K(a_i, b_j)`.
pub fn cross_gram(
    spec: &KernelSpec,
    a: &[StateActionPoint],
    b: &[StateActionPoint],
) -> Result<DMatrix<f64>> {
    let dim = a.first().or(b.first()).map_or(0, |p| p.dim());
    for p in a.iter().chain(b) {
        check_dim(dim, p.dim())?;
    }
    let rows: Vec<Vec<f64>> = a
        .par_iter()
        .map(|x| {
            b.iter()
                .map(|y| {
                    if x.action == y.action {
                        spec.state_kernel(&x.features, &y.features)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
}

/// Greedy pivoted Cholesky of the Gram matrix of `points`.
///
/// Returns pivot indices, in selection order, such that every kernel section
/// lies within squared RKHS distance `tol` of the span of the pivot sections.
/// Only the selected columns of the Gram matrix are evaluated.
pub fn pivoted_cholesky(spec: &KernelSpec, points: &[StateActionPoint], tol: f64) -> Result<Vec<usize>> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidInput(format!("pivot tolerance must be positive, got {tol}")));
    }
    let n = points.len();
    let dim = points.first().map_or(0, |p| p.dim());
    for p in points {
        check_dim(dim, p.dim())?;
    }
    let mut residual: Vec<f64> = points.iter().map(|p| spec.state_kernel(&p.features, &p.features)).collect();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    while pivots.len() < n {
        let (p, &d) = residual
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        if d <= tol {
            break;
        }
        let root = d.sqrt();
        let x = &points[p];
        let col: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let y = &points[i];
                let k = if x.action == y.action { spec.state_kernel(&x.features, &y.features) } else { 0.0 };
                let proj: f64 = columns.iter().map(|c| c[i] * c[p]).sum();
                (k - proj) / root
            })
            .collect();
        for (r, c) in residual.iter_mut().zip(&col) {
            *r -= c * c;
        }
        residual[p] = 0.0;
        columns.push(col);
        pivots.push(p);
    }
    Ok(pivots)
}

/// A function `h = sum_i w_i K(x_i, .)` in the RKHS of `spec`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelExpansion {
    spec: KernelSpec,
    dim: usize,
    features: Vec<f64>,
    actions: Vec<usize>,
    weights: Vec<f64>,
}

impl KernelExpansion {
    /// The zero function.
    pub fn empty(spec: KernelSpec, dim: usize) -> Self {
        Self {
            spec,
            dim,
            features: Vec::new(),
            actions: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn from_points(
        spec: KernelSpec,
        dim: usize,
        centers: &[StateActionPoint],
        weights: &[f64],
    ) -> Result<Self> {
        check_dim(centers.len(), weights.len())?;
        let mut h = Self::empty(spec, dim);
        for (c, &w) in centers.iter().zip(weights) {
            h.push(c, w)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, center: &StateActionPoint, weight: f64) -> Result<()> {
        check_dim(self.dim, center.dim())?;
        if !weight.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite weight {weight}")));
        }
        self.features.extend_from_slice(&center.features);
        self.actions.push(center.action);
        self.weights.push(weight);
        Ok(())
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn center_features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn center_action(&self, i: usize) -> usize {
        self.actions[i]
    }

    pub fn center(&self, i: usize) -> StateActionPoint {
        StateActionPoint::new(self.center_features(i).to_vec(), self.actions[i])
    }

    pub fn centers(&self) -> Vec<StateActionPoint> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// `h(x)`.
    pub fn eval(&self, x: &StateActionPoint) -> Result<f64> {
        check_dim(self.dim, x.dim())?;
        let mut acc = 0.0;
        for i in 0..self.len() {
            if self.actions[i] == x.action {
                acc += self.weights[i] * self.spec.state_kernel(self.center_features(i), &x.features);
            }
        }
        Ok(acc)
    }

    /// `h(s, a)` for every `a < n_actions` in one pass over the centers.
    pub fn eval_actions(&self, features: &[f64], n_actions: usize) -> Result<Vec<f64>> {
        check_dim(self.dim, features.len())?;
        let mut out = vec![0.0; n_actions];
        for i in 0..self.len() {
            let a = self.actions[i];
            if a < n_actions {
                out[a] += self.weights[i] * self.spec.state_kernel(self.center_features(i), features);
            }
        }
        Ok(out)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::SpecMismatch {
                left: format!("{:?}", self.spec),
                right: format!("{:?}", other.spec),
            });
        }
        check_dim(self.dim, other.dim)
    }

    /// `h + eta * delta`, concatenating centers.
    pub fn add_scaled(&self, delta: &Self, eta: f64) -> Result<Self> {
        self.check_compatible(delta)?;
        let mut out = self.clone();
        out.features.extend_from_slice(&delta.features);
        out.actions.extend_from_slice(&delta.actions);
        out.weights.extend(delta.weights.iter().map(|w| w * eta));
        if out.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidInput("non-finite weight after update".into()));
        }
        Ok(out)
    }

    /// `<self, other>` in the RKHS: `w1^T K12 w2`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let mut acc = 0.0;
        for i in 0..self.len() {
            let fi = self.center_features(i);
            let mut row = 0.0;
            for j in 0..other.len() {
                if self.actions[i] == other.actions[j] {
                    row += other.weights[j] * self.spec.state_kernel(fi, other.center_features(j));
                }
            }
            acc += self.weights[i] * row;
        }
        Ok(acc)
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self).expect("self-compatible")
    }

    /// Merges exact-duplicate centers by summing weights, then drops centers
    /// with `|w| < epsilon`.
    ///
    /// The result differs from `self` in sup norm by at most
    /// `sum_dropped |w_i| * sup_x K(c_i, x)`.
    pub fn prune(&self, epsilon: f64) -> Self {
        let mut slot: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
        let mut merged = Self::empty(self.spec, self.dim);
        for i in 0..self.len() {
            let key = (
                self.actions[i],
                self.center_features(i)
                    .iter()
                    // +0.0 and -0.0 are the same center
                    .map(|x| if *x == 0.0 { 0u64 } else { x.to_bits() })
                    .collect::<Vec<_>>(),
            );
            match slot.get(&key) {
                Some(&k) => merged.weights[k] += self.weights[i],
                None => {
                    slot.insert(key, merged.len());
                    merged.features.extend_from_slice(self.center_features(i));
                    merged.actions.push(self.actions[i]);
                    merged.weights.push(self.weights[i]);
                }
            }
        }
        if epsilon <= 0.0 {
            return merged;
        }
        let mut out = Self::empty(self.spec, self.dim);
        for i in 0..merged.len() {
            if merged.weights[i].abs() >= epsilon {
                out.features.extend_from_slice(merged.center_features(i));
                out.actions.push(merged.actions[i]);
                out.weights.push(merged.weights[i]);
            }
        }
        out
    }

    pub fn to_record(&self) -> ExpansionRecord {
        ExpansionRecord {
            variant: self.spec.name().to_string(),
            bandwidth: self.spec.bandwidth(),
            feature_dim: self.dim,
            center_count: self.len(),
            features: self.features.clone(),
            actions: self.actions.clone(),
            weights: self.weights.clone(),
        }
    }

    pub fn from_record(rec: &ExpansionRecord) -> Result<Self> {
        let spec = match rec.variant.as_str() {
            "tabular_delta" => KernelSpec::TabularDelta,
            "rbf_times_action_delta" => KernelSpec::rbf(rec.bandwidth.ok_or_else(|| {
                Error::Validation("rbf record without bandwidth".into())
            })?)?,
            other => return Err(Error::Validation(format!("unknown kernel variant {other:?}"))),
        };
        check_dim(rec.center_count, rec.weights.len())?;
        check_dim(rec.center_count, rec.actions.len())?;
        check_dim(rec.center_count * rec.feature_dim, rec.features.len())?;
        if rec.weights.iter().chain(&rec.features).any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite value in expansion record".into()));
        }
        Ok(Self {
            spec,
            dim: rec.feature_dim,
            features: rec.features.clone(),
            actions: rec.actions.clone(),
            weights: rec.weights.clone(),
        })
    }
}

/// Checkpoint form of a [`KernelExpansion`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub variant: String,
    pub bandwidth: Option<f64>,
    pub feature_dim: usize,
    pub center_count: usize,
    pub features: Vec<f64>,
    pub actions: Vec<usize>,
    pub weights: Vec<f64>,
}
