//! Exact quantities on small tabular MDPs by full trajectory enumeration, and
//! the optimal finite-horizon value by backward induction.

use nalgebra::{DMatrix, DVector};

use crate::env::{rewards_to_go, DiscountConvention, Environment, TabularMdp};
use crate::error::{Error, Result};
use crate::estimators::{
    weighted_coefficients, weighted_gradient_expansion, weighted_parametric_gradient, weighted_parametric_hessian,
    EstimatorOptions, NewtonCoefficients, SampleSet,
};
use crate::kernel::{KernelExpansion, StateActionPoint};
use crate::policy::{ParametricSoftmaxPolicy, Policy, RkhsSoftmaxPolicy};

/// Largest `(|S| |A|)^T` accepted for enumeration.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedTrajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub probability: f64,
}

/// Every length-`T` trajectory with nonzero probability, in lexicographic
/// order of `(s_0, a_0, s_1, a_1, ...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedDistribution {
    pub trajectories: Vec<EnumeratedTrajectory>,
    pub horizon: usize,
}

impl EnumeratedDistribution {
    pub fn total_probability(&self) -> f64 {
        self.trajectories.iter().map(|t| t.probability).sum()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// `E[sum_t w_t r_t]` with the convention's per-step weights.
    pub fn expected_return(&self, gamma: f64, convention: DiscountConvention) -> f64 {
        let weights: Vec<f64> = (0..self.horizon).map(|t| convention.objective_weight(gamma, t)).collect();
        self.trajectories
            .iter()
            .map(|tr| tr.probability * tr.rewards.iter().zip(&weights).map(|(r, w)| r * w).sum::<f64>())
            .sum()
    }
}

pub fn check_budget(mdp: &TabularMdp, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let base = (mdp.n_states() * mdp.n_actions()) as u128;
    let terms = (0..horizon).try_fold(1u128, |acc, _| acc.checked_mul(base)).unwrap_or(u128::MAX);
    if terms > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded { terms, budget: ENUMERATION_BUDGET });
    }
    Ok(())
}

/// Enumerates under a possibly time-dependent action distribution `probs(t, s)`.
pub fn enumerate_with<F>(mdp: &TabularMdp, horizon: usize, probs: F) -> Result<EnumeratedDistribution>
where
    F: Fn(usize, usize) -> Vec<f64>,
{
    check_budget(mdp, horizon)?;
    let table: Vec<Vec<Vec<f64>>> =
        (0..horizon).map(|t| (0..mdp.n_states()).map(|s| probs(t, s)).collect()).collect();
    let mut out = Vec::new();
    let mut prefix = EnumeratedTrajectory { states: vec![], actions: vec![], rewards: vec![], probability: 1.0 };
    for (s0, &p0) in mdp.initial_dist().iter().enumerate() {
        if p0 > 0.0 {
            prefix.probability = p0;
            extend(mdp, horizon, &table, s0, &mut prefix, &mut out);
        }
    }
    Ok(EnumeratedDistribution { trajectories: out, horizon })
}

fn extend(
    mdp: &TabularMdp,
    horizon: usize,
    table: &[Vec<Vec<f64>>],
    s: usize,
    prefix: &mut EnumeratedTrajectory,
    out: &mut Vec<EnumeratedTrajectory>,
) {
    let t = prefix.states.len();
    let base = prefix.probability;
    for (a, &pa) in table[t][s].iter().enumerate() {
        if pa <= 0.0 {
            continue;
        }
        prefix.states.push(s);
        prefix.actions.push(a);
        prefix.rewards.push(mdp.reward(s, a));
        if t + 1 == horizon {
            out.push(EnumeratedTrajectory { probability: base * pa, ..prefix.clone() });
        } else {
            for (s2, &ps) in mdp.transition_row(s, a).iter().enumerate() {
                if ps > 0.0 {
                    prefix.probability = base * pa * ps;
                    extend(mdp, horizon, table, s2, prefix, out);
                }
            }
        }
        prefix.states.pop();
        prefix.actions.pop();
        prefix.rewards.pop();
    }
    prefix.probability = base;
}

/// Enumeration under a stationary policy acting on one-hot state features.
pub fn enumerate<P: Policy>(mdp: &TabularMdp, policy: &P, horizon: usize) -> Result<EnumeratedDistribution> {
    check_policy(mdp, policy)?;
    let probs: Vec<Vec<f64>> = (0..mdp.n_states()).map(|s| policy.action_probs(&mdp.one_hot(s))).collect();
    enumerate_with(mdp, horizon, |_, s| probs[s].clone())
}

fn check_policy<P: Policy>(mdp: &TabularMdp, policy: &P) -> Result<()> {
    if policy.n_actions() != mdp.n_actions() {
        return Err(Error::InvalidInput(format!(
            "policy has {} actions, MDP has {}",
            policy.n_actions(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// `J(pi) = E[sum_t w_t r_t]` over trajectories of length `horizon`.
#[allow(non_snake_case)]
pub fn exact_J<P: Policy>(mdp: &TabularMdp, policy: &P, horizon: usize, convention: DiscountConvention) -> Result<f64> {
    convention.validate(mdp.gamma())?;
    Ok(enumerate(mdp, policy, horizon)?.expected_return(mdp.gamma(), convention))
}

/// Flat weighted steps of an enumeration, referencing one-hot rows of `one_hot`.
fn sample_set<'a>(
    dist: &EnumeratedDistribution,
    one_hot: &'a [Vec<f64>],
    gamma: f64,
    convention: DiscountConvention,
) -> Result<SampleSet<'a>> {
    let mut features = Vec::new();
    let mut actions = Vec::new();
    let mut psi = Vec::new();
    let mut offsets = vec![0];
    let mut weights = Vec::new();
    for tr in &dist.trajectories {
        features.extend(tr.states.iter().map(|&s| one_hot[s].as_slice()));
        actions.extend_from_slice(&tr.actions);
        psi.extend(rewards_to_go(&tr.rewards, gamma, convention)?);
        offsets.push(features.len());
        weights.push(tr.probability);
    }
    SampleSet::new(features, actions, psi, offsets, weights)
}

fn one_hot_table(mdp: &TabularMdp) -> Vec<Vec<f64>> {
    (0..mdp.n_states()).map(|s| mdp.one_hot(s)).collect()
}

/// Pairs `(s, a)` visited with nonzero probability, sorted by state then action.
pub fn reachable_pairs(dist: &EnumeratedDistribution) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = dist
        .trajectories
        .iter()
        .flat_map(|tr| tr.states.iter().copied().zip(tr.actions.iter().copied()))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

/// Population `(v, H)` with trajectory probabilities as weights, centered on
/// every reachable pair.
pub fn expectation_coefficients(
    mdp: &TabularMdp,
    policy: &RkhsSoftmaxPolicy,
    horizon: usize,
    convention: DiscountConvention,
    options: EstimatorOptions,
) -> Result<NewtonCoefficients> {
    let dist = enumerate(mdp, policy, horizon)?;
    let one_hot = one_hot_table(mdp);
    let samples = sample_set(&dist, &one_hot, mdp.gamma(), convention)?;
    let centers: Vec<StateActionPoint> = reachable_pairs(&dist)
        .into_iter()
        .map(|(s, a)| StateActionPoint::new(one_hot[s].clone(), a))
        .collect();
    let (v, h) = weighted_coefficients(&samples, &centers, policy, options)?;
    Ok(NewtonCoefficients { v, h, centers, temperature: policy.temperature(), n_trajectories: 1, gamma: mdp.gamma() })
}

/// Exact functional gradient of `J`, duplicate centers merged.
pub fn expectation_gradient(
    mdp: &TabularMdp,
    policy: &RkhsSoftmaxPolicy,
    horizon: usize,
    convention: DiscountConvention,
) -> Result<KernelExpansion> {
    let dist = enumerate(mdp, policy, horizon)?;
    let one_hot = one_hot_table(mdp);
    let samples = sample_set(&dist, &one_hot, mdp.gamma(), convention)?;
    Ok(weighted_gradient_expansion(&samples, policy)?.prune(0.0))
}

/// Exact parametric gradient (shaped like `theta`) and Hessian over flat parameters.
pub fn expectation_parametric(
    mdp: &TabularMdp,
    policy: &ParametricSoftmaxPolicy,
    horizon: usize,
    convention: DiscountConvention,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dist = enumerate(mdp, policy, horizon)?;
    let one_hot = one_hot_table(mdp);
    let samples = sample_set(&dist, &one_hot, mdp.gamma(), convention)?;
    Ok((weighted_parametric_gradient(&samples, policy)?, weighted_parametric_hessian(&samples, policy)?))
}

/// Five-point central stencils, fourth-order accurate in `eps`.
fn central_difference(order: u8, eps: f64, mut j: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {eps}")));
    }
    match order {
        1 => Ok((8.0 * (j(eps)? - j(-eps)?) - (j(2.0 * eps)? - j(-2.0 * eps)?)) / (12.0 * eps)),
        2 => {
            let near = j(eps)? + j(-eps)?;
            let far = j(2.0 * eps)? + j(-2.0 * eps)?;
            Ok((16.0 * near - far - 30.0 * j(0.0)?) / (12.0 * eps * eps))
        }
        _ => Err(Error::InvalidInput(format!("finite-difference order must be 1 or 2, got {order}"))),
    }
}

/// Central difference of exact `J` along `h + eps * direction`.
pub fn fd_directional(
    mdp: &TabularMdp,
    policy: &RkhsSoftmaxPolicy,
    direction: &KernelExpansion,
    order: u8,
    eps: f64,
    horizon: usize,
    convention: DiscountConvention,
) -> Result<f64> {
    central_difference(order, eps, |t| {
        let moved = policy.with_h(policy.h.add_scaled(direction, t)?);
        exact_J(mdp, &moved, horizon, convention)
    })
}

/// Central difference of exact `J` along `theta + eps * direction` (flat, row-major).
pub fn fd_parametric(
    mdp: &TabularMdp,
    policy: &ParametricSoftmaxPolicy,
    direction: &DVector<f64>,
    order: u8,
    eps: f64,
    horizon: usize,
    convention: DiscountConvention,
) -> Result<f64> {
    let base = policy.flat_params();
    if base.len() != direction.len() {
        return Err(Error::DimensionMismatch { expected: base.len(), got: direction.len() });
    }
    central_difference(order, eps, |t| exact_J(mdp, &policy.from_flat(&(&base + direction * t)), horizon, convention))
}

/// Optimal finite-horizon value and a time-indexed greedy policy.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalValue {
    pub j_star: f64,
    /// `actions[t][s]`.
    pub actions: Vec<Vec<usize>>,
}

impl OptimalValue {
    /// Exact value of the greedy policy by enumeration.
    pub fn greedy_value(&self, mdp: &TabularMdp, convention: DiscountConvention) -> Result<f64> {
        let n_actions = mdp.n_actions();
        let dist = enumerate_with(mdp, self.actions.len(), |t, s| {
            let mut p = vec![0.0; n_actions];
            p[self.actions[t][s]] = 1.0;
            p
        })?;
        Ok(dist.expected_return(mdp.gamma(), convention))
    }
}

/// Backward induction `V_t(s) = max_a r(s,a) + gamma sum_s' P(s'|s,a) V_{t+1}(s')`
/// with `J* = sum_s rho(s) V_0(s)`. Ties go to the lowest action.
pub fn optimal_value(mdp: &TabularMdp, horizon: usize) -> OptimalValue {
    let (ns, na, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut next = vec![0.0; ns];
    let mut actions = vec![vec![0; ns]; horizon];
    for t in (0..horizon).rev() {
        let mut cur = vec![0.0; ns];
        for s in 0..ns {
            let mut best = (f64::NEG_INFINITY, 0);
            for a in 0..na {
                let cont: f64 = mdp.transition_row(s, a).iter().zip(&next).map(|(p, v)| p * v).sum();
                let q = mdp.reward(s, a) + gamma * cont;
                if q > best.0 {
                    best = (q, a);
                }
            }
            cur[s] = best.0;
            actions[t][s] = best.1;
        }
        next = cur;
    }
    let j_star = mdp.initial_dist().iter().zip(&next).map(|(p, v)| p * v).sum();
    OptimalValue { j_star, actions }
}

/// `J*` in the given convention; the paper-literal weights are the standard ones divided by `gamma`.
pub fn optimal_value_in(mdp: &TabularMdp, horizon: usize, convention: DiscountConvention) -> Result<f64> {
    convention.validate(mdp.gamma())?;
    let j = optimal_value(mdp, horizon).j_star;
    Ok(match convention {
        DiscountConvention::Standard => j,
        DiscountConvention::PaperLiteral => j / mdp.gamma(),
    })
}

/// Horizon used for oracle work on `mdp`.
pub fn oracle_horizon(mdp: &TabularMdp) -> usize {
    mdp.horizon()
}
