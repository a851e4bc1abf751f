//! Environments, trajectory sampling and rewards-to-go.

mod asset;
mod cartpole;
mod tabular;

use std::fmt::Debug;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::StateActionPoint;
use crate::policy::Policy;
use crate::rng::{substream, StreamRng};

pub use asset::{AssetAllocationSpec, AssetState};
pub use cartpole::{CartPole, CartPoleState};
pub use tabular::TabularMdp;

/// Outcome of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<S> {
    pub next: S,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment: Sync {
    type State: Clone + Debug + Send + Sync;

    fn name(&self) -> &'static str;
    fn n_actions(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn featurizer_name(&self) -> &'static str;
    fn featurize(&self, state: &Self::State) -> Vec<f64>;
    /// Maximum episode length.
    fn horizon(&self) -> usize;
    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn step<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        action: usize,
        rng: &mut R,
    ) -> Result<Transition<Self::State>>;

    /// The tabular model behind this environment, if it has one.
    fn as_tabular(&self) -> Option<&TabularMdp> {
        None
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Discounting convention for rewards-to-go and the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountConvention {
    /// `Psi_t = sum_{i>=t} gamma^(i-t) r_i`, objective `sum_t gamma^t r_t`.
    #[default]
    Standard,
    /// `Psi_t = sum_{i>=t} gamma^(i-1) r_i`, objective `sum_t gamma^(t-1) r_t`.
    PaperLiteral,
}

impl DiscountConvention {
    /// Weight applied to the reward at time `t` in the objective.
    pub fn objective_weight(&self, gamma: f64, t: usize) -> f64 {
        match self {
            DiscountConvention::Standard => gamma.powi(t as i32),
            DiscountConvention::PaperLiteral => gamma.powi(t as i32 - 1),
        }
    }

    pub fn validate(&self, gamma: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidInput(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        if *self == DiscountConvention::PaperLiteral && gamma == 0.0 {
            return Err(Error::InvalidInput("paper_literal discounting needs gamma > 0".into()));
        }
        Ok(())
    }
}

/// Rewards-to-go of one reward sequence.
pub fn rewards_to_go(rewards: &[f64], gamma: f64, convention: DiscountConvention) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InvalidInput("trajectory must contain at least one step".into()));
    }
    convention.validate(gamma)?;
    let mut psi = vec![0.0; rewards.len()];
    let mut tail = 0.0;
    for t in (0..rewards.len()).rev() {
        tail = match convention {
            DiscountConvention::Standard => rewards[t] + gamma * tail,
            DiscountConvention::PaperLiteral => convention.objective_weight(gamma, t) * rewards[t] + tail,
        };
        psi[t] = tail;
    }
    Ok(psi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub states: Vec<S>,
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl<S> Trajectory<S> {
    pub fn new(states: Vec<S>, features: Vec<Vec<f64>>, actions: Vec<usize>, rewards: Vec<f64>) -> Result<Self> {
        let t = states.len();
        if t == 0 {
            return Err(Error::InvalidInput("trajectory must contain at least one step".into()));
        }
        if features.len() != t || actions.len() != t || rewards.len() != t {
            return Err(Error::InvalidInput(format!(
                "trajectory length mismatch: {} states, {} features, {} actions, {} rewards",
                t,
                features.len(),
                actions.len(),
                rewards.len()
            )));
        }
        Ok(Self { states, features, actions, rewards })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn discounted_return(&self, gamma: f64, convention: DiscountConvention) -> f64 {
        self.rewards
            .iter()
            .enumerate()
            .map(|(t, r)| convention.objective_weight(gamma, t) * r)
            .sum()
    }

    pub fn point(&self, t: usize) -> StateActionPoint {
        StateActionPoint::new(self.features[t].clone(), self.actions[t])
    }
}

/// Draws one episode: `s_0 ~ rho`, `a_t ~ pi(.|s_t)`, until termination or `horizon` steps.
pub fn sample_trajectory<E, P, R>(env: &E, policy: &P, rng: &mut R, horizon: usize) -> Result<Trajectory<E::State>>
where
    E: Environment,
    P: Policy,
    R: Rng + ?Sized,
{
    if policy.n_actions() != env.n_actions() {
        return Err(Error::InvalidInput(format!(
            "policy has {} actions, environment has {}",
            policy.n_actions(),
            env.n_actions()
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let mut state = env.reset(rng);
    let (mut states, mut features, mut actions, mut rewards) = (vec![], vec![], vec![], vec![]);
    for _ in 0..horizon {
        let f = env.featurize(&state);
        let a = policy.sample_action(&f, rng);
        let tr = env.step(&state, a, rng)?;
        states.push(state);
        features.push(f);
        actions.push(a);
        rewards.push(tr.reward);
        if tr.done {
            break;
        }
        state = tr.next;
    }
    Trajectory::new(states, features, actions, rewards)
}

/// Samples `n` episodes in parallel, trajectory `i` drawing from substream `(seed, iteration, i)`.
pub fn sample_batch<E, P>(
    env: &E,
    policy: &P,
    n: usize,
    seed: u64,
    iteration: u64,
) -> Result<Vec<Trajectory<E::State>>>
where
    E: Environment,
    P: Policy + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng: StreamRng = substream(seed, iteration, i as u64);
            sample_trajectory(env, policy, &mut rng, env.horizon())
        })
        .collect()
}

/// Sampled episodes with their rewards-to-go and a flat step index.
///
/// Step `t` of trajectory `i` has flat index `offsets[i] + t`; for equal
/// lengths `T` this is `i*T + t`.
#[derive(Clone, Debug)]
pub struct TrajectoryBatch<S> {
    pub trajectories: Vec<Trajectory<S>>,
    pub psi: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    pub gamma: f64,
    pub convention: DiscountConvention,
}

impl<S> TrajectoryBatch<S> {
    pub fn new(trajectories: Vec<Trajectory<S>>, gamma: f64, convention: DiscountConvention) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InvalidInput("empty trajectory batch".into()));
        }
        let psi = trajectories
            .iter()
            .map(|t| rewards_to_go(&t.rewards, gamma, convention))
            .collect::<Result<Vec<_>>>()?;
        let mut offsets = Vec::with_capacity(trajectories.len() + 1);
        let mut acc = 0;
        for t in &trajectories {
            offsets.push(acc);
            acc += t.len();
        }
        offsets.push(acc);
        Ok(Self { trajectories, psi, offsets, gamma, convention })
    }

    /// Number of trajectories `N`.
    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    /// Total step count `D`.
    pub fn total_steps(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn flat_index(&self, traj: usize, t: usize) -> usize {
        debug_assert!(t < self.trajectories[traj].len());
        self.offsets[traj] + t
    }

    /// Range of flat indices owned by trajectory `traj`.
    pub fn span(&self, traj: usize) -> std::ops::Range<usize> {
        self.offsets[traj]..self.offsets[traj + 1]
    }

    /// `(trajectory, step)` of flat index `l`.
    pub fn locate(&self, l: usize) -> (usize, usize) {
        let i = self.offsets.partition_point(|&o| o <= l) - 1;
        (i, l - self.offsets[i])
    }

    pub fn points(&self) -> Vec<StateActionPoint> {
        self.trajectories
            .iter()
            .flat_map(|tr| (0..tr.len()).map(move |t| tr.point(t)))
            .collect()
    }

    pub fn flat_features(&self) -> Vec<&[f64]> {
        self.trajectories
            .iter()
            .flat_map(|tr| tr.features.iter().map(|f| f.as_slice()))
            .collect()
    }

    pub fn flat_actions(&self) -> Vec<usize> {
        self.trajectories.iter().flat_map(|tr| tr.actions.iter().copied()).collect()
    }

    pub fn psi_flat(&self) -> Vec<f64> {
        self.psi.iter().flatten().copied().collect()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.undiscounted_return()).collect()
    }

    pub fn mean_discounted_return(&self) -> f64 {
        self.trajectories
            .iter()
            .map(|t| t.discounted_return(self.gamma, self.convention))
            .sum::<f64>()
            / self.n_trajectories() as f64
    }
}
