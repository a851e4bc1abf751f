use rand::Rng;

use super::{sample_categorical, Environment, Transition};
use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// Finite MDP with explicit tables. States are indices; features are one-hot.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `P[s][a][s']`, flattened.
    transition: Vec<f64>,
    /// `r[s][a]`, flattened.
    reward: Vec<f64>,
    gamma: f64,
    initial_dist: Vec<f64>,
    horizon: usize,
}

fn check_distribution(row: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::Validation(format!("{} is not a probability vector: {:?}", what(), row)));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || horizon == 0 {
            return Err(Error::Validation("state count, action count and horizon must be positive".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::Validation(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions || reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::Validation("reward table must hold |S|*|A| finite entries".into()));
        }
        if initial_dist.len() != n_states {
            return Err(Error::Validation("initial distribution length differs from state count".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Validation(format!("gamma {gamma} outside [0, 1]")));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let start = (s * n_actions + a) * n_states;
                check_distribution(&transition[start..start + n_states], || format!("P[{s}][{a}]"))?;
            }
        }
        check_distribution(&initial_dist, || "initial distribution".to_string())?;
        Ok(Self { n_states, n_actions, transition, reward, gamma, initial_dist, horizon })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// One-hot feature vector of a state.
    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.n_states];
        f[s] = 1.0;
        f
    }

    /// Same MDP with actions relabelled: new action `j` behaves like old `perm[j]`.
    pub fn permute_actions(&self, perm: &[usize]) -> Result<Self> {
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.n_actions).collect::<Vec<_>>() {
            return Err(Error::InvalidInput(format!("{perm:?} is not a permutation")));
        }
        let mut transition = vec![0.0; self.transition.len()];
        let mut reward = vec![0.0; self.reward.len()];
        for s in 0..self.n_states {
            for (j, &old) in perm.iter().enumerate() {
                reward[s * self.n_actions + j] = self.reward(s, old);
                let dst = (s * self.n_actions + j) * self.n_states;
                transition[dst..dst + self.n_states].copy_from_slice(self.transition_row(s, old));
            }
        }
        Self::new(
            self.n_states,
            self.n_actions,
            transition,
            reward,
            self.gamma,
            self.initial_dist.clone(),
            self.horizon,
        )
    }
}

impl Environment for TabularMdp {
    type State = usize;

    fn name(&self) -> &'static str {
        "tabular"
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn feature_dim(&self) -> usize {
        self.n_states
    }

    fn featurizer_name(&self) -> &'static str {
        "one_hot"
    }

    fn featurize(&self, state: &usize) -> Vec<f64> {
        self.one_hot(*state)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial_dist, rng)
    }

    fn step<R: Rng + ?Sized>(&self, state: &usize, action: usize, rng: &mut R) -> Result<Transition<usize>> {
        if *state >= self.n_states || action >= self.n_actions {
            return Err(Error::InvalidInput(format!("invalid state/action ({state}, {action})")));
        }
        let next = sample_categorical(self.transition_row(*state, action), rng);
        Ok(Transition { next, reward: self.reward(*state, action), done: false })
    }

    fn as_tabular(&self) -> Option<&TabularMdp> {
        Some(self)
    }
}
