//! Resource/market asset-allocation MDP.
//!
//! State `(r, m)`: resource level `r < r_max` and market regime `m`
//! (0 recession, 1 stability, 2 prosperity). Actions: 0 conservative,
//! 1 balanced, 2 aggressive.

use serde::{Deserialize, Serialize};

use super::TabularMdp;
use crate::error::{Error, Result};

pub const N_MARKETS: usize = 3;
pub const N_STRATEGIES: usize = 3;
/// Resource increments indexed by the columns of `delta_probs`.
pub const RESOURCE_DELTAS: [i64; 5] = [-1, 0, 1, 2, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AssetState {
    pub resource: usize,
    pub market: usize,
}

impl AssetState {
    pub fn new(resource: usize, market: usize) -> Self {
        Self { resource, market }
    }

    /// Flat state index, resource-major.
    pub fn index(&self) -> usize {
        self.resource * N_MARKETS + self.market
    }

    pub fn from_index(s: usize) -> Self {
        Self { resource: s / N_MARKETS, market: s % N_MARKETS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetAllocationSpec {
    pub r_max: usize,
    /// `P(delta r | a)` per strategy over [`RESOURCE_DELTAS`].
    pub delta_probs: [[f64; 5]; N_STRATEGIES],
    /// `P(m' | m)`.
    pub market_transitions: [[f64; N_MARKETS]; N_MARKETS],
    /// Base reward `B(m, a)`, indexed `[m][a]`.
    pub base_rewards: [[f64; N_STRATEGIES]; N_MARKETS],
    pub gamma: f64,
    pub horizon: usize,
}

impl Default for AssetAllocationSpec {
    fn default() -> Self {
        Self {
            r_max: 5,
            delta_probs: [
                [0.1, 0.8, 0.1, 0.0, 0.0],
                [0.2, 0.2, 0.4, 0.2, 0.0],
                [0.4, 0.1, 0.1, 0.2, 0.2],
            ],
            market_transitions: [[0.6, 0.3, 0.1], [0.3, 0.4, 0.3], [0.1, 0.3, 0.6]],
            base_rewards: [[1.0, 0.5, -1.0], [1.0, 2.0, 1.0], [0.5, 1.5, 3.0]],
            gamma: 0.99,
            horizon: 3,
        }
    }
}

fn check_row(row: &[f64], name: String) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!("{name} must be a probability vector, got {row:?}")));
    }
    Ok(())
}

impl AssetAllocationSpec {
    pub fn n_states(&self) -> usize {
        N_MARKETS * self.r_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_max == 0 {
            return Err(Error::Validation("r_max must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Validation("horizon must be positive".into()));
        }
        for (a, row) in self.delta_probs.iter().enumerate() {
            check_row(row, format!("delta_probs row {a}"))?;
        }
        for (m, row) in self.market_transitions.iter().enumerate() {
            check_row(row, format!("market_transitions row {m}"))?;
        }
        if self.base_rewards.iter().flatten().any(|b| !b.is_finite()) {
            return Err(Error::Validation("base_rewards must be finite".into()));
        }
        Ok(())
    }

    /// Immediate reward `B(m, a) * (r + 1) / r_max`.
    pub fn reward(&self, s: AssetState, action: usize) -> f64 {
        self.base_rewards[s.market][action] * (s.resource as f64 + 1.0) / self.r_max as f64
    }

    /// Builds the joint tabular MDP. Resource moves that leave `0..r_max`
    /// land on the nearest boundary level.
    pub fn build(&self) -> Result<TabularMdp> {
        self.validate()?;
        let n = self.n_states();
        let top = self.r_max as i64 - 1;
        let mut transition = vec![0.0; n * N_STRATEGIES * n];
        let mut reward = vec![0.0; n * N_STRATEGIES];
        for s in 0..n {
            let st = AssetState::from_index(s);
            for a in 0..N_STRATEGIES {
                reward[s * N_STRATEGIES + a] = self.reward(st, a);
                let row = &mut transition[(s * N_STRATEGIES + a) * n..(s * N_STRATEGIES + a + 1) * n];
                for (k, &dr) in RESOURCE_DELTAS.iter().enumerate() {
                    let pr = self.delta_probs[a][k];
                    if pr == 0.0 {
                        continue;
                    }
                    let r2 = (st.resource as i64 + dr).clamp(0, top) as usize;
                    for m2 in 0..N_MARKETS {
                        row[AssetState::new(r2, m2).index()] += pr * self.market_transitions[st.market][m2];
                    }
                }
            }
        }
        let mut initial = vec![0.0; n];
        for m in 0..N_MARKETS {
            initial[AssetState::new(self.r_max / 2, m).index()] = 1.0 / N_MARKETS as f64;
        }
        TabularMdp::new(n, N_STRATEGIES, transition, reward, self.gamma, initial, self.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;
    use approx::assert_relative_eq;

    #[test]
    fn default_build_shape_and_rewards() {
        let mdp = AssetAllocationSpec::default().build().unwrap();
        assert_eq!(mdp.n_states(), 15);
        assert_eq!(mdp.n_actions(), 3);
        assert_relative_eq!(mdp.reward(AssetState::new(2, 1).index(), 1), 1.2, max_relative = 1e-15);
        assert_relative_eq!(mdp.reward(AssetState::new(4, 0).index(), 2), -1.0, max_relative = 1e-15);
        let init = mdp.initial_dist();
        for m in 0..3 {
            assert_relative_eq!(init[AssetState::new(2, m).index()], 1.0 / 3.0);
        }
    }

    #[test]
    fn conservative_resource_marginal() {
        let mdp = AssetAllocationSpec::default().build().unwrap();
        let s = AssetState::new(2, 1).index();
        let up: f64 = (0..3).map(|m| mdp.transition(s, 0, AssetState::new(3, m).index())).sum();
        assert_relative_eq!(up, 0.1, max_relative = 1e-12);
        // joint factorizes: P(r'=3, m'=2) = 0.1 * 0.3
        assert_relative_eq!(mdp.transition(s, 0, AssetState::new(3, 2).index()), 0.03, max_relative = 1e-12);
    }

    #[test]
    fn boundary_clamping() {
        let mdp = AssetAllocationSpec::default().build().unwrap();
        // aggressive at r=3: +2 and +3 both clamp to r=4
        let s = AssetState::new(3, 0).index();
        let top: f64 = (0..3).map(|m| mdp.transition(s, 2, AssetState::new(4, m).index())).sum();
        assert_relative_eq!(top, 0.1 + 0.2 + 0.2, max_relative = 1e-12);
        // -1 at r=0 stays at 0
        let s = AssetState::new(0, 2).index();
        let bottom: f64 = (0..3).map(|m| mdp.transition(s, 0, AssetState::new(0, m).index())).sum();
        assert_relative_eq!(bottom, 0.9, max_relative = 1e-12);
    }

    #[test]
    fn invalid_spec_names_row() {
        let mut spec = AssetAllocationSpec::default();
        spec.delta_probs[1][0] = 0.3;
        let err = spec.build().unwrap_err().to_string();
        assert!(err.contains("delta_probs row 1"), "{err}");
        let mut spec = AssetAllocationSpec::default();
        spec.market_transitions[2] = [0.5, 0.5, 0.5];
        assert!(spec.build().unwrap_err().to_string().contains("market_transitions row 2"));
    }
}
