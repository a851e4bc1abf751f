//! Cart-pole balancing with the classic constants and explicit Euler steps.

use rand::Rng;

use super::{Environment, Transition};
use crate::error::{Error, Result};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
/// Half the pole length.
const LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const X_THRESHOLD: f64 = 2.4;
const MAX_STEPS: usize = 200;
/// Per-coordinate feature scaling so kernel bandwidths are dimensionless.
const FEATURE_SCALE: [f64; 4] = [1.0 / 2.4, 1.0 / 3.0, 1.0 / 0.21, 1.0 / 3.0];

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub steps: usize,
}

impl CartPoleState {
    pub fn is_failure(&self) -> bool {
        self.x.abs() > X_THRESHOLD || self.theta.abs() > THETA_THRESHOLD
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CartPole;

impl CartPole {
    pub fn new() -> Self {
        CartPole
    }

    pub fn theta_threshold() -> f64 {
        THETA_THRESHOLD
    }

    /// Deterministic dynamics; reward is 1 for every step that does not fail.
    pub fn advance(&self, s: &CartPoleState, action: usize) -> Result<Transition<CartPoleState>> {
        let force = match action {
            0 => -FORCE_MAG,
            1 => FORCE_MAG,
            _ => return Err(Error::InvalidInput(format!("cartpole action must be 0 or 1, got {action}"))),
        };
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * s.theta_dot * s.theta_dot * sin) / TOTAL_MASS;
        let theta_acc =
            (GRAVITY * sin - cos * temp) / (LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        let next = CartPoleState {
            x: s.x + TAU * s.x_dot,
            x_dot: s.x_dot + TAU * x_acc,
            theta: s.theta + TAU * s.theta_dot,
            theta_dot: s.theta_dot + TAU * theta_acc,
            steps: s.steps + 1,
        };
        let failed = next.is_failure();
        Ok(Transition {
            next,
            reward: if failed { 0.0 } else { 1.0 },
            done: failed || next.steps >= MAX_STEPS,
        })
    }
}

impl Environment for CartPole {
    type State = CartPoleState;

    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn feature_dim(&self) -> usize {
        4
    }

    fn featurizer_name(&self) -> &'static str {
        "cartpole_scaled"
    }

    fn featurize(&self, s: &CartPoleState) -> Vec<f64> {
        [s.x, s.x_dot, s.theta, s.theta_dot]
            .iter()
            .zip(FEATURE_SCALE)
            .map(|(v, k)| v * k)
            .collect()
    }

    fn horizon(&self) -> usize {
        MAX_STEPS
    }

    fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> CartPoleState {
        CartPoleState {
            x: rng.random_range(-0.05..=0.05),
            x_dot: rng.random_range(-0.05..=0.05),
            theta: rng.random_range(-0.05..=0.05),
            theta_dot: rng.random_range(-0.05..=0.05),
            steps: 0,
        }
    }

    fn step<R: Rng + ?Sized>(&self, s: &CartPoleState, action: usize, _rng: &mut R) -> Result<Transition<CartPoleState>> {
        self.advance(s, action)
    }
}
