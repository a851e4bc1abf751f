#![allow(dead_code)]

use knrl::env::{DiscountConvention, Environment, TabularMdp};
use knrl::kernel::{KernelExpansion, KernelSpec, StateActionPoint};
use knrl::policy::{Policy, RkhsSoftmaxPolicy};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Independent evaluation of `<v,a> + 1/2 a^T H a + beta/6 |a|^3`.
pub fn cubic_value(v: &DVector<f64>, h: &DMatrix<f64>, beta: f64, a: &DVector<f64>) -> f64 {
    let n = a.norm();
    v.dot(a) + 0.5 * a.dot(&(h * a)) + beta / 6.0 * n.powi(3)
}

fn cubic_grad(v: &DVector<f64>, h: &DMatrix<f64>, beta: f64, a: &DVector<f64>) -> DVector<f64> {
    v + h * a + a * (0.5 * beta * a.norm())
}

fn cubic_hess(h: &DMatrix<f64>, beta: f64, a: &DVector<f64>) -> DMatrix<f64> {
    let n = a.norm();
    let mut m = h + DMatrix::identity(a.len(), a.len()) * (0.5 * beta * n);
    if n > 0.0 {
        m += a * a.transpose() * (0.5 * beta / n);
    }
    m
}

/// Damped Newton with a gradient-step fallback, run to machine precision.
fn polish(v: &DVector<f64>, h: &DMatrix<f64>, beta: f64, start: DVector<f64>) -> DVector<f64> {
    let mut a = start;
    let mut f = cubic_value(v, h, beta, &a);
    for _ in 0..500 {
        let g = cubic_grad(v, h, beta, &a);
        if g.norm() < 1e-13 {
            break;
        }
        let d = match cubic_hess(h, beta, &a).cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -&g,
        };
        let slope = g.dot(&d);
        let d = if slope < 0.0 { d } else { -g.clone() };
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-20 {
            let trial = &a + &d * t;
            let ft = cubic_value(v, h, beta, &trial);
            if ft <= f + 1e-4 * t * slope {
                a = trial;
                f = ft;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    a
}

/// Best point of a uniform grid over the box containing every stationary
/// point, followed by local polishing of the best few grid points.
pub fn brute_force_cubic_min(v: &DVector<f64>, h: &DMatrix<f64>, beta: f64) -> (DVector<f64>, f64) {
    let d = v.len();
    // stationary points satisfy beta/2 |a|^2 <= |v| + |H| |a|
    let hn = h.norm();
    let radius = (hn + (hn * hn + 2.0 * beta * v.norm()).sqrt()) / beta;
    let per_axis: usize = match d {
        0..=3 => 21,
        4 => 11,
        5 => 7,
        6 => 5,
        _ => 4,
    };
    let total = per_axis.pow(d as u32);
    let mut scored: Vec<(f64, DVector<f64>)> = Vec::new();
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        let a = DVector::from_iterator(
            d,
            idx.iter().map(|&k| -radius + 2.0 * radius * k as f64 / (per_axis - 1) as f64),
        );
        let f = cubic_value(v, h, beta, &a);
        scored.push((f, a));
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < per_axis {
                break;
            }
            *slot = 0;
        }
    }
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best = (DVector::zeros(d), 0.0);
    for (_, start) in scored.into_iter().take(24).chain(std::iter::once((0.0, DVector::zeros(d)))) {
        let a = polish(v, h, beta, start);
        let f = cubic_value(v, h, beta, &a);
        if f < best.1 {
            best = (a, f);
        }
    }
    best
}

/// Reward weight at step `t`, written out independently of the library.
pub fn weight(conv: DiscountConvention, gamma: f64, t: usize) -> f64 {
    match conv {
        DiscountConvention::Standard => gamma.powi(t as i32),
        DiscountConvention::PaperLiteral => gamma.powi(t as i32 - 1),
    }
}

/// Exact objective of a stationary policy by backward recursion over time.
pub fn exact_value<P: Policy>(mdp: &TabularMdp, policy: &P, conv: DiscountConvention) -> f64 {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut next = vec![0.0; ns];
    for t in (0..mdp.horizon()).rev() {
        let w = weight(conv, mdp.gamma(), t);
        next = (0..ns)
            .map(|s| {
                let p = policy.action_probs(&mdp.one_hot(s));
                (0..na)
                    .map(|a| {
                        let cont: f64 = (0..ns).map(|s2| mdp.transition(s, a, s2) * next[s2]).sum();
                        p[a] * (w * mdp.reward(s, a) + cont)
                    })
                    .sum()
            })
            .collect();
    }
    mdp.initial_dist().iter().zip(&next).map(|(r, v)| r * v).sum()
}

/// Fourth-order central difference of `f` at 0.
pub fn central_diff(order: u8, eps: f64, f: impl Fn(f64) -> f64) -> f64 {
    match order {
        1 => (8.0 * (f(eps) - f(-eps)) - (f(2.0 * eps) - f(-2.0 * eps))) / (12.0 * eps),
        _ => (16.0 * (f(eps) + f(-eps)) - (f(2.0 * eps) + f(-2.0 * eps)) - 30.0 * f(0.0)) / (12.0 * eps * eps),
    }
}

/// Directional derivative of the exact objective along `dir`.
pub fn fd_along(mdp: &TabularMdp, policy: &RkhsSoftmaxPolicy, dir: &KernelExpansion, order: u8, eps: f64, conv: DiscountConvention) -> f64 {
    central_diff(order, eps, |t| exact_value(mdp, &policy.with_h(policy.h.add_scaled(dir, t).unwrap()), conv))
}

/// One-hot tabular policy with `n` random centers.
pub fn random_tabular_policy<R: Rng>(mdp: &TabularMdp, n: usize, rng: &mut R) -> RkhsSoftmaxPolicy {
    let mut h = KernelExpansion::empty(KernelSpec::TabularDelta, mdp.n_states());
    for _ in 0..n {
        let s = rng.random_range(0..mdp.n_states());
        let a = rng.random_range(0..mdp.n_actions());
        h.push(&StateActionPoint::new(mdp.one_hot(s), a), rng.random_range(-1.0..1.0)).unwrap();
    }
    RkhsSoftmaxPolicy::with_function(h, mdp.n_actions(), 1.0, "one_hot").unwrap()
}

fn random_distribution<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn random_mdp<R: Rng>(ns: usize, na: usize, gamma: f64, horizon: usize, rng: &mut R) -> TabularMdp {
    let transition = (0..ns * na).flat_map(|_| random_distribution(ns, rng)).collect();
    let reward = (0..ns * na).map(|_| rng.random_range(-1.0..2.0)).collect();
    TabularMdp::new(ns, na, transition, reward, gamma, random_distribution(ns, rng), horizon).unwrap()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}
