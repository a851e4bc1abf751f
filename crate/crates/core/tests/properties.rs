mod common;

use knrl::cubic::{solve, CubicSubproblem, SolverConfig};
use knrl::kernel::{KernelExpansion, KernelSpec, StateActionPoint};
use knrl::policy::{ParametricSoftmaxPolicy, Policy, RkhsSoftmaxPolicy};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::{brute_force_cubic_min, cubic_value};

fn arb_policy() -> impl Strategy<Value = (RkhsSoftmaxPolicy, Vec<f64>)> {
    (
        prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 2), 0usize..3, -3.0f64..3.0), 1..8),
        0.2f64..2.0,
        0.3f64..3.0,
        prop::collection::vec(-1.0f64..1.0, 2),
    )
        .prop_map(|(pts, bw, temp, probe)| {
            let centers: Vec<StateActionPoint> = pts.iter().map(|(f, a, _)| StateActionPoint::new(f.clone(), *a)).collect();
            let weights: Vec<f64> = pts.iter().map(|p| p.2).collect();
            let h = KernelExpansion::from_points(KernelSpec::rbf(bw).unwrap(), 2, &centers, &weights).unwrap();
            (RkhsSoftmaxPolicy::with_function(h, 3, temp, "raw").unwrap(), probe)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rkhs_score_has_zero_mean((policy, s) in arb_policy(), x in prop::collection::vec(-1.0f64..1.0, 2), b in 0usize..3) {
        let probs = policy.action_probs(&s);
        let probe = StateActionPoint::new(x, b);
        let mean: f64 = probs
            .iter()
            .enumerate()
            .map(|(a, p)| p * policy.score_function(&s, a).unwrap().eval(&probe).unwrap())
            .sum();
        prop_assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn parametric_score_has_zero_mean(theta in prop::collection::vec(-2.0f64..2.0, 18), s in prop::collection::vec(-1.0f64..1.0, 2)) {
        let mut policy = ParametricSoftmaxPolicy::zeros(3, 2, 2).unwrap();
        policy.theta = DMatrix::from_row_slice(3, 6, &theta);
        let probs = policy.action_probs(&s);
        let mean = (0..3).fold(DMatrix::zeros(3, 6), |acc, a| acc + policy.log_prob_grad(&s, a) * probs[a]);
        prop_assert!(mean.amax() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn solver_matches_brute_force(
        n in 1usize..6,
        seed in prop::collection::vec(-2.0f64..2.0, 5 + 25),
        beta in 0.5f64..4.0,
    ) {

        let v = DVector::from_iterator(n, seed[..n].iter().copied());
        let m = DMatrix::from_iterator(n, n, seed[5..5 + n * n].iter().copied());
        let h = (&m + m.transpose()) * 0.5;
        let cfg = SolverConfig::default();
        let report = solve(&CubicSubproblem::new(v.clone(), h.clone(), beta).unwrap(), &cfg, None).unwrap();
        if report.converged {
            prop_assert!(report.grad_norm <= cfg.grad_tol);
        }
        let (_, best) = brute_force_cubic_min(&v, &h, beta);
        prop_assert!(cubic_value(&v, &h, beta, &report.alpha) <= best + 1e-6);
    }
}
