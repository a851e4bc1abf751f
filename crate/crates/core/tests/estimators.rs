mod common;

use knrl::env::{sample_batch, AssetAllocationSpec, DiscountConvention, Environment, TrajectoryBatch};
use knrl::estimators::{estimate_v_at, newton_coefficients, rkhs_gradient_expansion, EstimatorOptions};
use knrl::oracle;
use knrl::rng::substream;

use common::{exact_value, random_tabular_policy};

#[test]
fn batch_mean_of_v_is_within_four_standard_errors_of_the_exact_gradient() {
    let mdp = AssetAllocationSpec::default().build().unwrap();
    let conv = DiscountConvention::Standard;
    let policy = random_tabular_policy(&mdp, 10, &mut substream(21, 0, 0));
    let exact = oracle::expectation_coefficients(&mdp, &policy, mdp.horizon(), conv, EstimatorOptions::default()).unwrap();
    let d = exact.dim();
    let reps = 200;
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for rep in 0..reps {
        let trajs = sample_batch(&mdp, &policy, 50, 77, rep).unwrap();
        let batch = TrajectoryBatch::new(trajs, mdp.gamma(), conv).unwrap();
        let v = estimate_v_at(&batch, &policy, &exact.centers).unwrap();
        for i in 0..d {
            sum[i] += v[i];
            sum_sq[i] += v[i] * v[i];
        }
    }
    let n = reps as f64;
    for i in 0..d {
        let mean = sum[i] / n;
        let var = (sum_sq[i] / n - mean * mean) * n / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - exact.v[i]).abs() <= 4.0 * se + 1e-12, "coordinate {i}: mean {mean}, exact {}, se {se}", exact.v[i]);
    }
}

#[test]
fn monte_carlo_objective_matches_exact_value() {
    let mdp = AssetAllocationSpec::default().build().unwrap();
    for conv in [DiscountConvention::Standard, DiscountConvention::PaperLiteral] {
        let policy = random_tabular_policy(&mdp, 8, &mut substream(22, 0, 0));
        let trajs = sample_batch(&mdp, &policy, 4000, 5, 0).unwrap();
        let batch = TrajectoryBatch::new(trajs, mdp.gamma(), conv).unwrap();
        let per_traj: Vec<f64> = batch.trajectories.iter().map(|t| t.discounted_return(mdp.gamma(), conv)).collect();
        let n = per_traj.len() as f64;
        let mean = per_traj.iter().sum::<f64>() / n;
        let sd = (per_traj.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let truth = exact_value(&mdp, &policy, conv);
        assert!((mean - truth).abs() <= 4.0 * sd / n.sqrt(), "{conv:?}: {mean} vs {truth}");
        assert!((batch.mean_discounted_return() - mean).abs() < 1e-12);
    }
}

#[test]
fn gradient_expansion_and_v_agree_on_batch_centers() {
    let mdp = AssetAllocationSpec::default().build().unwrap();
    let policy = random_tabular_policy(&mdp, 10, &mut substream(23, 0, 0));
    let trajs = sample_batch(&mdp, &policy, 30, 9, 0).unwrap();
    let batch = TrajectoryBatch::new(trajs, mdp.gamma(), DiscountConvention::Standard).unwrap();
    let coeffs = newton_coefficients(&batch, &policy, EstimatorOptions::default()).unwrap();
    let grad = rkhs_gradient_expansion(&batch, &policy).unwrap();
    for (i, c) in coeffs.centers.iter().enumerate() {
        assert!((grad.eval(c).unwrap() - coeffs.v[i]).abs() < 1e-10);
    }
}
