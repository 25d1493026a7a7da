//! Benchmark metrics: tracking RMSE, parameter accuracy and μ ± σ summaries.

use nalgebra::DVector;

/// Root of the mean squared Euclidean position error over aligned
/// trajectory/reference pairs. Only the listed position indices enter.
pub fn compute_rmse(
    trajectory: &[DVector<f64>],
    reference: &[DVector<f64>],
    position_indices: &[usize],
) -> f64 {
    assert!(!trajectory.is_empty());
    assert!(trajectory.len() <= reference.len());
    let mut acc = 0.0;
    for (x, r) in trajectory.iter().zip(reference.iter()) {
        for &i in position_indices {
            let e = x[i] - r[i];
            acc += e * e;
        }
    }
    (acc / trajectory.len() as f64).sqrt()
}

/// Parameter accuracy in percent: `100 · max(0, 1 − mean_i |θ̂_i − θ*_i| / |θ*_i|)`
/// over the components with a nonzero true value (zero components are
/// excluded with a diagnostic since their relative error is undefined).
pub fn compute_pa(estimate: &DVector<f64>, true_params: &DVector<f64>) -> f64 {
    assert_eq!(estimate.len(), true_params.len());
    let mut sum = 0.0;
    let mut used = 0usize;
    for i in 0..true_params.len() {
        if true_params[i] == 0.0 {
            log::debug!("parameter {i} has a zero true value; excluded from accuracy");
            continue;
        }
        sum += (estimate[i] - true_params[i]).abs() / true_params[i].abs();
        used += 1;
    }
    if used == 0 {
        return 0.0;
    }
    (100.0 * (1.0 - sum / used as f64)).clamp(0.0, 100.0)
}

/// Sample mean and standard deviation (n−1 denominator; σ = 0 for n ≤ 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn rmse_of_a_perfect_track_is_zero() {
        let traj: Vec<DVector<f64>> =
            (0..10).map(|t| DVector::from_vec(vec![t as f64, 1.0])).collect();
        assert_eq!(compute_rmse(&traj, &traj, &[0, 1]), 0.0);
    }

    #[test]
    fn constant_offset_gives_that_offset() {
        let traj: Vec<DVector<f64>> =
            (0..50).map(|t| DVector::from_vec(vec![t as f64 + 0.3, 0.0])).collect();
        let refs: Vec<DVector<f64>> =
            (0..50).map(|t| DVector::from_vec(vec![t as f64, 0.0])).collect();
        assert_relative_eq!(compute_rmse(&traj, &refs, &[0]), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn rmse_matches_streaming_oracle() {
        // Two-pass formula vs an independent one-pass accumulation.
        let mut rng = crate::stream_rng(17, 0);
        let traj: Vec<DVector<f64>> = (0..64)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let refs: Vec<DVector<f64>> = (0..64)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let idx = [0usize, 2];
        let got = compute_rmse(&traj, &refs, &idx);

        let mut count = 0.0;
        let mut mean_sq = 0.0;
        for (x, r) in traj.iter().zip(refs.iter()) {
            let mut sq = 0.0;
            for &i in &idx {
                sq += (x[i] - r[i]).powi(2);
            }
            count += 1.0;
            mean_sq += (sq - mean_sq) / count;
        }
        assert_relative_eq!(got, mean_sq.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn pa_formula_cases() {
        let truth = DVector::from_vec(vec![2.0]);
        assert_relative_eq!(compute_pa(&truth, &truth), 100.0);
        assert_relative_eq!(
            compute_pa(&DVector::from_vec(vec![2.2]), &truth),
            90.0,
            epsilon = 1e-9
        );
        assert_relative_eq!(compute_pa(&DVector::from_vec(vec![6.0]), &truth), 0.0);
    }

    #[test]
    fn pa_excludes_zero_components() {
        let truth = DVector::from_vec(vec![1.0, 0.0]);
        let est = DVector::from_vec(vec![1.0, 5.0]);
        assert_relative_eq!(compute_pa(&est, &truth), 100.0);
    }

    #[test]
    fn pa_improves_monotonically_toward_the_truth() {
        let truth = DVector::from_vec(vec![1.0, 0.1]);
        let far = DVector::from_vec(vec![1.4, 0.13]);
        let near = DVector::from_vec(vec![1.2, 0.11]);
        assert!(compute_pa(&near, &truth) > compute_pa(&far, &truth));
    }

    #[test]
    fn mean_std_degenerate_cases() {
        let (m, s) = mean_std(&[3.5]);
        assert_eq!((m, s), (3.5, 0.0));
        let (m, s) = mean_std(&[2.0, 2.0, 2.0]);
        assert_eq!((m, s), (2.0, 0.0));
    }

    #[test]
    fn summary_is_permutation_invariant() {
        let vals = [0.4, 1.7, 0.9, 2.2, 1.1];
        let mut rev = vals;
        rev.reverse();
        let (m1, s1) = mean_std(&vals);
        let (m2, s2) = mean_std(&rev);
        assert_relative_eq!(m1, m2, epsilon = 1e-12);
        assert_relative_eq!(s1, s2, epsilon = 1e-12);
    }
}
