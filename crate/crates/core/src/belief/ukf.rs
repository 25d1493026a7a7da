//! Unscented Kalman update treating the parameters as a static state.
//!
//! Identity parameter dynamics plus a small process-noise inflation, with the
//! one-step transition `x_next = f(x_prev, u_prev, θ) + ξ` as the measurement
//! model. The unscented transform is exact for measurement maps that are
//! linear in θ, which is what the conjugate-oracle test pins down.

use nalgebra::{DMatrix, DVector};

use super::{robust_cholesky, BeliefError, GaussianBelief, NoiseModel, TransitionObservation};
use crate::dynamics::Model;

pub fn ukf_update(
    belief: &GaussianBelief,
    model: &dyn Model,
    obs: &TransitionObservation,
    noise: &NoiseModel,
    process_noise: &DMatrix<f64>,
) -> Result<GaussianBelief, BeliefError> {
    let n = belief.mean.len();
    let d = model.descriptor();
    assert_eq!(n, d.n_theta);

    // Predict: static parameters, inflate covariance.
    let p_pred = &belief.covariance + process_noise;

    // Sigma points with α = 1, κ = 3 − n (so n + λ = 3), β = 2.
    let lambda = 3.0 - n as f64;
    let c = n as f64 + lambda;
    let scaled = &p_pred * c;
    let chol = robust_cholesky(&scaled)
        .ok_or(BeliefError::EstimatorDivergence("sigma-point Cholesky failed"))?;
    let sqrt = chol.l();

    let count = 2 * n + 1;
    let mut sigma = Vec::with_capacity(count);
    sigma.push(belief.mean.clone());
    for i in 0..n {
        sigma.push(&belief.mean + sqrt.column(i));
    }
    for i in 0..n {
        sigma.push(&belief.mean - sqrt.column(i));
    }

    let w_m0 = lambda / c;
    let w_c0 = w_m0 + 2.0; // + (1 − α² + β) with α = 1, β = 2
    let w_i = 1.0 / (2.0 * c);

    // Propagate sigma points through the measurement model.
    let mut z = Vec::with_capacity(count);
    let mut buf = vec![0.0; d.n_x];
    for s in &sigma {
        let clamped = d.param_bounds.projected(s);
        model.step_raw(
            obs.x_prev.as_slice(),
            obs.u_prev.as_slice(),
            clamped.as_slice(),
            &mut buf,
        );
        z.push(DVector::from_column_slice(&buf));
    }

    let mut z_mean = &z[0] * w_m0;
    for zi in z.iter().skip(1) {
        z_mean += zi * w_i;
    }

    let mut s_z = noise.covariance().clone();
    let mut cross = DMatrix::zeros(n, d.n_x);
    for (i, (s, zi)) in sigma.iter().zip(z.iter()).enumerate() {
        let w = if i == 0 { w_c0 } else { w_i };
        let dz = zi - &z_mean;
        let dth = s - &belief.mean;
        s_z += (&dz * dz.transpose()) * w;
        cross += (&dth * dz.transpose()) * w;
    }

    let s_chol = robust_cholesky(&s_z)
        .ok_or(BeliefError::EstimatorDivergence("innovation Cholesky failed"))?;
    // K = C S⁻¹ computed as (S⁻¹ Cᵀ)ᵀ via triangular solves.
    let gain = s_chol.solve(&cross.transpose()).transpose();

    let innovation = &obs.x_next - &z_mean;
    let mut mean = &belief.mean + &gain * innovation;
    d.param_bounds.project(&mut mean);

    let mut cov = p_pred - &gain * s_z * gain.transpose();
    cov = (&cov + cov.transpose()) * 0.5;
    if robust_cholesky(&cov).is_none() {
        return Err(BeliefError::EstimatorDivergence(
            "posterior covariance lost positive-definiteness",
        ));
    }
    Ok(GaussianBelief { mean, covariance: cov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ScalarLinear;
    use approx::assert_relative_eq;

    #[test]
    fn linear_measurement_matches_exact_kalman_posterior() {
        let model = ScalarLinear::default();
        let sigma = 0.3;
        let noise = NoiseModel::diagonal(&[sigma]).unwrap();
        let q = DMatrix::from_element(1, 1, 0.0);

        let (mu0, var0) = (0.4, 0.25);
        let mut belief = GaussianBelief::new(
            DVector::from_element(1, mu0),
            DMatrix::from_element(1, 1, var0),
        )
        .unwrap();

        let (x, x_next) = (1.7, 1.3);
        let obs = TransitionObservation::new(
            DVector::from_element(1, x),
            DVector::zeros(1),
            DVector::from_element(1, x_next),
        );
        belief = ukf_update(&belief, &model, &obs, &noise, &q).unwrap();

        // Exact scalar Kalman update for z = θ·x + ξ.
        let s = x * x * var0 + sigma * sigma;
        let k = var0 * x / s;
        let mu_exact = mu0 + k * (x_next - mu0 * x);
        let var_exact = var0 - k * k * s;
        assert_relative_eq!(belief.mean[0], mu_exact, epsilon = 1e-8);
        assert_relative_eq!(belief.covariance[(0, 0)], var_exact, epsilon = 1e-8);
    }

    #[test]
    fn covariance_trace_non_increasing_without_process_noise() {
        let model = ScalarLinear::default();
        let noise = NoiseModel::diagonal(&[0.2]).unwrap();
        let q = DMatrix::zeros(1, 1);
        let mut belief = GaussianBelief::new(
            DVector::from_element(1, 0.9),
            DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let obs = TransitionObservation::new(
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
            DVector::from_element(1, 0.8),
        );
        let mut prev = belief.covariance.trace();
        for _ in 0..10 {
            belief = ukf_update(&belief, &model, &obs, &noise, &q).unwrap();
            let tr = belief.covariance.trace();
            assert!(tr <= prev + 1e-12, "trace increased: {prev} -> {tr}");
            prev = tr;
        }
    }
}
