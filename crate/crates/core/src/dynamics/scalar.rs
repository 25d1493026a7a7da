//! One-dimensional linear map `x_{t+1} = θ · x_t`, used as the conjugate
//! Bayesian oracle for the estimator test suites and as a minimal example of
//! a discrete-time model that overrides the RK4 default.

use nalgebra::{DMatrix, DVector};

use super::{Box, Model, ModelDescriptor};

#[derive(Debug, Clone)]
pub struct ScalarLinear {
    descriptor: ModelDescriptor,
}

impl Default for ScalarLinear {
    fn default() -> Self {
        Self::new(-10.0, 10.0)
    }
}

impl ScalarLinear {
    pub fn new(lo: f64, hi: f64) -> Self {
        let descriptor = ModelDescriptor {
            name: "scalar_linear".to_string(),
            n_x: 1,
            n_u: 1,
            n_theta: 1,
            dt: 1.0,
            nominal_params: DVector::from_vec(vec![0.5 * (lo + hi)]),
            param_bounds: Box::from_pairs(&[(lo, hi)]),
            param_labels: vec!["gain".to_string()],
            control_limits: Box::from_pairs(&[(-1.0, 1.0)]),
        };
        Self { descriptor }
    }
}

impl Model for ScalarLinear {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    fn step_raw(&self, x: &[f64], _u: &[f64], theta: &[f64], next: &mut [f64]) {
        next[0] = theta[0] * x[0];
    }

    fn step_param_jacobian_raw(&self, x: &[f64], _u: &[f64], _theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x[0])
    }
}
