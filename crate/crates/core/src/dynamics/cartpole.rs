//! Frictionless cart-pole with a point-mass pole.
//!
//! State `[p_c, ṗ_c, α, α̇]` with `α` measured from the upright vertical,
//! input a horizontal force on the cart, parameters `θ = (m_c, m_p)`.
//!
//! Equations of motion (Lagrange, point mass `m_p` at distance `l`):
//!
//! ```text
//! p̈_c = (F + m_p l α̇² sin α − m_p g sin α cos α) / (m_c + m_p sin²α)
//! α̈  = (g sin α − p̈_c cos α) / l
//! ```

use nalgebra::{DMatrix, DVector};

use super::integrate::{rk4_param_jacobian, rk4_step};
use super::{Box, Model, ModelDescriptor};

#[derive(Debug, Clone)]
pub struct Cartpole {
    descriptor: ModelDescriptor,
    pub pole_length: f64,
    pub gravity: f64,
}

impl Default for Cartpole {
    fn default() -> Self {
        Self::new(0.5, 9.81, 0.02)
    }
}

impl Cartpole {
    pub fn new(pole_length: f64, gravity: f64, dt: f64) -> Self {
        let descriptor = ModelDescriptor {
            name: "cartpole".to_string(),
            n_x: 4,
            n_u: 1,
            n_theta: 2,
            dt,
            nominal_params: DVector::from_vec(vec![1.0, 0.1]),
            param_bounds: Box::from_pairs(&[(0.2, 3.0), (0.02, 0.5)]),
            param_labels: vec!["cart_mass".to_string(), "pole_mass".to_string()],
            control_limits: Box::from_pairs(&[(-10.0, 10.0)]),
        };
        descriptor.validate();
        Self {
            descriptor,
            pole_length,
            gravity,
        }
    }

    fn deriv(&self, x: &[f64], u: &[f64], theta: &[f64], dx: &mut [f64]) {
        let (mc, mp) = (theta[0], theta[1]);
        let (l, g) = (self.pole_length, self.gravity);
        let (v, alpha, omega) = (x[1], x[2], x[3]);
        let force = u[0];
        let (s, c) = alpha.sin_cos();

        let denom = mc + mp * s * s;
        let acc = (force + mp * l * omega * omega * s - mp * g * s * c) / denom;
        let ang_acc = (g * s - acc * c) / l;

        dx[0] = v;
        dx[1] = acc;
        dx[2] = omega;
        dx[3] = ang_acc;
    }

    /// Continuous-time Jacobians `(∂g/∂x, ∂g/∂θ)` of the derivative field.
    fn deriv_jacobians(&self, x: &[f64], u: &[f64], theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (mc, mp) = (theta[0], theta[1]);
        let (l, g) = (self.pole_length, self.gravity);
        let (alpha, omega) = (x[2], x[3]);
        let force = u[0];
        let (s, c) = alpha.sin_cos();
        let cos2a = c * c - s * s;

        let denom = mc + mp * s * s;
        let num = force + mp * l * omega * omega * s - mp * g * s * c;
        let acc = num / denom;

        let dnum_da = mp * l * omega * omega * c - mp * g * cos2a;
        let ddenom_da = 2.0 * mp * s * c;
        let dacc_da = dnum_da / denom - acc * ddenom_da / denom;
        let dacc_dw = 2.0 * mp * l * omega * s / denom;

        let dang_da = (g * c - dacc_da * c + acc * s) / l;
        let dang_dw = -dacc_dw * c / l;

        let mut a = DMatrix::zeros(4, 4);
        a[(0, 1)] = 1.0;
        a[(1, 2)] = dacc_da;
        a[(1, 3)] = dacc_dw;
        a[(2, 3)] = 1.0;
        a[(3, 2)] = dang_da;
        a[(3, 3)] = dang_dw;

        let dacc_dmc = -acc / denom;
        let dacc_dmp = (l * omega * omega * s - g * s * c) / denom - acc * s * s / denom;

        let mut gm = DMatrix::zeros(4, 2);
        gm[(1, 0)] = dacc_dmc;
        gm[(1, 1)] = dacc_dmp;
        gm[(3, 0)] = -c / l * dacc_dmc;
        gm[(3, 1)] = -c / l * dacc_dmp;

        (a, gm)
    }
}

impl Model for Cartpole {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.descriptor
    }

    fn step_raw(&self, x: &[f64], u: &[f64], theta: &[f64], next: &mut [f64]) {
        rk4_step(
            |s, ds| self.deriv(s, u, theta, ds),
            x,
            self.descriptor.dt,
            next,
        );
    }

    fn step_param_jacobian_raw(&self, x: &[f64], u: &[f64], theta: &[f64]) -> DMatrix<f64> {
        rk4_param_jacobian(
            |s, ds| self.deriv(s, u, theta, ds),
            |s| self.deriv_jacobians(s, u, theta),
            x,
            self.descriptor.dt,
            2,
        )
    }
}
