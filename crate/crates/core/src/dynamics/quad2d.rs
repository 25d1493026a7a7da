//! Planar quadrotor rigid-body model.
//!
//! State `[p_x, p_z, ṗ_x, ṗ_z, α, α̇]`, parameters `θ = (m, I_z)`. The two
//! inputs are per-rotor thrust offsets from the nominal hover feed-forward
//! (`T_i = u_i + m_nom g / 2`), so a zero control sequence hovers instead of
//! free-falling when the optimizer starts from zeros.
//!
//! ```text
//! p̈_x = −(T₁+T₂) sin α / m
//! p̈_z =  (T₁+T₂) cos α / m − g
//! α̈  =  d (T₂−T₁) / I_z
//! ```

use nalgebra::{DMatrix, DVector};

use super::integrate::{rk4_param_jacobian, rk4_step};
use super::{Box, Model, ModelDescriptor};

#[derive(Debug, Clone)]
pub struct PlanarQuadrotor {
    descriptor: ModelDescriptor,
    pub gravity: f64,
    /// Effective moment arm of the rotor pair about the body axis (m).
    pub arm: f64,
    /// Hover feed-forward added to each input (N), from the nominal mass.
    pub hover_thrust: f64,
}

impl Default for PlanarQuadrotor {
    fn default() -> Self {
        Self::new(0.027, 1.4e-5, 9.81, 0.028, 0.25, 0.02)
    }
}

impl PlanarQuadrotor {
    pub fn new(
        nominal_mass: f64,
        nominal_inertia: f64,
        gravity: f64,
        arm: f64,
        max_thrust: f64,
        dt: f64,
    ) -> Self {
        let hover_thrust = nominal_mass * gravity / 2.0;
        let descriptor = ModelDescriptor {
            name: "quad2d".to_string(),
            n_x: 6,
            n_u: 2,
            n_theta: 2,
            dt,
            nominal_params: DVector::from_vec(vec![nominal_mass, nominal_inertia]),
            param_bounds: Box::from_pairs(&[
                (0.25 * nominal_mass, 2.5 * nominal_mass),
                (0.25 * nominal_inertia, 2.5 * nominal_inertia),
            ]),
            param_labels: vec!["mass".to_string(), "inertia_z".to_string()],
            control_limits: Box::from_pairs(&[
                (-hover_thrust, max_thrust - hover_thrust),
                (-hover_thrust, max_thrust - hover_thrust),
            ]),
        };
        descriptor.validate();
        Self {
            descriptor,
            gravity,
            arm,
            hover_thrust,
        }
    }

    fn deriv(&self, x: &[f64], u: &[f64], theta: &[f64], dx: &mut [f64]) {
        let (m, iz) = (theta[0], theta[1]);
        let (alpha, omega) = (x[4], x[5]);
        let t1 = u[0] + self.hover_thrust;
        let t2 = u[1] + self.hover_thrust;
        let total = t1 + t2;
        let (s, c) = alpha.sin_cos();

        dx[0] = x[2];
        dx[1] = x[3];
        dx[2] = -total * s / m;
        dx[3] = total * c / m - self.gravity;
        dx[4] = omega;
        dx[5] = self.arm * (t2 - t1) / iz;
    }

    fn deriv_jacobians(&self, x: &[f64], u: &[f64], theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (m, iz) = (theta[0], theta[1]);
        let alpha = x[4];
        let t1 = u[0] + self.hover_thrust;
        let t2 = u[1] + self.hover_thrust;
        let total = t1 + t2;
        let (s, c) = alpha.sin_cos();

        let mut a = DMatrix::zeros(6, 6);
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a[(2, 4)] = -total * c / m;
        a[(3, 4)] = -total * s / m;
        a[(4, 5)] = 1.0;

        let mut g = DMatrix::zeros(6, 2);
        g[(2, 0)] = total * s / (m * m);
        g[(3, 0)] = -total * c / (m * m);
        g[(5, 1)] = -self.arm * (t2 - t1) / (iz * iz);

        (a, g)
    }
}

impl Model for PlanarQuadrotor {
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
