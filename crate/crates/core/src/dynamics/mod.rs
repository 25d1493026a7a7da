//! Parametric discrete-time dynamics models `x_{k+1} = f(x_k, u_k, θ)`.
//!
//! Each model describes a continuous-time system `dx/dt = g(x, u, θ)` that is
//! advanced with fixed-step RK4 at the model's control period, together with
//! the Jacobian `∂f/∂θ` of the discrete step needed by the gradient-based
//! estimators. Models are pure: equal inputs give bit-equal outputs, so a
//! rollout grid can be evaluated from any number of threads.

mod cartpole;
mod integrate;
mod quad2d;
mod quad_payload;
mod rollout;
mod scalar;

pub use cartpole::Cartpole;
pub use quad2d::PlanarQuadrotor;
pub use quad_payload::QuadrotorPayload;
pub use rollout::{batch_rollout, batch_rollout_lenient, RolloutTensor};
pub use scalar::ScalarLinear;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("{context}: expected length {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("integration blew up at rollout index (m={m}, p={p}, k={k}); state = {state:?}")]
    IntegrationBlowup {
        m: usize,
        p: usize,
        k: usize,
        state: Vec<f64>,
    },
    #[error("parameter vector outside the admissible box at index {index}: {value}")]
    ParamOutOfBounds { index: usize, value: f64 },
    #[error("unknown model '{0}' (registered: cartpole, quad2d, quad_payload, scalar_linear)")]
    UnknownModel(String),
}

/// Axis-aligned admissible box for vectors (parameters or controls).
#[derive(Debug, Clone, PartialEq)]
pub struct Box {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Box {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a <= b));
        Self { lo, hi }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self::new(
            DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.0)),
            DVector::from_iterator(pairs.len(), pairs.iter().map(|p| p.1)),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        v.len() == self.dim()
            && v.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    /// Clamp `v` componentwise into the box.
    pub fn project(&self, v: &mut DVector<f64>) {
        for i in 0..v.len() {
            v[i] = v[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn projected(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.project(&mut out);
        out
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.hi - &self.lo
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.hi + &self.lo) * 0.5
    }
}

/// Static description of a model: dimensions, integration step, parameter
/// box, nominal parameter values and input saturation limits.
#[derive(Debug, Clone)]
pub struct ModelDescriptor {
    pub name: String,
    pub n_x: usize,
    pub n_u: usize,
    pub n_theta: usize,
    /// Integration / control period in seconds. Must be positive.
    pub dt: f64,
    pub nominal_params: DVector<f64>,
    pub param_bounds: Box,
    pub param_labels: Vec<String>,
    pub control_limits: Box,
}

impl ModelDescriptor {
    fn validate(&self) {
        assert!(self.dt > 0.0, "dt must be positive");
        assert_eq!(self.nominal_params.len(), self.n_theta);
        assert_eq!(self.param_bounds.dim(), self.n_theta);
        assert_eq!(self.param_labels.len(), self.n_theta);
        assert_eq!(self.control_limits.dim(), self.n_u);
        assert!(
            self.param_bounds.contains(&self.nominal_params),
            "nominal parameters must lie inside the parameter box"
        );
    }
}

/// A parametric dynamics model. `step_raw` advances the state by one control
/// period; `step_param_jacobian_raw` returns `∂ step / ∂ θ` for the same
/// discrete map. Implementations must be deterministic.
pub trait Model: Send + Sync {
    fn descriptor(&self) -> &ModelDescriptor;

    /// Advance one discrete step, writing the next state into `next`.
    /// Inputs are trusted to have the right dimensions (checked by [`step`]).
    fn step_raw(&self, x: &[f64], u: &[f64], theta: &[f64], next: &mut [f64]);

    /// `∂ f / ∂ θ` of the discrete step, shape `n_x × n_theta`.
    fn step_param_jacobian_raw(&self, x: &[f64], u: &[f64], theta: &[f64]) -> DMatrix<f64>;
}

fn check_len(
    context: &'static str,
    got: usize,
    expected: usize,
) -> Result<(), DynamicsError> {
    if got != expected {
        return Err(DynamicsError::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

fn check_inputs(
    model: &dyn Model,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<(), DynamicsError> {
    let d = model.descriptor();
    check_len("state", x.len(), d.n_x)?;
    check_len("control", u.len(), d.n_u)?;
    check_len("params", theta.len(), d.n_theta)?;
    Ok(())
}

/// One discrete step of the model. Errors on dimension mismatch and on a
/// non-finite result (integration blowup), carrying the offending state.
pub fn step(
    model: &dyn Model,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>, DynamicsError> {
    check_inputs(model, x, u, theta)?;
    let mut next = DVector::zeros(model.descriptor().n_x);
    model.step_raw(x.as_slice(), u.as_slice(), theta.as_slice(), next.as_mut_slice());
    if !next.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::IntegrationBlowup {
            m: 0,
            p: 0,
            k: 0,
            state: next.as_slice().to_vec(),
        });
    }
    Ok(next)
}

/// `∂ f / ∂ θ` of the discrete step at `(x, u, θ)`.
pub fn param_jacobian(
    model: &dyn Model,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>, DynamicsError> {
    check_inputs(model, x, u, theta)?;
    let jac = model.step_param_jacobian_raw(x.as_slice(), u.as_slice(), theta.as_slice());
    if !jac.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::IntegrationBlowup {
            m: 0,
            p: 0,
            k: 0,
            state: x.as_slice().to_vec(),
        });
    }
    Ok(jac)
}

/// Central finite differences of the discrete step over each parameter, with
/// a per-parameter relative step of 1e-6 (falling back to 1e-6 of the box
/// width for parameters at zero). Used as the default Jacobian for models
/// without analytic derivatives and as the independent test oracle.
pub fn fd_step_param_jacobian(
    model: &dyn Model,
    x: &[f64],
    u: &[f64],
    theta: &[f64],
    rel_step: f64,
) -> DMatrix<f64> {
    let d = model.descriptor();
    let mut jac = DMatrix::zeros(d.n_x, d.n_theta);
    let mut th = theta.to_vec();
    let mut plus = vec![0.0; d.n_x];
    let mut minus = vec![0.0; d.n_x];
    for j in 0..d.n_theta {
        let scale = if theta[j].abs() > 0.0 {
            theta[j].abs()
        } else {
            d.param_bounds.width(j).max(1.0)
        };
        let h = rel_step * scale;
        th[j] = theta[j] + h;
        model.step_raw(x, u, &th, &mut plus);
        th[j] = theta[j] - h;
        model.step_raw(x, u, &th, &mut minus);
        th[j] = theta[j];
        for i in 0..d.n_x {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Look up a model by its registry name.
pub fn make_model(name: &str) -> Result<std::boxed::Box<dyn Model>, DynamicsError> {
    match name.replace('-', "_").as_str() {
        "cartpole" => Ok(std::boxed::Box::new(Cartpole::default())),
        "quad2d" => Ok(std::boxed::Box::new(PlanarQuadrotor::default())),
        "quad_payload" => Ok(std::boxed::Box::new(QuadrotorPayload::default())),
        "scalar_linear" => Ok(std::boxed::Box::new(ScalarLinear::default())),
        other => Err(DynamicsError::UnknownModel(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_inputs(
        model: &dyn Model,
        rng: &mut ChaCha12Rng,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let d = model.descriptor();
        let x = DVector::from_fn(d.n_x, |i, _| {
            // Keep angles and rates in a tame range so FD stays well conditioned.
            let scale = if i < d.n_x / 2 { 0.8 } else { 0.6 };
            rng.random_range(-scale..scale)
        });
        let u = DVector::from_fn(d.n_u, |i, _| {
            rng.random_range(d.control_limits.lo[i]..=d.control_limits.hi[i])
        });
        let th = DVector::from_fn(d.n_theta, |i, _| {
            let (lo, hi) = (d.param_bounds.lo[i], d.param_bounds.hi[i]);
            // Stay off the box edges so central differences remain interior.
            let pad = 0.05 * (hi - lo);
            rng.random_range(lo + pad..hi - pad)
        });
        (x, u, th)
    }

    #[test]
    fn param_jacobian_matches_finite_differences() {
        // Analytic (or documented-FD) Jacobians against an independent
        // central-difference oracle at a different step size.
        for name in ["cartpole", "quad2d", "quad_payload"] {
            let model = make_model(name).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(42);
            for _ in 0..100 {
                let (x, u, th) = random_inputs(model.as_ref(), &mut rng);
                let jac = param_jacobian(model.as_ref(), &x, &u, &th).unwrap();
                let oracle = fd_step_param_jacobian(
                    model.as_ref(),
                    x.as_slice(),
                    u.as_slice(),
                    th.as_slice(),
                    3e-5,
                );
                let denom = oracle.amax().max(1e-9);
                let err = (&jac - &oracle).amax() / denom;
                assert!(
                    err <= 1e-4,
                    "{name}: relative Jacobian error {err:.3e} at x={x:?} u={u:?} th={th:?}"
                );
            }
        }
    }

    #[test]
    fn step_is_deterministic() {
        let model = make_model("cartpole").unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (x, u, th) = random_inputs(model.as_ref(), &mut rng);
        let a = step(model.as_ref(), &x, &u, &th).unwrap();
        let b = step(model.as_ref(), &x, &u, &th).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = make_model("cartpole").unwrap();
        let bad = step(
            model.as_ref(),
            &DVector::zeros(3),
            &DVector::zeros(1),
            &DVector::from_vec(vec![1.0, 0.1]),
        );
        assert!(matches!(
            bad,
            Err(DynamicsError::DimensionMismatch { context: "state", .. })
        ));
    }

    #[test]
    fn unknown_model_is_an_error() {
        assert!(matches!(
            make_model("pendubot"),
            Err(DynamicsError::UnknownModel(_))
        ));
    }
}
