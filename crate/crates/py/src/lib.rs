//! Python bindings: the dynamics models, the particle belief, the conformal
//! certification helpers and the benchmark runner.
//!
//! Build with `cargo build --release -p prmppi-py`, then import the cdylib
//! as `prmppi_py` (see `python/smoke_test.py` for a loader that works
//! without maturin).

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use prmppi::belief::{
    svgd_update, NoiseModel, ParameterParticles, SvgdConfig, TransitionObservation,
};
use prmppi::dynamics;
use prmppi::safety;
use prmppi::stream_rng;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(format!("{e}"))
}

fn vec_to_dvector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

/// A parametric simulation model from the registry.
#[pyclass]
struct Model {
    inner: Box<dyn dynamics::Model>,
}

#[pymethods]
impl Model {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: dynamics::make_model(name).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.descriptor().name.clone()
    }

    #[getter]
    fn n_x(&self) -> usize {
        self.inner.descriptor().n_x
    }

    #[getter]
    fn n_u(&self) -> usize {
        self.inner.descriptor().n_u
    }

    #[getter]
    fn n_theta(&self) -> usize {
        self.inner.descriptor().n_theta
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.descriptor().dt
    }

    #[getter]
    fn nominal_params(&self) -> Vec<f64> {
        self.inner.descriptor().nominal_params.as_slice().to_vec()
    }

    #[getter]
    fn param_labels(&self) -> Vec<String> {
        self.inner.descriptor().param_labels.clone()
    }

    #[getter]
    fn param_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let b = &self.inner.descriptor().param_bounds;
        (b.lo.as_slice().to_vec(), b.hi.as_slice().to_vec())
    }

    /// One discrete step `x_{k+1} = f(x, u, theta)`.
    fn step(&self, x: Vec<f64>, u: Vec<f64>, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        dynamics::step(
            self.inner.as_ref(),
            &vec_to_dvector(x),
            &vec_to_dvector(u),
            &vec_to_dvector(theta),
        )
        .map(|v| v.as_slice().to_vec())
        .map_err(err)
    }

    /// Jacobian of the discrete step with respect to the parameters,
    /// returned as `n_x` rows of length `n_theta`.
    fn param_jacobian(
        &self,
        x: Vec<f64>,
        u: Vec<f64>,
        theta: Vec<f64>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let jac = dynamics::param_jacobian(
            self.inner.as_ref(),
            &vec_to_dvector(x),
            &vec_to_dvector(u),
            &vec_to_dvector(theta),
        )
        .map_err(err)?;
        Ok((0..jac.nrows())
            .map(|i| (0..jac.ncols()).map(|j| jac[(i, j)]).collect())
            .collect())
    }

    /// Roll a control sequence (list of per-step controls) out from `x0`,
    /// returning the N+1 visited states.
    fn rollout(
        &self,
        x0: Vec<f64>,
        controls: Vec<Vec<f64>>,
        theta: Vec<f64>,
    ) -> PyResult<Vec<Vec<f64>>> {
        let d = self.inner.descriptor();
        let horizon = controls.len();
        let seq = DMatrix::from_fn(d.n_u, horizon, |i, k| controls[k][i]);
        let tensor = dynamics::batch_rollout(
            self.inner.as_ref(),
            &vec_to_dvector(x0),
            &[seq],
            &[vec_to_dvector(theta)],
        )
        .map_err(err)?;
        Ok((0..=horizon)
            .map(|k| tensor.state(0, 0, k).to_vec())
            .collect())
    }
}

/// Stein particle belief over a model's parameters.
#[pyclass]
struct ParticleBelief {
    particles: ParameterParticles,
    model: Box<dyn dynamics::Model>,
    noise: NoiseModel,
    svgd: SvgdConfig,
    rng: rand_chacha::ChaCha12Rng,
}

#[pymethods]
impl ParticleBelief {
    /// Initialize from a uniform prior box over the parameters.
    #[new]
    #[pyo3(signature = (model_name, prior_lo, prior_hi, count, sigma_xi, seed=0))]
    fn new(
        model_name: &str,
        prior_lo: Vec<f64>,
        prior_hi: Vec<f64>,
        count: usize,
        sigma_xi: Vec<f64>,
        seed: u64,
    ) -> PyResult<Self> {
        let model = dynamics::make_model(model_name).map_err(err)?;
        if prior_lo.len() != model.descriptor().n_theta || prior_hi.len() != prior_lo.len() {
            return Err(PyValueError::new_err("prior box dimension mismatch"));
        }
        let prior = dynamics::Box::new(vec_to_dvector(prior_lo), vec_to_dvector(prior_hi));
        let mut rng = stream_rng(seed, 3);
        let particles =
            ParameterParticles::from_prior(&prior, &model.descriptor().param_bounds, count, &mut rng)
                .map_err(err)?;
        let noise = NoiseModel::diagonal(&sigma_xi).map_err(err)?;
        Ok(Self {
            particles,
            model,
            noise,
            svgd: SvgdConfig::default(),
            rng: stream_rng(seed, 2),
        })
    }

    /// Transport the particles toward the posterior given one observed
    /// transition.
    fn update(&mut self, x_prev: Vec<f64>, u: Vec<f64>, x_next: Vec<f64>) -> PyResult<()> {
        let obs = TransitionObservation::new(
            vec_to_dvector(x_prev),
            vec_to_dvector(u),
            vec_to_dvector(x_next),
        );
        svgd_update(
            &mut self.particles,
            self.model.as_ref(),
            &obs,
            &self.noise,
            &self.svgd,
        )
        .map_err(err)
    }

    fn mean(&self) -> Vec<f64> {
        self.particles.mean().as_slice().to_vec()
    }

    fn std(&self) -> Vec<f64> {
        self.particles.std().as_slice().to_vec()
    }

    fn particles(&self) -> Vec<Vec<f64>> {
        (0..self.particles.len())
            .map(|i| self.particles.particle(i).as_slice().to_vec())
            .collect()
    }

    fn bandwidth(&self) -> Vec<f64> {
        self.particles.kde_bandwidth().as_slice().to_vec()
    }

    /// Draw parameter hypotheses from the kernel mixture.
    fn sample(&mut self, count: usize) -> Vec<Vec<f64>> {
        self.particles
            .kde_sample(count, &mut self.rng)
            .into_iter()
            .map(|v| v.as_slice().to_vec())
            .collect()
    }

    fn log_density(&self, theta: Vec<f64>) -> f64 {
        self.particles.kde_log_density(&vec_to_dvector(theta))
    }
}

/// Conformal order-statistic rank `ceil((P+1)(1-delta))`.
#[pyfunction]
fn conformal_rank(p: usize, delta: f64) -> PyResult<usize> {
    safety::conformal_rank(p, delta).map_err(err)
}

/// Robustness of a non-conformity score batch: returns
/// `(robustness, rank, certified)`.
#[pyfunction]
fn robustness(scores: Vec<f64>, delta: f64) -> PyResult<(f64, usize, bool)> {
    let v = safety::robustness(&scores, delta).map_err(err)?;
    Ok((v.robustness, v.rank_used, v.certified()))
}

/// Non-conformity score of a trajectory of margins: `-min_k h_k`.
#[pyfunction]
fn nonconformity(margins: Vec<f64>) -> f64 {
    -margins.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Run a benchmark and return the summary as a JSON string (same schema as
/// the CLI's summary.json).
#[pyfunction]
#[pyo3(signature = (environment, controller, trials, seed, episode_steps=None, laps=None, rollouts=None, delta=0.1))]
#[allow(clippy::too_many_arguments)]
fn run_benchmark(
    environment: &str,
    controller: &str,
    trials: usize,
    seed: u64,
    episode_steps: Option<usize>,
    laps: Option<usize>,
    rollouts: Option<usize>,
    delta: f64,
) -> PyResult<String> {
    let config = prmppi::config::RunConfig {
        environment: environment.to_string(),
        controller: controller.to_string(),
        trials: Some(trials),
        base_seed: seed,
        delta,
        episode_steps,
        laps,
        rollouts,
        log_steps: false,
        ..Default::default()
    };
    let resolved = prmppi::config::resolve(config).map_err(err)?;
    let result = prmppi::simlab::run_benchmark(
        &resolved.config.environment,
        &resolved.setup,
        &resolved.overrides,
        resolved.trials,
        resolved.config.base_seed,
    )
    .map_err(err)?;
    serde_json::to_string(&serde_json::json!({
        "summary": result.summary,
        "trials": result.records,
    }))
    .map_err(err)
}

#[pymodule]
fn prmppi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<ParticleBelief>()?;
    m.add_function(wrap_pyfunction!(conformal_rank, m)?)?;
    m.add_function(wrap_pyfunction!(robustness, m)?)?;
    m.add_function(wrap_pyfunction!(nonconformity, m)?)?;
    m.add_function(wrap_pyfunction!(run_benchmark, m)?)?;
    Ok(())
}
