//! Online parameter-posterior maintenance.
//!
//! The primary estimator is a Stein variational particle transport toward the
//! unnormalized Bayes target (transition likelihood × kernel-density estimate
//! of the running prior). Unscented-Kalman and sequential-importance-
//! resampling updates are provided as baselines; all three recover the same
//! analytic posterior on the scalar conjugate linear system, which is the
//! shared oracle for this module's test suite.

mod kde;
mod sir;
mod svgd;
mod ukf;

pub use kde::silverman_bandwidth;
pub use sir::{sir_update, SirParticles};
pub use svgd::{log_posterior_grad, median_kernel_bandwidth, svgd_transport, svgd_update, SvgdConfig};
pub use ukf::ukf_update;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::dynamics::Box;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("noise covariance must be symmetric positive-definite: {0}")]
    InvalidNoise(&'static str),
    #[error("kernel bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("at least {required} particles required, got {got}")]
    TooFewParticles { required: usize, got: usize },
    #[error("non-finite gradient at θ = {theta:?}")]
    NonFiniteGradient { theta: Vec<f64> },
    #[error("estimator diverged: {0}")]
    EstimatorDivergence(&'static str),
    #[error(transparent)]
    Dynamics(#[from] crate::dynamics::DynamicsError),
}

/// One observed transition `(x_t, u_t, x_{t+1})` used to update the belief.
#[derive(Debug, Clone)]
pub struct TransitionObservation {
    pub x_prev: DVector<f64>,
    pub u_prev: DVector<f64>,
    pub x_next: DVector<f64>,
}

impl TransitionObservation {
    pub fn new(x_prev: DVector<f64>, u_prev: DVector<f64>, x_next: DVector<f64>) -> Self {
        Self {
            x_prev,
            u_prev,
            x_next,
        }
    }
}

/// Known observation-noise covariance `Σ_ξ` of the transition likelihood,
/// validated symmetric positive-definite at construction.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    cov: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl NoiseModel {
    pub fn new(cov: DMatrix<f64>) -> Result<Self, BeliefError> {
        if cov.nrows() != cov.ncols() {
            return Err(BeliefError::InvalidNoise("matrix is not square"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(BeliefError::InvalidNoise("matrix is not symmetric"));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or(BeliefError::InvalidNoise("matrix is not positive-definite"))?;
        Ok(Self { cov, chol })
    }

    pub fn diagonal(stds: &[f64]) -> Result<Self, BeliefError> {
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(
            stds.len(),
            stds.iter().map(|s| s * s),
        ));
        Self::new(cov)
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `Σ_ξ^{-1} r` via the cached Cholesky factor.
    pub fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(r)
    }

    /// Gaussian log-likelihood of a residual up to the normalization constant.
    pub fn log_likelihood(&self, r: &DVector<f64>) -> f64 {
        -0.5 * r.dot(&self.solve(r))
    }
}

/// Unweighted particle set over the parameter box Θ, with the per-dimension
/// kernel bandwidth of its density estimate.
#[derive(Debug, Clone)]
pub struct ParameterParticles {
    /// `n_θ × N`: one column per particle.
    particles: DMatrix<f64>,
    bounds: Box,
    kde_bandwidth: DVector<f64>,
    /// Accumulated squared transport directions (online AdaGrad state); the
    /// effective step decays as mass accumulates, so the cloud settles into
    /// the posterior instead of jittering at the raw step size.
    transport_mass: Option<DMatrix<f64>>,
}

impl ParameterParticles {
    /// Draw `count` particles i.i.d. uniform from `prior` (clamped into the
    /// model box `bounds` if the prior pokes outside it).
    pub fn from_prior(
        prior: &Box,
        bounds: &Box,
        count: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self, BeliefError> {
        let dim = prior.dim();
        let mut m = DMatrix::zeros(dim, count);
        for i in 0..count {
            for d in 0..dim {
                m[(d, i)] = rng.random_range(prior.lo[d]..=prior.hi[d]);
            }
            let mut col = m.column_mut(i);
            for d in 0..dim {
                col[d] = col[d].clamp(bounds.lo[d], bounds.hi[d]);
            }
        }
        Self::from_matrix(m, bounds.clone())
    }

    pub(crate) fn transport_mass_mut(&mut self) -> &mut Option<DMatrix<f64>> {
        &mut self.transport_mass
    }

    /// Wrap an existing `n_θ × N` particle matrix, projecting into the box
    /// and computing the Silverman bandwidth (requires N ≥ 2).
    pub fn from_matrix(mut particles: DMatrix<f64>, bounds: Box) -> Result<Self, BeliefError> {
        if particles.ncols() < 2 {
            return Err(BeliefError::TooFewParticles {
                required: 2,
                got: particles.ncols(),
            });
        }
        project_columns(&mut particles, &bounds);
        let kde_bandwidth = silverman_bandwidth(&particles, &bounds)?;
        Ok(Self {
            particles,
            bounds,
            kde_bandwidth,
            transport_mass: None,
        })
    }

    /// Wrap a particle matrix with an explicit bandwidth (any N ≥ 1); used by
    /// degenerate-case tests and σ→0 limits where the floor is bypassed.
    pub fn with_bandwidth(
        mut particles: DMatrix<f64>,
        bounds: Box,
        kde_bandwidth: DVector<f64>,
    ) -> Self {
        project_columns(&mut particles, &bounds);
        Self {
            particles,
            bounds,
            kde_bandwidth,
            transport_mass: None,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn bounds(&self) -> &Box {
        &self.bounds
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.particles
    }

    pub fn particle(&self, i: usize) -> DVector<f64> {
        self.particles.column(i).into_owned()
    }

    pub fn kde_bandwidth(&self) -> &DVector<f64> {
        &self.kde_bandwidth
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.dim());
        for i in 0..self.len() {
            mean += self.particles.column(i);
        }
        mean / self.len() as f64
    }

    pub fn std(&self) -> DVector<f64> {
        kde::column_std(&self.particles)
    }

    /// Recompute the Silverman bandwidth from the current particles.
    pub fn refresh_bandwidth(&mut self) -> Result<(), BeliefError> {
        self.kde_bandwidth = silverman_bandwidth(&self.particles, &self.bounds)?;
        Ok(())
    }

    /// Variance-corrected copy used as the frozen chaining prior of the
    /// transport update: kernel centers are shrunk toward the mean by
    /// `a_d = sqrt(1 − f_d²)` (with `f_d` the bandwidth-to-std ratio) so the
    /// mixture's variance equals the sample variance instead of exceeding it
    /// by the bandwidth. Without this, the bandwidth inflates the posterior
    /// at every measurement and the belief plateaus well above the true
    /// posterior spread.
    pub fn shrunk_for_chaining(&self) -> ParameterParticles {
        let mean = self.mean();
        let std = self.std();
        let mut shrunk = self.particles.clone();
        for d in 0..self.dim() {
            let f = if std[d] > 0.0 {
                (self.kde_bandwidth[d] / std[d]).min(1.0)
            } else {
                0.0
            };
            let a = (1.0 - f * f).sqrt();
            for i in 0..self.len() {
                shrunk[(d, i)] = mean[d] + a * (shrunk[(d, i)] - mean[d]);
            }
        }
        ParameterParticles {
            particles: shrunk,
            bounds: self.bounds.clone(),
            kde_bandwidth: self.kde_bandwidth.clone(),
            transport_mass: None,
        }
    }

    pub(crate) fn project_all(&mut self) {
        project_columns(&mut self.particles, &self.bounds);
    }

    /// KDE density at `theta` (never silently −∞; see [`kde::log_density`]).
    pub fn kde_density(&self, theta: &DVector<f64>) -> f64 {
        kde::log_density(&self.particles, &self.kde_bandwidth, theta).exp()
    }

    pub fn kde_log_density(&self, theta: &DVector<f64>) -> f64 {
        kde::log_density(&self.particles, &self.kde_bandwidth, theta)
    }

    /// Gradient of the log KDE at `theta`.
    pub fn kde_log_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        kde::log_density_grad(&self.particles, &self.kde_bandwidth, theta)
    }

    /// Exact draw from the kernel mixture: a uniformly chosen particle plus
    /// kernel-scaled Gaussian noise, clamped into Θ.
    pub fn kde_sample(&self, count: usize, rng: &mut ChaCha12Rng) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let idx = rng.random_range(0..self.len());
            let mut draw = self.particle(idx);
            for d in 0..self.dim() {
                let z: f64 = StandardNormal.sample(rng);
                draw[d] += self.kde_bandwidth[d] * z;
                draw[d] = draw[d].clamp(self.bounds.lo[d], self.bounds.hi[d]);
            }
            out.push(draw);
        }
        out
    }

    /// Serialize one row per particle (columns = parameter dimensions).
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut s = String::new();
        s.push_str(&labels.join(","));
        s.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.dim())
                .map(|d| format!("{}", self.particles[(d, i)]))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

fn project_columns(m: &mut DMatrix<f64>, bounds: &Box) {
    for i in 0..m.ncols() {
        let mut col = m.column_mut(i);
        for d in 0..bounds.dim() {
            col[d] = col[d].clamp(bounds.lo[d], bounds.hi[d]);
        }
    }
}

/// Gaussian parameter belief for the unscented-filter baseline.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self, BeliefError> {
        if Cholesky::new(covariance.clone()).is_none() {
            return Err(BeliefError::InvalidNoise(
                "belief covariance is not positive-definite",
            ));
        }
        Ok(Self { mean, covariance })
    }

    /// Moment-matched Gaussian for a uniform box prior.
    pub fn from_uniform_box(prior: &Box) -> Self {
        let mean = prior.center();
        let var = prior.widths().map(|w| w * w / 12.0);
        Self {
            mean,
            covariance: DMatrix::from_diagonal(&var),
        }
    }

    pub fn sample(&self, count: usize, bounds: &Box, rng: &mut ChaCha12Rng) -> Vec<DVector<f64>> {
        let chol = robust_cholesky(&self.covariance)
            .expect("belief covariance must stay positive-definite");
        let dim = self.mean.len();
        (0..count)
            .map(|_| {
                let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
                let mut draw = &self.mean + chol.l() * z;
                bounds.project(&mut draw);
                draw
            })
            .collect()
    }
}

/// Cholesky with escalating diagonal jitter; `None` if even a large jitter
/// cannot rescue the factorization.
pub(crate) fn robust_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(1e-300);
    for mag in [1e-12, 1e-9, 1e-6] {
        let jittered = m + DMatrix::identity(m.nrows(), m.ncols()) * (mag * scale);
        if let Some(c) = Cholesky::new(jittered) {
            return Some(c);
        }
    }
    None
}

/// Parameter-hypothesis source for the controller: the estimators above, a
/// fixed point value, or a static prior box.
#[derive(Debug, Clone)]
pub enum BeliefSampler<'a> {
    /// Every draw is this exact value (oracle / certainty-equivalent modes).
    Point(&'a DVector<f64>),
    /// Fresh i.i.d. draws from a static box prior (domain randomization).
    Prior { prior: &'a Box, bounds: &'a Box },
    /// Kernel-mixture draws from the particle belief.
    Particles(&'a ParameterParticles),
    /// Gaussian draws clamped into the box.
    Gaussian { belief: &'a GaussianBelief, bounds: &'a Box },
}

impl BeliefSampler<'_> {
    pub fn sample(&self, count: usize, rng: &mut ChaCha12Rng) -> Vec<DVector<f64>> {
        match self {
            BeliefSampler::Point(v) => vec![(*v).clone(); count],
            BeliefSampler::Prior { prior, bounds } => (0..count)
                .map(|_| {
                    let mut draw = DVector::from_fn(prior.dim(), |d, _| {
                        rng.random_range(prior.lo[d]..=prior.hi[d])
                    });
                    bounds.project(&mut draw);
                    draw
                })
                .collect(),
            BeliefSampler::Particles(p) => p.kde_sample(count, rng),
            BeliefSampler::Gaussian { belief, bounds } => belief.sample(count, bounds, rng),
        }
    }

    /// Point estimate used for parameter-accuracy reporting, when one exists.
    pub fn point_estimate(&self) -> Option<DVector<f64>> {
        match self {
            BeliefSampler::Point(v) => Some((*v).clone()),
            BeliefSampler::Prior { .. } => None,
            BeliefSampler::Particles(p) => Some(p.mean()),
            BeliefSampler::Gaussian { belief, .. } => Some(belief.mean.clone()),
        }
    }
}
