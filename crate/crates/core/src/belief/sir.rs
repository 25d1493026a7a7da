//! Sequential importance resampling baseline.
//!
//! Straight Bayesian reweighting by the Gaussian transition likelihood with
//! systematic resampling below an effective-sample-size threshold. Kept as
//! the reference point for the weight-degeneracy failure mode that the Stein
//! transport avoids.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::{BeliefError, NoiseModel, TransitionObservation};
use crate::dynamics::{Box, Model};

#[derive(Debug, Clone)]
pub struct SirParticles {
    /// `n_θ × N`, one column per particle.
    pub particles: DMatrix<f64>,
    /// Normalized weights.
    pub weights: DVector<f64>,
    pub bounds: Box,
}

impl SirParticles {
    pub fn from_prior(prior: &Box, bounds: &Box, count: usize, rng: &mut ChaCha12Rng) -> Self {
        let mut m = DMatrix::zeros(prior.dim(), count);
        for i in 0..count {
            for d in 0..prior.dim() {
                m[(d, i)] = rng
                    .random_range(prior.lo[d]..=prior.hi[d])
                    .clamp(bounds.lo[d], bounds.hi[d]);
            }
        }
        Self {
            particles: m,
            weights: DVector::from_element(count, 1.0 / count as f64),
            bounds: bounds.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.particles.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.ncols() == 0
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.particles.nrows());
        for i in 0..self.len() {
            mean += self.particles.column(i) * self.weights[i];
        }
        mean
    }

    pub fn std(&self) -> DVector<f64> {
        let mean = self.mean();
        let mut var = DVector::zeros(self.particles.nrows());
        for i in 0..self.len() {
            let d = self.particles.column(i) - &mean;
            for k in 0..var.len() {
                var[k] += self.weights[i] * d[k] * d[k];
            }
        }
        var.map(f64::sqrt)
    }
}

/// Reweight by the transition likelihood; resample systematically when the
/// effective sample size drops below `resample_threshold · N`. All-zero
/// likelihoods reset to uniform weights with a diagnostic.
pub fn sir_update(
    filter: &mut SirParticles,
    model: &dyn Model,
    obs: &TransitionObservation,
    noise: &NoiseModel,
    resample_threshold: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(), BeliefError> {
    let n = filter.len();
    let d = model.descriptor();
    let mut buf = vec![0.0; d.n_x];

    let mut log_w = Vec::with_capacity(n);
    for i in 0..n {
        let theta = filter.particles.column(i);
        model.step_raw(
            obs.x_prev.as_slice(),
            obs.u_prev.as_slice(),
            theta.as_slice(),
            &mut buf,
        );
        let predicted = DVector::from_column_slice(&buf);
        let residual = &obs.x_next - predicted;
        let ll = if residual.iter().all(|v| v.is_finite()) {
            noise.log_likelihood(&residual)
        } else {
            f64::NEG_INFINITY
        };
        log_w.push(filter.weights[i].ln() + ll);
    }

    let mx = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        log::warn!("all transition likelihoods vanished; resetting SIR weights to uniform");
        filter.weights.fill(1.0 / n as f64);
        return Ok(());
    }
    let mut sum = 0.0;
    for (i, lw) in log_w.iter().enumerate() {
        let w = (lw - mx).exp();
        filter.weights[i] = w;
        sum += w;
    }
    filter.weights /= sum;

    if filter.effective_sample_size() < resample_threshold * n as f64 {
        systematic_resample(filter, rng);
    }
    Ok(())
}

fn systematic_resample(filter: &mut SirParticles, rng: &mut ChaCha12Rng) {
    let n = filter.len();
    let u0: f64 = rng.random_range(0.0..1.0);
    let mut out = DMatrix::zeros(filter.particles.nrows(), n);
    let mut cum = 0.0;
    let mut i = 0usize;
    for j in 0..n {
        let target = (j as f64 + u0) / n as f64;
        while cum + filter.weights[i] < target && i + 1 < n {
            cum += filter.weights[i];
            i += 1;
        }
        out.set_column(j, &filter.particles.column(i));
    }
    filter.particles = out;
    filter.weights.fill(1.0 / n as f64);
}
