//! Core path-integral optimizer: perturbation sampling, importance weighting
//! and the weighted control-sequence update shared by every controller
//! variant.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{Box, RolloutTensor};

#[derive(Debug, Error)]
pub enum MppiError {
    #[error("all sampled control sequences are infeasible (every cost is +inf)")]
    DegenerateBatch,
    #[error("inverse temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("perturbation covariance must be symmetric positive-semidefinite")]
    InvalidCovariance,
}

/// Horizon-length matrix of control vectors, one column per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    controls: DMatrix<f64>,
}

impl ControlSequence {
    pub fn zeros(n_u: usize, horizon: usize) -> Self {
        Self {
            controls: DMatrix::zeros(n_u, horizon),
        }
    }

    pub fn from_matrix(controls: DMatrix<f64>) -> Self {
        Self { controls }
    }

    pub fn n_u(&self) -> usize {
        self.controls.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.controls.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.controls
    }

    /// Control at step `k` as a contiguous slice (columns of a column-major
    /// matrix are contiguous).
    pub fn step(&self, k: usize) -> &[f64] {
        let n = self.n_u();
        &self.controls.as_slice()[k * n..(k + 1) * n]
    }

    pub fn first(&self) -> DVector<f64> {
        self.controls.column(0).into_owned()
    }

    pub fn saturate(&mut self, limits: &Box) {
        for k in 0..self.horizon() {
            let mut col = self.controls.column_mut(k);
            for d in 0..col.len() {
                col[d] = col[d].clamp(limits.lo[d], limits.hi[d]);
            }
        }
    }

    pub fn saturated(&self, limits: &Box) -> Self {
        let mut out = self.clone();
        out.saturate(limits);
        out
    }
}

/// Per-step Gaussian perturbation covariance and the inverse temperature of
/// the importance weights.
///
/// `correlation` is the AR(1) coefficient across the horizon: 0 gives
/// independent per-step perturbations, values near 1 concentrate the
/// exploration energy at low frequencies (sustained pushes) while keeping
/// the per-step marginal covariance exactly `Σ`.
#[derive(Debug, Clone)]
pub struct NoiseConfig {
    cov: DMatrix<f64>,
    factor: Option<DMatrix<f64>>,
    pub beta: f64,
    pub correlation: f64,
}

impl NoiseConfig {
    pub fn new(cov: DMatrix<f64>, beta: f64) -> Result<Self, MppiError> {
        if !(beta > 0.0) {
            return Err(MppiError::NonPositiveTemperature(beta));
        }
        if cov.nrows() != cov.ncols() || (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
            return Err(MppiError::InvalidCovariance);
        }
        // A zero covariance is a legitimate degenerate limit (no exploration).
        let factor = if cov.amax() == 0.0 {
            None
        } else if cov.iter().enumerate().all(|(i, v)| {
            let (r, c) = (i % cov.nrows(), i / cov.nrows());
            r == c || *v == 0.0
        }) {
            if cov.diagonal().iter().any(|v| *v < 0.0) {
                return Err(MppiError::InvalidCovariance);
            }
            Some(DMatrix::from_diagonal(&cov.diagonal().map(f64::sqrt)))
        } else {
            Some(
                Cholesky::new(cov.clone())
                    .ok_or(MppiError::InvalidCovariance)?
                    .l(),
            )
        };
        Ok(Self {
            cov,
            factor,
            beta,
            correlation: 0.0,
        })
    }

    pub fn diagonal(stds: &[f64], beta: f64) -> Result<Self, MppiError> {
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(
            stds.len(),
            stds.iter().map(|s| s * s),
        ));
        Self::new(cov, beta)
    }

    pub fn with_correlation(mut self, rho: f64) -> Result<Self, MppiError> {
        if !(0.0..1.0).contains(&rho) {
            return Err(MppiError::InvalidCovariance);
        }
        self.correlation = rho;
        Ok(self)
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn n_u(&self) -> usize {
        self.cov.nrows()
    }
}

/// Normalized importance-sampling weights over a rollout batch.
#[derive(Debug, Clone)]
pub struct WeightVector {
    pub w: DVector<f64>,
}

/// Draw `count` zero-mean Gaussian perturbation sequences of the given
/// horizon, each step with marginal covariance `Σ` (independent across steps
/// at the default correlation 0, AR(1)-filtered otherwise). Deterministic
/// for a fixed rng stream: draws run in sequence order, then step order,
/// then input dimension.
pub fn sample_perturbations(
    noise: &NoiseConfig,
    count: usize,
    horizon: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<DMatrix<f64>> {
    let n_u = noise.n_u();
    let rho = noise.correlation;
    let fresh = (1.0 - rho * rho).sqrt();
    (0..count)
        .map(|_| {
            let mut seq = DMatrix::zeros(n_u, horizon);
            if let Some(factor) = &noise.factor {
                let mut prev = DVector::zeros(n_u);
                for k in 0..horizon {
                    let z = DVector::from_fn(n_u, |_, _| StandardNormal.sample(rng));
                    let step = if k == 0 || rho == 0.0 {
                        factor * z
                    } else {
                        &prev * rho + factor * z * fresh
                    };
                    seq.set_column(k, &step);
                    prev = step;
                }
            }
            seq
        })
        .collect()
}

/// Exponential weights `w_m ∝ exp(−(J_m − ρ)/β)` with `ρ = min_m J_m`
/// subtracted for numerical stability. Costs may be +∞ (infeasible markers);
/// an all-infinite batch is the degenerate error the caller must handle.
pub fn importance_weights(costs: &[f64], beta: f64) -> Result<WeightVector, MppiError> {
    if !(beta > 0.0) {
        return Err(MppiError::NonPositiveTemperature(beta));
    }
    let rho = costs
        .iter()
        .cloned()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !rho.is_finite() {
        return Err(MppiError::DegenerateBatch);
    }
    let mut w = DVector::zeros(costs.len());
    let mut eta = 0.0;
    for (i, c) in costs.iter().enumerate() {
        let v = if c.is_finite() {
            (-(c - rho) / beta).exp()
        } else {
            0.0
        };
        w[i] = v;
        eta += v;
    }
    w /= eta;
    Ok(WeightVector { w })
}

/// Convex combination `Σ_m w_m V_m` of the sequences, saturated to the
/// control box afterwards so the averaged sequence respects the limits
/// exactly.
pub fn weighted_update(
    sequences: &[ControlSequence],
    weights: &WeightVector,
    limits: &Box,
) -> ControlSequence {
    assert_eq!(sequences.len(), weights.w.len());
    assert!(!sequences.is_empty());
    let mut acc = DMatrix::zeros(sequences[0].n_u(), sequences[0].horizon());
    for (seq, w) in sequences.iter().zip(weights.w.iter()) {
        acc += seq.matrix() * *w;
    }
    let mut out = ControlSequence::from_matrix(acc);
    out.saturate(limits);
    out
}

/// Trajectory cost of stage index, state and control.
pub trait CostFunction: Sync {
    fn stage(&self, k: usize, x: &[f64], u: &[f64]) -> f64;
    fn terminal(&self, x: &[f64]) -> f64;
}

/// Per-sequence expected trajectory cost over the P parameter hypotheses:
/// `mean_p [ Σ_{k=0}^{N−1} ℓ(x_k, u_k) + L(x_N) ]`. A diverged or otherwise
/// non-finite cell marks the whole sequence +∞.
pub fn expected_cost(
    tensor: &RolloutTensor,
    sequences: &[ControlSequence],
    cost: &dyn CostFunction,
) -> Vec<f64> {
    assert_eq!(tensor.n_seq, sequences.len());
    (0..tensor.n_seq)
        .into_par_iter()
        .map(|m| {
            let mut total = 0.0;
            for p in 0..tensor.n_param {
                if tensor.diverged(m, p).is_some() {
                    return f64::INFINITY;
                }
                let mut traj_cost = 0.0;
                for k in 0..tensor.horizon {
                    traj_cost += cost.stage(k, tensor.state(m, p, k), sequences[m].step(k));
                }
                traj_cost += cost.terminal(tensor.state(m, p, tensor.horizon));
                if !traj_cost.is_finite() {
                    return f64::INFINITY;
                }
                total += traj_cost;
            }
            total / tensor.n_param as f64
        })
        .collect()
}
