//! Gaussian kernel density estimation over the particle set.

use nalgebra::{DMatrix, DVector};

use super::BeliefError;
use crate::dynamics::Box;

/// Log densities below this are clamped (exp underflows to 0 around −745).
const LOG_DENSITY_FLOOR: f64 = -745.0;

/// Fraction of the box width used as the bandwidth floor per dimension.
const BANDWIDTH_FLOOR_FRAC: f64 = 1e-4;

const LOG_2PI: f64 = 1.837877066409345;

pub(crate) fn column_std(particles: &DMatrix<f64>) -> DVector<f64> {
    let n = particles.ncols();
    let dim = particles.nrows();
    let mut mean = DVector::zeros(dim);
    for i in 0..n {
        mean += particles.column(i);
    }
    mean /= n as f64;
    let mut var = DVector::zeros(dim);
    for i in 0..n {
        let d = particles.column(i) - &mean;
        for k in 0..dim {
            var[k] += d[k] * d[k];
        }
    }
    if n > 1 {
        var /= (n - 1) as f64;
    }
    var.map(f64::sqrt)
}

/// Per-dimension Silverman bandwidth
/// `σ_d = std_d · (4 / ((n_θ + 2) N))^{1/(n_θ + 4)}`,
/// floored at a small fraction of the box width so a collapsed particle set
/// never produces a zero (or undefined) kernel.
pub fn silverman_bandwidth(
    particles: &DMatrix<f64>,
    bounds: &Box,
) -> Result<DVector<f64>, BeliefError> {
    let n = particles.ncols();
    if n < 2 {
        return Err(BeliefError::TooFewParticles { required: 2, got: n });
    }
    let dim = particles.nrows();
    let factor = (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0));
    let std = column_std(particles);
    let mut bw = DVector::zeros(dim);
    for d in 0..dim {
        let floor = BANDWIDTH_FLOOR_FRAC * bounds.width(d).max(f64::MIN_POSITIVE);
        let raw = std[d] * factor;
        if raw < floor {
            log::warn!(
                "degenerate particle spread in dimension {d} (std {:.3e}); bandwidth floored to {floor:.3e}",
                std[d]
            );
            bw[d] = floor;
        } else {
            bw[d] = raw;
        }
    }
    Ok(bw)
}

/// Per-particle log kernel values `log K_σ(θ, θ^{(i)})` (normalized Gaussian).
fn log_kernels(particles: &DMatrix<f64>, bw: &DVector<f64>, theta: &DVector<f64>) -> Vec<f64> {
    let dim = particles.nrows();
    let mut log_norm = 0.0;
    for d in 0..dim {
        log_norm -= 0.5 * LOG_2PI + bw[d].max(f64::MIN_POSITIVE).ln();
    }
    (0..particles.ncols())
        .map(|i| {
            let mut q = 0.0;
            for d in 0..dim {
                let s = bw[d].max(f64::MIN_POSITIVE);
                let z = (theta[d] - particles[(d, i)]) / s;
                q += z * z;
            }
            log_norm - 0.5 * q
        })
        .collect()
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    let s: f64 = vals.iter().map(|v| (v - mx).exp()).sum();
    mx + s.ln()
}

/// Log of the mixture density `(1/N) Σ_i K_σ(θ, θ^{(i)})`, clamped at the
/// underflow floor instead of returning −∞.
pub fn log_density(particles: &DMatrix<f64>, bw: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let logs = log_kernels(particles, bw, theta);
    let v = log_sum_exp(&logs) - (particles.ncols() as f64).ln();
    if v < LOG_DENSITY_FLOOR {
        log::debug!("KDE density underflow at θ = {theta:?}; clamping log-density");
        LOG_DENSITY_FLOOR
    } else {
        v
    }
}

/// `∇_θ log p(θ)` of the mixture: a kernel-weighted softmax pull toward the
/// particles, finite wherever the (clamped) density is.
pub fn log_density_grad(
    particles: &DMatrix<f64>,
    bw: &DVector<f64>,
    theta: &DVector<f64>,
) -> DVector<f64> {
    let logs = log_kernels(particles, bw, theta);
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dim = particles.nrows();
    let mut grad = DVector::zeros(dim);
    let mut total = 0.0;
    for (i, lg) in logs.iter().enumerate() {
        let w = (lg - mx).exp();
        total += w;
        for d in 0..dim {
            let s = bw[d].max(f64::MIN_POSITIVE);
            grad[d] += w * (particles[(d, i)] - theta[d]) / (s * s);
        }
    }
    grad / total
}
