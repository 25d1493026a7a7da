//! Conformal certification of joint chance constraints over rolled-out
//! trajectories.
//!
//! A trajectory's non-conformity score is the negated minimum of the safety
//! margin `h` over the whole horizon; a batch of scores from P i.i.d.
//! parameter hypotheses yields the order-statistic quantile at rank
//! `r = ⌈(P+1)(1−δ)⌉` and with it the robustness `R = −ρ^{(r)}`. `R > 0`
//! certifies that the true trajectory realization stays inside the safe set
//! with probability at least `1−δ`, provided the hypotheses are drawn from
//! the true parameter distribution.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{batch_rollout_lenient, Model, RolloutTensor};

#[derive(Debug, Error)]
pub enum SafetyError {
    #[error("delta must lie strictly inside (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error(
        "insufficient samples for a finite conformal quantile: P = {p} at delta = {delta} \
         (rank {rank} > P; the minimum sample count is ceil((1-delta)/delta) = {required})"
    )]
    InsufficientSamples {
        p: usize,
        delta: f64,
        rank: usize,
        required: usize,
    },
    #[error("empty score batch")]
    EmptyScores,
}

/// Safe set `C = {x : h(x) ≥ 0}` described by its signed margin function.
#[derive(Clone)]
pub struct SafeSet {
    h: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub description: String,
}

impl std::fmt::Debug for SafeSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SafeSet")
            .field("description", &self.description)
            .finish()
    }
}

impl SafeSet {
    pub fn new(
        description: impl Into<String>,
        h: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            h: Arc::new(h),
            description: description.into(),
        }
    }

    /// Everything is safe by a large constant margin.
    pub fn unconstrained() -> Self {
        Self::new("unconstrained", |_| 1e9)
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        (self.h)(x)
    }
}

/// Chance-constraint settings validated against the conformal sample bound.
#[derive(Debug, Clone, Copy)]
pub struct SafetyConfig {
    pub delta: f64,
    pub p: usize,
    pub rank: usize,
}

impl SafetyConfig {
    pub fn new(delta: f64, p: usize) -> Result<Self, SafetyError> {
        let rank = conformal_rank(p, delta)?;
        Ok(Self { delta, p, rank })
    }

    /// Default sample count `P = ⌈1/δ⌉`, matching the evaluated
    /// configurations (δ = 0.1 → P = 10, δ = 0.2 → P = 5, δ = 0.01 → P = 100).
    pub fn default_sample_count(delta: f64) -> usize {
        (1.0 / delta).ceil() as usize
    }
}

/// Conformal certificate for one control sequence: the robustness value, the
/// rank that produced it and the sorted score batch behind it.
#[derive(Debug, Clone)]
pub struct SafetyVerdict {
    pub robustness: f64,
    /// 1-indexed order-statistic rank used for the quantile.
    pub rank_used: usize,
    /// Non-conformity scores in non-decreasing order.
    pub scores: Vec<f64>,
}

impl SafetyVerdict {
    /// Certified safe at level `1−δ` iff the robustness is strictly positive.
    pub fn certified(&self) -> bool {
        self.robustness > 0.0
    }
}

/// Non-conformity score `ρ = −min_k h(x_k)` over all N+1 states of a
/// trajectory stored as a flat `(N+1)·n_x` slice.
pub fn nonconformity(trajectory: &[f64], n_x: usize, safe_set: &SafeSet) -> f64 {
    debug_assert!(n_x > 0 && trajectory.len() % n_x == 0);
    let mut min_margin = f64::INFINITY;
    for state in trajectory.chunks_exact(n_x) {
        let h = safe_set.margin(state);
        if h < min_margin {
            min_margin = h;
        }
    }
    -min_margin
}

/// `r = ⌈(P+1)(1−δ)⌉`, the order-statistic rank of the conformal quantile.
/// Errors when `r > P`, i.e. when the quantile is +∞ and no finite
/// certificate exists.
pub fn conformal_rank(p: usize, delta: f64) -> Result<usize, SafetyError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SafetyError::InvalidDelta(delta));
    }
    if p == 0 {
        return Err(SafetyError::EmptyScores);
    }
    // Snap a hair below the product before ceiling so that values that are
    // mathematically integral do not round up through float error.
    let v = (p as f64 + 1.0) * (1.0 - delta);
    let rank = (v - 1e-9).ceil().max(1.0) as usize;
    if rank > p {
        let required = ((1.0 - delta) / delta - 1e-9).ceil() as usize;
        return Err(SafetyError::InsufficientSamples {
            p,
            delta,
            rank,
            required,
        });
    }
    Ok(rank)
}

/// Sort a batch of non-conformity scores and extract the conformal verdict.
pub fn robustness(scores: &[f64], delta: f64) -> Result<SafetyVerdict, SafetyError> {
    if scores.is_empty() {
        return Err(SafetyError::EmptyScores);
    }
    let rank = conformal_rank(scores.len(), delta)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(SafetyVerdict {
        robustness: -sorted[rank - 1],
        rank_used: rank,
        scores: sorted,
    })
}

/// Roll out every sequence under every parameter hypothesis and certify each
/// sequence from its score batch. The same P hypotheses must be shared by all
/// sequences of one control step (the caller samples them once). Diverged
/// rollouts score +∞ and can never certify.
pub fn evaluate_sequences(
    model: &dyn Model,
    x0: &DVector<f64>,
    sequences: &[DMatrix<f64>],
    params: &[DVector<f64>],
    safe_set: &SafeSet,
    delta: f64,
) -> Result<(RolloutTensor, Vec<SafetyVerdict>), SafetyError> {
    // Fail fast before paying for the rollouts.
    conformal_rank(params.len(), delta)?;
    let tensor = batch_rollout_lenient(model, x0, sequences, params);
    let verdicts = score_tensor(&tensor, safe_set, delta)?;
    Ok((tensor, verdicts))
}

/// Per-sequence verdicts for an already-computed rollout tensor.
pub fn score_tensor(
    tensor: &RolloutTensor,
    safe_set: &SafeSet,
    delta: f64,
) -> Result<Vec<SafetyVerdict>, SafetyError> {
    conformal_rank(tensor.n_param, delta)?;
    (0..tensor.n_seq)
        .into_par_iter()
        .map(|m| {
            let scores: Vec<f64> = (0..tensor.n_param)
                .map(|p| {
                    if tensor.diverged(m, p).is_some() {
                        f64::INFINITY
                    } else {
                        nonconformity(tensor.trajectory(m, p), tensor.n_x, safe_set)
                    }
                })
                .collect();
            robustness(&scores, delta)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::make_model;
    use approx::assert_relative_eq;

    #[test]
    fn nonconformity_is_the_negated_min_margin() {
        let set = SafeSet::new("first coordinate", |x: &[f64]| x[0]);
        let traj = [1.0, 0.5, 2.0];
        assert_relative_eq!(nonconformity(&traj, 1, &set), -0.5);
        let traj = [1.0, -0.2, 0.4];
        assert_relative_eq!(nonconformity(&traj, 1, &set), 0.2);
        let traj = [0.7, 0.7, 0.7];
        assert_relative_eq!(nonconformity(&traj, 1, &set), -0.7);
    }

    #[test]
    fn rank_formula_table() {
        assert_eq!(conformal_rank(10, 0.1).unwrap(), 10);
        assert_eq!(conformal_rank(5, 0.2).unwrap(), 5);
        assert_eq!(conformal_rank(100, 0.01).unwrap(), 100);
        assert_eq!(conformal_rank(20, 0.05).unwrap(), 20);
        assert_eq!(conformal_rank(9, 0.1).unwrap(), 9);
        assert_eq!(conformal_rank(19, 0.1).unwrap(), 18);
    }

    #[test]
    fn insufficient_samples_error_exactly_below_the_bound() {
        // P ≥ ceil((1-δ)/δ) succeeds, one fewer fails.
        for delta in [0.5f64, 0.25, 0.2, 0.1, 0.05, 0.01] {
            let required = ((1.0 - delta) / delta).ceil() as usize;
            assert!(conformal_rank(required, delta).is_ok(), "delta={delta}");
            if required > 1 {
                assert!(
                    matches!(
                        conformal_rank(required - 1, delta),
                        Err(SafetyError::InsufficientSamples { .. })
                    ),
                    "delta={delta}"
                );
            }
        }
    }

    #[test]
    fn constant_scores_give_constant_robustness() {
        let v = robustness(&[-1.0; 10], 0.1).unwrap();
        assert_relative_eq!(v.robustness, 1.0);
        assert!(v.certified());
        let v = robustness(&[0.3; 10], 0.1).unwrap();
        assert_relative_eq!(v.robustness, -0.3);
        assert!(!v.certified());
    }

    #[test]
    fn verdict_is_permutation_invariant() {
        let scores = [0.4, -0.9, 0.1, -0.3, 0.7, -0.1, 0.2, -0.6, 0.9, 0.0];
        let a = robustness(&scores, 0.1).unwrap();
        let mut rev = scores;
        rev.reverse();
        let b = robustness(&rev, 0.1).unwrap();
        assert_eq!(a.robustness, b.robustness);
        assert_eq!(a.rank_used, b.rank_used);
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn robustness_monotone_in_delta() {
        // Stricter guarantee (smaller δ) never increases R.
        let scores: Vec<f64> = (0..40).map(|i| (i as f64) * 0.05 - 1.0).collect();
        let mut prev = f64::INFINITY;
        for delta in [0.4, 0.3, 0.2, 0.1, 0.05] {
            let v = robustness(&scores, delta).unwrap();
            assert!(v.robustness <= prev + 1e-15, "delta={delta}");
            prev = v.robustness;
        }
    }

    #[test]
    fn degenerate_belief_reduces_to_single_rollout_margin() {
        let model = make_model("quad2d").unwrap();
        let x0 = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let seq = DMatrix::zeros(2, 20);
        let theta = DVector::from_vec(vec![0.03, 1.4e-5]);
        let set = SafeSet::new("height band", |x: &[f64]| (x[1] - 0.2).min(1.4 - x[1]));
        let params = vec![theta.clone(); 10];
        let (tensor, verdicts) =
            evaluate_sequences(model.as_ref(), &x0, &[seq], &params, &set, 0.1).unwrap();
        let single = nonconformity(tensor.trajectory(0, 0), 6, &set);
        assert_eq!(verdicts[0].robustness, -single);
    }

    #[test]
    fn unconstrained_set_always_certifies() {
        let model = make_model("cartpole").unwrap();
        let x0 = DVector::from_vec(vec![0.5, 0.0, 0.05, 0.0]);
        let seqs: Vec<DMatrix<f64>> = (0..4)
            .map(|i| DMatrix::from_element(1, 15, (i as f64 - 1.5) * 2.0))
            .collect();
        let params = vec![DVector::from_vec(vec![1.0, 0.1]); 10];
        let (_, verdicts) = evaluate_sequences(
            model.as_ref(),
            &x0,
            &seqs,
            &params,
            &SafeSet::unconstrained(),
            0.1,
        )
        .unwrap();
        for v in verdicts {
            assert!(v.certified());
            assert_relative_eq!(v.robustness, 1e9);
        }
    }

    #[test]
    fn full_descent_into_the_floor_is_never_certified() {
        // A sequence commanding maximum descent must violate the height band
        // for any δ ≤ 0.5; verified against direct simulation of the margin.
        let model = make_model("quad2d").unwrap();
        let x0 = DVector::from_vec(vec![0.0, 0.6, 0.0, 0.0, 0.0, 0.0]);
        let lo = model.descriptor().control_limits.lo.clone();
        let seq = DMatrix::from_fn(2, 50, |i, _| lo[i]);
        let set = SafeSet::new("height band", |x: &[f64]| (x[1] - 0.2).min(1.4 - x[1]));
        let nominal = DVector::from_vec(vec![0.027, 1.4e-5]);
        let params = vec![nominal.clone(); 10];
        for delta in [0.1, 0.3, 0.5] {
            let (_, verdicts) =
                evaluate_sequences(model.as_ref(), &x0, &[seq.clone()], &params, &set, delta)
                    .unwrap();
            assert!(!verdicts[0].certified(), "certified at delta={delta}");
        }
    }
}
