//! Batched forward simulation over the `(sequence, parameter-hypothesis)`
//! grid — the designated parallelism unit of the whole pipeline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{DynamicsError, Model};

/// Dense `M × P × (N+1) × n_x` state tensor from a batch rollout.
///
/// `diverged(m, p)` reports the first step index at which the integrator
/// produced a non-finite state for that cell, if any; states from that index
/// on are frozen at the last finite value so downstream margin evaluations
/// stay finite (the cell is treated as infeasible by cost and safety code).
#[derive(Debug, Clone)]
pub struct RolloutTensor {
    pub n_seq: usize,
    pub n_param: usize,
    /// Horizon N: each trajectory holds N+1 states including x0.
    pub horizon: usize,
    pub n_x: usize,
    states: Vec<f64>,
    diverged: Vec<Option<usize>>,
}

impl RolloutTensor {
    fn traj_len(&self) -> usize {
        (self.horizon + 1) * self.n_x
    }

    /// State `x_{m,p,k}` as a slice of length `n_x`.
    pub fn state(&self, m: usize, p: usize, k: usize) -> &[f64] {
        let base = (m * self.n_param + p) * self.traj_len() + k * self.n_x;
        &self.states[base..base + self.n_x]
    }

    /// Full trajectory `(N+1) · n_x` for one `(m, p)` cell.
    pub fn trajectory(&self, m: usize, p: usize) -> &[f64] {
        let base = (m * self.n_param + p) * self.traj_len();
        &self.states[base..base + self.traj_len()]
    }

    pub fn diverged(&self, m: usize, p: usize) -> Option<usize> {
        self.diverged[m * self.n_param + p]
    }

    /// First divergence over the whole grid, as `(m, p, k)`.
    pub fn first_divergence(&self) -> Option<(usize, usize, usize)> {
        for m in 0..self.n_seq {
            for p in 0..self.n_param {
                if let Some(k) = self.diverged(m, p) {
                    return Some((m, p, k));
                }
            }
        }
        None
    }
}

fn rollout_cell(
    model: &dyn Model,
    x0: &[f64],
    seq: &DMatrix<f64>,
    theta: &[f64],
    horizon: usize,
    n_x: usize,
    out: &mut [f64],
) -> Option<usize> {
    out[..n_x].copy_from_slice(x0);
    let mut scratch = vec![0.0; n_x];
    for k in 0..horizon {
        let (done, rest) = out.split_at_mut((k + 1) * n_x);
        let cur = &done[k * n_x..];
        let u = seq.column(k);
        model.step_raw(cur, u.as_slice(), theta, &mut scratch);
        if !scratch.iter().all(|v| v.is_finite()) {
            // Freeze the remaining states at the last finite one.
            for kk in 0..(horizon - k) {
                rest[kk * n_x..(kk + 1) * n_x].copy_from_slice(cur);
            }
            return Some(k + 1);
        }
        rest[..n_x].copy_from_slice(&scratch);
    }
    None
}

/// Roll out `sequences` under every parameter hypothesis, tolerating
/// integration blowups (the affected cells are flagged).
///
/// Each control sequence is an `n_u × N` matrix (one column per step); all
/// sequences must share the horizon and all parameters must lie in the box.
pub fn batch_rollout_lenient(
    model: &dyn Model,
    x0: &DVector<f64>,
    sequences: &[DMatrix<f64>],
    params: &[DVector<f64>],
) -> RolloutTensor {
    let d = model.descriptor();
    assert_eq!(x0.len(), d.n_x, "initial state dimension");
    let horizon = sequences.first().map_or(0, |s| s.ncols());
    for s in sequences {
        assert_eq!(s.nrows(), d.n_u, "control dimension");
        assert_eq!(s.ncols(), horizon, "all sequences must share the horizon");
    }
    for th in params {
        assert_eq!(th.len(), d.n_theta, "parameter dimension");
    }

    let n_seq = sequences.len();
    let n_param = params.len();
    let traj_len = (horizon + 1) * d.n_x;
    let mut states = vec![0.0; n_seq * n_param * traj_len];
    let mut diverged = vec![None; n_seq * n_param];

    // Identical hypotheses (point beliefs) produce bit-identical rollouts;
    // integrate once per sequence and replicate.
    let all_same = n_param > 1 && params.windows(2).all(|w| w[0] == w[1]);

    // One task per (m, p) cell; disjoint output slices keep this
    // deterministic regardless of scheduling.
    if all_same {
        states
            .par_chunks_mut(n_param * traj_len)
            .zip(diverged.par_chunks_mut(n_param))
            .enumerate()
            .for_each(|(m, (chunk, flags))| {
                let (first, rest) = chunk.split_at_mut(traj_len);
                flags[0] = rollout_cell(
                    model,
                    x0.as_slice(),
                    &sequences[m],
                    params[0].as_slice(),
                    horizon,
                    d.n_x,
                    first,
                );
                for p in 1..n_param {
                    rest[(p - 1) * traj_len..p * traj_len].copy_from_slice(first);
                    flags[p] = flags[0];
                }
            });
    } else {
        states
            .par_chunks_mut(traj_len)
            .zip(diverged.par_iter_mut())
            .enumerate()
            .for_each(|(idx, (chunk, flag))| {
                let m = idx / n_param;
                let p = idx % n_param;
                *flag = rollout_cell(
                    model,
                    x0.as_slice(),
                    &sequences[m],
                    params[p].as_slice(),
                    horizon,
                    d.n_x,
                    chunk,
                );
            });
    }

    RolloutTensor {
        n_seq,
        n_param,
        horizon,
        n_x: d.n_x,
        states,
        diverged,
    }
}

/// Strict batch rollout: any integration blowup is an error tagged with the
/// `(m, p, k)` index at which it occurred.
pub fn batch_rollout(
    model: &dyn Model,
    x0: &DVector<f64>,
    sequences: &[DMatrix<f64>],
    params: &[DVector<f64>],
) -> Result<RolloutTensor, DynamicsError> {
    for th in params {
        if !model.descriptor().param_bounds.contains(th) {
            let idx = th
                .iter()
                .enumerate()
                .find(|(i, v)| {
                    **v < model.descriptor().param_bounds.lo[*i]
                        || **v > model.descriptor().param_bounds.hi[*i]
                })
                .map(|(i, _)| i)
                .unwrap_or(0);
            return Err(DynamicsError::ParamOutOfBounds {
                index: idx,
                value: th[idx],
            });
        }
    }
    let tensor = batch_rollout_lenient(model, x0, sequences, params);
    if let Some((m, p, k)) = tensor.first_divergence() {
        return Err(DynamicsError::IntegrationBlowup {
            m,
            p,
            k,
            state: tensor.state(m, p, k.saturating_sub(1)).to_vec(),
        });
    }
    Ok(tensor)
}
