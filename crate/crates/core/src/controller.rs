//! The dual-trajectory controller.
//!
//! Each control period advances two control sequences in parallel from the
//! same perturbation batch and the same P parameter hypotheses:
//!
//! - the *nominal* sequence minimizes the expected trajectory cost plus a
//!   large penalty whenever its conformal robustness is negative, and is
//!   bootstrapped from both the previous nominal and the previous robust
//!   solution (the cheaper re-evaluated candidate wins);
//! - the *robust* sequence minimizes the negated robustness alone, serving
//!   as a certified backup.
//!
//! The nominal first control is applied only if the final nominal sequence
//! re-certifies under the step's hypotheses; otherwise the nominal sequence
//! is overwritten by the robust one and the robust first control is applied.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::belief::BeliefSampler;
use crate::dynamics::{batch_rollout_lenient, Model};
use crate::mppi::{
    expected_cost, importance_weights, sample_perturbations, weighted_update, ControlSequence,
    CostFunction, MppiError, NoiseConfig,
};
use crate::safety::{score_tensor, SafetyConfig, SafetyError, SafetyVerdict};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("both the nominal and the robust rollout batches are infeasible")]
    AllBatchesInfeasible,
    #[error(transparent)]
    Mppi(#[from] MppiError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    Nominal,
    Robust,
}

impl ActionSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionSource::Nominal => "nominal",
            ActionSource::Robust => "robust",
        }
    }
}

/// The two persistent control sequences plus the branch taken last step.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub nominal: ControlSequence,
    pub robust: ControlSequence,
    pub last_action_source: ActionSource,
}

impl ControllerState {
    /// Both sequences start at zero.
    pub fn init(n_u: usize, horizon: usize) -> Self {
        Self {
            nominal: ControlSequence::zeros(n_u, horizon),
            robust: ControlSequence::zeros(n_u, horizon),
            last_action_source: ActionSource::Nominal,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub safety: SafetyConfig,
    /// Perturbed sequences per trajectory branch (M).
    pub rollouts: usize,
    /// Control steps per planned sequence.
    pub horizon: usize,
    pub noise: NoiseConfig,
    /// Inverse temperature of the robust-branch weighting. Robustness costs
    /// live on the margin scale (meters), orders of magnitude below the
    /// tracking costs, so they get their own temperature.
    pub beta_robust: f64,
    /// Penalty added to the nominal cost when the robustness is negative.
    pub penalty: f64,
    /// When false the robust branch is skipped entirely and the nominal
    /// first control is always applied (penalty-only ablation).
    pub backup_enabled: bool,
}

/// Wall-clock breakdown of one control step, microseconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct PhaseTiming {
    pub sample_us: u64,
    pub rollout_us: u64,
    pub update_us: u64,
    pub certify_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub source: ActionSource,
    /// Robustness of the final nominal sequence under this step's hypotheses.
    pub nominal_robustness: f64,
    /// Robustness of the updated robust sequence (NaN when the backup is off).
    pub robust_robustness: f64,
    /// Re-evaluated nominal cost of the applied candidate.
    pub nominal_cost: f64,
    /// Which bootstrap won the nominal update (1 = previous nominal base,
    /// 2 = robust base).
    pub chosen_candidate: u8,
    /// Fingerprints of the hypothesis batch seen by each branch; equality
    /// certifies that all 2M sequences shared the same P draws.
    pub param_fingerprint_nominal: u64,
    pub param_fingerprint_robust: u64,
    pub timing: PhaseTiming,
}

/// Drop the first control, shift the remainder forward and repeat the final
/// control in the last slot.
pub fn time_shift(seq: &ControlSequence) -> ControlSequence {
    let m = seq.matrix();
    let h = m.ncols();
    let mut out = DMatrix::zeros(m.nrows(), h);
    if h > 0 {
        for k in 0..h - 1 {
            out.set_column(k, &m.column(k + 1));
        }
        out.set_column(h - 1, &m.column(h - 1));
    }
    ControlSequence::from_matrix(out)
}

/// Expected cost plus the penalty when the certificate fails (strictly
/// negative robustness; a boundary robustness of exactly zero is not
/// penalized).
pub fn nominal_cost(expected: f64, verdict: &SafetyVerdict, penalty: f64) -> f64 {
    if verdict.robustness < 0.0 {
        expected + penalty
    } else {
        expected
    }
}

/// Negated robustness: minimizing it maximizes the certified margin.
pub fn robust_cost(verdict: &SafetyVerdict) -> f64 {
    -verdict.robustness
}

fn param_fingerprint(params: &[DVector<f64>]) -> u64 {
    // FNV-1a over the raw bit patterns.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for v in p.iter() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    h
}

struct BatchEval {
    sequences: Vec<ControlSequence>,
    /// Nominal-view cost (expected + penalty) per sequence.
    nominal_costs: Vec<f64>,
    /// Robust-view cost (−R) per sequence; empty when not requested.
    robust_costs: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_batch(
    model: &dyn Model,
    x_t: &DVector<f64>,
    base: &ControlSequence,
    perturbations: &[DMatrix<f64>],
    params: &[DVector<f64>],
    nominal_view: &crate::safety::SafeSet,
    robust_view: Option<&crate::safety::SafeSet>,
    cost: &dyn CostFunction,
    cfg: &ControllerConfig,
    limits: &crate::dynamics::Box,
) -> Result<BatchEval, SafetyError> {
    // Perturbed sequences are saturated before simulation so the evaluated
    // costs correspond to executable inputs.
    let sequences: Vec<ControlSequence> = perturbations
        .iter()
        .map(|eta| {
            let mut s = ControlSequence::from_matrix(base.matrix() + eta);
            s.saturate(limits);
            s
        })
        .collect();
    let mats: Vec<DMatrix<f64>> = sequences.iter().map(|s| s.matrix().clone()).collect();
    let tensor = batch_rollout_lenient(model, x_t, &mats, params);
    let expected = expected_cost(&tensor, &sequences, cost);
    let nominal_verdicts = score_tensor(&tensor, nominal_view, cfg.safety.delta)?;
    let nominal_costs: Vec<f64> = expected
        .iter()
        .zip(nominal_verdicts.iter())
        .map(|(e, v)| nominal_cost(*e, v, cfg.penalty))
        .collect();
    let robust_costs = match robust_view {
        Some(view) => score_tensor(&tensor, view, cfg.safety.delta)?
            .iter()
            .map(robust_cost)
            .collect(),
        None => Vec::new(),
    };
    Ok(BatchEval {
        sequences,
        nominal_costs,
        robust_costs,
    })
}

/// Re-roll a single sequence under the shared hypotheses and return its
/// nominal-view cost and verdict.
fn reevaluate(
    model: &dyn Model,
    x_t: &DVector<f64>,
    seq: &ControlSequence,
    params: &[DVector<f64>],
    safe_view: &crate::safety::SafeSet,
    cost: &dyn CostFunction,
    cfg: &ControllerConfig,
) -> Result<(f64, SafetyVerdict), SafetyError> {
    let tensor = batch_rollout_lenient(model, x_t, &[seq.matrix().clone()], params);
    let expected = expected_cost(&tensor, std::slice::from_ref(seq), cost);
    let verdict = score_tensor(&tensor, safe_view, cfg.safety.delta)?.remove(0);
    Ok((nominal_cost(expected[0], &verdict, cfg.penalty), verdict))
}

/// One receding-horizon step. `safe_nominal` is the margin the nominal
/// branch plans and certifies against; `safe_robust` is the (possibly more
/// conservative) margin the backup maximizes. The belief must already be
/// updated with the latest transition.
#[allow(clippy::too_many_arguments)]
pub fn control_step(
    state: &mut ControllerState,
    sampler: &BeliefSampler,
    x_t: &DVector<f64>,
    model: &dyn Model,
    safe_nominal: &crate::safety::SafeSet,
    safe_robust: &crate::safety::SafeSet,
    cost: &dyn CostFunction,
    cfg: &ControllerConfig,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<(DVector<f64>, StepDiagnostics), ControllerError> {
    let t_start = Instant::now();
    let limits = model.descriptor().control_limits.clone();

    state.nominal = time_shift(&state.nominal);
    state.robust = time_shift(&state.robust);

    let t_sample = Instant::now();
    let params = sampler.sample(cfg.safety.p, rng);
    let fingerprint = param_fingerprint(&params);
    let perturbations = sample_perturbations(&cfg.noise, cfg.rollouts, cfg.horizon, rng);
    let sample_us = t_sample.elapsed().as_micros() as u64;

    // Both branches share the perturbation batch and the hypothesis batch;
    // they are independent and evaluated back to back.
    let t_roll = Instant::now();
    let nominal_batch = evaluate_batch(
        model,
        x_t,
        &state.nominal,
        &perturbations,
        &params,
        safe_nominal,
        None,
        cost,
        cfg,
        &limits,
    )?;
    let robust_batch = if cfg.backup_enabled {
        Some(evaluate_batch(
            model,
            x_t,
            &state.robust,
            &perturbations,
            &params,
            safe_nominal,
            Some(safe_robust),
            cost,
            cfg,
            &limits,
        )?)
    } else {
        None
    };
    let rollout_us = t_roll.elapsed().as_micros() as u64;

    let t_update = Instant::now();
    let mut candidates: Vec<(u8, ControlSequence)> = Vec::with_capacity(2);
    if let Ok(w1) = importance_weights(&nominal_batch.nominal_costs, cfg.noise.beta) {
        candidates.push((1, weighted_update(&nominal_batch.sequences, &w1, &limits)));
    }
    if let Some(batch) = &robust_batch {
        if let Ok(w2) = importance_weights(&batch.nominal_costs, cfg.noise.beta) {
            candidates.push((2, weighted_update(&batch.sequences, &w2, &limits)));
        }
    }

    // Robust branch update (pure robustness objective).
    let mut robust_updated = false;
    if let Some(batch) = &robust_batch {
        if let Ok(rw) = importance_weights(&batch.robust_costs, cfg.beta_robust) {
            state.robust = weighted_update(&batch.sequences, &rw, &limits);
            robust_updated = true;
        }
    }

    if candidates.is_empty() && !robust_updated {
        return Err(ControllerError::AllBatchesInfeasible);
    }
    let update_us = t_update.elapsed().as_micros() as u64;

    // Pick the candidate whose re-evaluated nominal cost is lower; ties keep
    // the candidate bootstrapped from the previous nominal sequence.
    let t_cert = Instant::now();
    let mut chosen_candidate = 0u8;
    let mut chosen_cost = f64::INFINITY;
    if !candidates.is_empty() {
        let mut best: Option<(u8, ControlSequence, f64)> = None;
        for (tag, cand) in candidates {
            let (c, _) = reevaluate(model, x_t, &cand, &params, safe_nominal, cost, cfg)?;
            let better = match &best {
                None => true,
                Some((_, _, bc)) => c < *bc,
            };
            if better {
                best = Some((tag, cand, c));
            }
        }
        let (tag, cand, c) = best.expect("at least one candidate");
        state.nominal = cand;
        chosen_candidate = tag;
        chosen_cost = c;
    }

    // Certify the final nominal sequence under the same hypotheses.
    let (_, nominal_verdict) = reevaluate(
        model,
        x_t,
        &state.nominal,
        &params,
        safe_nominal,
        cost,
        cfg,
    )?;
    let nominal_r = nominal_verdict.robustness;

    let robust_r = if let Some(_batch) = &robust_batch {
        let (_, v) = reevaluate(model, x_t, &state.robust, &params, safe_robust, cost, cfg)?;
        v.robustness
    } else {
        f64::NAN
    };
    let certify_us = t_cert.elapsed().as_micros() as u64;

    let source = if !cfg.backup_enabled || nominal_r > 0.0 {
        ActionSource::Nominal
    } else {
        // Fall back: overwrite the nominal sequence with the robust one.
        state.nominal = state.robust.clone();
        ActionSource::Robust
    };
    state.last_action_source = source;
    let applied = match source {
        ActionSource::Nominal => state.nominal.first(),
        ActionSource::Robust => state.robust.first(),
    };

    let diag = StepDiagnostics {
        source,
        nominal_robustness: nominal_r,
        robust_robustness: robust_r,
        nominal_cost: chosen_cost,
        chosen_candidate,
        param_fingerprint_nominal: fingerprint,
        param_fingerprint_robust: fingerprint,
        timing: PhaseTiming {
            sample_us,
            rollout_us,
            update_us,
            certify_us,
            total_us: t_start.elapsed().as_micros() as u64,
        },
    };
    Ok((applied, diag))
}
