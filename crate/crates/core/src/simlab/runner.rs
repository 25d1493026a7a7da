//! Episode protocol and benchmark batch runner.
//!
//! One trial = one random draw of the true parameters + one episode of
//! `laps · lap_steps` control periods. Per period: plan with the current
//! belief, actuate the first control on the true dynamics, observe the
//! transition and update the belief. The belief persists across laps within
//! a trial and is rebuilt from the prior between trials.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    compute_pa, compute_rmse, mean_std, make_environment, ControllerVariant, EnvOverrides,
    Environment, ExperimentSetup, TrackingCost,
};
use crate::belief::{
    svgd_update, ukf_update, BeliefSampler, GaussianBelief, NoiseModel, ParameterParticles,
    TransitionObservation,
};
use crate::controller::{control_step, ActionSource, ControllerState};
use crate::dynamics;
use crate::stream_rng;

// RNG stream tags; every consumer gets its own stream so draw counts in one
// subsystem never shift another.
const TAG_TRUTH: u64 = 0;
const TAG_CONTROL: u64 = 1;
const TAG_BELIEF_INIT: u64 = 3;

/// Deterministic per-step log row (wall times are kept separately).
#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub margin: f64,
    pub branch: &'static str,
    pub r_nominal: f64,
    pub r_robust: f64,
    pub cost: f64,
}

/// Everything measured in one trial.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub true_params: Vec<f64>,
    pub rmse: f64,
    pub lap_rmse: Vec<f64>,
    pub success: bool,
    pub violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pa_trace: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_pa: Option<f64>,
    pub branch_nominal: usize,
    pub branch_robust: usize,
    pub belief_updates: usize,
    pub diverged: bool,
    pub step_time_mean_ms: f64,
    pub step_time_max_ms: f64,
    #[serde(skip)]
    pub steps: Vec<StepLog>,
    #[serde(skip)]
    pub step_times_us: Vec<u64>,
    /// Belief snapshots at lap boundaries, rendered as CSV (lap index, text).
    #[serde(skip)]
    pub belief_snapshots: Vec<(usize, String)>,
}

enum BeliefBackend {
    None,
    Svgd(ParameterParticles),
    Ukf {
        belief: GaussianBelief,
        process_noise: nalgebra::DMatrix<f64>,
    },
}

/// Run one episode and collect its record. The belief and both control
/// sequences are owned by this call; nothing leaks across trials.
pub fn run_episode(
    env: &Environment,
    setup: &ExperimentSetup,
    true_params: &DVector<f64>,
    seed: u64,
) -> TrialRecord {
    let model = env.model.as_ref();
    let d = model.descriptor();
    let noise = NoiseModel::diagonal(&setup.sigma_xi).expect("observation noise must be SPD");

    // One stream for everything the controller draws per step (hypotheses,
    // then perturbations, in that fixed order), one for the particle init.
    let mut rng_ctrl = stream_rng(seed, TAG_CONTROL);
    let mut rng_init = stream_rng(seed, TAG_BELIEF_INIT);

    let mut backend = if setup.variant.learns() {
        match setup.variant {
            ControllerVariant::PrmppiUkf => {
                let width = env.prior.widths();
                let q = nalgebra::DMatrix::from_diagonal(
                    &width.map(|w| (1e-3 * w) * (1e-3 * w)),
                );
                BeliefBackend::Ukf {
                    belief: GaussianBelief::from_uniform_box(&env.prior),
                    process_noise: q,
                }
            }
            _ => BeliefBackend::Svgd(
                ParameterParticles::from_prior(
                    &env.prior,
                    &d.param_bounds,
                    setup.particles,
                    &mut rng_init,
                )
                .expect("particle init"),
            ),
        }
    } else {
        BeliefBackend::None
    };

    let nominal_params = d.nominal_params.clone();
    let total_steps = env.episode_steps();
    let mut x = env.initial_state(true_params);
    let mut ctrl = ControllerState::init(d.n_u, setup.controller.horizon);

    let mut steps: Vec<StepLog> = Vec::with_capacity(if setup.log_steps { total_steps } else { 0 });
    let mut step_times_us = Vec::with_capacity(total_steps);
    let mut states: Vec<DVector<f64>> = Vec::with_capacity(total_steps);
    let mut violations = 0usize;
    let mut branch_nominal = 0usize;
    let mut branch_robust = 0usize;
    let mut belief_updates = 0usize;
    let mut diverged = false;
    let mut pa_trace: Vec<f64> = Vec::new();
    let mut belief_snapshots = Vec::new();
    let mut lap_rmse = Vec::new();
    let mut lap_start = 0usize;

    let check = |x: &DVector<f64>, violations: &mut usize| {
        if env.true_safe_set.margin(x.as_slice()) < 0.0 {
            *violations += 1;
        }
    };
    check(&x, &mut violations);

    'episode: for t in 0..total_steps {
        let views = env.planning_views(&x);
        let cost = TrackingCost {
            q_diag: &env.defaults.q_diag,
            r_diag: &env.defaults.r_diag,
            qf_diag: &env.defaults.qf_diag,
            reference: &env.reference,
            t0: t,
            horizon: setup.controller.horizon,
            angle_indices: &env.angle_indices,
        };
        let sampler = match (&backend, setup.variant) {
            (_, ControllerVariant::Oracle) => BeliefSampler::Point(true_params),
            (_, ControllerVariant::NominalMppi) => BeliefSampler::Point(&nominal_params),
            (_, ControllerVariant::RobustMppi) => BeliefSampler::Prior {
                prior: &env.prior,
                bounds: &d.param_bounds,
            },
            (BeliefBackend::Svgd(p), _) => BeliefSampler::Particles(p),
            (BeliefBackend::Ukf { belief, .. }, _) => BeliefSampler::Gaussian {
                belief,
                bounds: &d.param_bounds,
            },
            (BeliefBackend::None, v) => unreachable!("no belief for variant {v:?}"),
        };

        let outcome = control_step(
            &mut ctrl,
            &sampler,
            &x,
            model,
            &views.nominal,
            &views.robust,
            &cost,
            &setup.controller,
            &mut rng_ctrl,
        );
        let (u, diag) = match outcome {
            Ok(v) => v,
            Err(e) => {
                log::warn!("seed {seed}: controller gave up at step {t}: {e}");
                diverged = true;
                break 'episode;
            }
        };

        match diag.source {
            ActionSource::Nominal => branch_nominal += 1,
            ActionSource::Robust => branch_robust += 1,
        }
        step_times_us.push(diag.timing.total_us);

        states.push(x.clone());
        if setup.log_steps {
            steps.push(StepLog {
                step: t,
                state: x.as_slice().to_vec(),
                control: u.as_slice().to_vec(),
                margin: env.true_safe_set.margin(x.as_slice()),
                branch: diag.source.as_str(),
                r_nominal: diag.nominal_robustness,
                r_robust: diag.robust_robustness,
                cost: diag.nominal_cost,
            });
        }

        // Actuate on the true dynamics.
        let next = match dynamics::step(model, &x, &u, true_params) {
            Ok(n) => n,
            Err(e) => {
                log::warn!("seed {seed}: true dynamics blew up at step {t}: {e}");
                diverged = true;
                break 'episode;
            }
        };
        check(&next, &mut violations);

        // Observe the transition and update the belief.
        if setup.variant.learns() {
            let obs = TransitionObservation::new(x.clone(), u.clone(), next.clone());
            match &mut backend {
                BeliefBackend::Svgd(p) => {
                    if let Err(e) = svgd_update(p, model, &obs, &noise, &setup.svgd) {
                        log::warn!("seed {seed}: belief update failed at step {t}: {e}");
                    } else {
                        belief_updates += 1;
                    }
                }
                BeliefBackend::Ukf {
                    belief,
                    process_noise,
                } => match ukf_update(belief, model, &obs, &noise, process_noise) {
                    Ok(updated) => {
                        *belief = updated;
                        belief_updates += 1;
                    }
                    Err(e) => log::warn!("seed {seed}: filter update failed at step {t}: {e}"),
                },
                BeliefBackend::None => {}
            }
        }
        x = next;

        // Lap boundary bookkeeping.
        if (t + 1) % env.lap_steps == 0 {
            let lap = (t + 1) / env.lap_steps;
            lap_rmse.push(compute_rmse(
                &states[lap_start..],
                &env.reference[lap_start..],
                &env.position_indices,
            ));
            lap_start = states.len();
            if let Some(estimate) = estimate_of(&backend) {
                pa_trace.push(compute_pa(&estimate, true_params));
            }
            if let BeliefBackend::Svgd(p) = &backend {
                belief_snapshots.push((lap, p.to_csv(&d.param_labels)));
            } else if let BeliefBackend::Ukf { belief, .. } = &backend {
                let mut csv = d.param_labels.join(",");
                csv.push('\n');
                let row: Vec<String> =
                    belief.mean.iter().map(|v| format!("{v}")).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
                belief_snapshots.push((lap, csv));
            }
            if env.lap_reset && t + 1 < total_steps {
                x = env.initial_state(true_params);
                check(&x, &mut violations);
            }
        }
    }

    let rmse = if states.is_empty() {
        f64::NAN
    } else {
        compute_rmse(&states, &env.reference, &env.position_indices)
    };
    let (mean_us, max_us) = if step_times_us.is_empty() {
        (0.0, 0.0)
    } else {
        (
            step_times_us.iter().sum::<u64>() as f64 / step_times_us.len() as f64,
            *step_times_us.iter().max().unwrap() as f64,
        )
    };
    let final_pa = pa_trace.last().copied();

    TrialRecord {
        seed,
        true_params: true_params.as_slice().to_vec(),
        rmse,
        lap_rmse,
        success: violations == 0 && !diverged,
        violations,
        pa_trace: if setup.variant.reports_pa() {
            Some(pa_trace)
        } else {
            None
        },
        final_pa: if setup.variant.reports_pa() {
            final_pa
        } else {
            None
        },
        branch_nominal,
        branch_robust,
        belief_updates,
        diverged,
        step_time_mean_ms: mean_us / 1000.0,
        step_time_max_ms: max_us / 1000.0,
        steps,
        step_times_us,
        belief_snapshots,
    }
}

fn estimate_of(backend: &BeliefBackend) -> Option<DVector<f64>> {
    match backend {
        BeliefBackend::None => None,
        BeliefBackend::Svgd(p) => Some(p.mean()),
        BeliefBackend::Ukf { belief, .. } => Some(belief.mean.clone()),
    }
}

/// μ ± σ table row for one benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub environment: String,
    pub controller: String,
    pub trials: usize,
    pub base_seed: u64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub success_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pa_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pa_std: Option<f64>,
    pub lap_rmse_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lap_pa_mean: Option<Vec<f64>>,
    pub violations_total: usize,
    pub fallback_steps_total: usize,
    pub diverged_trials: usize,
}

#[derive(Debug)]
pub struct BenchmarkResult {
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
}

/// Run `n_trials` independent trials (seeds `base_seed + i`), each with its
/// own environment instance, controller, belief and rng streams. Individual
/// trial failures are recorded, never abort the batch.
pub fn run_benchmark(
    env_name: &str,
    setup: &ExperimentSetup,
    overrides: &EnvOverrides,
    n_trials: usize,
    base_seed: u64,
) -> Result<BenchmarkResult, super::SimlabError> {
    // Validate the environment name once up front.
    let probe = make_environment(env_name, overrides)?;
    drop(probe);

    let records: Vec<TrialRecord> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed + i as u64;
            let env = make_environment(env_name, overrides).expect("validated above");
            let mut rng_truth = stream_rng(seed, TAG_TRUTH);
            let true_params = DVector::from_fn(env.prior.dim(), |d_i, _| {
                rng_truth.random_range(env.prior.lo[d_i]..=env.prior.hi[d_i])
            });
            run_episode(&env, setup, &true_params, seed)
        })
        .collect();

    let summary = summarize(env_name, setup, n_trials, base_seed, &records);
    Ok(BenchmarkResult { records, summary })
}

fn summarize(
    env_name: &str,
    setup: &ExperimentSetup,
    n_trials: usize,
    base_seed: u64,
    records: &[TrialRecord],
) -> Summary {
    let rmses: Vec<f64> = records.iter().map(|r| r.rmse).filter(|v| v.is_finite()).collect();
    let (rmse_mean, rmse_std) = mean_std(&rmses);
    let pa: Vec<f64> = records.iter().filter_map(|r| r.final_pa).collect();
    let (pa_mean, pa_std) = if setup.variant.reports_pa() && !pa.is_empty() {
        let (m, s) = mean_std(&pa);
        (Some(m), Some(s))
    } else {
        (None, None)
    };

    let max_laps = records.iter().map(|r| r.lap_rmse.len()).max().unwrap_or(0);
    let lap_rmse_mean: Vec<f64> = (0..max_laps)
        .map(|lap| {
            let vals: Vec<f64> = records
                .iter()
                .filter_map(|r| r.lap_rmse.get(lap).copied())
                .filter(|v| v.is_finite())
                .collect();
            mean_std(&vals).0
        })
        .collect();
    let lap_pa_mean = if setup.variant.reports_pa() {
        let max_pa_laps = records
            .iter()
            .filter_map(|r| r.pa_trace.as_ref().map(|t| t.len()))
            .max()
            .unwrap_or(0);
        Some(
            (0..max_pa_laps)
                .map(|lap| {
                    let vals: Vec<f64> = records
                        .iter()
                        .filter_map(|r| r.pa_trace.as_ref().and_then(|t| t.get(lap).copied()))
                        .collect();
                    mean_std(&vals).0
                })
                .collect(),
        )
    } else {
        None
    };

    Summary {
        environment: env_name.to_string(),
        controller: setup.variant.as_str().to_string(),
        trials: n_trials,
        base_seed,
        rmse_mean,
        rmse_std,
        success_count: records.iter().filter(|r| r.success).count(),
        pa_mean,
        pa_std,
        lap_rmse_mean,
        lap_pa_mean,
        violations_total: records.iter().map(|r| r.violations).sum(),
        fallback_steps_total: records.iter().map(|r| r.branch_robust).sum(),
        diverged_trials: records.iter().filter(|r| r.diverged).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mppi::NoiseConfig;
    use crate::safety::SafetyConfig;

    fn small_setup(env: &Environment, variant: ControllerVariant) -> ExperimentSetup {
        ExperimentSetup {
            variant,
            controller: crate::controller::ControllerConfig {
                safety: SafetyConfig::new(0.1, 10).unwrap(),
                rollouts: 32,
                horizon: 25,
                noise: NoiseConfig::diagonal(&env.defaults.noise_std, env.defaults.beta)
                    .unwrap(),
                beta_robust: env.defaults.beta_robust,
                penalty: env.defaults.penalty,
                backup_enabled: variant.backup_enabled(),
            },
            particles: 30,
            svgd: crate::belief::SvgdConfig {
                step_size: env.defaults.svgd_step_size,
                iterations: 4,
            },
            sigma_xi: env.defaults.sigma_xi.clone(),
            log_steps: true,
        }
    }

    #[test]
    fn single_trial_benchmark_reproduces_run_episode() {
        let ov = EnvOverrides {
            lap_steps: Some(30),
            laps: Some(1),
            ..Default::default()
        };
        let env = make_environment("cartpole", &ov).unwrap();
        let setup = small_setup(&env, ControllerVariant::Oracle);
        let result = run_benchmark("cartpole", &setup, &ov, 1, 11).unwrap();
        assert_eq!(result.records.len(), 1);

        let mut rng_truth = stream_rng(11, TAG_TRUTH);
        let truth = DVector::from_fn(2, |d, _| {
            rng_truth.random_range(env.prior.lo[d]..=env.prior.hi[d])
        });
        let direct = run_episode(&env, &setup, &truth, 11);
        assert_eq!(result.records[0].rmse, direct.rmse);
        assert_eq!(result.records[0].violations, direct.violations);
        assert_eq!(result.records[0].success, direct.success);
    }

    #[test]
    fn episodes_are_seed_deterministic() {
        let ov = EnvOverrides {
            lap_steps: Some(25),
            laps: Some(2),
            ..Default::default()
        };
        let env = make_environment("quad2d", &ov).unwrap();
        let setup = small_setup(&env, ControllerVariant::Prmppi);
        let truth = DVector::from_vec(vec![0.03, 1.2e-5]);
        let a = run_episode(&env, &setup, &truth, 5);
        let b = run_episode(&env, &setup, &truth, 5);
        assert_eq!(a.rmse, b.rmse);
        assert_eq!(a.lap_rmse, b.lap_rmse);
        assert_eq!(a.pa_trace, b.pa_trace);
        assert_eq!(a.violations, b.violations);
        assert_eq!(
            a.steps.iter().map(|s| s.cost).collect::<Vec<_>>(),
            b.steps.iter().map(|s| s.cost).collect::<Vec<_>>()
        );
    }

    #[test]
    fn oracle_never_touches_the_learning_path() {
        let ov = EnvOverrides {
            lap_steps: Some(20),
            laps: Some(1),
            ..Default::default()
        };
        let env = make_environment("cartpole", &ov).unwrap();
        let setup = small_setup(&env, ControllerVariant::Oracle);
        let truth = DVector::from_vec(vec![1.05, 0.095]);
        let rec = run_episode(&env, &setup, &truth, 3);
        assert_eq!(rec.belief_updates, 0);
        assert!(rec.pa_trace.is_none());
        assert!(rec.final_pa.is_none());
    }

    #[test]
    fn success_flag_reflects_violations() {
        let ov = EnvOverrides {
            lap_steps: Some(20),
            laps: Some(1),
            ..Default::default()
        };
        let env = make_environment("cartpole", &ov).unwrap();
        let setup = small_setup(&env, ControllerVariant::Oracle);
        let truth = DVector::from_vec(vec![1.0, 0.1]);
        let rec = run_episode(&env, &setup, &truth, 7);
        assert_eq!(rec.success, rec.violations == 0 && !rec.diverged);
    }
}
