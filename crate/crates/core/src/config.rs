//! Run configuration: a flat TOML file plus command-line overrides, merged
//! with per-environment defaults and validated before anything runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::SvgdConfig;
use crate::controller::ControllerConfig;
use crate::mppi::{MppiError, NoiseConfig};
use crate::safety::{SafetyConfig, SafetyError};
use crate::simlab::{make_environment, ControllerVariant, EnvOverrides, ExperimentSetup, SimlabError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config file {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("unknown controller '{0}' (expected oracle, nominal, robust, prmppi, prmppi-ukf or prmppi-no-backup)")]
    UnknownController(String),
    #[error("unknown preset '{0}' (expected desk or full)")]
    UnknownPreset(String),
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Simlab(#[from] SimlabError),
    #[error(transparent)]
    Mppi(#[from] MppiError),
}

/// Flat experiment description. Every optional field falls back to the
/// selected environment's defaults, so a config file only has to name what
/// it changes; the shipped files in `configs/` spell everything out.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub environment: String,
    pub controller: String,
    /// `desk` (fast CPU defaults: 20 trials, 200 rollouts) or `full`
    /// (100 trials, 500 rollouts).
    pub preset: String,
    pub trials: Option<usize>,
    pub base_seed: u64,
    pub delta: f64,
    /// Parameter hypotheses per step; defaults to ceil(1/delta).
    pub samples_p: Option<usize>,
    /// Stein particle count N.
    pub particles: usize,
    /// Perturbed sequences per trajectory branch (M).
    pub rollouts: Option<usize>,
    /// Control steps per planned sequence.
    pub horizon: usize,
    pub beta: Option<f64>,
    pub beta_robust: Option<f64>,
    pub control_noise_std: Option<Vec<f64>>,
    pub control_noise_cov: Option<Vec<Vec<f64>>>,
    pub control_noise_correlation: Option<f64>,
    pub penalty: Option<f64>,
    pub sigma_xi: Option<Vec<f64>>,
    pub svgd_step_size: Option<f64>,
    pub svgd_iterations: Option<usize>,
    pub q_diag: Option<Vec<f64>>,
    pub r_diag: Option<Vec<f64>>,
    pub qf_diag: Option<Vec<f64>>,
    pub episode_steps: Option<usize>,
    pub laps: Option<usize>,
    pub reference_radius: Option<f64>,
    pub reference_period_s: Option<f64>,
    pub output_dir: String,
    /// Worker threads; 0 means all available cores.
    pub threads: usize,
    /// Write the per-step CSV log for every trial.
    pub log_steps: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            environment: "cartpole".to_string(),
            controller: "prmppi".to_string(),
            preset: "desk".to_string(),
            trials: None,
            base_seed: 0,
            delta: 0.1,
            samples_p: None,
            particles: 100,
            rollouts: None,
            horizon: 50,
            beta: None,
            beta_robust: None,
            control_noise_std: None,
            control_noise_cov: None,
            control_noise_correlation: None,
            penalty: None,
            sigma_xi: None,
            svgd_step_size: None,
            svgd_iterations: None,
            q_diag: None,
            r_diag: None,
            qf_diag: None,
            episode_steps: None,
            laps: None,
            reference_radius: None,
            reference_period_s: None,
            output_dir: "results".to_string(),
            threads: 0,
            log_steps: true,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_string(),
            source,
        })
    }
}

/// Fully resolved experiment: environment overrides, controller setup and
/// run-level bookkeeping. Building it performs all validation, so `validate`
/// and `run` accept exactly the same configurations.
#[derive(Debug)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub variant: ControllerVariant,
    pub setup: ExperimentSetup,
    pub overrides: EnvOverrides,
    pub trials: usize,
}

pub fn resolve(mut config: RunConfig) -> Result<ResolvedConfig, ConfigError> {
    let (preset_trials, preset_rollouts) = match config.preset.as_str() {
        "desk" => (20, 200),
        "full" => (100, 500),
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    let trials = config.trials.unwrap_or(preset_trials);
    if trials == 0 {
        return Err(ConfigError::NoTrials);
    }
    let rollouts = *config.rollouts.get_or_insert(preset_rollouts);

    let variant = ControllerVariant::parse(&config.controller)
        .ok_or_else(|| ConfigError::UnknownController(config.controller.clone()))?;

    let overrides = EnvOverrides {
        lap_steps: config.episode_steps,
        laps: config.laps,
        reference_radius: config.reference_radius,
        reference_period_s: config.reference_period_s,
        q_diag: config.q_diag.clone(),
        r_diag: config.r_diag.clone(),
        qf_diag: config.qf_diag.clone(),
    };
    // Also validates the environment name.
    let env = make_environment(&config.environment, &overrides)?;

    let p = config
        .samples_p
        .unwrap_or_else(|| SafetyConfig::default_sample_count(config.delta));
    let safety = SafetyConfig::new(config.delta, p)?;

    let beta = config.beta.unwrap_or(env.defaults.beta);
    if beta <= 0.0 {
        return Err(ConfigError::NonPositive {
            field: "beta",
            value: beta,
        });
    }
    let cov_rows = config
        .control_noise_cov
        .clone()
        .or_else(|| {
            if config.control_noise_std.is_some() {
                None
            } else {
                env.defaults.noise_cov.clone()
            }
        });
    let noise = match cov_rows {
        Some(rows) => {
            let n = rows.len();
            let cov = nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]);
            NoiseConfig::new(cov, beta)?
        }
        None => {
            let noise_std = config
                .control_noise_std
                .clone()
                .unwrap_or_else(|| env.defaults.noise_std.clone());
            NoiseConfig::diagonal(&noise_std, beta)?
        }
    }
    .with_correlation(
        config
            .control_noise_correlation
            .unwrap_or(env.defaults.noise_correlation),
    )?;
    let beta_robust = config.beta_robust.unwrap_or(env.defaults.beta_robust);
    if beta_robust <= 0.0 {
        return Err(ConfigError::NonPositive {
            field: "beta_robust",
            value: beta_robust,
        });
    }
    let penalty = config.penalty.unwrap_or(env.defaults.penalty);
    if penalty <= 0.0 {
        return Err(ConfigError::NonPositive {
            field: "penalty",
            value: penalty,
        });
    }
    let svgd_step = config.svgd_step_size.unwrap_or(env.defaults.svgd_step_size);
    if svgd_step <= 0.0 {
        return Err(ConfigError::NonPositive {
            field: "svgd_step_size",
            value: svgd_step,
        });
    }
    if config.particles < 2 {
        return Err(ConfigError::NonPositive {
            field: "particles",
            value: config.particles as f64,
        });
    }
    if config.horizon == 0 {
        return Err(ConfigError::NonPositive {
            field: "horizon",
            value: 0.0,
        });
    }
    if rollouts == 0 {
        return Err(ConfigError::NonPositive {
            field: "rollouts",
            value: 0.0,
        });
    }

    let setup = ExperimentSetup {
        variant,
        controller: ControllerConfig {
            safety,
            rollouts,
            horizon: config.horizon,
            noise,
            beta_robust,
            penalty,
            backup_enabled: variant.backup_enabled(),
        },
        particles: config.particles,
        svgd: SvgdConfig {
            step_size: svgd_step,
            iterations: config.svgd_iterations.unwrap_or(env.defaults.svgd_iterations),
        },
        sigma_xi: config.sigma_xi.clone().unwrap_or(env.defaults.sigma_xi),
        log_steps: config.log_steps,
    };

    Ok(ResolvedConfig {
        config,
        variant,
        setup,
        overrides,
        trials,
    })
}
