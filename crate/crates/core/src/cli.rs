//! Command-line front end: `run`, `validate` and `table`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{resolve, ResolvedConfig, RunConfig};
use crate::io::write_benchmark;
use crate::simlab::run_benchmark;

#[derive(Parser, Debug)]
#[command(
    name = "prmppi",
    about = "Parameter-robust sampling-based MPC benchmarks",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a benchmark and write summary JSON plus per-trial CSV logs.
    Run(RunArgs),
    /// Parse and validate a configuration without running anything.
    Validate {
        /// Path to the TOML configuration file.
        #[arg(long)]
        config: String,
    },
    /// Render a comparison table from stored summary.json files.
    Table {
        /// Result directories (each containing a summary.json).
        dirs: Vec<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// TOML configuration file; flags below override its values.
    #[arg(long)]
    pub config: Option<String>,
    /// Environment name: cartpole, quad2d, quad2d-partial, quad_payload.
    #[arg(long)]
    pub env: Option<String>,
    /// Controller variant: oracle, nominal, robust, prmppi, prmppi-ukf,
    /// prmppi-no-backup.
    #[arg(long)]
    pub controller: Option<String>,
    /// Number of trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; trial i uses base_seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chance-constraint level delta in (0, 1).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Parameter hypotheses per control step (default: ceil(1/delta)).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Perturbed sequences per trajectory branch.
    #[arg(long)]
    pub rollouts: Option<usize>,
    /// Prediction steps per planned sequence.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Stein particle count.
    #[arg(long)]
    pub particles: Option<usize>,
    /// Steps per lap.
    #[arg(long)]
    pub episode_steps: Option<usize>,
    /// Laps per trial.
    #[arg(long)]
    pub laps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// desk or full.
    #[arg(long)]
    pub preset: Option<String>,
    /// Disable the per-step CSV logs (summaries are always written).
    #[arg(long)]
    pub no_step_logs: bool,
}

impl RunArgs {
    /// Merge the config file (if any) with the flag overrides.
    pub fn to_config(&self) -> Result<RunConfig, crate::config::ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.env {
            cfg.environment = v.clone();
        }
        if let Some(v) = &self.controller {
            cfg.controller = v.clone();
        }
        if let Some(v) = self.trials {
            cfg.trials = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.samples {
            cfg.samples_p = Some(v);
        }
        if let Some(v) = self.rollouts {
            cfg.rollouts = Some(v);
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.particles {
            cfg.particles = v;
        }
        if let Some(v) = self.episode_steps {
            cfg.episode_steps = Some(v);
        }
        if let Some(v) = self.laps {
            cfg.laps = Some(v);
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if let Some(v) = &self.preset {
            cfg.preset = v.clone();
        }
        if self.no_step_logs {
            cfg.log_steps = false;
        }
        Ok(cfg)
    }
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // Ignore the error when a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Execute a benchmark run end to end. Exit code 0 on completion (failed
/// trials are data, not errors), 1 on configuration or I/O problems.
pub fn cmd_run(args: &RunArgs) -> i32 {
    let cfg = match args.to_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let resolved = match resolve(cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    init_threads(resolved.config.threads);

    let ResolvedConfig {
        config,
        setup,
        overrides,
        trials,
        ..
    } = &resolved;

    let result = match run_benchmark(
        &config.environment,
        setup,
        overrides,
        *trials,
        config.base_seed,
    ) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };

    let dir = Path::new(&config.output_dir);
    if let Err(e) = write_benchmark(dir, &result, config) {
        eprintln!("error: failed to write results: {e}");
        return 1;
    }

    let s = &result.summary;
    println!(
        "{} / {}: RMSE {:.4} ± {:.4} | SR {}/{}{} | fallbacks {} | out: {}",
        s.environment,
        s.controller,
        s.rmse_mean,
        s.rmse_std,
        s.success_count,
        s.trials,
        match (s.pa_mean, s.pa_std) {
            (Some(m), Some(sd)) => format!(" | PA {m:.1} ± {sd:.1}"),
            _ => String::new(),
        },
        s.fallback_steps_total,
        config.output_dir,
    );
    0
}

/// Parse + constraint-check only; shares the validator with `run`.
pub fn cmd_validate(config_path: &str) -> i32 {
    match RunConfig::from_path(config_path).and_then(resolve) {
        Ok(r) => {
            println!(
                "ok: {} / {} ({} trials, delta {}, P {}, M {}, K {})",
                r.config.environment,
                r.config.controller,
                r.trials,
                r.config.delta,
                r.setup.controller.safety.p,
                r.setup.controller.rollouts,
                r.setup.controller.horizon,
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Render the μ ± σ comparison table from stored summaries.
pub fn cmd_table(dirs: &[PathBuf]) -> i32 {
    #[derive(serde::Deserialize)]
    struct Stored {
        summary: crate::simlab::Summary,
    }

    let mut rows = Vec::new();
    for dir in dirs {
        let path = dir.join("summary.json");
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return 1;
            }
        };
        match serde_json::from_str::<Stored>(&text) {
            Ok(s) => rows.push(s.summary),
            Err(e) => {
                eprintln!("error: cannot parse {}: {e}", path.display());
                return 1;
            }
        }
    }
    if rows.is_empty() {
        eprintln!("error: no summaries given");
        return 1;
    }

    println!("{}", render_table(&rows));
    0
}

pub fn render_table(rows: &[crate::simlab::Summary]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:<18} {:<18} {:<10} {:<16}\n",
        "Environment", "Method", "RMSE", "SR", "PA (%)"
    ));
    out.push_str(&"-".repeat(80));
    out.push('\n');
    for s in rows {
        let pa = match (s.pa_mean, s.pa_std) {
            (Some(m), Some(sd)) => format!("{m:.1} ± {sd:.1}"),
            _ => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<16} {:<18} {:<18} {:<10} {:<16}\n",
            s.environment,
            s.controller,
            format!("{:.3} ± {:.3}", s.rmse_mean, s.rmse_std),
            format!("{}/{}", s.success_count, s.trials),
            pa
        ));
    }
    out
}

pub fn main_with(cli: Cli) -> i32 {
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { config } => cmd_validate(config),
        Command::Table { dirs } => cmd_table(dirs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_defaults() {
        let args = RunArgs {
            env: Some("quad2d".into()),
            delta: Some(0.2),
            trials: Some(3),
            ..Default::default()
        };
        let cfg = args.to_config().unwrap();
        assert_eq!(cfg.environment, "quad2d");
        assert_eq!(cfg.delta, 0.2);
        assert_eq!(cfg.trials, Some(3));
    }

    #[test]
    fn validate_and_run_share_the_validator() {
        // A config rejected by resolve must be rejected regardless of entry
        // point; the P-bound violation is the canonical case.
        let args = RunArgs {
            delta: Some(0.1),
            samples: Some(3),
            ..Default::default()
        };
        let cfg = args.to_config().unwrap();
        assert!(crate::config::resolve(cfg).is_err());
    }

    #[test]
    fn table_renders_dash_for_missing_pa() {
        let s = crate::simlab::Summary {
            environment: "quad2d".into(),
            controller: "oracle".into(),
            trials: 5,
            base_seed: 0,
            rmse_mean: 0.15,
            rmse_std: 0.02,
            success_count: 5,
            pa_mean: None,
            pa_std: None,
            lap_rmse_mean: vec![],
            lap_pa_mean: None,
            violations_total: 0,
            fallback_steps_total: 0,
            diverged_trials: 0,
        };
        let t = render_table(&[s]);
        assert!(t.contains('-'));
        assert!(t.contains("5/5"));
    }
}
