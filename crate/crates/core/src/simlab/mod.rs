//! Benchmark environments, randomization protocol, metrics and baseline
//! controller configurations.
//!
//! The registry exposes four tasks: a cart-pole regulation task with a wall
//! at the origin, a planar-quadrotor circular tracking task inside a height
//! band (fully and partially observable variants), and a quadrotor with a
//! cable-suspended payload tracking a square path between three obstacles.
//! Each trial draws the true parameters uniformly from the task's prior box,
//! runs a fixed number of laps and reports tracking RMSE, constraint
//! satisfaction and parameter accuracy.

mod metrics;
mod runner;

pub use metrics::{compute_pa, compute_rmse, mean_std};
pub use runner::{run_benchmark, run_episode, BenchmarkResult, StepLog, Summary, TrialRecord};

use nalgebra::DVector;
use thiserror::Error;

use crate::belief::SvgdConfig;
use crate::controller::ControllerConfig;
use crate::dynamics::{self, Box, Model, QuadrotorPayload};
use crate::safety::SafeSet;

#[derive(Debug, Error)]
pub enum SimlabError {
    #[error("unknown environment '{0}' (registered: cartpole, quad2d, quad2d-partial, quad_payload)")]
    UnknownEnvironment(String),
    #[error(transparent)]
    Dynamics(#[from] dynamics::DynamicsError),
}

/// Controller variants of the benchmark study. All reuse the same
/// dual-trajectory machinery; they differ in where parameter hypotheses come
/// from, whether the belief is updated online and whether the robust backup
/// branch is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerVariant {
    /// True parameters, no belief, penalty-only path integral control.
    Oracle,
    /// Nominal parameters throughout, no learning, penalty-only.
    NominalMppi,
    /// Hypotheses drawn fresh from the static prior each step, no learning.
    RobustMppi,
    /// Stein particle belief updated online (the full controller).
    Prmppi,
    /// Gaussian belief updated by the unscented filter.
    PrmppiUkf,
    /// Stein belief but the robust backup branch disabled.
    PrmppiNoBackup,
}

impl ControllerVariant {
    pub fn parse(name: &str) -> Option<Self> {
        match name.replace('_', "-").as_str() {
            "oracle" => Some(Self::Oracle),
            "nominal" | "nominal-mppi" => Some(Self::NominalMppi),
            "robust" | "robust-mppi" => Some(Self::RobustMppi),
            "prmppi" => Some(Self::Prmppi),
            "prmppi-ukf" => Some(Self::PrmppiUkf),
            "prmppi-no-backup" => Some(Self::PrmppiNoBackup),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::NominalMppi => "nominal",
            Self::RobustMppi => "robust",
            Self::Prmppi => "prmppi",
            Self::PrmppiUkf => "prmppi-ukf",
            Self::PrmppiNoBackup => "prmppi-no-backup",
        }
    }

    /// Whether the variant maintains an online belief (and which kind).
    pub fn learns(&self) -> bool {
        matches!(self, Self::Prmppi | Self::PrmppiUkf | Self::PrmppiNoBackup)
    }

    /// The static-prior baseline is plain domain randomization of the cost
    /// (no certified backup): its prior never tightens, so a backup branch
    /// would never hand control back to the nominal one.
    pub fn backup_enabled(&self) -> bool {
        matches!(self, Self::Prmppi | Self::PrmppiUkf)
    }

    /// Parameter accuracy is only defined for learning variants.
    pub fn reports_pa(&self) -> bool {
        self.learns()
    }
}

/// Everything the episode runner needs besides the environment: controller
/// settings, belief settings and logging switches.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub variant: ControllerVariant,
    pub controller: ControllerConfig,
    /// Particle count N of the Stein belief.
    pub particles: usize,
    pub svgd: SvgdConfig,
    /// Per-state observation-noise stds of the transition likelihood.
    pub sigma_xi: Vec<f64>,
    /// Keep the full per-step log in the trial record.
    pub log_steps: bool,
}

/// Per-environment default constants for everything the benchmark protocol
/// leaves open; all of them can be overridden through the run configuration.
#[derive(Debug, Clone)]
pub struct EnvDefaults {
    pub beta: f64,
    pub beta_robust: f64,
    pub noise_std: Vec<f64>,
    /// Full perturbation covariance (row-major); overrides `noise_std` when
    /// set. Used to correlate per-rotor thrust noise (collective strong,
    /// differential weak).
    pub noise_cov: Option<Vec<Vec<f64>>>,
    /// AR(1) coefficient of the perturbations across the horizon; sustained
    /// maneuvers (braking, leveling) are unreachable with purely independent
    /// per-step noise.
    pub noise_correlation: f64,
    pub penalty: f64,
    pub sigma_xi: Vec<f64>,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub qf_diag: Vec<f64>,
    pub svgd_step_size: f64,
    pub svgd_iterations: usize,
}

/// Optional geometry/length overrides applied at construction.
#[derive(Debug, Clone, Default)]
pub struct EnvOverrides {
    pub lap_steps: Option<usize>,
    pub laps: Option<usize>,
    pub reference_radius: Option<f64>,
    pub reference_period_s: Option<f64>,
    pub q_diag: Option<Vec<f64>>,
    pub r_diag: Option<Vec<f64>>,
    pub qf_diag: Option<Vec<f64>>,
}

/// Margins the controller plans against. For fully observable tasks both
/// equal the true margin; under partial observability the nominal view only
/// contains constraints sensed within the sensing radius of the current
/// state, and the robust view additionally assumes unseen constraints could
/// sit just beyond that radius.
pub struct PlanningViews {
    pub nominal: SafeSet,
    pub robust: SafeSet,
}

pub struct Environment {
    pub name: String,
    pub model: std::boxed::Box<dyn Model>,
    /// Ground-truth margin used for violation accounting.
    pub true_safe_set: SafeSet,
    /// Full-state reference per step, length `lap_steps · laps + padding`.
    pub reference: Vec<DVector<f64>>,
    /// Randomization box for the true parameters (⊆ the model's box).
    pub prior: Box,
    pub lap_steps: usize,
    pub laps: usize,
    /// Reset the state to x0 at lap boundaries (repetition-style tasks).
    pub lap_reset: bool,
    pub position_indices: Vec<usize>,
    /// State entries that are angles; tracking errors on them are wrapped
    /// into [-pi, pi] so a wound-up revolution is not punished as a huge
    /// error demanding a violent unwind.
    pub angle_indices: Vec<usize>,
    pub defaults: EnvDefaults,
    /// Constraint sensing radius; `None` means fully observable.
    pub sensing_radius: Option<f64>,
    x0_base: DVector<f64>,
}

impl Environment {
    pub fn episode_steps(&self) -> usize {
        self.lap_steps * self.laps
    }

    /// Initial state for a trial; payload entries depend on the true cable
    /// length (the payload position is observed, not assumed).
    pub fn initial_state(&self, true_params: &DVector<f64>) -> DVector<f64> {
        let mut x0 = self.x0_base.clone();
        if self.name == "quad_payload" {
            let l = QuadrotorPayload::payload_position(x0.as_slice(), true_params[0]);
            x0[10] = l[0];
            x0[11] = l[1];
            x0[12] = l[2];
        }
        x0
    }

    pub fn reference_at(&self, t: usize) -> &DVector<f64> {
        &self.reference[t.min(self.reference.len() - 1)]
    }

    /// Planning margins for a control step taken at state `x_t`. For the
    /// quadrotor tasks both views additionally include the attitude envelope
    /// the underlying benchmark terminates on; the envelope margin is scaled
    /// down so it engages only near the tilt limit and never dominates the
    /// position margins far from it.
    pub fn planning_views(&self, x_t: &DVector<f64>) -> PlanningViews {
        match (self.name.as_str(), self.sensing_radius) {
            ("quad2d-partial", Some(radius)) => {
                let z_now = x_t[1];
                let floor_sensed = (z_now - QUAD2D_FLOOR).abs() <= radius;
                let ceiling_sensed = (QUAD2D_CEILING - z_now).abs() <= radius;
                let nominal = SafeSet::new("sensed height band", move |x: &[f64]| {
                    let mut m = radius;
                    if floor_sensed {
                        m = m.min(x[1] - QUAD2D_FLOOR);
                    }
                    if ceiling_sensed {
                        m = m.min(QUAD2D_CEILING - x[1]);
                    }
                    m.min(state_envelope(x))
                });
                // Conservative view: unseen constraints may lurk just past
                // the sensing radius of the current height.
                let robust = SafeSet::new("sensed band plus stay-near margin", move |x: &[f64]| {
                    let mut m = radius - (x[1] - z_now).abs();
                    if floor_sensed {
                        m = m.min(x[1] - QUAD2D_FLOOR);
                    }
                    if ceiling_sensed {
                        m = m.min(QUAD2D_CEILING - x[1]);
                    }
                    m.min(state_envelope(x))
                });
                PlanningViews { nominal, robust }
            }
            ("quad2d", _) => {
                let h = self.true_safe_set.clone();
                let nominal = SafeSet::new("height band with state envelope", move |x: &[f64]| {
                    h.margin(x).min(state_envelope(x))
                });
                PlanningViews {
                    robust: nominal.clone(),
                    nominal,
                }
            }
            ("quad_payload", _) => {
                let h = self.true_safe_set.clone();
                let nominal = SafeSet::new(
                    "payload obstacles with state envelope",
                    move |x: &[f64]| h.margin(x).min(payload_envelope(x)),
                );
                PlanningViews {
                    robust: nominal.clone(),
                    nominal,
                }
            }
            _ => PlanningViews {
                nominal: self.true_safe_set.clone(),
                robust: self.true_safe_set.clone(),
            },
        }
    }
}

const QUAD2D_FLOOR: f64 = 0.2;
const QUAD2D_CEILING: f64 = 1.4;
const QUAD2D_TILT_LIMIT: f64 = 1.2;
const QUAD2D_X_LIMIT: f64 = 2.0;
const QUAD2D_SPEED_LIMIT: f64 = 3.0;

/// Margin to the benchmark's state envelope (tilt, lateral position and
/// speed termination bounds), scaled so it only competes with the height
/// margins when the vehicle approaches the envelope. Keeping the envelope in
/// every planning view means the backup branch holds the full state sane
/// while it is in charge, not just the constrained height.
fn state_envelope(x: &[f64]) -> f64 {
    let tilt = QUAD2D_TILT_LIMIT - x[4].abs();
    let lateral = QUAD2D_X_LIMIT - x[0].abs();
    let speed = QUAD2D_SPEED_LIMIT - (x[2] * x[2] + x[3] * x[3]).sqrt();
    0.2 * tilt.min(lateral).min(speed)
}
pub const CARTPOLE_POLE_LENGTH: f64 = 0.5;

pub fn make_environment(name: &str, overrides: &EnvOverrides) -> Result<Environment, SimlabError> {
    let mut env = match name.replace('_', "-").as_str() {
        "cartpole" => cartpole_env(overrides),
        "quad2d" => quad2d_env(overrides, false),
        "quad2d-partial" => quad2d_env(overrides, true),
        "quad-payload" => quad_payload_env(overrides),
        other => return Err(SimlabError::UnknownEnvironment(other.to_string())),
    };
    if let Some(q) = &overrides.q_diag {
        env.defaults.q_diag = q.clone();
    }
    if let Some(r) = &overrides.r_diag {
        env.defaults.r_diag = r.clone();
    }
    if let Some(qf) = &overrides.qf_diag {
        env.defaults.qf_diag = qf.clone();
    }
    Ok(env)
}

/// Cart-pole: drive the cart from the right to the origin and keep the pole
/// upright. Neither the cart nor the pole tip may enter `p_c < 0`. Masses
/// randomized within ±10% of (1 kg, 0.1 kg).
fn cartpole_env(ov: &EnvOverrides) -> Environment {
    let model = std::boxed::Box::new(dynamics::Cartpole::default());
    let lap_steps = ov.lap_steps.unwrap_or(150);
    let laps = ov.laps.unwrap_or(3);
    let horizon_pad = 128;
    let reference = vec![DVector::zeros(4); lap_steps * laps + horizon_pad];
    Environment {
        name: "cartpole".to_string(),
        true_safe_set: SafeSet::new("cart and pole tip right of the origin wall", |x: &[f64]| {
            x[0].min(x[0] + CARTPOLE_POLE_LENGTH * x[2].sin())
        }),
        reference,
        prior: Box::from_pairs(&[(0.9, 1.1), (0.09, 0.11)]),
        lap_steps,
        laps,
        lap_reset: true,
        position_indices: vec![0],
        angle_indices: vec![2],
        defaults: EnvDefaults {
            beta: 1.0,
            beta_robust: 0.05,
            noise_std: vec![3.0],
            noise_cov: None,
            noise_correlation: 0.0,
            penalty: 1e6,
            sigma_xi: vec![0.002, 0.005, 0.002, 0.005],
            q_diag: vec![80.0, 0.5, 5.0, 0.5],
            r_diag: vec![0.002],
            qf_diag: vec![160.0, 1.0, 10.0, 1.0],
            svgd_step_size: 0.05,
            svgd_iterations: 10,
        },
        sensing_radius: None,
        x0_base: DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
        model,
    }
}

/// Planar quadrotor: track a circle whose top pokes through the ceiling of
/// an admissible height band, so the constraint is active once per lap.
/// Mass and inertia randomized within ±50% of (27 g, 1.4e-5 kg·m²).
fn quad2d_env(ov: &EnvOverrides, partial: bool) -> Environment {
    let model = std::boxed::Box::new(dynamics::PlanarQuadrotor::default());
    let radius = ov.reference_radius.unwrap_or(0.5);
    let period = ov.reference_period_s.unwrap_or(6.0);
    let dt = 0.02;
    let lap_steps = ov.lap_steps.unwrap_or((period / dt).round() as usize);
    let laps = ov.laps.unwrap_or(3);
    let center_z = 1.0;
    let omega = 2.0 * std::f64::consts::PI / (lap_steps as f64 * dt);

    let total = lap_steps * laps + 128;
    let reference: Vec<DVector<f64>> = (0..total)
        .map(|t| {
            let ph = omega * dt * t as f64;
            DVector::from_vec(vec![
                radius * ph.sin(),
                center_z - radius * ph.cos(),
                radius * omega * ph.cos(),
                radius * omega * ph.sin(),
                0.0,
                0.0,
            ])
        })
        .collect();

    Environment {
        name: if partial { "quad2d-partial" } else { "quad2d" }.to_string(),
        true_safe_set: SafeSet::new("height band", |x: &[f64]| {
            (x[1] - QUAD2D_FLOOR).min(QUAD2D_CEILING - x[1])
        }),
        reference,
        prior: Box::from_pairs(&[(0.5 * 0.027, 1.5 * 0.027), (0.5 * 1.4e-5, 1.5 * 1.4e-5)]),
        lap_steps,
        laps,
        lap_reset: false,
        position_indices: vec![0, 1],
        angle_indices: vec![4],
        defaults: EnvDefaults {
            beta: 1.0,
            beta_robust: 0.05,
            noise_std: vec![0.02, 0.02],
            noise_cov: Some(rotor_noise_cov(0.05, 0.005)),
            noise_correlation: 0.9,
            penalty: 1e6,
            sigma_xi: vec![0.02, 0.02, 0.05, 0.05, 0.1, 0.2],
            q_diag: vec![60.0, 60.0, 2.0, 2.0, 20.0, 2.0],
            r_diag: vec![1.0, 1.0],
            qf_diag: vec![120.0, 120.0, 4.0, 4.0, 40.0, 4.0],
            svgd_step_size: 0.05,
            svgd_iterations: 10,
        },
        sensing_radius: if partial { Some(0.4) } else { None },
        // Start hovering at rest at the reference's starting point: catching
        // up to the moving reference under the not-yet-identified parameters
        // gives the first lap its learning transient.
        x0_base: DVector::from_vec(vec![0.0, center_z - radius, 0.0, 0.0, 0.0, 0.0]),
        model,
    }
}

/// Quadrotor with cable-suspended payload: track a square path between an
/// overhead slab (fly below), a low block (payload must clear its top) and a
/// pillar. Cable length prior U(0.3, 0.9) m, damping priors U(0, 0.1).
fn quad_payload_env(ov: &EnvOverrides) -> Environment {
    let model = std::boxed::Box::new(QuadrotorPayload::default());
    let dt = 0.02;
    let period = ov.reference_period_s.unwrap_or(12.0);
    let lap_steps = ov.lap_steps.unwrap_or((period / dt).round() as usize);
    let laps = ov.laps.unwrap_or(3);
    let half = 0.75;
    let z_ref = 1.0;

    let total = lap_steps * laps + 128;
    let reference: Vec<DVector<f64>> = (0..total)
        .map(|t| {
            let s = (t % lap_steps) as f64 / lap_steps as f64 * 4.0;
            let (x, y) = square_point(s, half);
            let mut r = DVector::zeros(13);
            r[0] = x;
            r[1] = y;
            r[2] = z_ref;
            r
        })
        .collect();

    Environment {
        name: "quad_payload".to_string(),
        true_safe_set: SafeSet::new(
            "slab below 1.25 m over the north side, payload above the 0.55 m block on the \
             south side, 0.25 m pillar clearance near the east corner",
            |x: &[f64]| {
                let (dx, dy, dz) = (x[0], x[1], x[2]);
                let (lx, ly, lz) = (x[10], x[11], x[12]);
                // O1: overhead slab over the north side; fly below it.
                let o1 = footprint_margin(dx, dy, -0.3, 0.3, 0.55, 0.95).max(1.25 - dz);
                // O2: low block on the south side; the payload clears its top.
                let o2 = footprint_margin(lx, ly, -0.3, 0.3, -0.95, -0.55).max(lz - 0.55);
                // O3: pillar near the east corner; lateral clearance for both
                // bodies.
                let pillar = |px: f64, py: f64| {
                    ((px - 0.75).powi(2) + (py + 0.2).powi(2)).sqrt() - 0.25
                };
                let o3 = pillar(dx, dy).min(pillar(lx, ly));
                // Keep both bodies off the ground.
                let ground = (dz - 0.3).min(lz - 0.05);
                o1.min(o2).min(o3).min(ground)
            },
        ),
        reference,
        prior: Box::from_pairs(&[(0.3, 0.9), (0.0, 0.1), (0.0, 0.1)]),
        lap_steps,
        laps,
        lap_reset: false,
        position_indices: vec![0, 1, 2],
        angle_indices: vec![3],
        defaults: EnvDefaults {
            beta: 2.0,
            beta_robust: 0.05,
            noise_std: vec![0.8, 0.8, 0.8],
            noise_cov: None,
            noise_correlation: 0.9,
            penalty: 1e6,
            sigma_xi: vec![
                0.002, 0.002, 0.002, 0.01, 0.01, 0.005, 0.005, 0.005, 0.02, 0.02, 0.002,
                0.002, 0.002,
            ],
            q_diag: vec![
                40.0, 40.0, 40.0, 0.5, 0.5, 2.0, 2.0, 2.0, 0.1, 0.1, 0.0, 0.0, 0.0,
            ],
            r_diag: vec![0.05, 0.05, 0.05],
            qf_diag: vec![
                80.0, 80.0, 80.0, 1.0, 1.0, 4.0, 4.0, 4.0, 0.2, 0.2, 0.0, 0.0, 0.0,
            ],
            svgd_step_size: 0.05,
            svgd_iterations: 10,
        },
        sensing_radius: None,
        x0_base: {
            let mut x0 = DVector::zeros(13);
            x0[0] = half;
            x0[1] = half;
            x0[2] = z_ref;
            x0[4] = 0.05; // hang slightly off the coordinate singularity
            x0
        },
        model,
    }
}

/// Position on the square of half-side `half` at path parameter `s ∈ [0, 4)`,
/// starting at the north-east corner and moving counterclockwise.
fn square_point(s: f64, half: f64) -> (f64, f64) {
    let seg = s.floor() as usize % 4;
    let f = s - s.floor();
    match seg {
        0 => (half - 2.0 * half * f, half),
        1 => (-half, half - 2.0 * half * f),
        2 => (-half + 2.0 * half * f, -half),
        _ => (half, -half + 2.0 * half * f),
    }
}

/// Planning envelope for the payload task: keep the drone inside a generous
/// box around the course and its speed bounded, so the backup branch cannot
/// wander off along unconstrained directions.
fn payload_envelope(x: &[f64]) -> f64 {
    let lateral = 2.0 - x[0].abs().max(x[1].abs());
    let vertical = (2.2 - x[2]).min(x[2] - 0.25);
    let speed = 4.0 - (x[5] * x[5] + x[6] * x[6] + x[7] * x[7]).sqrt();
    0.2 * lateral.min(vertical).min(speed)
}

/// Covariance of per-rotor thrust perturbations built from a collective
/// component (both rotors together, std `sigma_total` on the summed thrust)
/// and a differential component (std `sigma_diff` on the thrust split).
fn rotor_noise_cov(sigma_total: f64, sigma_diff: f64) -> Vec<Vec<f64>> {
    let vt = sigma_total * sigma_total;
    let vd = sigma_diff * sigma_diff;
    let diag = 0.25 * (vt + vd);
    let off = 0.25 * (vt - vd);
    vec![vec![diag, off], vec![off, diag]]
}

/// Signed distance to the outside of an axis-aligned xy footprint box
/// (positive outside, negative inside).
fn footprint_margin(x: f64, y: f64, x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> f64 {
    let dx = (x_lo - x).max(x - x_hi);
    let dy = (y_lo - y).max(y - y_hi);
    dx.max(dy)
}

/// Quadratic tracking cost against a time-indexed reference window.
pub struct TrackingCost<'a> {
    pub q_diag: &'a [f64],
    pub r_diag: &'a [f64],
    pub qf_diag: &'a [f64],
    pub reference: &'a [DVector<f64>],
    /// Episode step the window starts at.
    pub t0: usize,
    /// Prediction steps; the terminal cost tracks `reference[t0 + horizon]`.
    pub horizon: usize,
    /// State entries whose tracking error wraps into [-pi, pi].
    pub angle_indices: &'a [usize],
}

impl TrackingCost<'_> {
    fn reference_at(&self, k: usize) -> &DVector<f64> {
        let idx = (self.t0 + k).min(self.reference.len() - 1);
        &self.reference[idx]
    }

    fn error(&self, i: usize, x: &[f64], r: &DVector<f64>) -> f64 {
        let e = x[i] - r[i];
        if self.angle_indices.contains(&i) {
            wrap_to_pi(e)
        } else {
            e
        }
    }
}

/// Wrap an angle difference into [-pi, pi].
pub fn wrap_to_pi(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if w == -std::f64::consts::PI {
        w = std::f64::consts::PI;
    }
    w
}

impl crate::mppi::CostFunction for TrackingCost<'_> {
    fn stage(&self, k: usize, x: &[f64], u: &[f64]) -> f64 {
        let r = self.reference_at(k);
        let mut c = 0.0;
        for (i, q) in self.q_diag.iter().enumerate() {
            let e = self.error(i, x, r);
            c += q * e * e;
        }
        for (i, rw) in self.r_diag.iter().enumerate() {
            c += rw * u[i] * u[i];
        }
        c
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        let r = self.reference_at(self.horizon);
        let mut c = 0.0;
        for (i, q) in self.qf_diag.iter().enumerate() {
            let e = self.error(i, x, r);
            c += q * e * e;
        }
        c
    }
}
