//! Closed-loop experiment harness.
//!
//! Runs the ensemble controller against an identical-twin plant: the same
//! model and integrator propagate both the forecasts and the "real" vehicle,
//! so any tracking error is attributable to the controller itself. The
//! harness owns experiment configuration, the cycle loop, waypoint
//! switching, and the CSV / plot outputs.

pub mod config;
pub mod csv;
pub mod plots;
pub mod validate;

pub use config::apply_config;
pub use csv::{csv_string, parse_csv, write_csv};
pub use plots::emit_plots;
pub use validate::{run_validation, CheckReport};

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::controller::{control_cycle, ControllerConfig, PerformanceSpec, Projection};
use crate::dynamics::{ControlInput, QuadParams, QuadState};
use crate::ensemble::{Ensemble, GaussianSpec};
use crate::error::{Error, Result};
use crate::integrate::{simulate_zoh, IntegratorConfig};

/// Full description of a closed-loop experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub params: QuadParams,
    pub integrator: IntegratorConfig,
    pub controller: ControllerConfig,
    /// Performance tolerances for all 12 state components.
    pub rho: DVector<f64>,
    /// Target position for the terminal experiment.
    pub target_position: Vector3<f64>,
    /// Target yaw angle, shared by all targets.
    pub target_yaw: f64,
    /// Waypoints for the circuit experiment (visited cyclically).
    pub waypoints: Vec<Vector3<f64>>,
    /// Mean absolute error below which a waypoint counts as reached.
    pub mae_threshold: f64,
    /// Simulated time in seconds.
    pub duration: f64,
    pub seed: u64,
    /// Forecast worker threads; 0 lets the pool pick a default.
    pub workers: usize,
    /// Center of the initial input ensemble; `None` uses the hover trim.
    pub trim: Option<f64>,
}

impl ExperimentConfig {
    /// Point-to-point flight: reach (1, 1, 1) with a quarter-turn yaw and
    /// hover there.
    pub fn terminal_defaults() -> Self {
        Self {
            params: QuadParams::default(),
            integrator: IntegratorConfig {
                dt: 0.25,
                substeps: 5,
            },
            controller: ControllerConfig {
                min_std: 0.004,
                ..ControllerConfig::default()
            },
            rho: DVector::from_element(12, 0.001),
            target_position: Vector3::new(1.0, 1.0, 1.0),
            target_yaw: std::f64::consts::FRAC_PI_2,
            waypoints: Vec::new(),
            mae_threshold: 0.001,
            duration: 25.0,
            seed: 1,
            workers: 0,
            trim: None,
        }
    }

    /// Square circuit at unit altitude with a faster control rate and a
    /// longer horizon.
    pub fn waypoint_defaults() -> Self {
        Self {
            integrator: IntegratorConfig {
                dt: 0.125,
                substeps: 5,
            },
            controller: ControllerConfig {
                horizon: 8,
                min_std: 0.004,
                ..ControllerConfig::default()
            },
            target_position: Vector3::new(0.0, 0.0, 1.0),
            target_yaw: 0.0,
            waypoints: vec![
                Vector3::new(0.0, 0.0, 1.0),
                Vector3::new(1.0, 0.0, 1.0),
                Vector3::new(1.0, 1.0, 1.0),
                Vector3::new(0.0, 1.0, 1.0),
            ],
            duration: 60.0,
            ..Self::terminal_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        self.controller.validate()?;
        if self.rho.len() != 12 {
            return Err(Error::Dimension {
                what: "tolerance vector",
                expected: 12,
                got: self.rho.len(),
            });
        }
        if self.rho.iter().any(|&r| !r.is_finite() || r <= 0.0) {
            return Err(Error::Invalid {
                what: "tolerance vector",
                why: "all components must be finite and strictly positive".into(),
            });
        }
        if !self.duration.is_finite() || self.duration <= 0.0 {
            return Err(Error::Invalid {
                what: "duration",
                why: format!("must be positive, got {}", self.duration),
            });
        }
        if !self.mae_threshold.is_finite() || self.mae_threshold <= 0.0 {
            return Err(Error::Invalid {
                what: "mae threshold",
                why: format!("must be positive, got {}", self.mae_threshold),
            });
        }
        if !self.target_yaw.is_finite()
            || self.target_position.iter().any(|v| !v.is_finite())
            || self
                .waypoints
                .iter()
                .any(|w| w.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite("experiment targets".into()));
        }
        if let Some(trim) = self.trim {
            if !trim.is_finite() || trim < 0.0 {
                return Err(Error::Invalid {
                    what: "trim",
                    why: format!("must be finite and nonnegative, got {trim}"),
                });
            }
        }
        let p = &self.params;
        for (name, v) in [
            ("mass", p.m),
            ("lift constant", p.k),
            ("arm length", p.l),
            ("yaw drag constant", p.b),
            ("gravity", p.g),
            ("ixx", p.ixx),
            ("iyy", p.iyy),
            ("izz", p.izz),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Invalid {
                    what: "vehicle parameters",
                    why: format!("{name} must be finite and positive, got {v}"),
                });
            }
        }
        if p.drag.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::Invalid {
                what: "vehicle parameters",
                why: "drag coefficients must be finite and nonnegative".into(),
            });
        }
        Ok(())
    }

    /// Full-state performance spec steering to `position` at the configured
    /// yaw, level and at rest.
    pub fn spec_for(&self, position: &Vector3<f64>) -> Result<PerformanceSpec> {
        let mut target = DVector::zeros(12);
        target[0] = position.x;
        target[1] = position.y;
        target[2] = position.z;
        target[5] = self.target_yaw;
        PerformanceSpec::new(target, self.rho.clone(), Projection::FullState)
    }
}

/// One cycle of the closed loop as written to the CSV output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRow {
    /// Cycle start time.
    pub t: f64,
    /// Plant state at the cycle start (what the controller saw).
    pub state: QuadState,
    pub applied: ControlInput,
    /// Posterior per-rotor input standard deviations.
    pub posterior_std: [f64; 4],
    /// Spread of the cycle's first-guess ensemble.
    pub total_std: f64,
    /// Mean absolute error against the waypoint that was active when the
    /// cycle began (before any switch).
    pub mae: f64,
    /// Index of the waypoint being steered to during this cycle.
    pub waypoint: usize,
}

/// Complete record of a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    /// Number of waypoint switches that occurred.
    pub transitions: usize,
    /// Plant state after the final cycle.
    pub final_state: QuadState,
}

/// Runs the point-to-point experiment: one fixed target for the whole run.
pub fn run_terminal(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let spec = cfg.spec_for(&cfg.target_position)?;
    run_experiment(cfg, vec![spec], false)
}

/// Runs the waypoint circuit: the target advances to the next waypoint
/// (cyclically) whenever the plant state is within `mae_threshold` of the
/// current one.
pub fn run_waypoints(cfg: &ExperimentConfig) -> Result<RunRecord> {
    if cfg.waypoints.is_empty() {
        return Err(Error::Invalid {
            what: "waypoints",
            why: "circuit experiment needs at least one waypoint".into(),
        });
    }
    let specs = cfg
        .waypoints
        .iter()
        .map(|w| cfg.spec_for(w))
        .collect::<Result<Vec<_>>>()?;
    run_experiment(cfg, specs, true)
}

fn run_experiment(
    cfg: &ExperimentConfig,
    specs: Vec<PerformanceSpec>,
    switching: bool,
) -> Result<RunRecord> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    pool.install(|| run_loop(cfg, &specs, switching))
}

fn run_loop(
    cfg: &ExperimentConfig,
    specs: &[PerformanceSpec],
    switching: bool,
) -> Result<RunRecord> {
    let trim = cfg.trim.unwrap_or_else(|| cfg.params.hover_trim());
    let first_guess = GaussianSpec::new(
        DVector::from_element(4, trim),
        DVector::from_element(4, cfg.controller.sigma0),
        cfg.seed,
    )?;
    let mut prior = Ensemble::draw(&first_guess, cfg.controller.members)?;

    // The initial draw consumes stream 0 of the seed; per-cycle noise
    // (target perturbations, resampling) lives on stream 1 so the two uses
    // can never alias.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let cycles = ((cfg.duration / cfg.integrator.dt).ceil() as usize).max(1);
    let mut x = QuadState::default();
    let mut active = 0usize;
    let mut transitions = 0usize;
    let mut rows = Vec::with_capacity(cycles);

    for n in 0..cycles {
        let t = n as f64 * cfg.integrator.dt;
        // Error against the waypoint that was active coming into the cycle;
        // on switch rows this certifies how closely it was reached.
        let mae_now = specs[active].mae(&x);
        if switching && mae_now < cfg.mae_threshold {
            active = (active + 1) % specs.len();
            transitions += 1;
        }

        let out = control_cycle(
            &x,
            &prior,
            &specs[active],
            &cfg.controller,
            &cfg.integrator,
            &cfg.params,
            &mut rng,
        )?;

        rows.push(RunRow {
            t,
            state: x,
            applied: out.applied,
            posterior_std: [
                out.diagnostics.posterior_std[0],
                out.diagnostics.posterior_std[1],
                out.diagnostics.posterior_std[2],
                out.diagnostics.posterior_std[3],
            ],
            total_std: out.diagnostics.total_std,
            mae: mae_now,
            waypoint: active,
        });

        let traj = simulate_zoh(&x, &out.applied, 1, &cfg.integrator, &cfg.params)?;
        x = *traj.last().expect("nonempty trajectory");
        prior = out.next_prior;
    }

    Ok(RunRecord {
        rows,
        transitions,
        final_state: x,
    })
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

/// Largest distance from the flown path to the straight leg it was tracking.
///
/// Each row's leg runs from the previously reached waypoint (or from
/// `initial_position` before the first switch) to the waypoint the row was
/// steering toward.
pub fn cross_track_deviation(
    rows: &[RunRow],
    initial_position: &Vector3<f64>,
    waypoints: &[Vector3<f64>],
) -> f64 {
    if waypoints.is_empty() {
        return 0.0;
    }
    let n = waypoints.len();
    let mut any_switch = false;
    let mut last_wp = rows.first().map(|r| r.waypoint).unwrap_or(0);
    let mut worst = 0.0f64;
    for row in rows {
        if row.waypoint != last_wp {
            any_switch = true;
            last_wp = row.waypoint;
        }
        let goal = &waypoints[row.waypoint % n];
        let anchor = if any_switch {
            waypoints[(row.waypoint + n - 1) % n]
        } else {
            *initial_position
        };
        let d = point_segment_distance(&row.state.position(), &anchor, goal);
        worst = worst.max(d);
    }
    worst
}
