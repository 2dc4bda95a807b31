//! Ensemble predictive controller.
//!
//! Each control cycle forecasts an ensemble of candidate rotor inputs through
//! the nonlinear model, then applies a regularized Kalman-style update that
//! moves the ensemble toward the performance target. The input-to-outcome
//! sensitivity is estimated purely from ensemble cross-covariances, so the
//! plant is only ever exercised as a black-box simulation; no derivative of
//! the dynamics appears anywhere in this module.

use nalgebra::{DMatrix, DVector, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{ControlInput, QuadParams, QuadState};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::integrate::{simulate_zoh, IntegratorConfig};

const INPUT_DIM: usize = 4;

/// Map from vehicle state to the performance variables the controller steers.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    /// All 12 state components in declaration order.
    FullState,
    /// A subset of state components by index into the state vector.
    Components(Vec<usize>),
}

impl Projection {
    pub fn output_dim(&self) -> usize {
        match self {
            Projection::FullState => 12,
            Projection::Components(idx) => idx.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Projection::Components(idx) = self {
            if idx.is_empty() {
                return Err(Error::Invalid {
                    what: "projection",
                    why: "component list is empty".into(),
                });
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= 12) {
                return Err(Error::Invalid {
                    what: "projection",
                    why: format!("state index {bad} out of range"),
                });
            }
        }
        Ok(())
    }

    pub fn apply(&self, state: &QuadState) -> DVector<f64> {
        let v = state.to_vector();
        match self {
            Projection::FullState => DVector::from_column_slice(v.as_slice()),
            Projection::Components(idx) => {
                DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
            }
        }
    }
}

/// Target values and per-component tolerances in performance space.
///
/// `rho` plays the role of an observation noise standard deviation: large
/// values tell the controller a component may deviate, small values demand
/// tight tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceSpec {
    pub target: DVector<f64>,
    pub rho: DVector<f64>,
    pub projection: Projection,
}

impl PerformanceSpec {
    pub fn new(target: DVector<f64>, rho: DVector<f64>, projection: Projection) -> Result<Self> {
        projection.validate()?;
        let dim = projection.output_dim();
        if target.len() != dim {
            return Err(Error::Dimension {
                what: "performance target",
                expected: dim,
                got: target.len(),
            });
        }
        if rho.len() != dim {
            return Err(Error::Dimension {
                what: "performance tolerance",
                expected: dim,
                got: rho.len(),
            });
        }
        if target.iter().any(|v| !v.is_finite()) || rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("performance spec".into()));
        }
        if rho.iter().any(|&r| r <= 0.0) {
            return Err(Error::Invalid {
                what: "performance tolerance",
                why: "all components must be strictly positive".into(),
            });
        }
        Ok(Self {
            target,
            rho,
            projection,
        })
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    /// Mean absolute error of a state against the target.
    pub fn mae(&self, state: &QuadState) -> f64 {
        let z = self.projection.apply(state);
        (z - &self.target).abs().sum() / self.dim() as f64
    }
}

/// How the applied input is picked from the posterior ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionRule {
    /// Componentwise median (average of the two central members for even E).
    Median,
    Mean,
    /// A fixed member index.
    Member(usize),
}

/// Which algebraic route the ensemble update takes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateForm {
    /// SVD square-root form; never forms the performance covariance.
    SquareRoot,
    /// Direct gain form with a Cholesky solve of the innovation covariance.
    Direct,
}

/// Controller settings shared across cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Ensemble size E.
    pub members: usize,
    /// Forecast horizon in control intervals.
    pub horizon: usize,
    /// First-guess input standard deviation.
    pub sigma0: f64,
    pub selection: SelectionRule,
    pub update: UpdateForm,
    /// Perturb the target columns with rho-scaled noise during updates.
    pub perturb_targets: bool,
    /// Drop SVD modes below this fraction of the largest singular value.
    pub svd_trunc: f64,
    /// Multiplicative variance inflation applied when resampling.
    pub inflation: f64,
    /// Floor on the resampling standard deviation (collapse guard).
    pub min_std: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            members: 100,
            horizon: 4,
            sigma0: 0.01,
            selection: SelectionRule::Median,
            update: UpdateForm::SquareRoot,
            perturb_targets: false,
            svd_trunc: 0.0,
            inflation: 1.0,
            min_std: 1e-4,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::EnsembleSize { got: self.members });
        }
        if self.horizon == 0 {
            return Err(Error::Invalid {
                what: "horizon",
                why: "must be at least 1 control interval".into(),
            });
        }
        for (name, v) in [
            ("sigma0", self.sigma0),
            ("svd_trunc", self.svd_trunc),
            ("inflation", self.inflation),
            ("min_std", self.min_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Invalid {
                    what: "controller config",
                    why: format!("{name} must be finite and nonnegative, got {v}"),
                });
            }
        }
        if self.svd_trunc > 1.0 {
            return Err(Error::Invalid {
                what: "controller config",
                why: format!("svd_trunc must lie in [0, 1], got {}", self.svd_trunc),
            });
        }
        if let SelectionRule::Member(e) = self.selection {
            if e >= self.members {
                return Err(Error::Invalid {
                    what: "selection rule",
                    why: format!("member {e} out of range for {} members", self.members),
                });
            }
        }
        Ok(())
    }
}

/// An ensemble-estimated linear map plus a flag recording whether a
/// rank-deficient covariance forced a pseudo-inverse.
#[derive(Debug, Clone)]
pub struct GpEstimate {
    pub matrix: DMatrix<f64>,
    pub pseudo_inverse: bool,
}

/// Result of one ensemble update.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub posterior: Ensemble,
    /// Member-space transform: `posterior = prior * transform` (E x E).
    pub transform: DMatrix<f64>,
    /// True when the prior ensemble carried no spread.
    pub collapsed: bool,
    /// SVD modes discarded by truncation (square-root route only).
    pub truncated: usize,
}

/// Per-cycle record of what the controller did.
#[derive(Debug, Clone)]
pub struct CycleDiagnostics {
    pub posterior_mean: Vector4<f64>,
    pub posterior_std: Vector4<f64>,
    /// Square root of the summed input variances of the cycle's first-guess
    /// ensemble (the quantity whose decay measures uncertainty contraction).
    pub total_std: f64,
    /// Mean absolute error of the current plant state against the target.
    pub terminal_mae: f64,
    pub applied: ControlInput,
    pub collapsed: bool,
}

/// Applied input, resampled first guess for the next cycle, and diagnostics.
#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub applied: ControlInput,
    pub next_prior: Ensemble,
    pub diagnostics: CycleDiagnostics,
}

/// Propagates every member through the model and projects the horizon-end
/// state into performance space.
///
/// Members are independent, so the forecast parallelizes over the ambient
/// rayon pool; results do not depend on the worker count. Member inputs are
/// clamped nonnegative before simulation.
pub fn forecast(
    x0: &QuadState,
    controls: &Ensemble,
    spec: &PerformanceSpec,
    horizon: usize,
    integrator: &IntegratorConfig,
    params: &QuadParams,
) -> Result<Ensemble> {
    if controls.dim() != INPUT_DIM {
        return Err(Error::Dimension {
            what: "control ensemble",
            expected: INPUT_DIM,
            got: controls.dim(),
        });
    }
    if horizon == 0 {
        return Err(Error::Invalid {
            what: "horizon",
            why: "must be at least 1 control interval".into(),
        });
    }

    let members = controls.members();
    let data = controls.data();
    let outcomes: Vec<Result<DVector<f64>>> = (0..members)
        .into_par_iter()
        .map(|e| {
            let col = data.column(e);
            let u = ControlInput::clamped([col[0], col[1], col[2], col[3]]);
            let traj = simulate_zoh(x0, &u, horizon, integrator, params).map_err(|err| {
                Error::MemberDiverged {
                    member: e,
                    detail: err.to_string(),
                }
            })?;
            Ok(spec.projection.apply(traj.last().expect("nonempty trajectory")))
        })
        .collect();

    // Surface the lowest-index failure so error reporting is deterministic.
    let mut cols = Vec::with_capacity(members);
    for out in outcomes {
        cols.push(out?);
    }
    Ensemble::from_matrix(DMatrix::from_columns(&cols))
}

/// Solves `X A = B` for symmetric positive semidefinite `A`, preferring a
/// Cholesky solve and falling back to a pseudo-inverse when `A` is singular
/// enough that the solve cannot be trusted.
fn solve_against_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &'static str) -> Result<GpEstimate> {
    if let Some(chol) = nalgebra::Cholesky::new(a.clone()) {
        let xt = chol.solve(&b.transpose());
        // A near-zero pivot can slip through the factorization; accept the
        // solution only if it actually reproduces the right-hand side.
        let residual = (a * &xt - b.transpose()).norm();
        if residual <= 1e-8 * b.norm().max(1e-300) {
            return Ok(GpEstimate {
                matrix: xt.transpose(),
                pseudo_inverse: false,
            });
        }
    }
    let pinv = a.clone().pseudo_inverse(1e-12).map_err(|e| Error::Invalid {
        what,
        why: e.to_string(),
    })?;
    Ok(GpEstimate {
        matrix: b * pinv,
        pseudo_inverse: true,
    })
}

/// Ensemble estimate of the forward response `z = G u`:
/// `G = C_zu C_uu^{-1}`, with a pseudo-inverse fallback when the input
/// covariance is rank deficient.
pub fn response_matrix(inputs: &Ensemble, outcomes: &Ensemble) -> Result<GpEstimate> {
    let c_uu = inputs.sample_covariance();
    let c_zu = outcomes.cross_covariance(inputs)?;
    solve_against_spd(&c_uu, &c_zu, "input covariance")
}

/// Ensemble estimate of the regularized backward gain
/// `K = C_uz (C_zz + diag(rho^2))^{-1}` mapping performance mismatch to
/// input corrections.
pub fn gain_matrix(
    inputs: &Ensemble,
    outcomes: &Ensemble,
    rho: &DVector<f64>,
) -> Result<GpEstimate> {
    if rho.len() != outcomes.dim() {
        return Err(Error::Dimension {
            what: "tolerance vector",
            expected: outcomes.dim(),
            got: rho.len(),
        });
    }
    let c_uz = inputs.cross_covariance(outcomes)?;
    let mut b = outcomes.sample_covariance();
    for i in 0..rho.len() {
        b[(i, i)] += rho[i] * rho[i];
    }
    solve_against_spd(&b, &c_uz, "innovation covariance")
}

/// Builds the target columns, optionally perturbed with rho-scaled noise.
/// Draw order is member-major so both update routes consume the stream
/// identically.
fn target_columns<R: Rng + ?Sized>(
    spec: &PerformanceSpec,
    members: usize,
    perturb: bool,
    rng: &mut R,
) -> DMatrix<f64> {
    let o = spec.dim();
    let mut z = DMatrix::zeros(o, members);
    for e in 0..members {
        for i in 0..o {
            let noise: f64 = if perturb {
                spec.rho[i] * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            z[(i, e)] = spec.target[i] + noise;
        }
    }
    z
}

fn check_dims(prior: &Ensemble, forecasts: &Ensemble, spec: &PerformanceSpec) -> Result<()> {
    if forecasts.members() != prior.members() {
        return Err(Error::Dimension {
            what: "forecast member count",
            expected: prior.members(),
            got: forecasts.members(),
        });
    }
    if forecasts.dim() != spec.dim() {
        return Err(Error::Dimension {
            what: "forecast ensemble",
            expected: spec.dim(),
            got: forecasts.dim(),
        });
    }
    Ok(())
}

fn finish_update(
    prior: &Ensemble,
    posterior: DMatrix<f64>,
    transform: DMatrix<f64>,
    collapsed: bool,
    truncated: usize,
    innovation_norm: f64,
) -> Result<UpdateOutcome> {
    if posterior.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "posterior ensemble (prior spread {:.3e}, innovation norm {:.3e}, transform norm {:.3e})",
            prior.row_std().norm(),
            innovation_norm,
            transform.norm()
        )));
    }
    Ok(UpdateOutcome {
        posterior: Ensemble::from_matrix(posterior)?,
        transform,
        collapsed,
        truncated,
    })
}

/// Direct-form ensemble update.
///
/// With input perturbations `Up`, forecast perturbations `Zp`, innovation
/// `D = Ztarget - Z`, and `B = C_zz + diag(rho^2)`, the posterior is
/// `U + C_uz B^{-1} D`, equivalently `U * (I + Zp^T B^{-1} D / (E-1))`.
pub fn update_direct<R: Rng + ?Sized>(
    prior: &Ensemble,
    forecasts: &Ensemble,
    spec: &PerformanceSpec,
    perturb_targets: bool,
    rng: &mut R,
) -> Result<UpdateOutcome> {
    check_dims(prior, forecasts, spec)?;
    let members = prior.members();
    let scale = 1.0 / (members as f64 - 1.0);

    let up = prior.perturbations();
    let zp = forecasts.perturbations();
    let collapsed = up.data().amax() == 0.0;

    let mut b = forecasts.sample_covariance();
    for i in 0..spec.dim() {
        b[(i, i)] += spec.rho[i] * spec.rho[i];
    }
    let chol = nalgebra::Cholesky::new(b).ok_or_else(|| Error::Invalid {
        what: "innovation covariance",
        why: "not positive definite despite positive tolerances".into(),
    })?;

    let targets = target_columns(spec, members, perturb_targets, rng);
    let innovation = &targets - forecasts.data();
    let solved = chol.solve(&innovation); // B^{-1} (Ztarget - Z)
    let transform =
        DMatrix::identity(members, members) + zp.data().transpose() * &solved * scale;
    let posterior = prior.data() + up.data() * (zp.data().transpose() * &solved * scale);
    finish_update(
        prior,
        posterior,
        transform,
        collapsed,
        0,
        innovation.norm(),
    )
}

/// Square-root ensemble update.
///
/// Whitens the forecast perturbations by `1/rho`, takes their thin SVD
/// `P S Q^T`, and applies the update through the factors
/// `U + Up Q S (S^2 + I)^{-1} P^T D_w / sqrt(E-1)` without ever forming the
/// performance-space covariance. Modes with singular values at or below
/// `svd_trunc` times the largest are discarded.
pub fn update_sqrt<R: Rng + ?Sized>(
    prior: &Ensemble,
    forecasts: &Ensemble,
    spec: &PerformanceSpec,
    perturb_targets: bool,
    svd_trunc: f64,
    rng: &mut R,
) -> Result<UpdateOutcome> {
    check_dims(prior, forecasts, spec)?;
    let members = prior.members();
    let o = spec.dim();
    let root_scale = 1.0 / (members as f64 - 1.0).sqrt();

    let up = prior.perturbations();
    let zp = forecasts.perturbations();
    let collapsed = up.data().amax() == 0.0;

    // Whitened, scaled forecast anomalies.
    let mut a = zp.data().clone();
    for i in 0..o {
        let w = root_scale / spec.rho[i];
        for e in 0..members {
            a[(i, e)] *= w;
        }
    }

    let svd = a.svd(true, true);
    let p = svd.u.as_ref().expect("svd requested u");
    let qt = svd.v_t.as_ref().expect("svd requested v_t");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let keep: Vec<usize> = (0..sv.len())
        .filter(|&i| sv[i] > svd_trunc * smax && sv[i] > 0.0)
        .collect();
    let truncated = sv.len() - keep.len();

    let targets = target_columns(spec, members, perturb_targets, rng);
    let innovation = &targets - forecasts.data();
    let mut dw = innovation.clone();
    for i in 0..o {
        let w = 1.0 / spec.rho[i];
        for e in 0..members {
            dw[(i, e)] *= w;
        }
    }

    // Core factor: Q_r diag(s/(s^2+1)) P_r^T D_w / sqrt(E-1).
    let k = keep.len();
    let mut qr = DMatrix::zeros(members, k);
    let mut pr = DMatrix::zeros(o, k);
    let mut factors = DVector::zeros(k);
    for (col, &i) in keep.iter().enumerate() {
        qr.column_mut(col).copy_from(&qt.row(i).transpose());
        pr.column_mut(col).copy_from(&p.column(i));
        factors[col] = sv[i] / (sv[i] * sv[i] + 1.0);
    }
    let mut core = pr.transpose() * &dw; // k x E
    for (col, f) in factors.iter().enumerate() {
        core.row_mut(col).scale_mut(*f);
    }
    let s = qr * core * root_scale; // E x E
    let transform = DMatrix::identity(members, members) + &s;
    let posterior = prior.data() + up.data() * &s;
    finish_update(
        prior,
        posterior,
        transform,
        collapsed,
        truncated,
        innovation.norm(),
    )
}

/// Picks the input to apply from the posterior ensemble and clamps it
/// nonnegative.
pub fn select_control(posterior: &Ensemble, rule: &SelectionRule) -> Result<ControlInput> {
    if posterior.dim() != INPUT_DIM {
        return Err(Error::Dimension {
            what: "posterior ensemble",
            expected: INPUT_DIM,
            got: posterior.dim(),
        });
    }
    let members = posterior.members();
    let data = posterior.data();
    let mut out = [0.0; INPUT_DIM];
    match rule {
        SelectionRule::Median => {
            let mut row: Vec<f64> = Vec::with_capacity(members);
            for (i, slot) in out.iter_mut().enumerate() {
                row.clear();
                row.extend(data.row(i).iter());
                row.sort_by(|a, b| a.partial_cmp(b).expect("finite ensemble"));
                *slot = if members % 2 == 1 {
                    row[members / 2]
                } else {
                    0.5 * (row[members / 2 - 1] + row[members / 2])
                };
            }
        }
        SelectionRule::Mean => {
            let mean = posterior.mean();
            out.copy_from_slice(mean.as_slice());
        }
        SelectionRule::Member(e) => {
            if *e >= members {
                return Err(Error::Invalid {
                    what: "selection rule",
                    why: format!("member {e} out of range for {members} members"),
                });
            }
            let col = data.column(*e);
            out = [col[0], col[1], col[2], col[3]];
        }
    }
    Ok(ControlInput::clamped(out))
}

/// Draws the next cycle's first-guess ensemble around the applied input.
///
/// Per-component standard deviation is
/// `max(posterior_std * sqrt(inflation), min_std)`; draws are clamped
/// nonnegative and ordered member-major for determinism.
pub fn resample<R: Rng + ?Sized>(
    applied: &ControlInput,
    posterior_std: &Vector4<f64>,
    config: &ControllerConfig,
    rng: &mut R,
) -> Result<Ensemble> {
    config.validate()?;
    let infl = config.inflation.sqrt();
    let std = posterior_std.map(|s| (s * infl).max(config.min_std));
    let mut data = DMatrix::zeros(INPUT_DIM, config.members);
    for e in 0..config.members {
        for i in 0..INPUT_DIM {
            let n: f64 = rng.sample(StandardNormal);
            data[(i, e)] = (applied.0[i] + std[i] * n).max(0.0);
        }
    }
    Ensemble::from_matrix(data)
}

/// Runs one full control cycle: forecast, update, select, resample.
pub fn control_cycle<R: Rng + ?Sized>(
    x_plant: &QuadState,
    prior: &Ensemble,
    spec: &PerformanceSpec,
    config: &ControllerConfig,
    integrator: &IntegratorConfig,
    params: &QuadParams,
    rng: &mut R,
) -> Result<CycleOutcome> {
    config.validate()?;
    if prior.members() != config.members {
        return Err(Error::Dimension {
            what: "prior member count",
            expected: config.members,
            got: prior.members(),
        });
    }

    let first_guess_std = prior.row_std();
    let total_std = first_guess_std.iter().map(|s| s * s).sum::<f64>().sqrt();

    let forecasts = forecast(x_plant, prior, spec, config.horizon, integrator, params)?;
    let outcome = match config.update {
        UpdateForm::SquareRoot => update_sqrt(
            prior,
            &forecasts,
            spec,
            config.perturb_targets,
            config.svd_trunc,
            rng,
        )?,
        UpdateForm::Direct => {
            update_direct(prior, &forecasts, spec, config.perturb_targets, rng)?
        }
    };

    let applied = select_control(&outcome.posterior, &config.selection)?;
    let post_std_v = outcome.posterior.row_std();
    let posterior_std = Vector4::from_column_slice(post_std_v.as_slice());
    let post_mean_v = outcome.posterior.mean();
    let posterior_mean = Vector4::from_column_slice(post_mean_v.as_slice());

    let next_prior = resample(&applied, &posterior_std, config, rng)?;
    let degenerate = posterior_std
        .iter()
        .all(|&s| s * config.inflation.sqrt() <= 0.0)
        && config.min_std <= 0.0;

    let diagnostics = CycleDiagnostics {
        posterior_mean,
        posterior_std,
        total_std,
        terminal_mae: spec.mae(x_plant),
        applied,
        collapsed: outcome.collapsed || degenerate,
    };
    Ok(CycleOutcome {
        applied,
        next_prior,
        diagnostics,
    })
}

/// Composes per-step member-space transforms over a horizon.
///
/// Each entry pairs a transform with an activity flag; inactive steps
/// contribute the identity. Transforms compose in chronological order, so the
/// result right-multiplies the initial ensemble.
pub fn trajectory_transform(steps: &[(DMatrix<f64>, bool)]) -> Result<DMatrix<f64>> {
    let first = steps.first().ok_or(Error::Invalid {
        what: "trajectory transforms",
        why: "need at least one step to fix dimensions".into(),
    })?;
    let e = first.0.nrows();
    for (m, _) in steps {
        if m.nrows() != e || m.ncols() != e {
            return Err(Error::Dimension {
                what: "trajectory transform",
                expected: e,
                got: m.nrows().max(m.ncols()),
            });
        }
    }
    let mut acc = DMatrix::identity(e, e);
    for (m, active) in steps {
        if *active {
            acc *= m;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn full_state_spec(target: DVector<f64>, rho: f64) -> PerformanceSpec {
        PerformanceSpec::new(
            target,
            DVector::from_element(12, rho),
            Projection::FullState,
        )
        .unwrap()
    }

    fn hover_target(params: &QuadParams) -> DVector<f64> {
        let _ = params;
        DVector::zeros(12)
    }

    fn random_ensemble(dim: usize, members: usize, center: f64, std: f64, seed: u64) -> Ensemble {
        let spec = crate::ensemble::GaussianSpec::new(
            DVector::from_element(dim, center),
            DVector::from_element(dim, std),
            seed,
        )
        .unwrap();
        Ensemble::draw(&spec, members).unwrap()
    }

    /// Scalar spec over a 1-dimensional performance space, built on a
    /// single-component projection so the quadrotor types can be bypassed.
    fn scalar_spec(target: f64, rho: f64) -> PerformanceSpec {
        PerformanceSpec::new(
            DVector::from_element(1, target),
            DVector::from_element(1, rho),
            Projection::Components(vec![0]),
        )
        .unwrap()
    }

    #[test]
    fn forecast_at_trim_reproduces_initial_projection() {
        let params = QuadParams::default();
        let cfg = IntegratorConfig::default();
        let spec = full_state_spec(hover_target(&params), 0.001);
        let prior = random_ensemble(4, 20, params.hover_trim(), 0.0, 3);
        let z = forecast(&QuadState::default(), &prior, &spec, 4, &cfg, &params).unwrap();
        for col in z.data().column_iter() {
            assert!(col.norm() <= 1e-9, "hover forecast drifted: {col:?}");
        }
    }

    #[test]
    fn forecast_is_worker_count_invariant() {
        let params = QuadParams::default();
        let cfg = IntegratorConfig::default();
        let spec = full_state_spec(hover_target(&params), 0.001);
        let prior = random_ensemble(4, 16, params.hover_trim(), 0.1, 4);
        let x0 = QuadState::default();

        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| forecast(&x0, &prior, &spec, 2, &cfg, &params).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn forecast_matches_plant_propagation_exactly() {
        // Identical-twin check at the API level: propagating the applied
        // input through the same integrator reproduces a forecast column.
        let params = QuadParams::default();
        let cfg = IntegratorConfig::default();
        let spec = full_state_spec(hover_target(&params), 0.001);
        let u = ControlInput::new([5.0, 4.9, 5.05, 4.95]).unwrap();
        let mut data = DMatrix::zeros(4, 3);
        for e in 0..3 {
            data.column_mut(e).copy_from(&u.as_vector());
        }
        let ens = Ensemble::from_matrix(data).unwrap();
        let x0 = QuadState::default();
        let z = forecast(&x0, &ens, &spec, 1, &cfg, &params).unwrap();
        let plant = simulate_zoh(&x0, &u, 1, &cfg, &params).unwrap();
        let expected = spec.projection.apply(plant.last().unwrap());
        for col in z.data().column_iter() {
            assert_eq!(col.clone_owned(), expected);
        }
    }

    #[test]
    fn response_matrix_scalar_pair() {
        let u = Ensemble::from_matrix(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0])).unwrap();
        let z = Ensemble::from_matrix(DMatrix::from_row_slice(1, 2, &[-2.0, 2.0])).unwrap();
        let g = response_matrix(&u, &z).unwrap();
        assert!(!g.pseudo_inverse);
        assert_abs_diff_eq!(g.matrix[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn response_matrix_recovers_linear_map() {
        let u = random_ensemble(4, 9, 0.0, 1.0, 17);
        let a = DMatrix::from_row_slice(
            3,
            4,
            &[0.5, -1.0, 2.0, 0.1, 1.5, 0.25, -0.75, 3.0, 0.0, 1.0, 1.0, -2.0],
        );
        let z = Ensemble::from_matrix(&a * u.data()).unwrap();
        let g = response_matrix(&u, &z).unwrap();
        assert!(!g.pseudo_inverse);
        assert!((&g.matrix - &a).norm() / a.norm() <= 1e-8);
    }

    #[test]
    fn response_matrix_rank_deficient_stays_valid() {
        // Only two distinct members span a 1-d input subspace in 4-d space,
        // so the input covariance is singular. The system is still
        // consistent (the cross covariance lives in its range), and the
        // estimate must satisfy the normal equations whichever route was
        // taken.
        let mut data = DMatrix::zeros(4, 6);
        for e in 0..6 {
            let v = if e % 2 == 0 { 1.0 } else { -1.0 };
            data.column_mut(e)
                .copy_from(&DVector::from_vec(vec![v, v, v, v]));
        }
        let u = Ensemble::from_matrix(data.clone()).unwrap();
        let z = Ensemble::from_matrix(data.rows(0, 2).into_owned()).unwrap();
        let g = response_matrix(&u, &z).unwrap();
        assert!(g.matrix.iter().all(|v| v.is_finite()));
        let c_uu = u.sample_covariance();
        let c_zu = z.cross_covariance(&u).unwrap();
        let residual = (&g.matrix * &c_uu - &c_zu).norm() / c_zu.norm();
        assert!(residual <= 1e-8, "normal equations violated: {residual:.3e}");
    }

    #[test]
    fn spd_solver_falls_back_on_inconsistent_singular_system() {
        // X diag(1, 0) = [0 1] has no solution, so the solver must switch
        // to the pseudo-inverse, which gives the least-squares answer 0.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let g = solve_against_spd(&a, &b, "test matrix").unwrap();
        assert!(g.pseudo_inverse);
        assert!(g.matrix.norm() <= 1e-12, "expected zero, got {}", g.matrix);
    }

    #[test]
    fn gain_matrix_scalar_case() {
        // C_uz = 2, C_zz = 4 from a three-member sample; zero tolerance
        // leaves the pure regression gain 0.5.
        let u = Ensemble::from_matrix(DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 1.0])).unwrap();
        let z = Ensemble::from_matrix(DMatrix::from_row_slice(1, 3, &[-2.0, 0.0, 2.0])).unwrap();
        let g = gain_matrix(&u, &z, &DVector::from_element(1, 0.0)).unwrap();
        assert_abs_diff_eq!(g.matrix[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn gain_vanishes_for_huge_tolerance() {
        let u = random_ensemble(2, 8, 0.0, 1.0, 21);
        let z = random_ensemble(3, 8, 0.0, 1.0, 22);
        let g = gain_matrix(&u, &z, &DVector::from_element(3, 1e12)).unwrap();
        assert!(g.matrix.norm() <= 1e-20, "gain {:.3e}", g.matrix.norm());
    }

    #[test]
    fn gain_norm_monotone_in_tolerance() {
        let u = random_ensemble(1, 12, 0.0, 1.0, 23);
        let z = random_ensemble(1, 12, 0.0, 2.0, 24);
        let mut last = f64::INFINITY;
        for rho in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0] {
            let g = gain_matrix(&u, &z, &DVector::from_element(1, rho)).unwrap();
            let n = g.matrix.norm();
            assert!(n <= last + 1e-15, "gain grew with tolerance at rho={rho}");
            last = n;
        }
    }

    #[test]
    fn covariance_consistency_for_linear_plant() {
        // For exactly linear outcomes z = A u the identity
        // C_zz = G C_uu G^T holds at numerical precision.
        let u = random_ensemble(4, 30, 0.0, 1.0, 29);
        let a = DMatrix::from_row_slice(2, 4, &[1.0, -0.5, 0.25, 2.0, 0.0, 1.5, -1.0, 0.5]);
        let z = Ensemble::from_matrix(&a * u.data()).unwrap();
        let g = response_matrix(&u, &z).unwrap();
        let lhs = z.sample_covariance();
        let rhs = &g.matrix * u.sample_covariance() * g.matrix.transpose();
        assert!((lhs.clone() - rhs).norm() / lhs.norm() <= 1e-8);
    }

    #[test]
    fn update_direct_matches_scalar_bayes_oracle() {
        // Linear-Gaussian problem: prior N(1, 0.5^2), plant z = 2u, target 3
        // with tolerance 0.4. Closed-form posterior mean:
        // 1 + (0.25 * 2 / (4 * 0.25 + 0.16)) * (3 - 2) = 1.431034...
        let members = 4000;
        let prior = random_ensemble(1, members, 1.0, 0.5, 314);
        let z = Ensemble::from_matrix(prior.data() * 2.0).unwrap();
        let spec = scalar_spec(3.0, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = update_direct(&prior, &z, &spec, false, &mut rng).unwrap();
        let map = 1.0 + 0.5 / 1.16;
        let post_mean = out.posterior.mean()[0];
        let tol = 3.0 * out.posterior.row_std()[0] / (members as f64).sqrt();
        assert!(
            (post_mean - map).abs() <= tol,
            "posterior mean {post_mean} vs MAP {map} (tol {tol})"
        );
    }

    #[test]
    fn update_zero_innovation_is_identity() {
        // Every member forecast already sits on the target, so both routes
        // must return the prior unchanged (to the bit).
        let prior = random_ensemble(4, 12, 5.0, 0.3, 41);
        let target = DVector::from_element(12, 0.7);
        let mut zdata = DMatrix::zeros(12, 12);
        for e in 0..12 {
            zdata.column_mut(e).copy_from(&target);
        }
        let z = Ensemble::from_matrix(zdata).unwrap();
        let spec = full_state_spec(target, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = update_direct(&prior, &z, &spec, false, &mut rng).unwrap();
        assert_eq!(out.posterior.data(), prior.data());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = update_sqrt(&prior, &z, &spec, false, 0.0, &mut rng).unwrap();
        assert_eq!(out.posterior.data(), prior.data());
    }

    #[test]
    fn update_collapsed_prior_flagged() {
        let mut data = DMatrix::zeros(4, 6);
        for e in 0..6 {
            data.column_mut(e)
                .copy_from(&DVector::from_element(4, 4.905));
        }
        let prior = Ensemble::from_matrix(data).unwrap();
        let z = {
            let mut d = DMatrix::zeros(1, 6);
            for e in 0..6 {
                d[(0, e)] = 2.0;
            }
            Ensemble::from_matrix(d).unwrap()
        };
        let spec = scalar_spec(3.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = update_direct(&prior, &z, &spec, false, &mut rng).unwrap();
        assert!(out.collapsed);
        assert_eq!(out.posterior.data(), prior.data());
    }

    #[test]
    fn sqrt_and_direct_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1000);
        for case in 0..20 {
            let members = 3 + (case % 7) * 5;
            let o = 1 + case % 12;
            let prior = random_ensemble(4, members, 5.0, 0.4, 2000 + case as u64);
            let a = DMatrix::from_fn(o, 4, |_, _| rng.gen_range(-1.5..1.5));
            let offset = DVector::from_fn(o, |_, _| rng.gen_range(-0.5..0.5));
            let mut zdata = &a * prior.data();
            for e in 0..members {
                for i in 0..o {
                    zdata[(i, e)] += offset[i];
                }
            }
            let z = Ensemble::from_matrix(zdata).unwrap();
            let target = DVector::from_fn(o, |_, _| rng.gen_range(-1.0..1.0));
            let rho = DVector::from_fn(o, |_, _| 10f64.powf(rng.gen_range(-3.0..0.0)));
            let idx: Vec<usize> = (0..o).collect();
            let spec = PerformanceSpec::new(target, rho, Projection::Components(idx)).unwrap();

            let mut r1 = ChaCha8Rng::seed_from_u64(77);
            let mut r2 = r1.clone();
            let d = update_direct(&prior, &z, &spec, true, &mut r1).unwrap();
            let s = update_sqrt(&prior, &z, &spec, true, 0.0, &mut r2).unwrap();
            let rel = (d.posterior.data() - s.posterior.data()).norm()
                / d.posterior.data().norm();
            assert!(rel <= 1e-8, "case {case}: routes disagree, rel {rel:.3e}");
            let trel = (&d.transform - &s.transform).norm() / d.transform.norm();
            assert!(trel <= 1e-8, "case {case}: transforms disagree {trel:.3e}");
        }
    }

    #[test]
    fn sqrt_truncation_extremes() {
        let prior = random_ensemble(4, 10, 5.0, 0.3, 55);
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, -0.5, 0.2, 0.1, -1.0, 0.7, 0.3]);
        let z = Ensemble::from_matrix(&a * prior.data()).unwrap();
        let spec = PerformanceSpec::new(
            DVector::from_element(2, 0.5),
            DVector::from_element(2, 0.05),
            Projection::Components(vec![0, 1]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = update_sqrt(&prior, &z, &spec, false, 0.0, &mut rng).unwrap();
        assert_eq!(all.truncated, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let none = update_sqrt(&prior, &z, &spec, false, 1.0, &mut rng).unwrap();
        assert_eq!(none.truncated, 2);
        assert_eq!(none.posterior.data(), prior.data());
        assert_abs_diff_eq!(
            none.transform,
            DMatrix::identity(10, 10),
            epsilon = 1e-15
        );
    }

    #[test]
    fn posterior_equals_prior_times_transform() {
        let prior = random_ensemble(4, 15, 5.0, 0.5, 66);
        let a = DMatrix::from_row_slice(2, 4, &[0.3, -0.2, 1.0, 0.4, 0.8, 0.1, -0.6, 0.9]);
        let z = Ensemble::from_matrix(&a * prior.data()).unwrap();
        let spec = PerformanceSpec::new(
            DVector::from_vec(vec![1.0, -0.5]),
            DVector::from_element(2, 0.1),
            Projection::Components(vec![0, 1]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = update_sqrt(&prior, &z, &spec, false, 0.0, &mut rng).unwrap();
        let reconstructed = prior.data() * &out.transform;
        assert!((reconstructed - out.posterior.data()).norm() <= 1e-9);
    }

    #[test]
    fn select_median_even_and_odd() {
        let e = Ensemble::from_matrix(DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 3.0, 2.0, 10.0, //
                0.0, 0.0, 0.0, 0.0, //
                -1.0, -2.0, -3.0, -4.0, //
                5.0, 5.0, 5.0, 5.0,
            ],
        ))
        .unwrap();
        let u = select_control(&e, &SelectionRule::Median).unwrap();
        assert_abs_diff_eq!(u.0[0], 2.5, epsilon = 1e-15);
        assert_eq!(u.0[2], 0.0, "negative median must clamp to zero");
        assert_eq!(u.0[3], 5.0);

        let odd = Ensemble::from_matrix(DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 9.0, 4.0, //
                1.0, 1.0, 1.0, //
                2.0, 2.0, 2.0, //
                3.0, 3.0, 3.0,
            ],
        ))
        .unwrap();
        let u = select_control(&odd, &SelectionRule::Median).unwrap();
        assert_eq!(u.0[0], 4.0);
    }

    #[test]
    fn select_mean_and_member() {
        let e = Ensemble::from_matrix(DMatrix::from_row_slice(
            4,
            2,
            &[1.0, 3.0, 2.0, 4.0, 5.0, 7.0, 0.5, 1.5],
        ))
        .unwrap();
        assert_eq!(select_control(&e, &SelectionRule::Mean).unwrap().0, [
            2.0, 3.0, 6.0, 1.0
        ]);
        assert_eq!(select_control(&e, &SelectionRule::Member(1)).unwrap().0, [
            3.0, 4.0, 7.0, 1.5
        ]);
        assert!(select_control(&e, &SelectionRule::Member(2)).is_err());
    }

    #[test]
    fn resample_applies_floor_and_clamp() {
        let cfg = ControllerConfig {
            members: 40,
            min_std: 1e-4,
            ..ControllerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = resample(
            &ControlInput::uniform(4.905),
            &Vector4::zeros(),
            &cfg,
            &mut rng,
        )
        .unwrap();
        let std = e.row_std();
        for s in std.iter() {
            assert!(*s > 0.0 && *s < 5e-4, "floored std {s}");
        }

        // Near-zero center: clamping keeps draws nonnegative.
        let cfg = ControllerConfig {
            members: 200,
            min_std: 0.5,
            ..ControllerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let e = resample(&ControlInput::uniform(0.1), &Vector4::zeros(), &cfg, &mut rng).unwrap();
        assert!(e.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn resample_deterministic_for_same_stream() {
        let cfg = ControllerConfig::default();
        let std = Vector4::from_element(0.01);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = resample(&ControlInput::uniform(4.905), &std, &cfg, &mut r1).unwrap();
        let b = resample(&ControlInput::uniform(4.905), &std, &cfg, &mut r2).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn cycle_at_target_keeps_trim() {
        let params = QuadParams::default();
        let integ = IntegratorConfig::default();
        let spec = full_state_spec(DVector::zeros(12), 0.001);
        let cfg = ControllerConfig {
            members: 50,
            sigma0: 1e-6,
            min_std: 1e-6,
            ..ControllerConfig::default()
        };
        let prior = random_ensemble(4, 50, params.hover_trim(), 1e-6, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = control_cycle(
            &QuadState::default(),
            &prior,
            &spec,
            &cfg,
            &integ,
            &params,
            &mut rng,
        )
        .unwrap();
        for v in out.applied.0 {
            assert!(
                (v - params.hover_trim()).abs() <= 1e-3,
                "applied {v} strayed from trim"
            );
        }
        assert_abs_diff_eq!(out.diagnostics.terminal_mae, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cycle_toward_raised_target_increases_thrust() {
        let params = QuadParams::default();
        let integ = IntegratorConfig::default();
        let mut target = DVector::zeros(12);
        target[0] = 1.0;
        target[1] = 1.0;
        target[2] = 1.0;
        target[5] = std::f64::consts::FRAC_PI_2;
        let spec = full_state_spec(target, 0.001);
        let cfg = ControllerConfig::default();
        let prior = random_ensemble(4, 100, params.hover_trim(), 0.01, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = control_cycle(
            &QuadState::default(),
            &prior,
            &spec,
            &cfg,
            &integ,
            &params,
            &mut rng,
        )
        .unwrap();
        let mean_thrust: f64 = out.diagnostics.posterior_mean.iter().sum::<f64>() / 4.0;
        assert!(
            mean_thrust > params.hover_trim(),
            "expected climb, got mean input {mean_thrust}"
        );
        assert!(!out.diagnostics.collapsed);
    }

    #[test]
    fn cycle_zero_variance_prior_collapses() {
        let params = QuadParams::default();
        let integ = IntegratorConfig::default();
        let spec = full_state_spec(DVector::zeros(12), 0.01);
        let cfg = ControllerConfig {
            members: 10,
            min_std: 1e-4,
            ..ControllerConfig::default()
        };
        let mut data = DMatrix::zeros(4, 10);
        for e in 0..10 {
            data.column_mut(e)
                .copy_from(&DVector::from_element(4, 4.905));
        }
        let prior = Ensemble::from_matrix(data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = control_cycle(
            &QuadState::default(),
            &prior,
            &spec,
            &cfg,
            &integ,
            &params,
            &mut rng,
        )
        .unwrap();
        assert!(out.diagnostics.collapsed);
        assert_eq!(out.applied.0, [4.905; 4]);
    }

    #[test]
    fn trajectory_transform_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = 5;
        let ms: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(e, e, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();

        // All inactive: identity.
        let steps: Vec<(DMatrix<f64>, bool)> =
            ms.iter().map(|m| (m.clone(), false)).collect();
        let t = trajectory_transform(&steps).unwrap();
        assert_abs_diff_eq!(t, DMatrix::identity(e, e), epsilon = 1e-15);

        // Only the last active: that transform alone.
        let steps: Vec<(DMatrix<f64>, bool)> = ms
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i == 2))
            .collect();
        let t = trajectory_transform(&steps).unwrap();
        assert_abs_diff_eq!(t, ms[2].clone(), epsilon = 1e-15);

        // First and third active: explicit product oracle.
        let steps = vec![
            (ms[0].clone(), true),
            (ms[1].clone(), false),
            (ms[2].clone(), true),
        ];
        let t = trajectory_transform(&steps).unwrap();
        let mut oracle = DMatrix::zeros(e, e);
        for i in 0..e {
            for j in 0..e {
                let mut acc = 0.0;
                for k in 0..e {
                    acc += ms[0][(i, k)] * ms[2][(k, j)];
                }
                oracle[(i, j)] = acc;
            }
        }
        assert_abs_diff_eq!(t, oracle, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_transform_rejects_bad_input() {
        assert!(trajectory_transform(&[]).is_err());
        let steps = vec![
            (DMatrix::<f64>::identity(3, 3), true),
            (DMatrix::<f64>::identity(4, 4), true),
        ];
        assert!(trajectory_transform(&steps).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ControllerConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.members = 1;
        assert!(cfg.validate().is_err());
        cfg.members = 10;
        cfg.svd_trunc = 1.5;
        assert!(cfg.validate().is_err());
        cfg.svd_trunc = 0.0;
        cfg.selection = SelectionRule::Member(10);
        assert!(cfg.validate().is_err());
    }
}
