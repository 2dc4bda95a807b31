//! Fixed-step RK4 integration with zero-order-hold inputs.

use nalgebra::SVector;

use crate::dynamics::{state_derivative, ControlInput, QuadParams, QuadState};
use crate::error::{Error, Result};

/// Step configuration: `dt` is the control interval, `substeps` the number of
/// internal RK4 steps per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub substeps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.25,
            substeps: 5,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::Invalid {
                what: "integrator dt",
                why: format!("must be positive and finite, got {}", self.dt),
            });
        }
        if self.substeps == 0 {
            return Err(Error::Invalid {
                what: "integrator substeps",
                why: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Internal RK4 step size.
    pub fn step(&self) -> f64 {
        self.dt / self.substeps as f64
    }
}

/// One classical RK4 step of `dx/dt = f(x)` with step size `h`.
///
/// The derivative is injected so the same stepper serves the vehicle model
/// and scalar test systems alike.
pub fn rk4_step_with<const D: usize, F>(
    x: &SVector<f64, D>,
    h: f64,
    f: F,
) -> Result<SVector<f64, D>>
where
    F: Fn(&SVector<f64, D>) -> Result<SVector<f64, D>>,
{
    let k1 = f(x)?;
    let k2 = f(&(x + k1 * (h / 2.0)))?;
    let k3 = f(&(x + k2 * (h / 2.0)))?;
    let k4 = f(&(x + k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// One RK4 step of the vehicle model under constant input `u`.
pub fn rk4_step(state: &QuadState, u: &ControlInput, p: &QuadParams, h: f64) -> Result<QuadState> {
    let next = rk4_step_with(&state.to_vector(), h, |v| {
        Ok(state_derivative(&QuadState::from_vector(v), u, p)?.to_vector())
    })?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("integration step".into()));
    }
    Ok(QuadState::from_vector(&next))
}

/// Propagates `steps` control intervals while holding `u` fixed.
///
/// Returns `steps + 1` states including the initial one; each interval is
/// split into `config.substeps` RK4 steps.
pub fn simulate_zoh(
    x0: &QuadState,
    u: &ControlInput,
    steps: usize,
    config: &IntegratorConfig,
    p: &QuadParams,
) -> Result<Vec<QuadState>> {
    config.validate()?;
    let h = config.step();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(*x0);
    let mut current = *x0;
    for _ in 0..steps {
        for _ in 0..config.substeps {
            current = rk4_step(&current, u, p, h)?;
        }
        out.push(current);
    }
    Ok(out)
}
