//! Shared scenario builders for the criterion benches.

use empc::{
    ControlInput, ControllerConfig, Ensemble, ExperimentConfig, GaussianSpec, PerformanceSpec,
    QuadParams, QuadState,
};
use nalgebra::DVector;

/// A mid-flight state with nonzero attitude and rates, so the dynamics
/// benches exercise every term.
pub fn tumbling_state() -> QuadState {
    QuadState {
        x: 0.4,
        y: -0.2,
        z: 1.1,
        phi: 0.2,
        theta: -0.15,
        psi: 0.8,
        vx: 0.5,
        vy: -0.3,
        vz: 0.2,
        dphi: 0.4,
        dtheta: -0.3,
        dpsi: 0.2,
    }
}

pub fn off_trim_input(p: &QuadParams) -> ControlInput {
    let t = p.hover_trim();
    ControlInput([t + 0.1, t - 0.05, t + 0.02, t - 0.08])
}

/// First-guess input ensemble around the hover trim.
pub fn input_ensemble(members: usize) -> Ensemble {
    let p = QuadParams::default();
    let spec = GaussianSpec::new(
        DVector::from_element(4, p.hover_trim()),
        DVector::from_element(4, 0.01),
        42,
    )
    .expect("valid spec");
    Ensemble::draw(&spec, members).expect("draw")
}

/// The point-to-point experiment's performance spec.
pub fn terminal_spec() -> PerformanceSpec {
    let cfg = ExperimentConfig::terminal_defaults();
    cfg.spec_for(&cfg.target_position).expect("valid spec")
}

pub fn controller_config(members: usize) -> ControllerConfig {
    ControllerConfig {
        members,
        ..ExperimentConfig::terminal_defaults().controller
    }
}
