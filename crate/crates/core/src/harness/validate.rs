//! Fast self-checks against independently known answers.
//!
//! Each check compares a library computation with a value obtained some
//! other way: a closed-form solution, a hand-expanded formula, or a direct
//! double-loop re-computation. The suite runs in well under a second and is
//! exposed through the command line so an installation can be sanity-checked
//! without running the full test suite.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{update_direct, update_sqrt, gain_matrix, PerformanceSpec, Projection};
use crate::dynamics::{
    inertia_matrix, mechanical_energy, ControlInput, QuadParams, QuadState,
};
use crate::ensemble::{Ensemble, GaussianSpec};
use crate::integrate::{rk4_step_with, simulate_zoh, IntegratorConfig};

/// Outcome of one self-check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn report(name: &'static str, err: f64, tol: f64) -> CheckReport {
    CheckReport {
        name,
        passed: err.is_finite() && err <= tol,
        detail: format!("error {err:.3e}, tolerance {tol:.1e}"),
    }
}

fn check_rk4_polynomial() -> CheckReport {
    // One RK4 step of dx/dt = -x from 1 with h = 0.1 must equal the
    // stability polynomial 1 - h + h^2/2 - h^3/6 + h^4/24 = 0.9048375.
    let x0 = SVector::<f64, 1>::new(1.0);
    let x1 = rk4_step_with(&x0, 0.1, |x| Ok(-x)).expect("linear ode");
    report("rk4-stability-polynomial", (x1[0] - 0.9048375).abs(), 1e-14)
}

fn check_freefall_drag() -> CheckReport {
    // Vertical fall with linear drag has the closed form
    // z(t) = -(m g / a) t + (m^2 g / a^2)(1 - exp(-a t / m)).
    let mut p = QuadParams::default();
    let a = 0.6;
    p.drag = Vector3::new(0.0, 0.0, a);
    let cfg = IntegratorConfig {
        dt: 1.0,
        substeps: 200,
    };
    let traj = simulate_zoh(
        &QuadState::default(),
        &ControlInput::uniform(0.0),
        1,
        &cfg,
        &p,
    )
    .expect("free fall");
    let z = traj.last().unwrap().z;
    let exact = -(p.m * p.g / a) + (p.m * p.m * p.g / (a * a)) * (1.0 - (-a / p.m).exp());
    report("freefall-drag-closed-form", (z - exact).abs(), 1e-8)
}

fn check_hover_fixed_point() -> CheckReport {
    let p = QuadParams::default();
    let cfg = IntegratorConfig::default();
    let trim = ControlInput::uniform(p.hover_trim());
    let traj = simulate_zoh(&QuadState::default(), &trim, 16, &cfg, &p).expect("hover");
    let drift = traj
        .last()
        .unwrap()
        .to_vector()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    report("hover-fixed-point", drift, 1e-9)
}

fn check_inertia_factorization() -> CheckReport {
    // The angular mass matrix must equal W^T diag(Ixx, Iyy, Izz) W where W
    // maps Euler angle rates to body rates.
    let p = QuadParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let s = QuadState {
            phi: rng.gen_range(-1.2..1.2),
            theta: rng.gen_range(-1.2..1.2),
            psi: rng.gen_range(-3.0..3.0),
            ..Default::default()
        };
        let (sp, cp) = s.phi.sin_cos();
        let (st, ct) = s.theta.sin_cos();
        let w = Matrix3::new(1.0, 0.0, -st, 0.0, cp, ct * sp, 0.0, -sp, ct * cp);
        let body = Matrix3::from_diagonal(&Vector3::new(p.ixx, p.iyy, p.izz));
        let oracle = w.transpose() * body * w;
        worst = worst.max((inertia_matrix(&s, &p) - oracle).abs().max());
    }
    report("inertia-factorization", worst, 1e-12)
}

fn check_energy_conservation() -> CheckReport {
    // With zero thrust and zero drag the only forces are gravity and the
    // conservative rigid-body couplings, so mechanical energy is constant.
    let p = QuadParams::default();
    let cfg = IntegratorConfig {
        dt: 0.05,
        substeps: 50,
    };
    let s = QuadState {
        phi: 0.3,
        theta: -0.2,
        psi: 0.9,
        dphi: 0.7,
        dtheta: -0.5,
        dpsi: 0.4,
        vx: 1.0,
        vz: 2.0,
        ..Default::default()
    };
    let e0 = mechanical_energy(&s, &p);
    let traj = simulate_zoh(&s, &ControlInput::uniform(0.0), 10, &cfg, &p).expect("tumble");
    let drift = traj
        .iter()
        .map(|st| (mechanical_energy(st, &p) - e0).abs() / e0.abs())
        .fold(0.0f64, f64::max);
    report("energy-conservation", drift, 1e-6)
}

fn check_covariance_oracle() -> CheckReport {
    let spec = GaussianSpec::new(
        DVector::from_vec(vec![1.0, -2.0, 0.5]),
        DVector::from_vec(vec![0.5, 1.5, 0.1]),
        77,
    )
    .expect("spec");
    let ens = Ensemble::draw(&spec, 40).expect("draw");
    let fast = ens.sample_covariance();
    let mean = ens.mean();
    let mut slow = DMatrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for e in 0..40 {
                acc += (ens.data()[(i, e)] - mean[i]) * (ens.data()[(j, e)] - mean[j]);
            }
            slow[(i, j)] = acc / 39.0;
        }
    }
    report("covariance-double-loop", (fast - slow).abs().max(), 1e-12)
}

fn check_update_routes_agree() -> CheckReport {
    let prior = Ensemble::draw(
        &GaussianSpec::new(
            DVector::from_element(4, 4.905),
            DVector::from_element(4, 0.3),
            5,
        )
        .expect("spec"),
        30,
    )
    .expect("draw");
    let a = DMatrix::from_row_slice(
        3,
        4,
        &[0.4, -0.8, 1.2, 0.3, 0.9, 0.2, -0.5, 1.1, -0.3, 0.7, 0.6, -1.0],
    );
    let z = Ensemble::from_matrix(&a * prior.data()).expect("forecast");
    let spec = PerformanceSpec::new(
        DVector::from_vec(vec![1.0, -1.0, 0.5]),
        DVector::from_vec(vec![0.05, 0.02, 0.1]),
        Projection::Components(vec![0, 1, 2]),
    )
    .expect("spec");
    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let mut r2 = r1.clone();
    let d = update_direct(&prior, &z, &spec, false, &mut r1).expect("direct");
    let s = update_sqrt(&prior, &z, &spec, false, 0.0, &mut r2).expect("sqrt");
    let rel = (d.posterior.data() - s.posterior.data()).norm() / d.posterior.data().norm();
    report("update-route-agreement", rel, 1e-8)
}

fn check_scalar_gain() -> CheckReport {
    let u = Ensemble::from_matrix(DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 1.0])).expect("u");
    let z = Ensemble::from_matrix(DMatrix::from_row_slice(1, 3, &[-2.0, 0.0, 2.0])).expect("z");
    let g = gain_matrix(&u, &z, &DVector::from_element(1, 0.0)).expect("gain");
    report("scalar-gain-regression", (g.matrix[(0, 0)] - 0.5).abs(), 1e-12)
}

fn check_draw_determinism() -> CheckReport {
    let spec = GaussianSpec::new(
        DVector::from_element(4, 4.905),
        DVector::from_element(4, 0.01),
        123,
    )
    .expect("spec");
    let a = Ensemble::draw(&spec, 50).expect("draw");
    let b = Ensemble::draw(&spec, 50).expect("draw");
    let identical = a.data() == b.data();
    CheckReport {
        name: "draw-determinism",
        passed: identical,
        detail: if identical {
            "identical bytes for identical seeds".into()
        } else {
            "same seed produced different draws".into()
        },
    }
}

/// Runs every self-check and returns the reports in a fixed order.
pub fn run_validation() -> Vec<CheckReport> {
    vec![
        check_rk4_polynomial(),
        check_freefall_drag(),
        check_hover_fixed_point(),
        check_inertia_factorization(),
        check_energy_conservation(),
        check_covariance_oracle(),
        check_update_routes_agree(),
        check_scalar_gain(),
        check_draw_determinism(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_self_checks_pass() {
        let reports = run_validation();
        assert_eq!(reports.len(), 9);
        for r in &reports {
            assert!(r.passed, "{} failed: {}", r.name, r.detail);
        }
    }

    #[test]
    fn names_are_unique() {
        let reports = run_validation();
        let mut names: Vec<_> = reports.iter().map(|r| r.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), reports.len());
    }
}
