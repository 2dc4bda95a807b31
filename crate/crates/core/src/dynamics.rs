//! Rigid-body quadrotor model in Z-Y-X Euler coordinates.
//!
//! State ordering is `[x, y, z, phi, theta, psi, vx, vy, vz, dphi, dtheta,
//! dpsi]` with positions in the inertial frame and Euler rates (not body
//! rates) for attitude. Control inputs are the four squared rotor speeds, so
//! thrust and torques are linear in the input.

use nalgebra::{Matrix3, SVector, Vector3, Vector4};

use crate::error::{Error, Result};

/// Physical parameters of the vehicle.
///
/// `k` maps squared rotor speed to thrust, `b` to reaction torque, `l` is the
/// arm length and `drag` holds per-axis translational drag coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadParams {
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    pub k: f64,
    pub l: f64,
    pub m: f64,
    pub b: f64,
    pub g: f64,
    pub drag: Vector3<f64>,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            ixx: 1.2,
            iyy: 1.2,
            izz: 2.3,
            k: 1.0,
            l: 0.25,
            m: 2.0,
            b: 0.2,
            g: 9.81,
            drag: Vector3::zeros(),
        }
    }
}

impl QuadParams {
    /// Squared rotor speed at which four rotors exactly cancel gravity.
    pub fn hover_trim(&self) -> f64 {
        self.m * self.g / (4.0 * self.k)
    }
}

/// Squared rotor speeds `w^2` for the four rotors, each finite and >= 0.
///
/// Rotors 1..4 sit front, right, rear, left; opposite pairs spin the same
/// way, so `(1, 3)` and `(2, 4)` differentials produce pitch and roll while
/// the alternating sum produces yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput(pub [f64; 4]);

impl ControlInput {
    pub fn new(w2: [f64; 4]) -> Result<Self> {
        if w2.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control input".into()));
        }
        if w2.iter().any(|&v| v < 0.0) {
            return Err(Error::Invalid {
                what: "control input",
                why: "squared rotor speeds must be nonnegative".into(),
            });
        }
        Ok(Self(w2))
    }

    /// Builds an input with negative entries clamped to zero.
    pub fn clamped(w2: [f64; 4]) -> Self {
        Self(w2.map(|v| v.max(0.0)))
    }

    pub fn uniform(value: f64) -> Self {
        Self([value; 4])
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::from(self.0)
    }
}

/// Full 12-dimensional vehicle state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadState {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub dphi: f64,
    pub dtheta: f64,
    pub dpsi: f64,
}

impl QuadState {
    pub fn from_vector(v: &SVector<f64, 12>) -> Self {
        Self {
            x: v[0],
            y: v[1],
            z: v[2],
            phi: v[3],
            theta: v[4],
            psi: v[5],
            vx: v[6],
            vy: v[7],
            vz: v[8],
            dphi: v[9],
            dtheta: v[10],
            dpsi: v[11],
        }
    }

    pub fn to_vector(&self) -> SVector<f64, 12> {
        SVector::from([
            self.x, self.y, self.z, self.phi, self.theta, self.psi, self.vx, self.vy, self.vz,
            self.dphi, self.dtheta, self.dpsi,
        ])
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn angles(&self) -> Vector3<f64> {
        Vector3::new(self.phi, self.theta, self.psi)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn angle_rates(&self) -> Vector3<f64> {
        Vector3::new(self.dphi, self.dtheta, self.dpsi)
    }
}

/// Inertia matrix expressed in Euler-angle coordinates.
pub fn inertia_matrix(state: &QuadState, p: &QuadParams) -> Matrix3<f64> {
    let (sp, cp) = state.phi.sin_cos();
    let (st, ct) = state.theta.sin_cos();
    let j11 = p.ixx;
    let j13 = -p.ixx * st;
    let j22 = p.iyy * cp * cp + p.izz * sp * sp;
    let j23 = (p.iyy - p.izz) * cp * sp * ct;
    let j33 = p.ixx * st * st + p.iyy * sp * sp * ct * ct + p.izz * cp * cp * ct * ct;
    Matrix3::new(j11, 0.0, j13, 0.0, j22, j23, j13, j23, j33)
}

/// Coriolis matrix for the Euler-angle attitude dynamics.
///
/// Only the product `C * angle_rates` enters the equations of motion; the
/// factorization itself follows the Lagrangian derivation of the model.
pub fn coriolis_matrix(state: &QuadState, p: &QuadParams) -> Matrix3<f64> {
    let (sp, cp) = state.phi.sin_cos();
    let (st, ct) = state.theta.sin_cos();
    let (dphi, dtheta, dpsi) = (state.dphi, state.dtheta, state.dpsi);
    let (ixx, iyy, izz) = (p.ixx, p.iyy, p.izz);

    let c11 = 0.0;
    let c12 = (iyy - izz) * (dtheta * cp * sp + dpsi * sp * sp * ct)
        + (izz - iyy) * dpsi * cp * cp * ct
        - ixx * dpsi * ct;
    let c13 = (izz - iyy) * dpsi * cp * sp * ct * ct;
    let c21 = (izz - iyy) * (dtheta * cp * sp + dpsi * sp * sp * ct)
        + (iyy - izz) * dpsi * cp * cp * ct
        + ixx * dpsi * ct;
    let c22 = (izz - iyy) * dphi * cp * sp;
    let c23 = -ixx * dpsi * st * ct + iyy * dpsi * sp * sp * st * ct + izz * dpsi * cp * cp * st * ct;
    let c31 = (iyy - izz) * dpsi * ct * ct * sp * cp - ixx * dtheta * ct;
    let c32 = (izz - iyy) * (dtheta * cp * sp * st + dphi * sp * sp * ct)
        + (iyy - izz) * dphi * cp * cp * ct
        + ixx * dpsi * st * ct
        - iyy * dpsi * sp * sp * st * ct
        - izz * dpsi * cp * cp * st * ct;
    let c33 = (iyy - izz) * dphi * cp * sp * ct * ct - iyy * dtheta * sp * sp * ct * st
        - izz * dtheta * cp * cp * ct * st
        + ixx * dtheta * ct * st;

    Matrix3::new(c11, c12, c13, c21, c22, c23, c31, c32, c33)
}

/// Total thrust and body torques produced by the rotor inputs.
pub fn rotor_wrench(u: &ControlInput, p: &QuadParams) -> (f64, Vector3<f64>) {
    let [w1, w2, w3, w4] = u.0;
    let thrust = p.k * (w1 + w2 + w3 + w4);
    let tau = Vector3::new(
        p.l * p.k * (w4 - w2),
        p.l * p.k * (w3 - w1),
        p.b * (w1 - w2 + w3 - w4),
    );
    (thrust, tau)
}

/// Direction of the thrust axis in the inertial frame (`R(eta) * e3`).
fn thrust_direction(state: &QuadState) -> Vector3<f64> {
    let (sp, cp) = state.phi.sin_cos();
    let (st, ct) = state.theta.sin_cos();
    let (ss, cs) = state.psi.sin_cos();
    Vector3::new(cs * st * cp + ss * sp, ss * st * cp - cs * sp, ct * cp)
}

/// Time derivative of the full state under input `u`.
///
/// Fails when the Euler-angle inertia matrix is numerically singular, which
/// happens only near the representation singularity `theta = +/- pi/2`.
pub fn state_derivative(state: &QuadState, u: &ControlInput, p: &QuadParams) -> Result<QuadState> {
    let (thrust, tau) = rotor_wrench(u, p);

    let vel = state.velocity();
    let accel = Vector3::new(0.0, 0.0, -p.g) + thrust_direction(state) * (thrust / p.m)
        - p.drag.component_mul(&vel) / p.m;

    let j = inertia_matrix(state, p);
    let det = j.determinant();
    if det.abs() < 1e-12 {
        return Err(Error::SingularInertia { det });
    }
    let rates = state.angle_rates();
    let c = coriolis_matrix(state, p);
    let angular_accel = j
        .lu()
        .solve(&(tau - c * rates))
        .ok_or(Error::SingularInertia { det })?;

    Ok(QuadState {
        x: state.vx,
        y: state.vy,
        z: state.vz,
        phi: state.dphi,
        theta: state.dtheta,
        psi: state.dpsi,
        vx: accel[0],
        vy: accel[1],
        vz: accel[2],
        dphi: angular_accel[0],
        dtheta: angular_accel[1],
        dpsi: angular_accel[2],
    })
}

/// Rotational kinetic energy `0.5 * rates^T J(eta) rates`.
pub fn rotational_energy(state: &QuadState, p: &QuadParams) -> f64 {
    let rates = state.angle_rates();
    0.5 * rates.dot(&(inertia_matrix(state, p) * rates))
}

/// Total mechanical energy with zero thrust (kinetic + potential).
pub fn mechanical_energy(state: &QuadState, p: &QuadParams) -> f64 {
    let v = state.velocity();
    0.5 * p.m * v.norm_squared() + p.m * p.g * state.z + rotational_energy(state, p)
}
