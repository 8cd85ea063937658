//! 6-DoF rocket model: dynamics, quaternion kinematics, path and input
//! constraints, boundary conditions, and feasibility metrics.
//!
//! State is 14-dimensional, flattened in the fixed order
//! `(m, r_I, v_I, q_BI, omega_B)` with a scalar-first unit quaternion.
//! The inertial frame is X(East)-Y(North)-Z(Up); gravity points down.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::socp::TrajectoryIterate;

/// Flattened 14-dimensional state.
pub type StateVector = SVector<f64, 14>;
/// State Jacobian of the dynamics right-hand side.
pub type StateJacobian = SMatrix<f64, 14, 14>;
/// Input Jacobian of the dynamics right-hand side.
pub type InputJacobian = SMatrix<f64, 14, 3>;

/// Flattening layout: mass, position, velocity, quaternion, angular rate.
pub const IDX_MASS: usize = 0;
pub const IDX_POS: usize = 1;
pub const IDX_VEL: usize = 4;
pub const IDX_QUAT: usize = 7;
pub const IDX_RATE: usize = 11;
pub const STATE_DIM: usize = 14;
pub const CONTROL_DIM: usize = 3;

/// Number of path/input constraints tracked by [`eval_constraints`].
pub const CONSTRAINT_DIM: usize = 7;

const UNIT_QUAT_TOL: f64 = 1e-6;

/// Physical and constraint parameters of the vehicle.
///
/// Angles are stored in radians; the config file layer converts degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Gravitational acceleration in the inertial frame (U_L/U_T^2).
    pub g_i: Vector3<f64>,
    /// Body-frame inertia matrix (U_M U_L^2).
    pub j_b: Matrix3<f64>,
    /// Mass depletion proportionality constant (U_T/U_L).
    pub alpha_mdot: f64,
    /// Thrust application point relative to the center of mass (U_L).
    pub r_thrust_b: Vector3<f64>,
    pub m_wet: f64,
    pub m_dry: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Maximum gimbal angle (rad).
    pub delta_max: f64,
    /// Maximum tilt angle (rad).
    pub theta_max: f64,
    /// Maximum glide-slope angle (rad).
    pub gamma_gs: f64,
    /// Maximum angular rate (rad/U_T).
    pub omega_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            g_i: Vector3::new(0.0, 0.0, -1.0),
            j_b: Matrix3::from_diagonal(&Vector3::new(0.186, 0.186, 0.00372)),
            alpha_mdot: 0.01,
            r_thrust_b: Vector3::new(0.0, 0.0, -0.25),
            m_wet: 2.0,
            m_dry: 1.0,
            t_min: 1.5,
            t_max: 6.0,
            delta_max: 20f64.to_radians(),
            theta_max: 90f64.to_radians(),
            gamma_gs: 20f64.to_radians(),
            omega_max: 60f64.to_radians(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.t_min && self.t_min < self.t_max) {
            return Err(Error::invalid_input("require 0 < t_min < t_max"));
        }
        if !(0.0 < self.m_dry && self.m_dry < self.m_wet) {
            return Err(Error::invalid_input("require 0 < m_dry < m_wet"));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        for (name, a) in [
            ("delta_max", self.delta_max),
            ("gamma_gs", self.gamma_gs),
            ("theta_max", self.theta_max),
        ] {
            if !(0.0 < a && a <= half_pi) {
                return Err(Error::invalid_input(format!("{name} must be in (0, pi/2]")));
            }
        }
        if self.omega_max <= 0.0 {
            return Err(Error::invalid_input("omega_max must be positive"));
        }
        let sym_err = (self.j_b - self.j_b.transpose()).abs().max();
        if sym_err > 1e-12 || self.j_b.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::invalid_input("j_b must be symmetric positive definite"));
        }
        Ok(())
    }
}

/// Vehicle state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub m: f64,
    pub r_i: Vector3<f64>,
    pub v_i: Vector3<f64>,
    /// Scalar-first unit quaternion parameterizing body-to-inertial attitude.
    pub q_bi: Vector4<f64>,
    pub omega_b: Vector3<f64>,
}

impl State {
    pub fn validate(&self) -> Result<()> {
        if self.m <= 0.0 {
            return Err(Error::SingularMass(self.m));
        }
        let norm_err = (self.q_bi.norm() - 1.0).abs();
        if norm_err > 1e-9 {
            return Err(Error::invalid_input(format!(
                "quaternion norm off unit by {norm_err:.3e}"
            )));
        }
        Ok(())
    }

    /// Flatten in the fixed `(m, r, v, q, omega)` order.
    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x[IDX_MASS] = self.m;
        x.fixed_rows_mut::<3>(IDX_POS).copy_from(&self.r_i);
        x.fixed_rows_mut::<3>(IDX_VEL).copy_from(&self.v_i);
        x.fixed_rows_mut::<4>(IDX_QUAT).copy_from(&self.q_bi);
        x.fixed_rows_mut::<3>(IDX_RATE).copy_from(&self.omega_b);
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        State {
            m: x[IDX_MASS],
            r_i: x.fixed_rows::<3>(IDX_POS).into(),
            v_i: x.fixed_rows::<3>(IDX_VEL).into(),
            q_bi: x.fixed_rows::<4>(IDX_QUAT).into(),
            omega_b: x.fixed_rows::<3>(IDX_RATE).into(),
        }
    }

    /// Same state with the quaternion scaled back to unit norm.
    pub fn renormalized(&self) -> Self {
        let mut s = *self;
        s.q_bi = self.q_bi.normalize();
        s
    }
}

/// Body-frame thrust command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub t_b: Vector3<f64>,
}

impl Control {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Control {
            t_b: Vector3::new(x, y, z),
        }
    }
}

/// Initial and final state pins. The final mass is free (minimized) by
/// convention; every other final channel is an equality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub initial: State,
    pub final_state: State,
}

impl BoundaryConditions {
    pub fn validate(&self) -> Result<()> {
        self.initial.validate()?;
        // The final mass field is a placeholder, so only check the quaternion.
        let norm_err = (self.final_state.q_bi.norm() - 1.0).abs();
        if norm_err > 1e-9 {
            return Err(Error::invalid_input(format!(
                "final quaternion norm off unit by {norm_err:.3e}"
            )));
        }
        Ok(())
    }
}

/// Shared landing target: origin touchdown at -0.1 U_L/U_T descent rate,
/// upright, at rest in attitude rate. The final mass field is a placeholder.
pub fn landing_target(p: &VehicleParams) -> State {
    State {
        m: p.m_dry,
        r_i: Vector3::zeros(),
        v_i: Vector3::new(0.0, 0.0, -0.1),
        q_bi: Vector4::new(1.0, 0.0, 0.0, 0.0),
        omega_b: Vector3::zeros(),
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Direction cosine matrix C_{I/B} mapping body-frame vectors to the
/// inertial frame, from a scalar-first unit quaternion.
pub fn dcm_from_quat(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    if (q.norm() - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(Error::invalid_input(format!(
            "dcm_from_quat: quaternion norm {:.9} not unit",
            q.norm()
        )));
    }
    Ok(dcm_unchecked(q))
}

pub(crate) fn dcm_unchecked(q: &Vector4<f64>) -> Matrix3<f64> {
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (q2 * q2 + q3 * q3),
        2.0 * (q1 * q2 - q0 * q3),
        2.0 * (q1 * q3 + q0 * q2),
        2.0 * (q1 * q2 + q0 * q3),
        1.0 - 2.0 * (q1 * q1 + q3 * q3),
        2.0 * (q2 * q3 - q0 * q1),
        2.0 * (q1 * q3 - q0 * q2),
        2.0 * (q2 * q3 + q0 * q1),
        1.0 - 2.0 * (q1 * q1 + q2 * q2),
    )
}

/// 4x4 skew-symmetric quaternion kinematics matrix: q_dot = 1/2 Omega(w) q.
pub fn omega_matrix(omega: &Vector3<f64>) -> SMatrix<f64, 4, 4> {
    let (wx, wy, wz) = (omega.x, omega.y, omega.z);
    SMatrix::<f64, 4, 4>::new(
        0.0, -wx, -wy, -wz, //
        wx, 0.0, wz, -wy, //
        wy, -wz, 0.0, wx, //
        wz, wy, -wx, 0.0,
    )
}

/// Continuous-time dynamics right-hand side on the flattened state.
pub fn dynamics_rhs(x: &StateVector, u: &Vector3<f64>, p: &VehicleParams) -> Result<StateVector> {
    let m = x[IDX_MASS];
    if m <= 0.0 {
        return Err(Error::SingularMass(m));
    }
    let v: Vector3<f64> = x.fixed_rows::<3>(IDX_VEL).into();
    let q: Vector4<f64> = x.fixed_rows::<4>(IDX_QUAT).into();
    let w: Vector3<f64> = x.fixed_rows::<3>(IDX_RATE).into();

    let c_ib = dcm_unchecked(&q);
    let mut dx = StateVector::zeros();
    dx[IDX_MASS] = -p.alpha_mdot * u.norm();
    dx.fixed_rows_mut::<3>(IDX_POS).copy_from(&v);
    dx.fixed_rows_mut::<3>(IDX_VEL)
        .copy_from(&(c_ib * u / m + p.g_i));
    dx.fixed_rows_mut::<4>(IDX_QUAT)
        .copy_from(&(0.5 * omega_matrix(&w) * q));
    let torque = p.r_thrust_b.cross(u) - w.cross(&(p.j_b * w));
    let j_inv = p
        .j_b
        .try_inverse()
        .ok_or_else(|| Error::invalid_input("inertia matrix not invertible"))?;
    dx.fixed_rows_mut::<3>(IDX_RATE).copy_from(&(j_inv * torque));
    Ok(dx)
}

/// Analytic Jacobians of [`dynamics_rhs`] with respect to state and input.
pub fn dynamics_jacobians(
    x: &StateVector,
    u: &Vector3<f64>,
    p: &VehicleParams,
) -> Result<(StateJacobian, InputJacobian)> {
    let m = x[IDX_MASS];
    if m <= 0.0 {
        return Err(Error::SingularMass(m));
    }
    let q: Vector4<f64> = x.fixed_rows::<4>(IDX_QUAT).into();
    let w: Vector3<f64> = x.fixed_rows::<3>(IDX_RATE).into();
    let s = q[0];
    let qv: Vector3<f64> = q.fixed_rows::<3>(1).into();
    let c_ib = dcm_unchecked(&q);
    let j_inv = p
        .j_b
        .try_inverse()
        .ok_or_else(|| Error::invalid_input("inertia matrix not invertible"))?;

    let mut a = StateJacobian::zeros();
    let mut b = InputJacobian::zeros();

    // Mass depletion: only the input direction matters.
    let t_norm = u.norm();
    if t_norm > 1e-12 {
        b.fixed_view_mut::<1, 3>(IDX_MASS, 0)
            .copy_from(&(-p.alpha_mdot * u.transpose() / t_norm));
    }

    // Position.
    a.fixed_view_mut::<3, 3>(IDX_POS, IDX_VEL)
        .copy_from(&Matrix3::identity());

    // Velocity: d/dm, d/dq of C(q)u/m, and d/du.
    let cu = c_ib * u;
    a.fixed_view_mut::<3, 1>(IDX_VEL, IDX_MASS)
        .copy_from(&(-cu / (m * m)));
    // d(C(q)u)/dq. The DCM table equals the homogeneous sandwich form
    // (s^2 - qv.qv) u + 2 qv (qv.u) + 2 s (qv x u) plus (1 - |q|^2) u, so the
    // homogeneous derivative needs a -2 u q' correction off the unit sphere.
    let d_ds = 2.0 * s * u + 2.0 * qv.cross(u);
    let d_dqv = -2.0 * u * qv.transpose()
        + 2.0 * (qv * u.transpose() + Matrix3::identity() * qv.dot(u))
        - 2.0 * s * skew(u);
    let mut dcu_dq = SMatrix::<f64, 3, 4>::zeros();
    dcu_dq.fixed_view_mut::<3, 1>(0, 0).copy_from(&d_ds);
    dcu_dq.fixed_view_mut::<3, 3>(0, 1).copy_from(&d_dqv);
    dcu_dq -= 2.0 * u * q.transpose();
    a.fixed_view_mut::<3, 4>(IDX_VEL, IDX_QUAT)
        .copy_from(&(dcu_dq / m));
    b.fixed_view_mut::<3, 3>(IDX_VEL, 0).copy_from(&(c_ib / m));

    // Quaternion kinematics: linear in q, and Omega(w) q is linear in w.
    a.fixed_view_mut::<4, 4>(IDX_QUAT, IDX_QUAT)
        .copy_from(&(0.5 * omega_matrix(&w)));
    let mut xi = SMatrix::<f64, 4, 3>::zeros();
    xi.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-qv.transpose()));
    xi.fixed_view_mut::<3, 3>(1, 0)
        .copy_from(&(Matrix3::identity() * s + skew(&qv)));
    a.fixed_view_mut::<4, 3>(IDX_QUAT, IDX_RATE)
        .copy_from(&(0.5 * xi));

    // Angular rate: gyroscopic term and thrust torque.
    let dwdot_dw = j_inv * (skew(&(p.j_b * w)) - skew(&w) * p.j_b);
    a.fixed_view_mut::<3, 3>(IDX_RATE, IDX_RATE).copy_from(&dwdot_dw);
    b.fixed_view_mut::<3, 3>(IDX_RATE, 0)
        .copy_from(&(j_inv * skew(&p.r_thrust_b)));

    Ok((a, b))
}

/// Z-Y-X (yaw-pitch-roll) Euler angles from a scalar-first unit quaternion.
pub fn euler_from_quat(q: &Vector4<f64>) -> Result<(f64, f64, f64)> {
    if (q.norm() - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(Error::invalid_input(format!(
            "euler_from_quat: quaternion norm {:.9} not unit",
            q.norm()
        )));
    }
    let (q0, q1, q2, q3) = (q[0], q[1], q[2], q[3]);
    let sin_pitch = 2.0 * (q0 * q2 - q3 * q1);
    // sin(pi/2 - 1e-6) = 1 - 5e-13; inside that band the roll/yaw split is lost.
    if sin_pitch.abs() >= 1.0 - 5e-13 {
        return Err(Error::DegenerateAttitude(1e-6));
    }
    let roll = (2.0 * (q0 * q1 + q2 * q3)).atan2(1.0 - 2.0 * (q1 * q1 + q2 * q2));
    let pitch = sin_pitch.asin();
    let yaw = (2.0 * (q0 * q3 + q1 * q2)).atan2(1.0 - 2.0 * (q2 * q2 + q3 * q3));
    Ok((roll, pitch, yaw))
}

/// Scalar-first unit quaternion from Z-Y-X (yaw-pitch-roll) Euler angles.
pub fn quat_from_euler(roll: f64, pitch: f64, yaw: f64) -> Result<Vector4<f64>> {
    if (pitch.abs() - std::f64::consts::FRAC_PI_2).abs() <= 1e-6 {
        return Err(Error::DegenerateAttitude(1e-6));
    }
    let (sr, cr) = (0.5 * roll).sin_cos();
    let (sp, cp) = (0.5 * pitch).sin_cos();
    let (sy, cy) = (0.5 * yaw).sin_cos();
    let q = Vector4::new(
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    );
    Ok(q.normalize())
}

/// Path/input constraint residuals; entry <= 0 iff that constraint holds.
///
/// Fixed order: mass, rate, glide slope, tilt, min thrust, max thrust, gimbal.
pub fn eval_constraints(
    x: &State,
    u: &Control,
    p: &VehicleParams,
) -> SVector<f64, CONSTRAINT_DIM> {
    let t_norm = u.t_b.norm();
    let r = &x.r_i;
    let horiz = (r.x * r.x + r.y * r.y).sqrt();
    let (qx, qy) = (x.q_bi[1], x.q_bi[2]);
    SVector::<f64, CONSTRAINT_DIM>::from_column_slice(&[
        p.m_dry - x.m,
        x.omega_b.norm() - p.omega_max,
        p.gamma_gs.tan() * horiz - r.z,
        p.theta_max.cos() - 1.0 + 2.0 * (qx * qx + qy * qy),
        p.t_min - t_norm,
        t_norm - p.t_max,
        p.delta_max.cos() * t_norm - u.t_b.z,
    ])
}

/// Normalized constraint violation c in R^7: ramped residuals scaled by
/// their bounds. Zero exactly where [`eval_constraints`] is feasible.
pub fn normalized_violation(
    x: &State,
    u: &Control,
    p: &VehicleParams,
) -> SVector<f64, CONSTRAINT_DIM> {
    let ramp = |v: f64| v.max(0.0);
    let t_norm = u.t_b.norm();
    let r = &x.r_i;
    let horiz = (r.x * r.x + r.y * r.y).sqrt();

    // Glide-slope elevation angle; the cone vertex (r ~ 0) is feasible.
    let gamma = if horiz <= 1e-12 && r.z.abs() <= 1e-12 {
        std::f64::consts::FRAC_PI_2
    } else {
        r.z.atan2(horiz)
    };

    let tilt = (1.0 - 2.0 * (x.q_bi[1] * x.q_bi[1] + x.q_bi[2] * x.q_bi[2]))
        .clamp(-1.0, 1.0)
        .acos();

    // Zero thrust has no gimbal direction; the min-thrust row flags it.
    let gimbal = if t_norm <= 1e-12 {
        0.0
    } else {
        (u.t_b.z / t_norm).clamp(-1.0, 1.0).acos()
    };

    let rate = x.omega_b.norm();
    SVector::<f64, CONSTRAINT_DIM>::from_column_slice(&[
        ramp(p.m_dry - x.m) / p.m_dry,
        ramp(rate - p.omega_max) / p.omega_max,
        ramp(p.gamma_gs - gamma) / p.gamma_gs,
        ramp(tilt - p.theta_max) / p.theta_max,
        ramp(p.t_min - t_norm) / p.t_min,
        ramp(t_norm - p.t_max) / p.t_max,
        ramp(gimbal - p.delta_max) / p.delta_max,
    ])
}

/// Minimum-fuel cost of a trajectory: the negated final mass.
pub fn min_fuel_cost(traj: &TrajectoryIterate) -> f64 {
    let last = traj
        .states
        .last()
        .expect("trajectory must have at least one node");
    -last[IDX_MASS]
}
