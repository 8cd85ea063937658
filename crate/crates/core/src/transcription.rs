//! Temporal grid, straight-line initialization, zeroth-order-hold
//! linearization/discretization, and linear/nonlinear propagation.

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{
    dynamics_jacobians, dynamics_rhs, BoundaryConditions, Control, InputJacobian, State,
    StateJacobian, StateVector, VehicleParams, IDX_MASS, IDX_QUAT,
};

/// RK4 substeps per grid interval, shared by discretization and rollouts.
pub const SUBSTEPS: usize = 10;

/// Uniform temporal grid with K nodes over a fixed horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemporalGrid {
    pub node_count: usize,
    pub t_final: f64,
    pub nodes: Vec<f64>,
}

impl TemporalGrid {
    /// Interval length between consecutive nodes.
    pub fn dt(&self) -> f64 {
        self.t_final / (self.node_count as f64 - 1.0)
    }

    pub fn interval_count(&self) -> usize {
        self.node_count - 1
    }
}

/// Build the uniform grid t_k = k t_f / (K-1).
pub fn make_grid(node_count: usize, t_final: f64) -> Result<TemporalGrid> {
    if node_count < 2 {
        return Err(Error::InvalidGrid(format!(
            "need at least 2 nodes, got {node_count}"
        )));
    }
    if t_final <= 0.0 {
        return Err(Error::InvalidGrid(format!(
            "final time must be positive, got {t_final}"
        )));
    }
    let nodes = (0..node_count)
        .map(|k| k as f64 * t_final / (node_count as f64 - 1.0))
        .collect();
    Ok(TemporalGrid {
        node_count,
        t_final,
        nodes,
    })
}

/// Reference trajectory a subproblem is linearized around: K states and
/// K-1 zeroth-order-hold controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
}

impl ReferenceTrajectory {
    pub fn validate(&self, grid: &TemporalGrid) -> Result<()> {
        if self.states.len() != grid.node_count {
            return Err(Error::invalid_input(format!(
                "reference has {} states for a {}-node grid",
                self.states.len(),
                grid.node_count
            )));
        }
        if self.controls.len() != grid.interval_count() {
            return Err(Error::invalid_input(format!(
                "reference has {} controls for {} intervals",
                self.controls.len(),
                grid.interval_count()
            )));
        }
        for s in &self.states {
            s.validate()?;
        }
        Ok(())
    }
}

/// ZOH discrete model of one interval: x_{k+1} ~ A x_k + B u_k + z.
#[derive(Debug, Clone)]
pub struct LinearizedSegment {
    pub a_mat: StateJacobian,
    pub b_mat: InputJacobian,
    pub z_vec: StateVector,
}

/// Straight-line state interpolation with hover thrust controls.
///
/// Every channel is interpolated node-wise between the boundary states; the
/// quaternion is renormalized per node and the mass runs from the initial
/// mass down to the dry mass. Controls are the hover thrust for the local
/// interpolated mass, which keeps the first linearization away from the
/// zero-thrust gimbal singularity.
pub fn straight_line_init(
    bc: &BoundaryConditions,
    grid: &TemporalGrid,
    p: &VehicleParams,
) -> ReferenceTrajectory {
    let k_count = grid.node_count;
    let x0 = bc.initial;
    let xf = bc.final_state;
    let g_norm = p.g_i.norm();

    let mut states = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let tau = k as f64 / (k_count as f64 - 1.0);
        let lerp3 = |a: &Vector3<f64>, b: &Vector3<f64>| a * (1.0 - tau) + b * tau;
        let q_raw: Vector4<f64> = x0.q_bi * (1.0 - tau) + xf.q_bi * tau;
        states.push(State {
            m: x0.m * (1.0 - tau) + p.m_dry * tau,
            r_i: lerp3(&x0.r_i, &xf.r_i),
            v_i: lerp3(&x0.v_i, &xf.v_i),
            q_bi: q_raw.normalize(),
            omega_b: lerp3(&x0.omega_b, &xf.omega_b),
        });
    }
    let controls = states[..k_count - 1]
        .iter()
        .map(|s| Control::new(0.0, 0.0, s.m * g_norm))
        .collect();
    ReferenceTrajectory { states, controls }
}

/// One fixed-step RK4 step of the plain dynamics.
fn rk4_step(
    x: &StateVector,
    u: &Vector3<f64>,
    h: f64,
    p: &VehicleParams,
) -> Result<StateVector> {
    let k1 = dynamics_rhs(x, u, p)?;
    let k2 = dynamics_rhs(&(x + 0.5 * h * k1), u, p)?;
    let k3 = dynamics_rhs(&(x + 0.5 * h * k2), u, p)?;
    let k4 = dynamics_rhs(&(x + h * k3), u, p)?;
    Ok(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

fn renormalize_quat(x: &mut StateVector) {
    let q: Vector4<f64> = x.fixed_rows::<4>(IDX_QUAT).into();
    x.fixed_rows_mut::<4>(IDX_QUAT).copy_from(&q.normalize());
}

/// Integrate one ZOH interval of the raw flow (no quaternion projection),
/// as used by the discretization and its oracles.
pub fn integrate_interval(
    x0: &StateVector,
    u: &Vector3<f64>,
    dt: f64,
    substeps: usize,
    p: &VehicleParams,
) -> Result<StateVector> {
    let h = dt / substeps as f64;
    let mut x = *x0;
    for _ in 0..substeps {
        x = rk4_step(&x, u, h, p)?;
    }
    Ok(x)
}

/// RK4 on the joint (state, state-transition, input-sensitivity) system.
///
/// Generic over the right-hand side so tests can drive it with a stub flow.
pub(crate) fn variational_rk4<F, G>(
    x0: &StateVector,
    u: &Vector3<f64>,
    dt: f64,
    substeps: usize,
    rhs: F,
    jac: G,
) -> Result<(StateJacobian, InputJacobian, StateVector)>
where
    F: Fn(&StateVector, &Vector3<f64>) -> Result<StateVector>,
    G: Fn(&StateVector, &Vector3<f64>) -> Result<(StateJacobian, InputJacobian)>,
{
    let h = dt / substeps as f64;
    let mut x = *x0;
    let mut phi_a = StateJacobian::identity();
    let mut phi_b = InputJacobian::zeros();

    for _ in 0..substeps {
        // Stage derivatives for x, Phi_A' = J_x Phi_A, Phi_B' = J_x Phi_B + J_u.
        let kx1 = rhs(&x, u)?;
        let (jx1, ju1) = jac(&x, u)?;
        let ka1 = jx1 * phi_a;
        let kb1 = jx1 * phi_b + ju1;

        let x2 = x + 0.5 * h * kx1;
        let kx2 = rhs(&x2, u)?;
        let (jx2, ju2) = jac(&x2, u)?;
        let ka2 = jx2 * (phi_a + 0.5 * h * ka1);
        let kb2 = jx2 * (phi_b + 0.5 * h * kb1) + ju2;

        let x3 = x + 0.5 * h * kx2;
        let kx3 = rhs(&x3, u)?;
        let (jx3, ju3) = jac(&x3, u)?;
        let ka3 = jx3 * (phi_a + 0.5 * h * ka2);
        let kb3 = jx3 * (phi_b + 0.5 * h * kb2) + ju3;

        let x4 = x + h * kx3;
        let kx4 = rhs(&x4, u)?;
        let (jx4, ju4) = jac(&x4, u)?;
        let ka4 = jx4 * (phi_a + h * ka3);
        let kb4 = jx4 * (phi_b + h * kb3) + ju4;

        x += (h / 6.0) * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4);
        phi_a += (h / 6.0) * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4);
        phi_b += (h / 6.0) * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4);
    }
    Ok((phi_a, phi_b, x))
}

/// ZOH linearization/discretization of every interval around a reference.
///
/// z_k is chosen so that A_k x_k + B_k u_k + z_k equals the nonlinear
/// propagation of the reference node under its reference control.
pub fn linearize_discretize(
    reference: &ReferenceTrajectory,
    grid: &TemporalGrid,
    p: &VehicleParams,
) -> Result<Vec<LinearizedSegment>> {
    reference.validate(grid)?;
    let dt = grid.dt();
    let mut segments = Vec::with_capacity(grid.interval_count());
    for k in 0..grid.interval_count() {
        let x_ref = reference.states[k].to_vector();
        let u_ref = reference.controls[k].t_b;
        let (a_mat, b_mat, x_end) = variational_rk4(
            &x_ref,
            &u_ref,
            dt,
            SUBSTEPS,
            |x, u| dynamics_rhs(x, u, p),
            |x, u| dynamics_jacobians(x, u, p),
        )?;
        let z_vec = x_end - a_mat * x_ref - b_mat * u_ref;
        segments.push(LinearizedSegment {
            a_mat,
            b_mat,
            z_vec,
        });
    }
    Ok(segments)
}

/// Propagate the discrete linear model x_{k+1} = A x_k + B u_k + z_k + nu_k.
pub fn propagate_linear(
    segments: &[LinearizedSegment],
    x0: &StateVector,
    controls: &[Vector3<f64>],
    nus: &[StateVector],
) -> Vec<StateVector> {
    assert_eq!(segments.len(), controls.len());
    assert_eq!(segments.len(), nus.len());
    let mut states = Vec::with_capacity(segments.len() + 1);
    states.push(*x0);
    for (k, seg) in segments.iter().enumerate() {
        let next = seg.a_mat * states[k] + seg.b_mat * controls[k] + seg.z_vec + nus[k];
        states.push(next);
    }
    states
}

/// Integrate one ZOH interval of the deployment flow: quaternion
/// renormalized per substep, mass floor enforced.
pub fn propagate_interval(
    x0: &State,
    control: &Control,
    dt: f64,
    p: &VehicleParams,
) -> Result<State> {
    let h = dt / SUBSTEPS as f64;
    let mut x = x0.to_vector();
    for _ in 0..SUBSTEPS {
        x = rk4_step(&x, &control.t_b, h, p)?;
        renormalize_quat(&mut x);
        if x[IDX_MASS] <= p.m_dry / 2.0 {
            return Err(Error::AbortedPropagation {
                node: 0,
                reason: format!("mass {:.4} fell below m_dry/2", x[IDX_MASS]),
            });
        }
    }
    Ok(State::from_vector(&x))
}

/// Nonlinear rollout under piecewise-constant controls, renormalizing the
/// quaternion each substep. Aborts if the mass drops below m_dry / 2.
pub fn propagate_nonlinear_zoh(
    x0: &State,
    controls: &[Control],
    grid: &TemporalGrid,
    p: &VehicleParams,
) -> Result<Vec<State>> {
    x0.validate()?;
    if controls.len() != grid.interval_count() {
        return Err(Error::invalid_input(format!(
            "{} controls for {} intervals",
            controls.len(),
            grid.interval_count()
        )));
    }
    let mut states = Vec::with_capacity(grid.node_count);
    states.push(*x0);
    for (k, c) in controls.iter().enumerate() {
        let next = propagate_interval(&states[k], c, grid.dt(), p).map_err(|e| match e {
            Error::AbortedPropagation { reason, .. } => Error::AbortedPropagation { node: k, reason },
            other => other,
        })?;
        states.push(next);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{landing_target, STATE_DIM};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    fn nominal_bc(p: &VehicleParams) -> BoundaryConditions {
        BoundaryConditions {
            initial: State {
                m: p.m_wet,
                r_i: Vector3::new(2.5, 0.0, 2.5),
                v_i: Vector3::new(0.0, 0.0, -1.0),
                q_bi: Vector4::new(1.0, 0.0, 0.0, 0.0),
                omega_b: Vector3::zeros(),
            },
            final_state: landing_target(p),
        }
    }

    #[test]
    fn grid_table_values() {
        let g = make_grid(31, 5.0).unwrap();
        assert_eq!(g.nodes[0], 0.0);
        assert_eq!(g.nodes[30], 5.0);
        let dt = 5.0 / 30.0;
        for k in 0..30 {
            assert!((g.nodes[k + 1] - g.nodes[k] - dt).abs() <= 1e-12);
        }
    }

    #[test]
    fn grid_two_nodes_and_errors() {
        let g = make_grid(2, 3.0).unwrap();
        assert_eq!(g.nodes, vec![0.0, 3.0]);
        assert!(matches!(make_grid(1, 3.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(make_grid(5, 0.0), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn straight_line_endpoints_and_midpoint() {
        let p = params();
        let mut bc = nominal_bc(&p);
        bc.initial.r_i = Vector3::new(2.0, 0.0, 2.0);
        let grid = make_grid(31, 5.0).unwrap();
        let r = straight_line_init(&bc, &grid, &p);
        assert_eq!(r.states.len(), 31);
        assert_eq!(r.controls.len(), 30);
        assert_relative_eq!(r.states[0].r_i, bc.initial.r_i, epsilon = 0.0);
        assert_eq!(r.states[0].m, p.m_wet);
        assert_relative_eq!(r.states[30].r_i, Vector3::zeros(), epsilon = 0.0);
        assert_eq!(r.states[30].m, p.m_dry);
        assert_relative_eq!(r.states[15].r_i, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-12);
        // Hover controls track the interpolated mass.
        assert_relative_eq!(r.controls[0].t_b.z, p.m_wet * 1.0, epsilon = 1e-12);
        for s in &r.states {
            assert!((s.q_bi.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_dynamics_hook_gives_identity() {
        let x0 = StateVector::from_fn(|i, _| i as f64 * 0.1);
        let u = Vector3::new(0.3, -0.2, 1.0);
        let (a, b, x_end) = variational_rk4(
            &x0,
            &u,
            1.0,
            10,
            |_, _| Ok(StateVector::zeros()),
            |_, _| Ok((StateJacobian::zeros(), InputJacobian::zeros())),
        )
        .unwrap();
        assert_eq!(a, StateJacobian::identity());
        assert_eq!(b, InputJacobian::zeros());
        assert_eq!(x_end, x0);
    }

    #[test]
    fn discretization_exact_at_reference_against_dense_oracle() {
        let p = params();
        let grid = make_grid(31, 5.0).unwrap();
        let reference = straight_line_init(&nominal_bc(&p), &grid, &p);
        let segments = linearize_discretize(&reference, &grid, &p).unwrap();
        for (k, seg) in segments.iter().enumerate() {
            let x_ref = reference.states[k].to_vector();
            let u_ref = reference.controls[k].t_b;
            let dense = integrate_interval(&x_ref, &u_ref, grid.dt(), 1000, &p).unwrap();
            let recon = seg.a_mat * x_ref + seg.b_mat * u_ref + seg.z_vec;
            assert!(
                (recon - dense).amax() <= 1e-8,
                "interval {k}: defect {}",
                (recon - dense).amax()
            );
        }
    }

    #[test]
    fn discretization_jacobian_matches_finite_differences() {
        let p = params();
        let grid = make_grid(11, 5.0).unwrap();
        let reference = straight_line_init(&nominal_bc(&p), &grid, &p);
        let segments = linearize_discretize(&reference, &grid, &p).unwrap();
        let eps = 1e-6;
        for k in [0usize, 5, 9] {
            let x_ref = reference.states[k].to_vector();
            let u_ref = reference.controls[k].t_b;
            for j in 0..STATE_DIM {
                let mut xp = x_ref;
                let mut xm = x_ref;
                xp[j] += eps;
                xm[j] -= eps;
                let fp = integrate_interval(&xp, &u_ref, grid.dt(), SUBSTEPS, &p).unwrap();
                let fm = integrate_interval(&xm, &u_ref, grid.dt(), SUBSTEPS, &p).unwrap();
                let fd = (fp - fm) / (2.0 * eps);
                for i in 0..STATE_DIM {
                    let a = segments[k].a_mat[(i, j)];
                    let scale = a.abs().max(fd[i].abs()).max(1e-4);
                    assert!(
                        (a - fd[i]).abs() / scale < 1e-4,
                        "A[{i},{j}] at interval {k}: {a} vs {}",
                        fd[i]
                    );
                }
            }
        }
    }

    #[test]
    fn linear_propagation_reproduces_reference_and_is_linear() {
        let p = params();
        let grid = make_grid(11, 5.0).unwrap();
        let reference = straight_line_init(&nominal_bc(&p), &grid, &p);
        let segments = linearize_discretize(&reference, &grid, &p).unwrap();
        let controls: Vec<Vector3<f64>> = reference.controls.iter().map(|c| c.t_b).collect();
        let zeros = vec![StateVector::zeros(); segments.len()];

        // Exactness at the reference: the linear model reproduces the flow.
        let states = propagate_linear(&segments, &reference.states[0].to_vector(), &controls, &zeros);
        for (k, seg) in segments.iter().enumerate() {
            let x_ref = reference.states[k].to_vector();
            let u_ref = reference.controls[k].t_b;
            let flow = integrate_interval(&x_ref, &u_ref, grid.dt(), SUBSTEPS, &p).unwrap();
            if k == 0 {
                assert!(
                    (states[1] - flow).amax() < 1e-12,
                    "first interval should match the flow exactly"
                );
            }
            let recon = seg.a_mat * x_ref + seg.b_mat * u_ref + seg.z_vec;
            assert!((recon - flow).amax() < 1e-12);
        }

        // Virtual-control injection shifts the next state exactly.
        let mut nus = zeros.clone();
        nus[3][2] = 0.25;
        let shifted = propagate_linear(&segments, &reference.states[0].to_vector(), &controls, &nus);
        let base = &states;
        assert!((shifted[3] - base[3]).amax() == 0.0);
        assert_relative_eq!(shifted[4][2] - base[4][2], 0.25, epsilon = 1e-12);

        // Superposition in the controls.
        let mut rng = StdRng::seed_from_u64(1);
        let du: Vec<Vector3<f64>> = (0..controls.len())
            .map(|_| Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
            .collect();
        let u_sum: Vec<Vector3<f64>> = controls.iter().zip(&du).map(|(a, b)| a + b).collect();
        let x0 = reference.states[0].to_vector();
        let resp_sum = propagate_linear(&segments, &x0, &u_sum, &zeros);
        let resp_base = propagate_linear(&segments, &x0, &controls, &zeros);
        // Response to du alone from zero state with zero z: pure B-weighted.
        let zero_segments: Vec<LinearizedSegment> = segments
            .iter()
            .map(|s| LinearizedSegment {
                a_mat: s.a_mat,
                b_mat: s.b_mat,
                z_vec: StateVector::zeros(),
            })
            .collect();
        let resp_du = propagate_linear(&zero_segments, &StateVector::zeros(), &du, &zeros);
        for k in 0..resp_sum.len() {
            assert!(
                ((resp_sum[k] - resp_base[k]) - resp_du[k]).amax() < 1e-9,
                "superposition failed at node {k}"
            );
        }
    }

    #[test]
    fn free_fall_matches_closed_form() {
        let p = params();
        let grid = make_grid(11, 1.0).unwrap();
        let x0 = State {
            m: 2.0,
            r_i: Vector3::new(0.0, 0.0, 3.0),
            v_i: Vector3::zeros(),
            q_bi: Vector4::new(1.0, 0.0, 0.0, 0.0),
            omega_b: Vector3::zeros(),
        };
        let controls = vec![Control::new(0.0, 0.0, 0.0); 10];
        let states = propagate_nonlinear_zoh(&x0, &controls, &grid, &p).unwrap();
        for (k, s) in states.iter().enumerate() {
            let t = grid.nodes[k];
            assert!((s.r_i.z - (3.0 - 0.5 * t * t)).abs() < 1e-6);
            assert!((s.q_bi.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn hover_stays_near_equilibrium() {
        let p = params();
        let grid = make_grid(3, 0.1).unwrap();
        let x0 = State {
            m: 2.0,
            r_i: Vector3::new(0.0, 0.0, 2.0),
            v_i: Vector3::zeros(),
            q_bi: Vector4::new(1.0, 0.0, 0.0, 0.0),
            omega_b: Vector3::zeros(),
        };
        let controls = vec![Control::new(0.0, 0.0, 2.0); 2];
        let states = propagate_nonlinear_zoh(&x0, &controls, &grid, &p).unwrap();
        assert!(states.last().unwrap().v_i.norm() <= 1e-3);
    }

    #[test]
    fn propagation_aborts_on_mass_floor() {
        let p = params();
        let grid = make_grid(11, 10.0).unwrap();
        let x0 = State {
            m: 0.52,
            r_i: Vector3::new(0.0, 0.0, 50.0),
            v_i: Vector3::zeros(),
            q_bi: Vector4::new(1.0, 0.0, 0.0, 0.0),
            omega_b: Vector3::zeros(),
        };
        let controls = vec![Control::new(0.0, 0.0, 6.0); 10];
        let err = propagate_nonlinear_zoh(&x0, &controls, &grid, &p);
        assert!(matches!(err, Err(Error::AbortedPropagation { .. })));
    }

    #[test]
    fn rollout_quaternions_stay_unit() {
        let p = params();
        let grid = make_grid(31, 5.0).unwrap();
        let bc = nominal_bc(&p);
        let mut rng = StdRng::seed_from_u64(2);
        let controls: Vec<Control> = (0..30)
            .map(|_| {
                Control::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(1.5..4.0),
                )
            })
            .collect();
        let states = propagate_nonlinear_zoh(&bc.initial, &controls, &grid, &p).unwrap();
        assert_eq!(states.len(), 31);
        for s in &states {
            assert!((s.q_bi.norm() - 1.0).abs() <= 1e-9);
        }
    }

}
