//! Assembly of the convex subproblem over the linearized dynamics.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::socp::{ConeBlock, ConicProgram, SubproblemWeights, VarMap};
use crate::transcription::{LinearizedSegment, ReferenceTrajectory};
use crate::vehicle::{
    BoundaryConditions, VehicleParams, CONTROL_DIM, IDX_MASS, IDX_QUAT, IDX_RATE, STATE_DIM,
};

/// Which trust-region penalty the subproblem carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustRegionMode {
    /// Quadratic penalty on deviation from the reference states and controls.
    Reference,
    /// Quadratic penalty on control deviation from precomputed policy outputs.
    Policy,
}

struct Builder {
    num_vars: usize,
    objective: Vec<f64>,
    entries: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    cones: Vec<ConeBlock>,
}

impl Builder {
    fn new(num_vars: usize) -> Self {
        Builder {
            num_vars,
            objective: vec![0.0; num_vars],
            entries: Vec::new(),
            rhs: Vec::new(),
            cones: Vec::new(),
        }
    }

    fn push_row(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let row = self.rhs.len();
        for (col, v) in coeffs {
            if v != 0.0 {
                self.entries.push((row, col, v));
            }
        }
        self.rhs.push(rhs);
    }

    /// Equality row a'x = b; merges into a running zero block.
    fn eq_row(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        self.push_row(coeffs, rhs);
        match self.cones.last_mut() {
            Some(ConeBlock::Zero(n)) => *n += 1,
            _ => self.cones.push(ConeBlock::Zero(1)),
        }
    }

    /// Inequality row a'x <= b; merges into a running nonnegative block.
    fn le_row(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        self.push_row(coeffs, rhs);
        match self.cones.last_mut() {
            Some(ConeBlock::Nonneg(n)) => *n += 1,
            _ => self.cones.push(ConeBlock::Nonneg(1)),
        }
    }

    /// Second-order cone block; `rows` are (coeffs, rhs) with slack
    /// s = b - a'x, first row the cone scalar.
    fn soc_block(&mut self, rows: Vec<(Vec<(usize, f64)>, f64)>) {
        let dim = rows.len();
        for (coeffs, rhs) in rows {
            self.push_row(coeffs, rhs);
        }
        self.cones.push(ConeBlock::SecondOrder(dim));
    }

    fn finish(self, var_map: VarMap) -> ConicProgram {
        ConicProgram {
            num_vars: self.num_vars,
            objective: self.objective,
            entries: self.entries,
            rhs: self.rhs,
            cones: self.cones,
            var_map,
        }
    }
}

/// Assemble the penalized subproblem around a reference.
///
/// The objective is the terminal cost -m(t_f) plus the 1-norm virtual
/// control penalty and one quadratic trust-region penalty, encoded through a
/// second-order-cone epigraph so the program stays a single SOCP. In
/// `Policy` mode the penalty compares controls against `policy_controls`,
/// the policy outputs evaluated at the reference states, which enter the
/// program as fixed constants.
pub fn assemble_subproblem(
    segments: &[LinearizedSegment],
    reference: &ReferenceTrajectory,
    bc: &BoundaryConditions,
    weights: &SubproblemWeights,
    p: &VehicleParams,
    mode: TrustRegionMode,
    policy_controls: Option<&[Vector3<f64>]>,
) -> Result<ConicProgram> {
    weights.validate()?;
    let k_count = reference.states.len();
    if segments.len() + 1 != k_count || reference.controls.len() + 1 != k_count {
        return Err(Error::invalid_input("segment/reference length mismatch"));
    }
    let policy_controls = match mode {
        TrustRegionMode::Policy => Some(
            policy_controls
                .ok_or_else(|| Error::invalid_input("Policy mode requires policy_controls"))?,
        ),
        TrustRegionMode::Reference => None,
    };
    if let Some(pc) = policy_controls {
        if pc.len() != k_count - 1 {
            return Err(Error::invalid_input("policy_controls length mismatch"));
        }
    }
    for (k, c) in reference.controls.iter().enumerate() {
        if c.t_b.norm() < 1e-9 {
            return Err(Error::MinThrustSingularity {
                node: k,
                norm: c.t_b.norm(),
            });
        }
    }

    let map = VarMap::for_grid(k_count);
    let mut b = Builder::new(map.num_vars);

    // Objective: terminal -m, w_nu * sum |nu|, and the trust epigraph.
    b.objective[map.x(k_count - 1, IDX_MASS)] = -1.0;
    for k in 0..k_count - 1 {
        for i in 0..STATE_DIM {
            b.objective[map.nu_abs(k, i)] = weights.w_nu;
        }
    }
    b.objective[map.trust_epigraph] = 1.0;

    // Initial state pin.
    let x_init = bc.initial.to_vector();
    for i in 0..STATE_DIM {
        b.eq_row([(map.x(0, i), 1.0)], x_init[i]);
    }

    // Linearized dynamics with virtual control:
    // x_{k+1} - A x_k - B u_k - nu_k = z_k.
    for (k, seg) in segments.iter().enumerate() {
        for i in 0..STATE_DIM {
            let mut coeffs = Vec::with_capacity(STATE_DIM + CONTROL_DIM + 2);
            coeffs.push((map.x(k + 1, i), 1.0));
            for j in 0..STATE_DIM {
                coeffs.push((map.x(k, j), -seg.a_mat[(i, j)]));
            }
            for j in 0..CONTROL_DIM {
                coeffs.push((map.u(k, j), -seg.b_mat[(i, j)]));
            }
            coeffs.push((map.nu(k, i), -1.0));
            b.eq_row(coeffs, seg.z_vec[i]);
        }
    }

    // Final pins: every channel except the (minimized) mass.
    let x_final = bc.final_state.to_vector();
    for i in 1..STATE_DIM {
        b.eq_row([(map.x(k_count - 1, i), 1.0)], x_final[i]);
    }

    // Mass floor at every node.
    for k in 0..k_count {
        b.le_row([(map.x(k, IDX_MASS), -1.0)], -p.m_dry);
    }

    // Linearized minimum thrust: T_min - |T_ref| - (T_ref/|T_ref|)'(T - T_ref) <= 0.
    for k in 0..k_count - 1 {
        let t_ref = reference.controls[k].t_b;
        let dir = t_ref / t_ref.norm();
        let rhs = -p.t_min + t_ref.norm() - dir.dot(&t_ref);
        b.le_row(
            (0..CONTROL_DIM).map(|i| (map.u(k, i), -dir[i])),
            rhs,
        );
    }

    // |nu| epigraph rows: nu - t <= 0 and -nu - t <= 0.
    for k in 0..k_count - 1 {
        for i in 0..STATE_DIM {
            b.le_row([(map.nu(k, i), 1.0), (map.nu_abs(k, i), -1.0)], 0.0);
            b.le_row([(map.nu(k, i), -1.0), (map.nu_abs(k, i), -1.0)], 0.0);
        }
    }

    // Angular-rate norm cone: (omega_max, omega_k) per node.
    for k in 0..k_count {
        let mut rows = vec![(vec![], p.omega_max)];
        for i in 0..3 {
            rows.push((vec![(map.x(k, IDX_RATE + i), -1.0)], 0.0));
        }
        b.soc_block(rows);
    }

    // Glide slope: (r_z, tan(gamma) r_x, tan(gamma) r_y) per node.
    let tan_gs = p.gamma_gs.tan();
    for k in 0..k_count {
        let rows = vec![
            (vec![(map.x(k, crate::vehicle::IDX_POS + 2), -1.0)], 0.0),
            (vec![(map.x(k, crate::vehicle::IDX_POS), -tan_gs)], 0.0),
            (vec![(map.x(k, crate::vehicle::IDX_POS + 1), -tan_gs)], 0.0),
        ];
        b.soc_block(rows);
    }

    // Tilt: ||(q_x, q_y)|| <= sqrt((1 - cos(theta_max)) / 2) per node.
    let tilt_bound = ((1.0 - p.theta_max.cos()) / 2.0).sqrt();
    for k in 0..k_count {
        let rows = vec![
            (vec![], tilt_bound),
            (vec![(map.x(k, IDX_QUAT + 1), -1.0)], 0.0),
            (vec![(map.x(k, IDX_QUAT + 2), -1.0)], 0.0),
        ];
        b.soc_block(rows);
    }

    // Maximum thrust: (T_max, u_k) per interval.
    for k in 0..k_count - 1 {
        let mut rows = vec![(vec![], p.t_max)];
        for i in 0..CONTROL_DIM {
            rows.push((vec![(map.u(k, i), -1.0)], 0.0));
        }
        b.soc_block(rows);
    }

    // Gimbal: ||cos(delta) u|| <= u_z per interval.
    let cos_delta = p.delta_max.cos();
    for k in 0..k_count - 1 {
        let mut rows = vec![(vec![(map.u(k, 2), -1.0)], 0.0)];
        for i in 0..CONTROL_DIM {
            rows.push((vec![(map.u(k, i), -cos_delta)], 0.0));
        }
        b.soc_block(rows);
    }

    // Trust-region epigraph: ||a||^2 <= s encoded as ||(2a, s-1)|| <= s+1,
    // with a = sqrt(w) * deviations and objective coefficient 1 on s.
    let mut rows = vec![(vec![(map.trust_epigraph, -1.0)], 1.0)];
    match mode {
        TrustRegionMode::Reference => {
            let scale = 2.0 * weights.w_tr.sqrt();
            for k in 0..k_count {
                let x_ref = reference.states[k].to_vector();
                for i in 0..STATE_DIM {
                    rows.push((vec![(map.x(k, i), -scale)], -scale * x_ref[i]));
                }
            }
            for k in 0..k_count - 1 {
                let u_ref = reference.controls[k].t_b;
                for i in 0..CONTROL_DIM {
                    rows.push((vec![(map.u(k, i), -scale)], -scale * u_ref[i]));
                }
            }
        }
        TrustRegionMode::Policy => {
            let scale = 2.0 * weights.w_trp.sqrt();
            let pc = policy_controls.expect("checked above");
            for k in 0..k_count - 1 {
                for i in 0..CONTROL_DIM {
                    rows.push((vec![(map.u(k, i), -scale)], -scale * pc[k][i]));
                }
            }
        }
    }
    rows.push((vec![(map.trust_epigraph, -1.0)], -1.0));
    b.soc_block(rows);

    let program = b.finish(map);
    program.validate()?;
    Ok(program)
}
