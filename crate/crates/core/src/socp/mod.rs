//! Canonical conic program representation, PTR subproblem assembly, and the
//! solver contract.
//!
//! Programs are in the standard conic form
//!
//! ```text
//!   minimize    c' x
//!   subject to  A x + s = b,   s in K
//! ```
//!
//! where `K` is an ordered product of zero, nonnegative, and second-order
//! cone blocks over consecutive rows.

mod assemble;
mod solve;

pub use assemble::{assemble_subproblem, TrustRegionMode};
pub use solve::{solve, SolveSettings};

use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transcription::ReferenceTrajectory;
use crate::vehicle::{State, StateVector, CONTROL_DIM, STATE_DIM};

/// Cone membership of a consecutive block of rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeBlock {
    /// Rows with s = 0 (equalities).
    Zero(usize),
    /// Rows with s >= 0 (inequalities a'x <= b).
    Nonneg(usize),
    /// Rows with s_0 >= ||s_1..||_2.
    SecondOrder(usize),
}

impl ConeBlock {
    pub fn len(&self) -> usize {
        match *self {
            ConeBlock::Zero(n) | ConeBlock::Nonneg(n) | ConeBlock::SecondOrder(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Variable bookkeeping: where each (node, role) block lives in the
/// flat variable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarMap {
    pub node_count: usize,
    pub x_offset: usize,
    pub u_offset: usize,
    pub nu_offset: usize,
    pub nu_abs_offset: usize,
    pub trust_epigraph: usize,
    pub num_vars: usize,
}

impl VarMap {
    pub fn for_grid(node_count: usize) -> Self {
        let k = node_count;
        let x_offset = 0;
        let u_offset = x_offset + STATE_DIM * k;
        let nu_offset = u_offset + CONTROL_DIM * (k - 1);
        let nu_abs_offset = nu_offset + STATE_DIM * (k - 1);
        let trust_epigraph = nu_abs_offset + STATE_DIM * (k - 1);
        VarMap {
            node_count: k,
            x_offset,
            u_offset,
            nu_offset,
            nu_abs_offset,
            trust_epigraph,
            num_vars: trust_epigraph + 1,
        }
    }

    /// Index of state component `i` at node `k`.
    pub fn x(&self, k: usize, i: usize) -> usize {
        debug_assert!(k < self.node_count && i < STATE_DIM);
        self.x_offset + STATE_DIM * k + i
    }

    /// Index of control component `i` at interval `k`.
    pub fn u(&self, k: usize, i: usize) -> usize {
        debug_assert!(k + 1 < self.node_count && i < CONTROL_DIM);
        self.u_offset + CONTROL_DIM * k + i
    }

    /// Index of virtual-control component `i` at interval `k`.
    pub fn nu(&self, k: usize, i: usize) -> usize {
        debug_assert!(k + 1 < self.node_count && i < STATE_DIM);
        self.nu_offset + STATE_DIM * k + i
    }

    /// Index of the |nu| epigraph variable for component `i` at interval `k`.
    pub fn nu_abs(&self, k: usize, i: usize) -> usize {
        debug_assert!(k + 1 < self.node_count && i < STATE_DIM);
        self.nu_abs_offset + STATE_DIM * k + i
    }
}

/// Sparse conic program with a linear objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    /// Coordinate triplets (row, col, value) of the constraint matrix.
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub cones: Vec<ConeBlock>,
    pub var_map: VarMap,
}

impl ConicProgram {
    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Consistency of dimensions and cone coverage.
    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::invalid_input("objective length != num_vars"));
        }
        let cone_rows: usize = self.cones.iter().map(|c| c.len()).sum();
        if cone_rows != self.rhs.len() {
            return Err(Error::invalid_input(format!(
                "cones cover {cone_rows} rows but rhs has {}",
                self.rhs.len()
            )));
        }
        for &(r, c, v) in &self.entries {
            if r >= self.rhs.len() || c >= self.num_vars {
                return Err(Error::invalid_input(format!("entry ({r},{c}) out of range")));
            }
            if !v.is_finite() {
                return Err(Error::invalid_input(format!("non-finite entry at ({r},{c})")));
            }
        }
        Ok(())
    }

    /// Residual of `Ax + s = b` restricted to the zero-cone rows, and the
    /// worst cone-membership violation of `s = b - Ax` on the other rows.
    pub fn kkt_primal_residuals(&self, primal: &[f64]) -> (f64, f64) {
        let mut slack = self.rhs.clone();
        for &(r, c, v) in &self.entries {
            slack[r] -= v * primal[c];
        }
        let mut eq_resid: f64 = 0.0;
        let mut cone_viol: f64 = 0.0;
        let mut row = 0;
        for cone in &self.cones {
            match *cone {
                ConeBlock::Zero(n) => {
                    for s in &slack[row..row + n] {
                        eq_resid = eq_resid.max(s.abs());
                    }
                    row += n;
                }
                ConeBlock::Nonneg(n) => {
                    for s in &slack[row..row + n] {
                        cone_viol = cone_viol.max(-s);
                    }
                    row += n;
                }
                ConeBlock::SecondOrder(n) => {
                    let head = slack[row];
                    let tail: f64 = slack[row + 1..row + n].iter().map(|s| s * s).sum::<f64>().sqrt();
                    cone_viol = cone_viol.max(tail - head);
                    row += n;
                }
            }
        }
        (eq_resid, cone_viol.max(0.0))
    }

    /// Like [`Self::kkt_primal_residuals`], but each row/cone violation is
    /// scaled by max(1, local magnitude), so large thrust or epigraph cones
    /// are not judged on an absolute yardstick.
    pub fn kkt_primal_residuals_relative(&self, primal: &[f64]) -> (f64, f64) {
        let mut slack = self.rhs.clone();
        for &(r, c, v) in &self.entries {
            slack[r] -= v * primal[c];
        }
        let mut eq_resid: f64 = 0.0;
        let mut cone_viol: f64 = 0.0;
        let mut row = 0;
        for cone in &self.cones {
            match *cone {
                ConeBlock::Zero(n) => {
                    for (s, b) in slack[row..row + n].iter().zip(&self.rhs[row..row + n]) {
                        eq_resid = eq_resid.max(s.abs() / b.abs().max(1.0));
                    }
                    row += n;
                }
                ConeBlock::Nonneg(n) => {
                    for (s, b) in slack[row..row + n].iter().zip(&self.rhs[row..row + n]) {
                        cone_viol = cone_viol.max(-s / b.abs().max(1.0));
                    }
                    row += n;
                }
                ConeBlock::SecondOrder(n) => {
                    let head = slack[row];
                    let tail: f64 =
                        slack[row + 1..row + n].iter().map(|s| s * s).sum::<f64>().sqrt();
                    cone_viol = cone_viol.max((tail - head) / head.abs().max(1.0));
                    row += n;
                }
            }
        }
        (eq_resid, cone_viol.max(0.0))
    }

    /// Text dump: one-based coordinate triplets plus rhs and cone list.
    pub fn write_debug_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "conic-program v1")?;
        writeln!(w, "vars {}", self.num_vars)?;
        writeln!(w, "rows {}", self.num_rows())?;
        writeln!(w, "objective")?;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                writeln!(w, "{} {}", j + 1, c)?;
            }
        }
        writeln!(w, "matrix")?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{} {} {}", r + 1, c + 1, v)?;
        }
        writeln!(w, "rhs")?;
        for (r, &b) in self.rhs.iter().enumerate() {
            if b != 0.0 {
                writeln!(w, "{} {}", r + 1, b)?;
            }
        }
        writeln!(w, "cones")?;
        for cone in &self.cones {
            match *cone {
                ConeBlock::Zero(n) => writeln!(w, "zero {n}")?,
                ConeBlock::Nonneg(n) => writeln!(w, "nonneg {n}")?,
                ConeBlock::SecondOrder(n) => writeln!(w, "soc {n}")?,
            }
        }
        Ok(())
    }
}

/// Penalty weights of the convex subproblem.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SubproblemWeights {
    /// Virtual-control penalty.
    pub w_nu: f64,
    /// Reference trust-region penalty (states and controls).
    pub w_tr: f64,
    /// Policy trust-region penalty (controls only).
    pub w_trp: f64,
}

impl SubproblemWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_nu <= 0.0 || self.w_tr <= 0.0 || self.w_trp <= 0.0 {
            return Err(Error::invalid_input("subproblem weights must be positive"));
        }
        Ok(())
    }
}

/// Solver outcome classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

/// Solved primal state of a conic program.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    /// Present iff status is optimal.
    pub primal: Option<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
}

/// One subproblem solution in trajectory form: K states, K-1 controls,
/// K-1 virtual controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryIterate {
    pub states: Vec<StateVector>,
    pub controls: Vec<Vector3<f64>>,
    pub virtual_controls: Vec<StateVector>,
}

impl TrajectoryIterate {
    pub fn zeroed(node_count: usize) -> Self {
        TrajectoryIterate {
            states: vec![StateVector::zeros(); node_count],
            controls: vec![Vector3::zeros(); node_count - 1],
            virtual_controls: vec![StateVector::zeros(); node_count - 1],
        }
    }

    pub fn node_count(&self) -> usize {
        self.states.len()
    }

    /// Sum over intervals of the 1-norm of the virtual control.
    pub fn nu_sum_l1(&self) -> f64 {
        self.virtual_controls
            .iter()
            .map(|nu| nu.iter().map(|v| v.abs()).sum::<f64>())
            .sum()
    }

    /// Sum of squared 2-norm deviations from a reference (states + controls).
    pub fn trust_distance_sq(&self, reference: &ReferenceTrajectory) -> f64 {
        let state_term: f64 = self
            .states
            .iter()
            .zip(&reference.states)
            .map(|(x, xr)| (x - xr.to_vector()).norm_squared())
            .sum();
        let control_term: f64 = self
            .controls
            .iter()
            .zip(&reference.controls)
            .map(|(u, ur)| (u - ur.t_b).norm_squared())
            .sum();
        state_term + control_term
    }

    /// Reinterpret the iterate as the next linearization reference.
    /// Quaternions are renormalized to restore the state invariant.
    pub fn to_reference(&self) -> ReferenceTrajectory {
        ReferenceTrajectory {
            states: self
                .states
                .iter()
                .map(|x| State::from_vector(x).renormalized())
                .collect(),
            controls: self.controls.iter().map(|u| crate::vehicle::Control { t_b: *u }).collect(),
        }
    }
}

/// Read the trajectory blocks back out of an optimal solution.
pub fn extract_trajectory(program: &ConicProgram, solution: &Solution) -> Result<TrajectoryIterate> {
    if solution.status != SolveStatus::Optimal {
        return Err(Error::ExtractionStatus(solution.status.to_string()));
    }
    let primal = solution
        .primal
        .as_ref()
        .ok_or_else(|| Error::ExtractionStatus("optimal without primal".into()))?;
    if primal.len() != program.num_vars {
        return Err(Error::invalid_input("primal length mismatch"));
    }
    let map = &program.var_map;
    let k_count = map.node_count;
    let mut iterate = TrajectoryIterate::zeroed(k_count);
    for k in 0..k_count {
        for i in 0..STATE_DIM {
            iterate.states[k][i] = primal[map.x(k, i)];
        }
    }
    for k in 0..k_count - 1 {
        for i in 0..CONTROL_DIM {
            iterate.controls[k][i] = primal[map.u(k, i)];
        }
        for i in 0..STATE_DIM {
            iterate.virtual_controls[k][i] = primal[map.nu(k, i)];
        }
    }
    Ok(iterate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var_map_layout_for_table_grid() {
        let map = VarMap::for_grid(31);
        // State and control blocks: 14*31 + 3*30 = 524.
        assert_eq!(map.nu_offset, 524);
        // Virtual controls add 14*30, their abs epigraphs the same again,
        // and the trust epigraph is one scalar.
        assert_eq!(map.nu_abs_offset, 524 + 420);
        assert_eq!(map.trust_epigraph, 524 + 840);
        assert_eq!(map.num_vars, 524 + 840 + 1);
        assert_eq!(map.x(0, 0), 0);
        assert_eq!(map.x(30, 13), 433);
        assert_eq!(map.u(0, 0), 434);
        assert_eq!(map.u(29, 2), 523);
    }

    #[test]
    fn extraction_requires_optimal() {
        let map = VarMap::for_grid(2);
        let program = ConicProgram {
            num_vars: map.num_vars,
            objective: vec![0.0; map.num_vars],
            entries: vec![],
            rhs: vec![],
            cones: vec![],
            var_map: map,
        };
        let sol = Solution {
            status: SolveStatus::Infeasible,
            primal: None,
            objective: f64::NAN,
            iterations: 3,
        };
        assert!(matches!(
            extract_trajectory(&program, &sol),
            Err(Error::ExtractionStatus(_))
        ));
    }

    #[test]
    fn extraction_roundtrip() {
        let map = VarMap::for_grid(3);
        let program = ConicProgram {
            num_vars: map.num_vars,
            objective: vec![0.0; map.num_vars],
            entries: vec![],
            rhs: vec![],
            cones: vec![],
            var_map: map,
        };
        let mut primal = vec![0.0; map.num_vars];
        let mut expected = TrajectoryIterate::zeroed(3);
        for k in 0..3 {
            for i in 0..STATE_DIM {
                let v = (k * STATE_DIM + i) as f64 * 0.1;
                primal[map.x(k, i)] = v;
                expected.states[k][i] = v;
            }
        }
        for k in 0..2 {
            for i in 0..CONTROL_DIM {
                let v = 1.0 + (k * CONTROL_DIM + i) as f64;
                primal[map.u(k, i)] = v;
                expected.controls[k][i] = v;
            }
            for i in 0..STATE_DIM {
                let v = -0.5 + i as f64 * 0.01;
                primal[map.nu(k, i)] = v;
                expected.virtual_controls[k][i] = v;
            }
        }
        let sol = Solution {
            status: SolveStatus::Optimal,
            primal: Some(primal),
            objective: 0.0,
            iterations: 1,
        };
        let got = extract_trajectory(&program, &sol).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn debug_dump_format() {
        let program = ConicProgram {
            num_vars: 2,
            objective: vec![1.0, 0.0],
            entries: vec![(0, 0, -1.0), (1, 1, 2.5)],
            rhs: vec![-3.0, 0.0],
            cones: vec![ConeBlock::Nonneg(1), ConeBlock::Zero(1)],
            var_map: VarMap::for_grid(2),
        };
        let mut out = Vec::new();
        program.write_debug_dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let expected = "conic-program v1\nvars 2\nrows 2\nobjective\n1 1\nmatrix\n1 1 -1\n2 2 2.5\nrhs\n1 -3\ncones\nnonneg 1\nzero 1\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn residual_recomputation_flags_violations() {
        // One equality x0 = 1 and one SOC (2, x0, x1).
        let program = ConicProgram {
            num_vars: 2,
            objective: vec![0.0, 0.0],
            entries: vec![(0, 0, 1.0), (1, 0, 0.0), (2, 0, -1.0), (3, 1, -1.0)],
            rhs: vec![1.0, 2.0, 0.0, 0.0],
            cones: vec![ConeBlock::Zero(1), ConeBlock::SecondOrder(3)],
            var_map: VarMap::for_grid(2),
        };
        let (eq, cone) = program.kkt_primal_residuals(&[1.0, 1.0]);
        assert!(eq < 1e-15);
        assert!(cone < 1e-15); // ||(1,1)|| < 2
        let (eq, cone) = program.kkt_primal_residuals(&[1.5, 2.0]);
        assert!(eq > 0.49);
        assert!(cone > 0.4); // ||(1.5,2)|| = 2.5 > 2
    }
}
