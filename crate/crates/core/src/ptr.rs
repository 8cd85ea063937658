//! Penalized-trust-region SCP loop: linearize, solve the convex subproblem,
//! move the reference, repeat until the virtual-control and trust-region
//! sums fall under their tolerances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::socp::{
    assemble_subproblem, extract_trajectory, solve, SolveSettings, SolveStatus,
    SubproblemWeights, TrajectoryIterate, TrustRegionMode,
};
use crate::transcription::{linearize_discretize, ReferenceTrajectory, TemporalGrid};
use crate::vehicle::{BoundaryConditions, VehicleParams};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PtrConfig {
    pub w_nu: f64,
    pub w_tr: f64,
    pub eps_nu: f64,
    pub eps_tr: f64,
    pub max_iterations: usize,
}

impl Default for PtrConfig {
    fn default() -> Self {
        PtrConfig {
            w_nu: 1e4,
            w_tr: 0.5,
            eps_nu: 1e-6,
            eps_tr: 1e-3,
            max_iterations: 50,
        }
    }
}

impl PtrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_nu <= 0.0 || self.eps_tr <= 0.0 {
            return Err(Error::invalid_input("tolerances must be positive"));
        }
        if self.max_iterations < 1 {
            return Err(Error::invalid_input("max_iterations must be >= 1"));
        }
        if self.w_nu <= 0.0 || self.w_tr <= 0.0 {
            return Err(Error::invalid_input("penalty weights must be positive"));
        }
        Ok(())
    }
}

/// Convergence bookkeeping for one SCP iteration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub nu_sum: f64,
    pub tr_sum: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct PtrResult {
    pub trajectory: TrajectoryIterate,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
}

impl PtrResult {
    /// Iteration history as CSV text.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("iter,nu_sum,tr_sum,objective\n");
        for rec in &self.history {
            out.push_str(&format!(
                "{},{},{},{}\n",
                rec.iteration, rec.nu_sum, rec.tr_sum, rec.objective
            ));
        }
        out
    }
}

/// Both stopping criteria: virtual-control sum and trust-region sum under
/// their tolerances.
pub fn check_termination(last: &IterationRecord, config: &PtrConfig) -> bool {
    last.nu_sum <= config.eps_nu && last.tr_sum <= config.eps_tr
}

/// Run the PTR loop from an initial reference until both stopping criteria
/// hold or the iteration cap is reached. A subproblem that comes back
/// non-optimal aborts the run with the iteration index.
pub fn ptr_solve(
    bc: &BoundaryConditions,
    grid: &TemporalGrid,
    p: &VehicleParams,
    config: &PtrConfig,
    initial_ref: &ReferenceTrajectory,
) -> Result<PtrResult> {
    config.validate()?;
    bc.validate()?;
    let weights = SubproblemWeights {
        w_nu: config.w_nu,
        w_tr: config.w_tr,
        w_trp: config.w_tr,
    };
    let settings = SolveSettings::default();

    let mut reference = initial_ref.clone();
    let mut history = Vec::new();
    let mut trajectory: Option<TrajectoryIterate> = None;

    for iteration in 0..config.max_iterations {
        let segments = linearize_discretize(&reference, grid, p)?;
        let program = assemble_subproblem(
            &segments,
            &reference,
            bc,
            &weights,
            p,
            TrustRegionMode::Reference,
            None,
        )?;
        let solution = solve(&program, &settings)?;
        if solution.status != SolveStatus::Optimal {
            return Err(Error::SubproblemFailed {
                iteration,
                status: solution.status.to_string(),
            });
        }
        let iterate = extract_trajectory(&program, &solution)?;
        let record = IterationRecord {
            iteration,
            nu_sum: iterate.nu_sum_l1(),
            tr_sum: iterate.trust_distance_sq(&reference),
            objective: solution.objective,
        };
        history.push(record);
        reference = iterate.to_reference();
        trajectory = Some(iterate);
        if check_termination(&record, config) {
            return Ok(PtrResult {
                trajectory: trajectory.expect("set above"),
                iterations: iteration + 1,
                converged: true,
                history,
            });
        }
    }

    Ok(PtrResult {
        trajectory: trajectory.expect("max_iterations >= 1"),
        iterations: config.max_iterations,
        converged: false,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcription::{make_grid, straight_line_init};
    use crate::vehicle::{
        eval_constraints, landing_target, min_fuel_cost, Control, State, IDX_MASS,
    };
    use nalgebra::{Vector3, Vector4};

    fn nominal_setup() -> (BoundaryConditions, TemporalGrid, VehicleParams) {
        let p = VehicleParams::default();
        let bc = BoundaryConditions {
            initial: State {
                m: p.m_wet,
                r_i: Vector3::new(2.5, 0.0, 2.5),
                v_i: Vector3::new(0.0, 0.0, -1.0),
                q_bi: Vector4::new(1.0, 0.0, 0.0, 0.0),
                omega_b: Vector3::zeros(),
            },
            final_state: landing_target(&p),
        };
        let grid = make_grid(31, 5.0).unwrap();
        (bc, grid, p)
    }

    #[test]
    fn termination_check_cases() {
        let cfg = PtrConfig::default();
        let rec = |nu, tr| IterationRecord {
            iteration: 0,
            nu_sum: nu,
            tr_sum: tr,
            objective: 0.0,
        };
        assert!(check_termination(&rec(0.0, 0.0), &cfg));
        assert!(!check_termination(&rec(1e-7, 2e-3), &cfg));
        assert!(check_termination(&rec(1e-7, 9e-4), &cfg));
    }

    #[test]
    fn nominal_case_converges_to_expected_fuel() {
        let (bc, grid, p) = nominal_setup();
        let config = PtrConfig::default();
        let init = straight_line_init(&bc, &grid, &p);
        let result = ptr_solve(&bc, &grid, &p, &config, &init).unwrap();
        assert!(result.converged, "history: {}", result.history_csv());
        assert!(result.iterations <= 50);
        assert_eq!(result.history.len(), result.iterations);
        let cost = min_fuel_cost(&result.trajectory);
        assert!(
            (-1.90..=-1.83).contains(&cost),
            "final mass {} outside expected bracket",
            -cost
        );

        // Returned trajectory satisfies the discretized convex constraints.
        let final_ref = result.trajectory.to_reference();
        for (k, x) in result.trajectory.states.iter().enumerate() {
            let s = State::from_vector(x);
            assert!(s.m >= p.m_dry - 1e-7, "mass floor at node {k}");
            let res = eval_constraints(
                &s.renormalized(),
                &Control {
                    t_b: *result
                        .trajectory
                        .controls
                        .get(k.min(result.trajectory.controls.len() - 1))
                        .unwrap(),
                },
                &p,
            );
            // rate, glide slope, tilt are state rows of the residual vector.
            assert!(res[1] <= 1e-7, "rate at node {k}: {}", res[1]);
            assert!(res[2] <= 1e-7, "glide slope at node {k}: {}", res[2]);
            assert!(res[3] <= 1e-7, "tilt at node {k}: {}", res[3]);
        }
        for (k, u) in result.trajectory.controls.iter().enumerate() {
            assert!(u.norm() <= p.t_max + 1e-7, "max thrust at {k}");
            assert!(
                p.delta_max.cos() * u.norm() - u.z <= 1e-7,
                "gimbal at {k}"
            );
            // Linearized min thrust against the final reference.
            let dir = final_ref.controls[k].t_b.normalize();
            assert!(dir.dot(u) >= p.t_min - 1e-6, "min thrust at {k}");
        }
        // Boundary pins.
        let x0 = &result.trajectory.states[0];
        assert!((x0 - bc.initial.to_vector()).amax() <= 1e-7);
        let xf = result.trajectory.states.last().unwrap();
        let target = bc.final_state.to_vector();
        for i in 1..14 {
            assert!((xf[i] - target[i]).abs() <= 1e-7, "final pin {i}");
        }
        assert!(xf[IDX_MASS] >= p.m_dry);
    }

    #[test]
    fn restart_from_converged_solution_takes_one_iteration() {
        let (bc, grid, p) = nominal_setup();
        let config = PtrConfig::default();
        let init = straight_line_init(&bc, &grid, &p);
        let first = ptr_solve(&bc, &grid, &p, &config, &init).unwrap();
        assert!(first.converged);
        let warm = first.trajectory.to_reference();
        let second = ptr_solve(&bc, &grid, &p, &config, &warm).unwrap();
        assert!(second.converged);
        assert_eq!(second.iterations, 1);
    }

    #[test]
    fn infeasible_target_reports_failure_without_panicking() {
        let (bc, grid, p) = nominal_setup();
        let mut bad = bc.clone();
        // Final position far outside the glide-slope cone.
        bad.final_state.r_i = Vector3::new(5.0, 0.0, 0.1);
        let init = straight_line_init(&bad, &grid, &p);
        let config = PtrConfig::default();
        match ptr_solve(&bad, &grid, &p, &config, &init) {
            Err(Error::SubproblemFailed { .. }) => {}
            Ok(result) => assert!(!result.converged || result.history.last().unwrap().nu_sum > 1e-6),
            Err(other) => panic!("unexpected error kind: {other}"),
        }
    }

    #[test]
    fn history_csv_shape() {
        let rec = IterationRecord {
            iteration: 0,
            nu_sum: 1.5,
            tr_sum: 0.25,
            objective: -1.8,
        };
        let result = PtrResult {
            trajectory: TrajectoryIterate::zeroed(2),
            iterations: 1,
            converged: true,
            history: vec![rec],
        };
        assert_eq!(
            result.history_csv(),
            "iter,nu_sum,tr_sum,objective\n0,1.5,0.25,-1.8\n"
        );
    }
}
